use super::*;
use crate::expr::VarList;
use crate::problem::{default_vars, Domain, ProblemText};

fn spec(layout: &str, units: Vec<usize>, dim: usize) -> NetworkSpec {
    let n = layout.matches('a').count();
    NetworkSpec::new(layout, units, vec![Activation::Tanh; n], dim)
}

fn heat() -> PdeProblem {
    PdeProblem::from_text(
        default_vars(3, true).unwrap(),
        Domain::unit(3, Some(2)),
        &ProblemText {
            form: "D(u,t) - D(D(u,x),x) - D(D(u,y),y) - 5*x*y*(1-x)*(1-y)*cos(pi*(x+y))",
            initial: Some("x*y*(1-x)*(1-y)"),
            ..Default::default()
        },
    )
    .unwrap()
}

fn poisson() -> PdeProblem {
    PdeProblem::from_text(
        default_vars(2, false).unwrap(),
        Domain::unit(2, None),
        &ProblemText {
            form: "D(D(u,x),x) + D(D(u,y),y) - 5*sin(pi*(x+y))",
            boundary: Some("1"),
            ..Default::default()
        },
    )
    .unwrap()
}

fn cfg(n_iters: usize, mode: Mode) -> TrainConfig {
    TrainConfig {
        n_iters,
        mode,
        batch_size: 32,
        ..Default::default()
    }
}

#[test]
fn adam_single_step_closed_form() {
    let c = TrainConfig {
        learning_rate: 0.1,
        ..Default::default()
    };
    let mut theta = [0.0];
    let mut st = AdamState::new(1);
    adam_step(&mut theta, &[1.0], &mut st, &c);
    assert!((st.m[0] - 0.1).abs() < 1e-15);
    assert!((st.v[0] - 0.001).abs() < 1e-15);
    assert!((theta[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-12);
}

#[test]
fn adam_zero_gradient_only_decays_moments() {
    let c = TrainConfig::default();
    let mut theta = [0.25, -1.0];
    let mut st = AdamState {
        m: vec![0.0, 0.0],
        v: vec![0.0, 0.0],
        step: 0,
    };
    adam_step(&mut theta, &[0.0, 0.0], &mut st, &c);
    assert_eq!(theta, [0.25, -1.0]);
    st.m = vec![0.5, 0.5];
    st.v = vec![0.2, 0.2];
    let before = theta;
    adam_step(&mut theta, &[0.0, 0.0], &mut st, &c);
    assert_eq!(st.m, vec![0.45, 0.45]);
    assert_eq!(st.v, vec![0.2 * 0.999, 0.2 * 0.999]);
    assert_eq!(st.step, 2);
    // stale momentum still moves the parameters
    assert!(theta[0] < before[0]);
}

#[test]
fn sgd_two_steps() {
    let c = TrainConfig {
        learning_rate: 0.1,
        optimizer: Optimizer::Sgd,
        ..Default::default()
    };
    let mut theta = [0.0];
    sgd_step(&mut theta, &[2.0], &c);
    sgd_step(&mut theta, &[2.0], &c);
    assert!((theta[0] + 0.4).abs() < 1e-15);
}

#[test]
fn descent_on_one_dimensional_problem() {
    let vars = VarList::new(&["x"]).unwrap();
    let p = PdeProblem::from_text(
        vars,
        Domain::unit(1, None),
        &ProblemText {
            form: "D(u,x) - 0",
            ..Default::default()
        },
    )
    .unwrap();
    let mut m = TrainedModel::new(p, spec("fa f", vec![8, 1], 1), Mode::Ansatz, 1).unwrap();
    let h = m.fit(&SamplerSpec::uniform(1), &cfg(500, Mode::Ansatz)).unwrap().to_vec();
    let head: f64 = h[..10].iter().map(|r| r.loss).sum::<f64>() / 10.0;
    let tail: f64 = h[490..].iter().map(|r| r.loss).sum::<f64>() / 10.0;
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn staged_fits_concatenate_history() {
    let p = poisson();
    let mut m = TrainedModel::new(p.clone(), spec("fa f", vec![6, 1], 2), Mode::Ansatz, 2).unwrap();
    let near_edge = SamplerSpec::Mixture {
        components: vec![
            SamplerSpec::TruncatedGaussian { mean: vec![0.0, 0.5], sd: vec![0.1, 0.3] },
            SamplerSpec::uniform(2),
        ],
        weights: vec![0.5, 0.5],
    };
    m.fit(&near_edge, &cfg(7, Mode::Ansatz)).unwrap();
    m.fit(&SamplerSpec::uniform(2), &cfg(5, Mode::Ansatz)).unwrap();
    assert_eq!(m.history().len(), 12);
    assert!(m.history().iter().all(|r| r.loss.is_finite() && r.terms.is_none()));
}

#[test]
fn binding_holds_during_training() {
    let p = heat();
    let mut m = TrainedModel::new(p.clone(), spec("faR fa fa+ f", vec![6, 8, 6, 1], 3), Mode::Ansatz, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bnd = sampler::sample_boundary(p.domain(), 50, &mut rng);
    let ini = sampler::sample_initial(p.domain(), 50, &mut rng).unwrap();
    let u0 = p.initial().unwrap().clone();
    let mut checked = Vec::new();
    m.fit_observed(&SamplerSpec::uniform(3), &cfg(10, Mode::Ansatz), |k, model| {
        if ![0, 5, 10].contains(&k) {
            return;
        }
        checked.push(k);
        for v in model.evaluate(&bnd).unwrap() {
            assert!(v.abs() <= 1e-12);
        }
        for (v, x) in model.evaluate(&ini).unwrap().iter().zip(ini.iter()) {
            assert!((v - u0.eval_plain(x).unwrap()).abs() <= 1e-12);
        }
    })
    .unwrap();
    assert_eq!(checked, vec![0, 5, 10]);
}

#[test]
fn seeded_runs_are_bitwise_identical() {
    let run = |seed| {
        let mut m = TrainedModel::new(poisson(), spec("fa fa f", vec![5, 5, 1], 2), Mode::Soft, 4).unwrap();
        let c = TrainConfig { seed, ..cfg(15, Mode::Soft) };
        m.fit(&SamplerSpec::uniform(2), &c).unwrap();
        (m.theta().0.clone(), m.history().to_vec())
    };
    let a = run(9);
    assert_eq!(a, run(9));
    assert_ne!(a.0, run(10).0);
    assert!(a.1.iter().all(|r| r.terms.is_some()));
}

#[test]
fn soft_mode_reduces_boundary_error() {
    let mut m = TrainedModel::new(poisson(), spec("fa f", vec![10, 1], 2), Mode::Soft, 6).unwrap();
    let c = TrainConfig {
        learning_rate: 1e-2,
        ..cfg(300, Mode::Soft)
    };
    let h = m.fit(&SamplerSpec::uniform(2), &c).unwrap();
    let b0 = h[..10].iter().map(|r| r.terms.unwrap()[1]).sum::<f64>();
    let b1 = h[290..].iter().map(|r| r.terms.unwrap()[1]).sum::<f64>();
    assert!(b1 < 0.1 * b0, "{b0} -> {b1}");
    assert_eq!(h[0].terms.unwrap()[2], 0.0);
    let pts = PointSet::from_rows(2, &[[0.3, 0.4]]);
    assert_eq!(m.evaluate(&pts).unwrap(), m.network().forward(m.theta(), &pts).unwrap());
}

#[test]
fn second_order_soft_mode_penalises_rate() {
    let p = PdeProblem::from_text(
        default_vars(2, true).unwrap(),
        Domain::unit(2, Some(1)),
        &ProblemText {
            form: "D(D(u,t),t) - D(D(u,x),x)",
            initial: Some("sin(pi*x)"),
            initial_rate: Some("1"),
            ..Default::default()
        },
    )
    .unwrap();
    // incompatible rate: ansatz mode refuses, soft mode trains
    assert!(TrainedModel::new(p.clone(), spec("fa f", vec![4, 1], 2), Mode::Ansatz, 0).is_err());
    let mut m = TrainedModel::new(p, spec("fa f", vec![4, 1], 2), Mode::Soft, 0).unwrap();
    let h = m.fit(&SamplerSpec::uniform(2), &cfg(3, Mode::Soft)).unwrap();
    assert!(h.iter().all(|r| r.terms.unwrap()[2] > 0.0));
}

#[test]
fn configuration_errors() {
    let mut m = TrainedModel::new(poisson(), spec("fa f", vec![4, 1], 2), Mode::Ansatz, 0).unwrap();
    let err = m.fit(&SamplerSpec::uniform(2), &cfg(1, Mode::Soft)).unwrap_err();
    assert!(err.to_string().contains("train.mode"));
    let wide = SamplerSpec::uniform(2).onto(&Domain::new(vec![(0.0, 2.0), (0.0, 1.0)], None).unwrap());
    assert!(m.fit(&wide, &cfg(1, Mode::Ansatz)).unwrap_err().to_string().contains("sampler"));
    assert!(m.fit(&SamplerSpec::uniform(3), &cfg(1, Mode::Ansatz)).is_err());
    let bad = TrainConfig { batch_size: 0, ..Default::default() };
    assert!(bad.validate().unwrap_err().key.contains("batch_size"));
    let relu = NetworkSpec::new("fa f", vec![4, 1], vec![Activation::Relu], 2);
    let err = TrainedModel::new(poisson(), relu, Mode::Ansatz, 0).err().unwrap();
    assert!(err.to_string().contains("relu"));
    let err = TrainedModel::new(poisson(), spec("fa f", vec![4, 1], 3), Mode::Ansatz, 0).err().unwrap();
    assert!(err.to_string().contains("body"));
}

#[test]
fn overflow_reports_iteration() {
    let p = PdeProblem::from_text(
        default_vars(1, false).unwrap(),
        Domain::unit(1, None),
        &ProblemText {
            form: "D(u,x) - exp(exp(1000*x + 10))",
            ..Default::default()
        },
    )
    .unwrap();
    let mut m = TrainedModel::new(p, spec("fa f", vec![3, 1], 1), Mode::Ansatz, 0).unwrap();
    match m.fit(&SamplerSpec::uniform(1), &cfg(1, Mode::Ansatz)) {
        Err(SolverError::NonFinite { iteration, .. }) => assert_eq!(iteration, 0),
        other => panic!("{:?}", other.map(|h| h.len())),
    }
}

#[test]
fn loss_csv_layout() {
    let mut out = Vec::new();
    let h = [
        LossRecord { loss: 0.5, terms: None },
        LossRecord { loss: 0.25, terms: None },
    ];
    write_loss_csv(&mut out, &h).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "iter,loss\n0,5e-1\n1,2.5e-1\n");
    let mut out = Vec::new();
    write_loss_csv(&mut out, &[LossRecord { loss: 3.0, terms: Some([1.0, 2.0, 0.0]) }]).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "iter,loss,residual,boundary,initial\n0,3e0,1e0,2e0,0e0\n");
}
