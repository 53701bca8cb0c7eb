/// A batch of points stored row-major, `dim` coordinates per point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    data: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "ragged point data");
        Self { dim, data }
    }

    pub fn empty(dim: usize) -> Self {
        Self::new(dim, Vec::new())
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), dim, "row has wrong dimension");
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &[f64]> + ExactSizeIterator {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn push(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.dim);
        self.data.extend_from_slice(p);
    }

    pub fn extend(&mut self, other: &PointSet) {
        assert_eq!(other.dim, self.dim);
        self.data.extend_from_slice(&other.data);
    }

    pub fn subset(&self, idx: &[usize]) -> PointSet {
        let mut out = PointSet::empty(self.dim);
        for &i in idx {
            out.push(self.point(i));
        }
        out
    }
}
