pub mod ansatz;
pub mod cli;
pub mod engine;
pub mod expr;
pub mod network;
pub mod oracle;
pub mod points;
pub mod problem;
pub mod sampler;
pub mod solver;
