//! Hamiltonian graph neural networks: node features evolve along learned
//! Hamiltonian flows between neighborhood aggregations.
//!
//! Everything is generic over the scalar type; the aliases below fix it to
//! `f64`.

pub mod engine;
pub mod graphdata;
pub mod hamiltonian;
pub mod model;
pub mod odeint;
pub mod train;

pub type Tensor = engine::Tensor<f64>;
pub type Expr = engine::Expr<f64>;
pub type HamiltonianSpec = hamiltonian::HamiltonianSpec<f64>;
pub type PhaseState = hamiltonian::PhaseState<f64>;
pub type Trajectory = odeint::Trajectory<f64>;
pub type GraphDataset = graphdata::GraphDataset;
pub type ModelParams = model::ModelParams<f64>;
