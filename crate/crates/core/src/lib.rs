pub mod guard;
pub mod model;
pub mod rng;
pub mod topo;
pub mod yaml;
pub mod sim;
pub mod stimgen;
pub mod verify;
pub mod emit;
pub(crate) mod gate;
pub mod eval;
pub mod semantics;
pub mod pipeline;
