//! Architecture strings, STSC insertion policies and network assembly.

pub mod network;
pub mod spec;
pub mod voting;

pub use network::{Mode, NetConfig, Network};
pub use spec::{parse_spec, AblationKind, LayerSpec, NetworkSpec, NeuronMode, StscPolicy};
pub use voting::{argmax, Voting};
