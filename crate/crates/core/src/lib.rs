pub mod active_set;
pub mod data;
pub mod error;
pub mod hyper;
pub mod inner;
pub mod kernel;
pub mod lattice;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod oracles;
pub mod outer;
pub mod smo;
pub mod synthetic;

pub const FORMAT_VERSION: u32 = 1;
