//! Joinable table discovery over data lakes.

pub mod augment;
pub mod autodiff;
pub mod config;
pub mod eval;
pub mod featurize;
pub mod hin;
pub mod hypergraph;
pub mod io;
pub mod lake;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod search;
pub mod train;
pub mod verify;

pub use autodiff::Mat;
pub use config::RunConfig;
pub use eval::{EvalReport, SynthSpec, Variant};
pub use lake::{ColumnRecord, ColumnRepo, JoinPair, Lake, Split};
pub use model::{Encoder, ModelParams};
pub use search::{QueryRow, ResultSet, SearchConfig};
