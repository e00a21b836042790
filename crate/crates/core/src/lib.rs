//! Security indices of linear control systems from a model or from
//! input/output data.
//!
//! * [`model_index`]: the model-based index `δ(i)` via normal-rank tests.
//! * [`data_index`]: the data-driven index `ρ(i)` via subspace fixed points on
//!   Hankel data, its greedy upper bound, and data-driven attack witnesses.
//! * [`linsys`], [`hankel`], [`subspace`]: the supporting machinery.
//! * [`io`]: trajectory/system file formats and reports.

pub mod data_index;
pub mod error;
pub mod hankel;
pub mod index;
pub mod io;
pub mod linalg;
pub mod linsys;
pub mod model_index;
pub mod subspace;

pub use error::{Error, Result};
pub use index::{IndexResult, IndexValue};
pub use linsys::{AttackSignal, ComponentLayout, LtiSystem, PlatoonConfig, Trajectory};
pub use subspace::Subspace;
