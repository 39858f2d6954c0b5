//! Scenario files, result documents and the `dfsnet` command line on top
//! of `dfsnet-core`.

pub mod cli;
pub mod error;
pub mod results;
pub mod run;
pub mod scenario;

pub use error::CliError;
pub use results::ResultDoc;
pub use scenario::{Resolved, Scenario};
