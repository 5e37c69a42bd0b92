mod data;
mod explain;
mod model;
mod perturb;
mod report;

pub use data::{ingest, synth};
pub use explain::{cmd_explain as explain, Selector};
pub use model::{cmd_evaluate as evaluate, cmd_train as train};
pub use perturb::cmd_perturb as perturb;
pub use report::cmd_report as report;
