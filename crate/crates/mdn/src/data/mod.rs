//! Trial data model: labeled signal windows, synthetic generation,
//! subject/session-disjoint splits, and on-disk archives.

mod archive;
mod split;
mod synth;
mod trial;

pub use archive::{load_archive, save_archive};
pub use split::{make_splits, DatasetSplit, SplitParams};
pub use synth::{generate_synthetic, SyntheticSpec};
pub use trial::LabeledTrial;
