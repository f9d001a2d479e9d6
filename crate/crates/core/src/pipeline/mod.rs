//! Preprocessing, dataset manifests and phantom generation.

mod dataset;
mod experiment;
mod phantom;
mod preprocess;

pub use dataset::{Case, DatasetEntry, DatasetManifest, Split, DATASET_VERSION};
pub use phantom::{make_phantom_dataset, phantom_image, PhantomConfig, DATASET_NAME};
pub use preprocess::{preprocess, preprocess_mask, PreprocessConfig};
pub use experiment::{run_phantom_experiment, ArmResult, ExperimentConfig, ExperimentResult};
