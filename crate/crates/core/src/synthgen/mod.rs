//! Synthetic kidney-with-protrusion masks for training the protuberance
//! network, and the input degradations applied to them during training.

mod augment;
mod compose;
mod dataset;
mod shapes;

pub use augment::{augment_step2_input, Step2AugConfig};
pub use compose::{
    compose_at, containment_ratio, coverage_ratio, try_compose, ComposeLimits, Composition, Placement, Rejection,
    SynthMeta, SynthSample, TargetMode,
};
pub use dataset::{generate_dataset, generate_sample, Manifest, SampleRecord, SynthConfig, MANIFEST_NAME, MANIFEST_VERSION};
pub use shapes::{gen_kidney_shape, gen_tumor_shape, largest_component, ShapeParams};
