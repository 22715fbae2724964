//! SAR signal conditioning, label encoding, flip augmentation and the
//! synthetic bi-temporal tile generator.

mod augment;
mod condition;
mod median;
mod synth;

pub use augment::{flip_augment, flip_raster, FlipMode};
pub use condition::{
    assemble_input, clip_db, clip_normalize, condition_tile, encode_labels, normalize, ClipSpec, Sample,
};
pub use median::temporal_median;
pub use synth::{synth_generate, SynthSpec};
