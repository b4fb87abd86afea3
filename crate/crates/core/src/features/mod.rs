//! Frame-synchronous features: tracks, file format, normalization,
//! minibatching and the synthetic singer.

pub mod batch;
pub mod mel;
pub mod norm;
pub mod sequence;
pub mod toy;

pub use batch::{sample_minibatch, split_indices, Window};
pub use mel::{mel_grid, MelGrid};
pub use norm::{apply_norm, compute_norm_stats, invert_norm, NormStats, NormalizedSequence};
pub use sequence::{
    load_corpus, read_feature_file, read_manifest, write_feature_file, write_manifest, FeatureSequence,
    FRAME_RATE_HZ, N_BINS,
};
pub use toy::{synth_corpus, Formant, ToySingerConfig};
