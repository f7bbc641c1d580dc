//! Gallery enrollment, SVM-Gallery classification and view consolidation.

mod gallery;
mod scoring;
mod svm;

pub use gallery::{build_gallery, Embedder, Gallery, GalleryMode};
pub use scoring::{majority_vote, reduce_rank_vector, score_probe, ReductionVector, ViewScore, Vote};
pub use svm::{softmax, SvmConfig, SvmModel};
