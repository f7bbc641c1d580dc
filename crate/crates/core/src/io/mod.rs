//! On-disk formats: sequence files, rendered stacks, dataset manifests and
//! tensor containers.

pub mod container;
pub mod manifest;
pub mod seqfile;
pub mod stackfile;

pub use container::{blob_path, TensorContainer};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use seqfile::{encode_sequence, read_sequence, write_sequence};
pub use stackfile::{read_stack, write_stack};

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
