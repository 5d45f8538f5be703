//! Linear re-alignment of image and text embedding spaces, retrieval-augmented
//! caption generation on top of the aligned space, caption metrics, and a
//! self-training loop that grows the caption datastore.

pub mod align;
pub mod embedding;
pub mod embx;
pub mod captioner;
pub mod dal;
pub mod metrics;
pub mod mock;
pub mod error;
pub mod vecstore;
mod util;

pub use align::{AlignmentMap, MapKind, Preprocessor, Scheme};
pub use embedding::{EmbeddingMatrix, Modality};
pub use error::{Error, ErrorClass, Result};
pub use util::{file_sha256, write_atomic};
