//! Approximate nearest-neighbor retrieval over the co-embedding space.

pub mod hnsw;
pub mod snapshot;

pub use hnsw::{recall_at_k, HnswConfig, HnswIndex};
pub use snapshot::{
    load_index, save_index, snapshot_bytes, snapshot_from_bytes, SNAPSHOT_MAGIC, SNAPSHOT_VERSION,
};
