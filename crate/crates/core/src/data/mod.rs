//! Ingestion, vocabularies, encoding, splitting, batching and synthetic data.

pub mod bucketize;
pub mod dataset;
pub mod ingest;
pub mod schema;
pub mod split;
pub mod synthetic;

pub use bucketize::bucketize_numeric;
pub use dataset::EncodedDataset;
pub use ingest::{read_delimited, read_movielens, IngestConfig};
pub use schema::{
    build_vocabulary, encode_row, FieldKind, FieldSchema, FieldSpec, FieldVocab, RawRow, Vocabulary, OOV_INDEX,
};
pub use split::{
    make_batches, split_dataset, Batch, Batches, CyclingBatches, DatasetSplits, Split, SplitRatios, SplitTag,
};
pub use synthetic::{generate_synthetic, generate_synthetic_dataset, SyntheticSpec};
