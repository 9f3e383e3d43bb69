//! Documents, featurization, and positive-unlabeled splits.

mod document;
mod features;
mod split;

pub use document::{ingest_jsonl, labels_of, parse_jsonl, write_jsonl, Document, Label};
pub use features::{build_vocabulary, load_embeddings, tokenize, vectorize_tfidf, Embeddings, FeatureMatrix};
pub use split::{
    make_pu_split, select_positives, LabelingConfig, LabelingMechanism, ManifestMeta, PUDataset, SplitManifest,
    SplitMeta, TrainView,
};
