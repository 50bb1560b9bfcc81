//! Synthetic paired speech/text corpus and its on-disk formats.

mod corpus;
mod features;

pub use corpus::{
    load_split, synthesize, synthesize_corpus, CorpusManifest, ManifestRecord, PairedSample, Split,
    SynthConfig, SyntheticCorpus,
};
pub use features::{
    decode_features, encode_features, read_feature_file, write_feature_file, FeatureSequence,
    FEATURE_MAGIC, FEATURE_VERSION,
};
