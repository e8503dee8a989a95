//! Handwritten birth certificate transcription: synthetic corpus, token
//! codec, page imaging, an attention encoder-decoder, checkpoint transfer and
//! field-level metrics.

pub mod codec;
pub mod corpus;
pub mod imaging;
pub mod metrics;
pub mod model;
pub mod transfer;
