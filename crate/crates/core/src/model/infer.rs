use serde::{Deserialize, Serialize};

use super::network::Network;
use super::ModelError;
use crate::codec::{decode, Decoded, TokenDictionary, TokenId};
use crate::imaging::{deskew_with, resize_to_height, DeskewParams, PageImage};

/// Deskews a page and resizes it to `height`. Returns the model input and
/// the estimated skew in degrees.
pub fn preprocess(
    img: &PageImage,
    height: usize,
    deskew: &DeskewParams,
) -> Result<(PageImage, f64), ModelError> {
    let (straight, angle) = deskew_with(img, deskew)?;
    Ok((resize_to_height(&straight, height), angle))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub tokens: Vec<TokenId>,
    pub skew: f64,
}

impl Prediction {
    pub fn decoded(&self, dict: &TokenDictionary) -> Decoded {
        decode(&crate::codec::TokenSequence::new(self.tokens.clone()), dict)
    }
}

/// Preprocesses `img` and decodes it greedily: the highest-scoring token
/// (lowest id on ties) at each step until EOT or `max_sequence_length`.
pub fn infer_greedy(
    img: &PageImage,
    net: &Network,
    dict: &TokenDictionary,
) -> Result<Prediction, ModelError> {
    if dict.len() != net.vocab() {
        return Err(ModelError::Config(format!(
            "dictionary has {} tokens, network expects {}",
            dict.len(),
            net.vocab()
        )));
    }
    let cfg = net.config();
    let (input, skew) = preprocess(img, cfg.input_height, &DeskewParams::default())?;
    let features = net.encode_image(&input)?;
    let tokens = net.greedy(&features, dict.eot(), cfg.max_sequence_length);
    Ok(Prediction { tokens, skew })
}
