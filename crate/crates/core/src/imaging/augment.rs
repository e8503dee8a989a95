use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{rotate, scale};
use super::{PageImage, INK, PAPER};

/// Random training-time distortions. Each enabled operation is applied
/// independently with probability `probability`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub probability: f64,
    /// Degrees, at most 2.
    pub max_rotation: f64,
    /// Scale factor range, within [0.9, 1.1].
    pub scale_range: (f64, f64),
    pub morphology: bool,
    /// Fraction of flipped pixels, at most 0.002.
    pub max_noise: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            probability: 0.5,
            max_rotation: 2.0,
            scale_range: (0.9, 1.1),
            morphology: true,
            max_noise: 0.002,
        }
    }
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            probability: 0.0,
            max_rotation: 0.0,
            scale_range: (1.0, 1.0),
            morphology: false,
            max_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = (0.0..=1.0).contains(&self.probability)
            && (0.0..=2.0).contains(&self.max_rotation)
            && 0.9 <= self.scale_range.0
            && self.scale_range.0 <= self.scale_range.1
            && self.scale_range.1 <= 1.1
            && (0.0..=0.002).contains(&self.max_noise);
        if ok {
            Ok(())
        } else {
            Err(format!("augmentation parameters out of range: {self:?}"))
        }
    }
}

fn morph(img: &PageImage, grow: bool) -> PageImage {
    let (w, h) = (img.width, img.height);
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let mut any = false;
            let mut all = true;
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let ink = img.is_ink(nx, ny);
                    any |= ink;
                    all &= ink;
                }
            }
            out.pixels[y * w + x] = if (grow && any) || (!grow && all) {
                INK
            } else {
                PAPER
            };
        }
    }
    out
}

/// 3×3 dilation of the ink.
pub fn dilate(img: &PageImage) -> PageImage {
    morph(img, true)
}

/// 3×3 erosion of the ink.
pub fn erode(img: &PageImage) -> PageImage {
    morph(img, false)
}

pub fn augment<R: Rng + ?Sized>(img: &PageImage, params: &AugmentParams, rng: &mut R) -> PageImage {
    let mut out = img.clone();
    out.binarize();
    let p = params.probability;
    if params.max_rotation > 0.0 && rng.gen_bool(p) {
        out = rotate(
            &out,
            rng.gen_range(-params.max_rotation..=params.max_rotation),
        );
    }
    let (lo, hi) = params.scale_range;
    if hi > lo && rng.gen_bool(p) {
        out = scale(&out, rng.gen_range(lo..=hi));
    }
    if params.morphology && rng.gen_bool(p) {
        out = if rng.gen_bool(0.5) {
            dilate(&out)
        } else {
            erode(&out)
        };
    }
    if params.max_noise > 0.0 && rng.gen_bool(p) {
        let flips = (rng.gen_range(0.0..=params.max_noise) * out.pixels.len() as f64) as usize;
        for _ in 0..flips {
            let i = rng.gen_range(0..out.pixels.len());
            out.pixels[i] = if out.pixels[i] == INK { PAPER } else { INK };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn thick_strokes() -> PageImage {
        let mut img = PageImage::blank(120, 80, 200);
        for y in 10..70 {
            for x in 20..26 {
                img.set_ink(x, y);
            }
        }
        for y in 30..36 {
            for x in 10..110 {
                img.set_ink(x, y);
            }
        }
        img
    }

    #[test]
    fn identity_is_a_no_op() {
        let img = thick_strokes();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            assert_eq!(augment(&img, &AugmentParams::identity(), &mut rng), img);
        }
    }

    #[test]
    fn closing_restores_thick_strokes() {
        let img = thick_strokes();
        let closed = erode(&dilate(&img));
        let diff = img
            .pixels
            .iter()
            .zip(&closed.pixels)
            .filter(|(a, b)| a != b)
            .count();
        assert!(diff as f64 <= 0.05 * img.ink_count() as f64, "{diff}");
    }

    #[test]
    fn dimensions_kept_without_scaling() {
        let img = thick_strokes();
        let params = AugmentParams {
            probability: 1.0,
            scale_range: (1.0, 1.0),
            ..AugmentParams::default()
        };
        params.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let out = augment(&img, &params, &mut rng);
            assert_eq!((out.width, out.height), (img.width, img.height));
            assert!(out.is_binary());
        }
    }

    #[test]
    fn out_of_range_rejected() {
        let params = AugmentParams {
            max_rotation: 3.0,
            ..AugmentParams::default()
        };
        assert!(params.validate().is_err());
    }
}
