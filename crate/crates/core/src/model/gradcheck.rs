//! Finite-difference verification of the hand-written gradients.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::ops::{cross_entropy, layer_norm, layer_norm_backward, linear, linear_backward};
use super::{ModelConfig, ModelError};
use crate::codec::TokenId;
use crate::imaging::PageImage;

/// Denominator floor of the relative error `|a − n| / max(|a|, |n|, floor)`,
/// so entries whose true gradient is near zero are judged on absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GradCheckComponent {
    /// `y = xW + b` under a loss linear in `y`.
    Linear,
    /// Row softmax followed by cross-entropy, differentiated in the logits.
    SoftmaxCrossEntropy,
    LayerNorm,
    /// The whole encoder-decoder on a small page and a two-token target,
    /// dropout disabled.
    FullModel(ModelConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
}

fn relative(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_FLOOR)
}

struct Tally {
    checked: usize,
    rel: f64,
    abs: f64,
}

impl Tally {
    fn new() -> Self {
        Self {
            checked: 0,
            rel: 0.0,
            abs: 0.0,
        }
    }

    fn add(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        self.rel = self.rel.max(relative(analytic, numeric));
        self.abs = self.abs.max((analytic - numeric).abs());
    }

    fn report(self) -> GradCheckReport {
        GradCheckReport {
            checked: self.checked,
            max_relative_error: self.rel,
            max_absolute_error: self.abs,
        }
    }
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Picks `count` distinct indices below `n` (all of them when `n <= count`).
fn pick(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(rng);
    all.truncate(count);
    all
}

/// Central differences of `f` at the chosen entries of `values`.
fn numeric_at(
    values: &mut Vec<f64>,
    at: &[usize],
    eps: f64,
    f: &mut dyn FnMut(&[f64]) -> f64,
) -> Vec<f64> {
    at.iter()
        .map(|&i| {
            let orig = values[i];
            values[i] = orig + eps;
            let up = f(values);
            values[i] = orig - eps;
            let down = f(values);
            values[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Compares analytic gradients with central finite differences on at least
/// 100 randomly chosen parameters of `component`.
pub fn grad_check(
    component: &GradCheckComponent,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new();
    match component {
        GradCheckComponent::Linear => {
            let (m, k, n) = (6, 12, 10);
            let x = random_vec(m * k, &mut rng);
            let r = random_vec(m * n, &mut rng);
            // params: W (k×n) then b (n)
            let mut theta = random_vec(k * n + n, &mut rng);
            let mut loss = |t: &[f64]| -> f64 {
                let y = linear(&x, m, k, &t[..k * n], &t[k * n..]);
                y.iter().zip(&r).map(|(a, b)| a * b).sum()
            };
            let mut dw = vec![0.0; k * n];
            let mut db = vec![0.0; n];
            linear_backward(&x, m, k, &theta[..k * n], &r, &mut dw, &mut db, false);
            let analytic: Vec<f64> = dw.into_iter().chain(db).collect();
            let at = pick(theta.len(), 110, &mut rng);
            let numeric = numeric_at(&mut theta, &at, eps, &mut loss);
            for (&i, &num) in at.iter().zip(&numeric) {
                tally.add(analytic[i], num);
            }
        }
        GradCheckComponent::SoftmaxCrossEntropy => {
            let (rows, classes) = (12, 15);
            let targets: Vec<u32> = (0..rows)
                .map(|_| rng.gen_range(0..classes) as u32)
                .collect();
            let mut logits: Vec<f64> = random_vec(rows * classes, &mut rng)
                .into_iter()
                .map(|v| 3.0 * v)
                .collect();
            let (_, analytic) = cross_entropy(&logits, classes, &targets, rows as f64);
            let mut loss = |t: &[f64]| cross_entropy(t, classes, &targets, rows as f64).0;
            let at = pick(logits.len(), 120, &mut rng);
            let numeric = numeric_at(&mut logits, &at, eps, &mut loss);
            for (&i, &num) in at.iter().zip(&numeric) {
                tally.add(analytic[i], num);
            }
        }
        GradCheckComponent::LayerNorm => {
            let (rows, cols) = (8, 16);
            let r = random_vec(rows * cols, &mut rng);
            // params: x, gamma, beta
            let mut theta = random_vec(rows * cols + 2 * cols, &mut rng);
            let split = |t: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
                (
                    t[..rows * cols].to_vec(),
                    t[rows * cols..rows * cols + cols].to_vec(),
                    t[rows * cols + cols..].to_vec(),
                )
            };
            let mut loss = |t: &[f64]| {
                let (x, g, b) = split(t);
                let (y, _, _) = layer_norm(&x, cols, &g, &b);
                y.iter().zip(&r).map(|(a, b)| a * b * a).sum::<f64>()
            };
            let (x, g, b) = split(&theta);
            let (y, xhat, rstd) = layer_norm(&x, cols, &g, &b);
            let dy: Vec<f64> = y.iter().zip(&r).map(|(a, b)| 2.0 * a * b).collect();
            let mut dg = vec![0.0; cols];
            let mut dbeta = vec![0.0; cols];
            let dx = layer_norm_backward(&xhat, &rstd, &g, &dy, &mut dg, &mut dbeta);
            let analytic: Vec<f64> = dx.into_iter().chain(dg).chain(dbeta).collect();
            let at = pick(theta.len(), 120, &mut rng);
            let numeric = numeric_at(&mut theta, &at, eps, &mut loss);
            for (&i, &num) in at.iter().zip(&numeric) {
                tally.add(analytic[i], num);
            }
        }
        GradCheckComponent::FullModel(cfg) => {
            let cfg = ModelConfig {
                dropout: 0.0,
                ..cfg.clone()
            };
            let vocab = 14;
            let mut net = Network::new(&cfg, vocab, &mut rng)?;
            let (sy, sx) = cfg.total_stride();
            let mut img = PageImage::blank(sx * 6, sy * 3, 200);
            for p in &mut img.pixels {
                if rng.gen_bool(0.15) {
                    *p = 0;
                }
            }
            let mut target: Vec<TokenId> = (0..3)
                .map(|_| rng.gen_range(0..vocab as TokenId - 1))
                .collect();
            target.push(vocab as TokenId - 1);
            let inputs = &target[..target.len() - 1];
            let norm = target.len() as f64;
            let mut grads = net.params().zeros_like();
            net.loss_and_grads(&img, inputs, &target, norm, None, &mut grads)?;
            let tensors = net.params().len();
            // two entries from every tensor, then random entries up to at least 100
            let mut picks: Vec<(usize, usize)> = Vec::new();
            for t in 0..tensors {
                for i in pick(net.params().tensors()[t].len(), 2, &mut rng) {
                    picks.push((t, i));
                }
            }
            while picks.len() < 100 {
                let t = rng.gen_range(0..tensors);
                let i = rng.gen_range(0..net.params().tensors()[t].len());
                picks.push((t, i));
            }
            let mut scratch = net.params().zeros_like();
            let mut loss_at = |net: &Network| -> Result<f64, ModelError> {
                net.loss_and_grads(&img, inputs, &target, norm, None, &mut scratch)
            };
            for (t, i) in picks {
                let orig = net.params().tensors()[t].data[i];
                net.params_mut().tensors_mut()[t].data[i] = orig + eps;
                let up = loss_at(&net)?;
                net.params_mut().tensors_mut()[t].data[i] = orig - eps;
                let down = loss_at(&net)?;
                net.params_mut().tensors_mut()[t].data[i] = orig;
                tally.add(grads[t][i], (up - down) / (2.0 * eps));
            }
        }
    }
    Ok(tally.report())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isolated_layers() {
        for c in [
            GradCheckComponent::Linear,
            GradCheckComponent::SoftmaxCrossEntropy,
            GradCheckComponent::LayerNorm,
        ] {
            let r = grad_check(&c, 1e-5, 7).unwrap();
            assert!(r.checked >= 100);
            assert!(r.max_relative_error < 1e-6, "{c:?}: {r:?}");
        }
    }

    #[test]
    fn full_desk_model() {
        let r = grad_check(
            &GradCheckComponent::FullModel(ModelConfig::desk()),
            1e-5,
            11,
        )
        .unwrap();
        assert!(r.checked >= 100);
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }
}
