use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::train::Sample;
use super::ModelError;
use crate::codec::{encode, TokenDictionary};
use crate::corpus::synth::{sample_certificate, WorldConfig};
use crate::corpus::{build_annotation, AnnotationStrategy};
use crate::imaging::{render_certificate, LayoutSpec, MarginSide, PageGeometry, StyleSpec};

/// Endless source of synthetic training pages.
pub trait SynthStream {
    fn next_sample(&mut self) -> Result<Sample, ModelError>;
}

/// Freshly sampled certificates rendered in the printed style (no jitter,
/// no skew), annotated with a fixed strategy. Certificates whose annotation
/// needs characters outside the dictionary are skipped.
#[derive(Debug, Clone)]
pub struct PrintedStream {
    world: WorldConfig,
    strategy: AnnotationStrategy,
    dict: TokenDictionary,
    geometry: PageGeometry,
    rng: ChaCha8Rng,
}

impl PrintedStream {
    pub fn new(
        world: WorldConfig,
        strategy: AnnotationStrategy,
        dict: TokenDictionary,
        page_height: usize,
        seed: u64,
    ) -> Self {
        Self {
            world,
            strategy,
            dict,
            geometry: PageGeometry::for_height(page_height),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl SynthStream for PrintedStream {
    fn next_sample(&mut self) -> Result<Sample, ModelError> {
        let style = StyleSpec::printed(&self.geometry);
        loop {
            let c = sample_certificate(&self.world, &mut self.rng);
            let layout = LayoutSpec {
                margin_side: if self.rng.gen_bool(0.5) {
                    MarginSide::Right
                } else {
                    MarginSide::Left
                },
                margin_rule_x: self.rng.gen_range(0.2..0.24),
                date_style: c.date_style,
                skew_angle: 0.0,
            };
            let annotation = build_annotation(&c.registry, self.strategy, Some(&c.verbatim))
                .expect("sampled registry rows are valid");
            let Ok(target) = encode(&annotation, &self.dict) else {
                continue;
            };
            let Ok((image, _)) =
                render_certificate(&c.verbatim, &self.geometry, &layout, &style, &mut self.rng)
            else {
                continue;
            };
            return Ok(Sample {
                image,
                target: target.ids,
            });
        }
    }
}

/// A fixed list of samples replayed in order, mostly for tests.
#[derive(Debug, Clone)]
pub struct ReplayStream {
    samples: Vec<Sample>,
    next: usize,
}

impl ReplayStream {
    pub fn new(samples: Vec<Sample>) -> Self {
        assert!(!samples.is_empty(), "replay stream needs samples");
        Self { samples, next: 0 }
    }
}

impl SynthStream for ReplayStream {
    fn next_sample(&mut self) -> Result<Sample, ModelError> {
        let s = self.samples[self.next].clone();
        self.next = (self.next + 1) % self.samples.len();
        Ok(s)
    }
}
