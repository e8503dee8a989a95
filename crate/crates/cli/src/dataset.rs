//! On-disk synthetic datasets.
//!
//! ```text
//! <dir>/manifest.json        {"train":[ids],"valid":[ids],"test":[ids]}
//! <dir>/generator.json       seed, generator and split settings
//! <dir>/registry.csv         registry row of page i on line i + 2
//! <dir>/truth.jsonl          verbatim (diplomatic) transcription per page
//! <dir>/layouts.jsonl        writer, layout and style per page
//! <dir>/pages/NNNN.pgm
//! <dir>/annotations/<strategy>.jsonl
//! ```

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use acta_core::corpus::synth::{sample_certificate_by, WorldConfig};
use acta_core::corpus::{
    build_annotation, load_registry_csv, read_annotations, write_annotations, write_registry_csv,
    AnnotationLine, AnnotationStrategy, CertificateRecord, RawRegistryRecord,
};
use acta_core::imaging::{
    render_certificate, LayoutSpec, MarginSide, PageGeometry, PageImage, StyleSpec,
};
use anyhow::{bail, ensure, Context, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub pages: usize,
    pub writers: u32,
    pub page_height: usize,
    pub right_margin_fraction: f64,
    pub verbose_date_fraction: f64,
    pub abbreviation_probability: f64,
    pub middle_name_probability: f64,
    pub max_skew: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let world = WorldConfig::default();
        Self {
            pages: 201,
            writers: world.writers,
            page_height: 512,
            right_margin_fraction: 0.5,
            verbose_date_fraction: world.verbose_date_fraction,
            abbreviation_probability: world.abbreviation_probability,
            middle_name_probability: world.middle_name_probability,
            max_skew: 3.0,
        }
    }
}

impl GeneratorConfig {
    pub fn world(&self) -> WorldConfig {
        WorldConfig {
            writers: self.writers,
            abbreviation_probability: self.abbreviation_probability,
            verbose_date_fraction: self.verbose_date_fraction,
            middle_name_probability: self.middle_name_probability,
            ..WorldConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.pages >= 1 && self.writers >= 1,
            "need at least one page and one writer"
        );
        ensure!(
            self.page_height >= 64,
            "page height {} is too small",
            self.page_height
        );
        for (name, p) in [
            ("right_margin_fraction", self.right_margin_fraction),
            ("verbose_date_fraction", self.verbose_date_fraction),
            ("abbreviation_probability", self.abbreviation_probability),
            ("middle_name_probability", self.middle_name_probability),
        ] {
            ensure!(
                (0.0..=1.0).contains(&p),
                "{name} must lie in [0, 1], got {p}"
            );
        }
        ensure!(
            (0.0..=5.0).contains(&self.max_skew),
            "max_skew must lie in [0, 5]"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitConfig {
    pub fn validate(&self, pages: usize) -> Result<()> {
        ensure!(
            self.train >= 0.0 && self.valid >= 0.0 && self.test >= 0.0,
            "split fractions must be non-negative"
        );
        ensure!(
            (self.train + self.valid + self.test - 1.0).abs() < 1e-9,
            "split fractions must sum to 1"
        );
        ensure!(pages >= 3, "need at least 3 pages to split, got {pages}");
        Ok(())
    }

    /// Shuffled split; valid and test sizes are rounded, train takes the rest.
    pub fn split(&self, pages: usize, seed: u64) -> Manifest {
        let mut ids: Vec<usize> = (0..pages).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5b11_u64));
        let n_valid = (self.valid * pages as f64).round() as usize;
        let n_test = (self.test * pages as f64).round() as usize;
        let mut test = ids.split_off(pages - n_test);
        let mut valid = ids.split_off(ids.len() - n_valid);
        ids.sort_unstable();
        valid.sort_unstable();
        test.sort_unstable();
        Manifest {
            train: ids,
            valid,
            test,
        }
    }
}

/// Settings a dataset was generated with, stored next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub split: SplitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageLayout {
    pub page: usize,
    pub writer: u32,
    pub layout: LayoutSpec,
    pub style: StyleSpec,
}

pub fn page_file(id: usize) -> String {
    format!("pages/{id:04}.pgm")
}

/// Draws page `index` of a dataset generated with `seed`.
pub fn generate_page(
    cfg: &GeneratorConfig,
    seed: u64,
    index: usize,
) -> Result<(PageImage, RawRegistryRecord, CertificateRecord, PageLayout)> {
    let world = cfg.world();
    let geo = PageGeometry::for_height(cfg.page_height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
    let writer = (index % cfg.writers as usize) as u32;
    let sampled = sample_certificate_by(&world, writer, &mut rng);
    let layout = LayoutSpec {
        margin_side: if rng.gen_bool(cfg.right_margin_fraction) {
            MarginSide::Right
        } else {
            MarginSide::Left
        },
        margin_rule_x: rng.gen_range(0.2..0.24),
        date_style: sampled.date_style,
        skew_angle: if cfg.max_skew > 0.0 {
            rng.gen_range(-cfg.max_skew..=cfg.max_skew)
        } else {
            0.0
        },
    };
    let style = StyleSpec::for_writer(writer, &geo);
    let (img, _) = render_certificate(&sampled.verbatim, &geo, &layout, &style, &mut rng)
        .with_context(|| format!("rendering page {index}"))?;
    Ok((
        img,
        sampled.registry,
        sampled.verbatim,
        PageLayout {
            page: index,
            writer,
            layout,
            style,
        },
    ))
}

fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Refuses to overwrite a non-empty directory unless `force` is set.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            bail!(
                "{} exists and is not empty (use --force to overwrite)",
                dir.display()
            );
        }
        if non_empty {
            fs::remove_dir_all(dir)?;
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Writes a complete dataset. Pages are a pure function of (config, seed).
pub fn generate(
    dir: &Path,
    cfg: &GeneratorConfig,
    split: &SplitConfig,
    seed: u64,
    force: bool,
) -> Result<Manifest> {
    cfg.validate()?;
    split.validate(cfg.pages)?;
    prepare_output_dir(dir, force)?;
    fs::create_dir_all(dir.join("pages"))?;
    let mut registry = Vec::with_capacity(cfg.pages);
    let mut truth = Vec::with_capacity(cfg.pages);
    let mut layouts = Vec::with_capacity(cfg.pages);
    for i in 0..cfg.pages {
        let (img, raw, verbatim, layout) = generate_page(cfg, seed, i)?;
        img.save_pgm(dir.join(page_file(i)))?;
        registry.push(raw);
        truth.push(AnnotationLine::new(
            page_file(i),
            AnnotationStrategy::Diplomatic,
            &verbatim,
        ));
        layouts.push(layout);
    }
    let manifest = split.split(cfg.pages, seed);
    write_registry_csv(
        BufWriter::new(fs::File::create(dir.join("registry.csv"))?),
        &registry,
    )?;
    write_annotations(
        BufWriter::new(fs::File::create(dir.join("truth.jsonl"))?),
        &truth,
    )?;
    write_json_lines(&dir.join("layouts.jsonl"), &layouts)?;
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    let record = GeneratorRecord {
        seed,
        generator: cfg.clone(),
        split: *split,
    };
    fs::write(
        dir.join("generator.json"),
        serde_json::to_string_pretty(&record)? + "\n",
    )?;
    log::info!(
        "generated {} pages in {} ({} train / {} valid / {} test)",
        cfg.pages,
        dir.display(),
        manifest.train.len(),
        manifest.valid.len(),
        manifest.test.len()
    );
    Ok(manifest)
}

/// A dataset directory opened for reading.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub registry: Vec<RawRegistryRecord>,
    /// Absent for datasets assembled by other means.
    pub generator: Option<GeneratorRecord>,
}

/// Which part of the manifest to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(format!(
                "unknown split {s:?} (expected train, valid or test)"
            )),
        }
    }
}

impl Dataset {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let manifest_path = dir.join("manifest.json");
        let manifest: Manifest = serde_json::from_str(
            &fs::read_to_string(&manifest_path)
                .with_context(|| format!("reading {}", manifest_path.display()))?,
        )
        .with_context(|| format!("parsing {}", manifest_path.display()))?;
        let registry = load_registry_csv(dir.join("registry.csv"))?;
        for &id in manifest
            .train
            .iter()
            .chain(&manifest.valid)
            .chain(&manifest.test)
        {
            ensure!(id < registry.len(), "manifest id {id} has no registry row");
        }
        let gen_path = dir.join("generator.json");
        let generator = if gen_path.exists() {
            Some(
                serde_json::from_str(&fs::read_to_string(&gen_path)?)
                    .with_context(|| format!("parsing {}", gen_path.display()))?,
            )
        } else {
            None
        };
        Ok(Self {
            dir,
            manifest,
            registry,
            generator,
        })
    }

    pub fn ids(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.manifest.train,
            Split::Valid => &self.manifest.valid,
            Split::Test => &self.manifest.test,
        }
    }

    pub fn page(&self, id: usize) -> Result<PageImage> {
        let path = self.dir.join(page_file(id));
        PageImage::load_pgm(&path).with_context(|| format!("loading {}", path.display()))
    }

    /// Verbatim transcriptions, indexed by page id.
    pub fn truth(&self) -> Result<Vec<CertificateRecord>> {
        self.read_records(&self.dir.join("truth.jsonl"))
    }

    pub fn annotation_path(&self, strategy: AnnotationStrategy) -> PathBuf {
        self.dir
            .join("annotations")
            .join(format!("{}.jsonl", strategy.as_str()))
    }

    /// Reads an annotation file into records indexed by page id.
    pub fn read_records(&self, path: &Path) -> Result<Vec<CertificateRecord>> {
        let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let lines = read_annotations(BufReader::new(file))
            .with_context(|| format!("reading {}", path.display()))?;
        ensure!(
            lines.len() == self.registry.len(),
            "{} has {} lines for {} pages",
            path.display(),
            lines.len(),
            self.registry.len()
        );
        lines
            .into_iter()
            .enumerate()
            .map(|(i, (line, record))| {
                ensure!(
                    line.image == page_file(i),
                    "line {} names {}, expected {}",
                    i + 1,
                    line.image,
                    page_file(i)
                );
                Ok(record)
            })
            .collect()
    }

    /// Annotations of every page under `strategy`.
    pub fn build_annotations(
        &self,
        strategy: AnnotationStrategy,
    ) -> Result<Vec<CertificateRecord>> {
        let truth = if strategy.needs_diplomatic_truth() {
            Some(
                self.truth()
                    .context("diplomatic annotation needs the verbatim transcriptions")?,
            )
        } else {
            None
        };
        self.registry
            .iter()
            .enumerate()
            .map(|(i, raw)| {
                build_annotation(raw, strategy, truth.as_ref().map(|t| &t[i]))
                    .with_context(|| format!("annotating page {i}"))
            })
            .collect()
    }

    /// Writes `annotations/<strategy>.jsonl` and returns its path.
    pub fn annotate(&self, strategy: AnnotationStrategy) -> Result<PathBuf> {
        let records = self.build_annotations(strategy)?;
        let lines: Vec<_> = records
            .iter()
            .enumerate()
            .map(|(i, r)| AnnotationLine::new(page_file(i), strategy, r))
            .collect();
        let path = self.annotation_path(strategy);
        fs::create_dir_all(path.parent().expect("annotation path has a parent"))?;
        write_annotations(BufWriter::new(fs::File::create(&path)?), &lines)?;
        Ok(path)
    }

    /// Annotations for `strategy`, read from disk when present.
    pub fn annotations(&self, strategy: AnnotationStrategy) -> Result<Vec<CertificateRecord>> {
        let path = self.annotation_path(strategy);
        if path.exists() {
            self.read_records(&path)
        } else {
            self.build_annotations(strategy)
        }
    }
}
