//! The pipeline steps behind each subcommand.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use acta_core::codec::{
    build_dictionary, decode, encode, Decoded, ParseDefect, PartialRecord, TokenSequence,
};
use acta_core::corpus::synth::WorldConfig;
use acta_core::corpus::{AnnotationStrategy, CertificateRecord, FieldKey};
use acta_core::imaging::DeskewParams;
use acta_core::metrics::{evaluate, Averaging, EvalReport};
use acta_core::model::{
    infer_greedy, preprocess, train, EpochLog, ModelConfig, Network, Preset, PrintedStream, Sample,
    TrainConfig,
};
use acta_core::transfer::{adapt_dictionary, ModelCheckpoint, TrainingMeta};
use anyhow::{bail, ensure, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{generate, page_file, Dataset, GeneratorConfig, Manifest, Split, SplitConfig};

/// Everything a run depends on besides the files it reads. Loaded from a
/// JSON file; command-line flags override individual values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    pub preset: Preset,
    /// Replaces the preset's model configuration when given.
    pub model: Option<ModelConfig>,
    /// Replaces the preset's training configuration when given.
    pub train: Option<TrainConfig>,
    pub strategy: AnnotationStrategy,
    pub generator: GeneratorConfig,
    pub split: SplitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            dataset: None,
            checkpoint: None,
            reports: None,
            preset: Preset::Desk,
            model: None,
            train: None,
            strategy: AnnotationStrategy::Diplomatic,
            generator: GeneratorConfig::default(),
            split: SplitConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model
            .clone()
            .unwrap_or_else(|| ModelConfig::preset(self.preset))
    }

    /// The training configuration, its seed taken from the run seed.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone().unwrap_or_else(|| match self.preset {
            Preset::Desk => TrainConfig::desk(),
            Preset::Paper => TrainConfig::paper(),
        });
        t.seed = self.seed;
        t
    }
}

pub fn cmd_generate(out: &Path, cfg: &RunConfig, force: bool) -> Result<Manifest> {
    generate(out, &cfg.generator, &cfg.split, cfg.seed, force)
}

pub fn cmd_annotate(dataset: &Path, strategy: AnnotationStrategy) -> Result<PathBuf> {
    Dataset::open(dataset)?.annotate(strategy)
}

/// Deskewed, resized model inputs with their target sequences.
fn load_samples(
    ds: &Dataset,
    ids: &[usize],
    records: &[CertificateRecord],
    dict: &acta_core::codec::TokenDictionary,
    height: usize,
) -> Result<Vec<Sample>> {
    ids.iter()
        .map(|&id| {
            let (image, _) = preprocess(&ds.page(id)?, height, &DeskewParams::default())
                .with_context(|| format!("preprocessing page {id}"))?;
            let target =
                encode(&records[id], dict).with_context(|| format!("encoding page {id}"))?;
            Ok(Sample {
                image,
                target: target.ids,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub best_epoch: usize,
    pub best_valid_cer: f64,
    pub epochs: usize,
}

pub const CHECKPOINT_FILE: &str = "model.acta";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

/// Trains on the dataset's train split under `cfg.strategy`, selecting the
/// epoch by validation CER. With a donor checkpoint, the donor's weights are
/// carried over to the dataset's dictionary first and its model
/// configuration replaces the preset.
pub fn cmd_train(
    dataset: &Path,
    cfg: &RunConfig,
    donor: Option<&Path>,
    out: &Path,
) -> Result<TrainSummary> {
    let ds = Dataset::open(dataset)?;
    let records = ds.annotations(cfg.strategy)?;
    let known: Vec<CertificateRecord> = ds
        .manifest
        .train
        .iter()
        .chain(&ds.manifest.valid)
        .map(|&i| records[i].clone())
        .collect();
    let dict = build_dictionary(&known);
    let tcfg = cfg.train_config();

    let (mcfg, init, provenance) = match donor {
        Some(path) => {
            let donor_ckpt = ModelCheckpoint::load(path)
                .with_context(|| format!("loading donor {}", path.display()))?;
            let adapted = adapt_dictionary(&donor_ckpt, &dict, cfg.seed)?;
            let name = path.file_name().map_or_else(
                || path.display().to_string(),
                |n| n.to_string_lossy().into_owned(),
            );
            (
                adapted.config.clone(),
                Some(adapted.network()?),
                format!("adapted from {name}"),
            )
        }
        None => (cfg.model_config(), None, "scratch".to_string()),
    };

    let train_set = load_samples(&ds, &ds.manifest.train, &records, &dict, mcfg.input_height)?;
    let valid_set = load_samples(&ds, &ds.manifest.valid, &records, &dict, mcfg.input_height)?;
    let (world, page_height) = match &ds.generator {
        Some(g) => (g.generator.world(), g.generator.page_height),
        None => (
            WorldConfig::default(),
            GeneratorConfig::default().page_height,
        ),
    };
    let mut synth = PrintedStream::new(
        world,
        cfg.strategy,
        dict.clone(),
        page_height,
        cfg.seed ^ 0x5e17,
    );

    fs::create_dir_all(out)?;
    let log_path = out.join(TRAIN_LOG_FILE);
    let mut log = BufWriter::new(fs::File::create(&log_path)?);
    writeln!(log, "{}", EpochLog::CSV_HEADER)?;
    let mut io_error = None;
    let outcome = train(
        &train_set,
        &valid_set,
        &mut synth,
        &dict,
        &mcfg,
        &tcfg,
        init,
        |e| {
            if let Err(err) = writeln!(log, "{}", e.csv_row()).and_then(|_| log.flush()) {
                io_error.get_or_insert(err);
            }
        },
    )?;
    if let Some(err) = io_error {
        return Err(err).context("writing the training log");
    }

    let meta = TrainingMeta {
        seed: cfg.seed,
        epoch: outcome.best_epoch,
        strategy: Some(cfg.strategy.as_str().to_string()),
        note: Some(format!("init: {provenance}")),
    };
    let ckpt = ModelCheckpoint::from_network(&outcome.network, &dict, meta)?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    ckpt.save(&ckpt_path)?;
    Ok(TrainSummary {
        checkpoint: ckpt_path,
        log: log_path,
        best_epoch: outcome.best_epoch,
        best_valid_cer: outcome.best_valid_cer,
        epochs: outcome.epochs.len(),
    })
}

/// One decoded page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PagePrediction {
    pub page: usize,
    pub image: String,
    pub fields: Vec<(FieldKey, String)>,
    pub defects: Vec<ParseDefect>,
    /// Estimated skew in degrees.
    pub skew: f64,
}

impl PagePrediction {
    pub fn decoded(&self) -> Decoded {
        let mut partial = PartialRecord::default();
        for (k, v) in &self.fields {
            partial.values[k.index()] = Some(v.clone());
        }
        Decoded {
            partial,
            defects: self.defects.clone(),
        }
    }
}

pub fn predict_pages(
    ckpt: &ModelCheckpoint,
    ds: &Dataset,
    ids: &[usize],
) -> Result<Vec<PagePrediction>> {
    let net: Network = ckpt.network()?;
    ids.iter()
        .map(|&id| {
            let p = infer_greedy(&ds.page(id)?, &net, &ckpt.dictionary)
                .with_context(|| format!("decoding page {id}"))?;
            let d = decode(&TokenSequence::new(p.tokens.clone()), &ckpt.dictionary);
            Ok(PagePrediction {
                page: id,
                image: page_file(id),
                fields: d.partial.to_pairs(),
                defects: d.defects,
                skew: p.skew,
            })
        })
        .collect()
}

pub fn write_predictions(path: &Path, preds: &[PagePrediction]) -> Result<()> {
    let mut w = BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    for p in preds {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PagePrediction>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, l)| {
            serde_json::from_str(&l?).with_context(|| format!("{} line {}", path.display(), i + 1))
        })
        .collect()
}

pub fn cmd_infer(checkpoint: &Path, dataset: &Path, split: Split) -> Result<Vec<PagePrediction>> {
    let ckpt = ModelCheckpoint::load(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let ds = Dataset::open(dataset)?;
    predict_pages(&ckpt, &ds, ds.ids(split))
}

/// The annotation strategy a checkpoint was trained on, or `fallback`.
pub fn checkpoint_strategy(
    ckpt: &ModelCheckpoint,
    fallback: Option<AnnotationStrategy>,
) -> Result<AnnotationStrategy> {
    if let Some(s) = fallback {
        return Ok(s);
    }
    match &ckpt.meta.strategy {
        Some(s) => Ok(s.parse()?),
        None => bail!("checkpoint does not record its annotation strategy; pass --strategy"),
    }
}

/// Scores predictions against the `strategy` annotations of their pages.
pub fn score(
    ds: &Dataset,
    preds: &[PagePrediction],
    strategy: AnnotationStrategy,
    label: &str,
    averaging: Averaging,
) -> Result<EvalReport> {
    let truth = ds.annotations(strategy)?;
    let pairs = preds
        .iter()
        .map(|p| {
            ensure!(
                p.page < truth.len(),
                "prediction for unknown page {}",
                p.page
            );
            Ok((truth[p.page].clone(), p.decoded()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate(&pairs, label, averaging))
}

/// Decodes the split with the checkpoint and scores it against the
/// annotations the checkpoint was trained on (or `strategy`).
pub fn cmd_eval(
    checkpoint: &Path,
    dataset: &Path,
    strategy: Option<AnnotationStrategy>,
    split: Split,
    averaging: Averaging,
) -> Result<EvalReport> {
    let ckpt = ModelCheckpoint::load(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let strategy = checkpoint_strategy(&ckpt, strategy)?;
    let ds = Dataset::open(dataset)?;
    let preds = predict_pages(&ckpt, &ds, ds.ids(split))?;
    score(&ds, &preds, strategy, strategy.as_str(), averaging)
}

/// Evaluates each checkpoint against its own annotations.
pub fn cmd_compare(
    checkpoints: &[PathBuf],
    dataset: &Path,
    split: Split,
    averaging: Averaging,
) -> Result<Vec<EvalReport>> {
    ensure!(
        !checkpoints.is_empty(),
        "compare needs at least one checkpoint"
    );
    let ds = Dataset::open(dataset)?;
    let mut reports = Vec::new();
    for path in checkpoints {
        let ckpt =
            ModelCheckpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        let strategy = checkpoint_strategy(&ckpt, None)?;
        let preds = predict_pages(&ckpt, &ds, ds.ids(split))?;
        reports.push(score(&ds, &preds, strategy, strategy.as_str(), averaging)?);
    }
    Ok(reports)
}

/// A fresh, untrained checkpoint for the dataset's dictionary; used as a
/// stand-in donor and in tests.
pub fn fresh_checkpoint(dataset: &Path, cfg: &RunConfig) -> Result<ModelCheckpoint> {
    let ds = Dataset::open(dataset)?;
    let records = ds.annotations(cfg.strategy)?;
    let dict = build_dictionary(&records);
    let mcfg = cfg.model_config();
    let net = Network::new(&mcfg, dict.len(), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    Ok(ModelCheckpoint::from_network(
        &net,
        &dict,
        TrainingMeta {
            seed: cfg.seed,
            epoch: 0,
            strategy: Some(cfg.strategy.as_str().to_string()),
            note: Some("init: scratch".into()),
        },
    )?)
}
