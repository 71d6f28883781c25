//! `seqvid`: dataset export, training and figure reproduction for LSTM
//! video sequence models.
//!
//! Every subcommand turns its flags into an experiment manifest (or reads
//! one with `--manifest`), writes it to `OUT/manifest.json` and runs it.
//! Outputs go under `OUT/checkpoints`, `OUT/csv` and `OUT/img`.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use seqvid_core::classifier::ClassifierSpec;
use seqvid_core::movingmnist::{GenConfig, LabelScheme};
use seqvid_core::seq2seq::{ModelSpec, Variant};
use seqvid_core::toolkit::classify::ClassifyProtocol;
use seqvid_core::toolkit::export::GenerateOptions;
use seqvid_core::toolkit::weights::Geometry;
use seqvid_core::toolkit::{run_manifest, EvalProtocol, Experiment, ExperimentManifest, OutputLayout, RolloutProtocol};
use seqvid_core::trainer::{DataSource, DigitSource, TrainConfig};

#[derive(Parser)]
#[command(name = "seqvid", version, about = "LSTM encoder-decoder models for video sequences")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
}

#[derive(Subcommand)]
enum Cmd {
    /// Export a bouncing-digits dataset (SVT1 tensor + JSON sidecar).
    Generate(GenerateArgs),
    /// Train a sequence model.
    Train(TrainArgs),
    /// Train or load the four future-predicting variants and rank their held-out loss.
    CompareVariants(CompareArgs),
    /// Let a future decoder run freely and record frames and unit activity.
    Rollout(RolloutArgs),
    /// Tile encoder and decoder weights as images.
    VisualizeWeights(VisualizeArgs),
    /// Accuracy of random vs encoder-initialized classifiers across training-set sizes.
    Classify(ClassifyArgs),
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Run this manifest instead of building one from flags.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Experiment id recorded in the manifest.
    #[arg(long)]
    id: Option<String>,
}

#[derive(Args, Clone)]
struct DigitArgs {
    /// IDX image file; procedurally drawn digits are used when absent.
    #[arg(long, requires = "idx_labels")]
    idx_images: Option<PathBuf>,
    /// IDX label file.
    #[arg(long, requires = "idx_images")]
    idx_labels: Option<PathBuf>,
    /// Number of procedurally drawn digits.
    #[arg(long, default_value_t = 2000)]
    synthetic_digits: usize,
    /// Seed of the procedurally drawn digits.
    #[arg(long, default_value_t = 0)]
    synthetic_seed: u64,
}

impl DigitArgs {
    fn source(&self) -> DigitSource {
        match (&self.idx_images, &self.idx_labels) {
            (Some(images), Some(labels)) => DigitSource::Idx { images: images.clone(), labels: labels.clone() },
            _ => DigitSource::Synthetic { count: self.synthetic_digits, seed: self.synthetic_seed },
        }
    }
}

#[derive(Args, Clone)]
struct GenArgs {
    #[arg(long, default_value_t = 32)]
    canvas: usize,
    #[arg(long, default_value_t = 1)]
    num_digits: usize,
    #[arg(long, default_value_t = 20)]
    seq_len: usize,
    #[arg(long, default_value_t = 14)]
    digit_size: usize,
    #[arg(long, default_value_t = 2.0)]
    vel_min: f64,
    #[arg(long, default_value_t = 5.0)]
    vel_max: f64,
    /// Keep grey levels instead of thresholding at 0.5.
    #[arg(long)]
    no_binarize: bool,
}

impl GenArgs {
    fn config(&self) -> GenConfig {
        GenConfig {
            canvas: self.canvas,
            num_digits: self.num_digits,
            seq_len: self.seq_len,
            vel_min: self.vel_min,
            vel_max: self.vel_max,
            binarize: !self.no_binarize,
            digit_size: self.digit_size,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Labels {
    DigitIdentity,
    MotionOctant,
}

impl From<Labels> for LabelScheme {
    fn from(l: Labels) -> Self {
        match l {
            Labels::DigitIdentity => LabelScheme::DigitIdentity,
            Labels::MotionOctant => LabelScheme::MotionOctant,
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    gen: GenArgs,
    #[command(flatten)]
    digits: DigitArgs,
    #[arg(long, default_value_t = 1000)]
    count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "motion-octant")]
    labels: Labels,
    /// Skip the preview strip.
    #[arg(long)]
    no_preview: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Autoencoder,
    FuturePredictor,
    Composite,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Autoencoder => Variant::Autoencoder,
            VariantArg::FuturePredictor => Variant::FuturePredictor,
            VariantArg::Composite => Variant::Composite,
        }
    }
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "composite")]
    variant: VariantArg,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, default_value_t = 10)]
    t_in: usize,
    #[arg(long, default_value_t = 10)]
    t_future: usize,
    #[arg(long)]
    conditional_recon: bool,
    #[arg(long)]
    conditional_future: bool,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Gradient-norm clip; 0 disables clipping.
    #[arg(long, default_value_t = 10.0)]
    clip: f64,
    #[arg(long, default_value_t = 2000)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    eval_every: u64,
    #[arg(long, default_value_t = 500)]
    checkpoint_every: u64,
    /// Keep the learning rate constant.
    #[arg(long)]
    no_lr_decay: bool,
    /// Train on an exported SVT1 dataset instead of generating sequences.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[command(flatten)]
    gen: GenArgs,
    #[command(flatten)]
    digits: DigitArgs,
}

impl ModelArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        let gen = self.gen.config();
        let data = match &self.dataset {
            Some(path) => DataSource::Dataset { path: path.clone() },
            None => DataSource::Generated { gen: gen.clone(), digits: self.digits.source() },
        };
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.lr,
            momentum: self.momentum,
            grad_clip_norm: (self.clip > 0.0).then_some(self.clip),
            lr_decay: !self.no_lr_decay,
            max_steps: self.steps,
            eval_every: self.eval_every,
            checkpoint_every: self.checkpoint_every,
            seed,
            model: ModelSpec {
                variant: self.variant.into(),
                layers: self.layers,
                hidden_dim: self.hidden,
                input_dim: gen.frame_len(),
                t_in: self.t_in,
                t_future: self.t_future,
                conditional_recon: self.conditional_recon,
                conditional_future: self.conditional_future,
                ..ModelSpec::desk(self.variant.into())
            },
            data,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelArgs,
    /// Training seeds, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5])]
    seeds: Vec<u64>,
    /// Load `DIR/<variant>/seed_<s>.svck` instead of training.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    #[arg(long, default_value_t = 1_000_000)]
    heldout_seed: u64,
    #[arg(long, default_value_t = 256)]
    heldout_count: usize,
}

#[derive(Args)]
struct RolloutArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 200)]
    units: usize,
    #[arg(long, default_value_t = 0)]
    unit_seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    heldout_seed: u64,
    #[arg(long, default_value_t = 16)]
    sequences: usize,
    /// Swap in a randomly initialized future decoder drawn from this seed.
    #[arg(long)]
    random_future: Option<u64>,
}

#[derive(Args)]
struct VisualizeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 200)]
    top: usize,
    /// Frame width, for inputs that are not square.
    #[arg(long, requires = "height")]
    width: Option<usize>,
    #[arg(long, requires = "width")]
    height: Option<usize>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    common: Common,
    /// Composite checkpoint whose encoder initializes the pretrained arm.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 5, 20, 100])]
    labels_per_class: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    resamples: usize,
    #[arg(long, default_value_t = 1000)]
    steps: u64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long, default_value_t = 400)]
    heldout_count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    gen: GenArgs,
    #[command(flatten)]
    digits: DigitArgs,
}

fn manifest(common: &Common, default_id: &str, build: impl FnOnce() -> Result<Experiment>) -> Result<ExperimentManifest> {
    if let Some(path) = &common.manifest {
        return ExperimentManifest::load(path).with_context(|| format!("reading manifest {}", path.display()));
    }
    Ok(ExperimentManifest {
        id: common.id.clone().unwrap_or_else(|| default_id.to_string()),
        experiment: build()?,
        layout: OutputLayout::default(),
    })
}

fn run(cli: Cli) -> Result<()> {
    let (common, m) = match &cli.cmd {
        Cmd::Generate(a) => (
            &a.common,
            manifest(&a.common, "generate", || {
                Ok(Experiment::Generate {
                    options: GenerateOptions {
                        gen: a.gen.config(),
                        digits: a.digits.source(),
                        seed: a.seed,
                        count: a.count,
                        scheme: a.labels.into(),
                        preview: !a.no_preview,
                    },
                })
            })?,
        ),
        Cmd::Train(a) => (
            &a.common,
            manifest(&a.common, "train", || Ok(Experiment::Train { config: a.model.config(a.seed) }))?,
        ),
        Cmd::CompareVariants(a) => (
            &a.common,
            manifest(&a.common, "compare-variants", || {
                Ok(Experiment::CompareVariants {
                    base: a.model.config(0),
                    seeds: a.seeds.clone(),
                    eval: EvalProtocol {
                        heldout_seed: a.heldout_seed,
                        heldout_count: a.heldout_count,
                        batch_size: a.model.batch_size,
                        ..EvalProtocol::default()
                    },
                    checkpoints: a.checkpoints.clone(),
                })
            })?,
        ),
        Cmd::Rollout(a) => (
            &a.common,
            manifest(&a.common, "rollout", || {
                Ok(Experiment::Rollout(RolloutProtocol {
                    checkpoint: a.checkpoint.clone(),
                    steps: a.steps,
                    max_units: a.units,
                    unit_seed: a.unit_seed,
                    heldout_seed: a.heldout_seed,
                    sequences: a.sequences,
                    random_future: a.random_future,
                }))
            })?,
        ),
        Cmd::VisualizeWeights(a) => (
            &a.common,
            manifest(&a.common, "visualize-weights", || {
                Ok(Experiment::VisualizeWeights {
                    checkpoint: a.checkpoint.clone(),
                    top: a.top,
                    geometry: a.width.zip(a.height).map(|(width, height)| Geometry { width, height }),
                })
            })?,
        ),
        Cmd::Classify(a) => (
            &a.common,
            manifest(&a.common, "classify", || {
                let Some(pretrained) = a.checkpoint.clone() else {
                    bail!("classify needs --checkpoint with a composite model for the pretrained arm");
                };
                let base = ClassifyProtocol::desk(a.seed);
                let gen = a.gen.config();
                Ok(Experiment::Classify {
                    protocol: ClassifyProtocol {
                        spec: ClassifierSpec {
                            input_dim: gen.frame_len(),
                            dropout_p: a.dropout,
                            ..base.spec.clone()
                        },
                        gen,
                        digits: a.digits.source(),
                        labels_per_class: a.labels_per_class.clone(),
                        resamples: a.resamples,
                        heldout_count: a.heldout_count,
                        finetune: seqvid_core::classifier::FinetuneConfig { steps: a.steps, learning_rate: a.lr, ..base.finetune.clone() },
                        ..base
                    },
                    pretrained,
                })
            })?,
        ),
    };
    run_manifest(&m, &common.out).with_context(|| format!("{} failed", m.id))?;
    log::info!("outputs written to {}", common.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
