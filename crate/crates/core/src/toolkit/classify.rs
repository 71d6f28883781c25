//! Accuracy of randomly initialized and encoder-initialized classifiers as
//! the number of labelled examples per class grows.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::compare::mean_stderr;
use super::OutputLayout;
use crate::classifier::{accuracy, classifier_build, finetune, ClassifierSpec, FinetuneConfig, LabelledSet};
use crate::error::{bail, Result};
use crate::movingmnist::{GenConfig, LabelScheme, SequenceStream};
use crate::tensor::RngState;
use crate::trainer::{Checkpoint, DigitSource};

const TAG_TRAIN: u64 = 0x7472_6169_6e00;
const TAG_TEST: u64 = 0x7465_7374_0000;
const TAG_INIT: u64 = 0x696e_6974_0000;
const TAG_FIT: u64 = 0x6669_7400_0000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyProtocol {
    pub gen: GenConfig,
    pub digits: DigitSource,
    pub scheme: LabelScheme,
    /// Sweep of training-set sizes.
    pub labels_per_class: Vec<usize>,
    pub resamples: usize,
    /// Size of the fixed evaluation set.
    pub heldout_count: u64,
    pub spec: ClassifierSpec,
    /// `seed` is replaced per resample.
    pub finetune: FinetuneConfig,
    pub seed: u64,
}

impl ClassifyProtocol {
    /// Motion-octant task on desk-sized frames: sweep {1, 5, 20, 100} labels
    /// per class, 10 resamples each, 1000 finetuning steps per run. Shorter
    /// runs leave the randomly initialized arm undertrained even with 100
    /// labels per class.
    pub fn desk(seed: u64) -> Self {
        let gen = GenConfig::desk();
        Self {
            spec: ClassifierSpec::new(1, 128, gen.frame_len(), LabelScheme::MotionOctant.num_classes()),
            gen,
            digits: DigitSource::default(),
            scheme: LabelScheme::MotionOctant,
            labels_per_class: vec![1, 5, 20, 100],
            resamples: 10,
            heldout_count: 400,
            finetune: FinetuneConfig {
                batch_size: 16,
                steps: 1000,
                learning_rate: 0.01,
                momentum: 0.9,
                grad_clip_norm: Some(10.0),
                seed: 0,
            },
            seed,
        }
    }

    fn stream(&self, tag: u64) -> Result<SequenceStream> {
        SequenceStream::new(self.gen.clone(), &self.digits.load()?, RngState::new(self.seed).fork(tag).seed())
    }

    /// Training subset `r` for `n` labels per class; every `(n, r)` pair
    /// draws from its own seed.
    pub fn training_set(&self, n: usize, r: usize) -> Result<LabelledSet> {
        let stream = self.stream(TAG_TRAIN ^ ((n as u64) << 16 | r as u64))?;
        LabelledSet::balanced(&stream, self.scheme, n, 1000 * (n as u64 + 1) * self.scheme.num_classes() as u64)
    }

    pub fn heldout_set(&self) -> Result<LabelledSet> {
        LabelledSet::generated(&self.stream(TAG_TEST)?, self.scheme, self.heldout_count)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Random,
    Pretrained,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Random => "random",
            Arm::Pretrained => "pretrained",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRun {
    pub labels_per_class: usize,
    pub resample: usize,
    pub arm: Arm,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyCell {
    pub labels_per_class: usize,
    pub arm: Arm,
    pub mean: f64,
    pub stderr: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifyReport {
    pub runs: Vec<ClassifyRun>,
    pub cells: Vec<ClassifyCell>,
}

impl ClassifyReport {
    pub fn cell(&self, n: usize, arm: Arm) -> Option<&ClassifyCell> {
        self.cells.iter().find(|c| c.labels_per_class == n && c.arm == arm)
    }

    pub fn cells_csv(&self) -> String {
        let mut s = String::from("labels_per_class,arm,mean_accuracy,stderr,runs\n");
        for c in &self.cells {
            s.push_str(&format!("{},{},{},{},{}\n", c.labels_per_class, c.arm.name(), c.mean, c.stderr, c.runs));
        }
        s
    }

    pub fn runs_csv(&self) -> String {
        let mut s = String::from("labels_per_class,resample,arm,accuracy\n");
        for r in &self.runs {
            s.push_str(&format!("{},{},{},{}\n", r.labels_per_class, r.resample, r.arm.name(), r.accuracy));
        }
        s
    }
}

/// One finetuning run. Both arms of a resample share the readout
/// initialization, the minibatch order and the dropout masks.
pub fn classify_run(p: &ClassifyProtocol, train: &LabelledSet, test: &LabelledSet, r: usize, init: Option<&Checkpoint>) -> Result<f64> {
    let mut rng = RngState::new(p.seed).fork(TAG_INIT ^ r as u64);
    let mut m = classifier_build(&p.spec, init, &mut rng)?;
    let cfg = FinetuneConfig {
        seed: RngState::new(p.seed).fork(TAG_FIT ^ r as u64).seed(),
        ..p.finetune.clone()
    };
    if cfg.steps > 0 {
        finetune(&mut m, train, &cfg)?;
    }
    accuracy(&m, test)
}

/// Runs both arms over the whole sweep. Without a checkpoint only the
/// random arm is run. With `out`, writes `csv/classify_cells.csv` and
/// `csv/classify_runs.csv`.
pub fn classify_sweep(p: &ClassifyProtocol, pretrained: Option<&Checkpoint>, out: Option<&Path>, layout: &OutputLayout) -> Result<ClassifyReport> {
    if p.resamples == 0 || p.labels_per_class.is_empty() {
        bail!(Usage, "classify needs at least one resample and one training-set size");
    }
    let test = p.heldout_set()?;
    let arms: Vec<(Arm, Option<&Checkpoint>)> = match pretrained {
        Some(ck) => vec![(Arm::Random, None), (Arm::Pretrained, Some(ck))],
        None => vec![(Arm::Random, None)],
    };
    let mut runs = Vec::new();
    for &n in &p.labels_per_class {
        for r in 0..p.resamples {
            let train = p.training_set(n, r)?;
            for &(arm, init) in &arms {
                let acc = classify_run(p, &train, &test, r, init)?;
                log::info!("{n} labels/class, resample {r}, {}: accuracy {acc:.3}", arm.name());
                runs.push(ClassifyRun { labels_per_class: n, resample: r, arm, accuracy: acc });
            }
        }
    }
    let mut cells = Vec::new();
    for &n in &p.labels_per_class {
        for &(arm, _) in &arms {
            let xs: Vec<f64> = runs
                .iter()
                .filter(|x| x.labels_per_class == n && x.arm == arm)
                .map(|x| x.accuracy)
                .collect();
            let (mean, stderr) = mean_stderr(&xs);
            cells.push(ClassifyCell { labels_per_class: n, arm, mean, stderr, runs: xs.len() });
        }
    }
    let report = ClassifyReport { runs, cells };
    if let Some(dir) = out {
        let csv = dir.join(&layout.csv);
        std::fs::create_dir_all(&csv)?;
        std::fs::write(csv.join("classify_cells.csv"), report.cells_csv())?;
        std::fs::write(csv.join("classify_runs.csv"), report.runs_csv())?;
    }
    Ok(report)
}
