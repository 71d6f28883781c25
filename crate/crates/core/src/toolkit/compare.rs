//! Held-out future-prediction loss of the four future-predicting variants.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EvalProtocol, OutputLayout};
use crate::error::{bail, Result};
use crate::seq2seq::{Mode, ModelSpec, Variant};
use crate::trainer::{checkpoint_load, checkpoint_save, evaluate, Checkpoint, DataFeed, TrainConfig, Trainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareVariant {
    FuturePredictor,
    Composite,
    ConditionalFuturePredictor,
    CompositeConditionalFuture,
}

impl CompareVariant {
    pub const ALL: [CompareVariant; 4] = [
        CompareVariant::FuturePredictor,
        CompareVariant::Composite,
        CompareVariant::ConditionalFuturePredictor,
        CompareVariant::CompositeConditionalFuture,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CompareVariant::FuturePredictor => "future_predictor",
            CompareVariant::Composite => "composite",
            CompareVariant::ConditionalFuturePredictor => "conditional_future_predictor",
            CompareVariant::CompositeConditionalFuture => "composite_conditional_future",
        }
    }

    /// `base` with the variant's architecture; the recon decoder is never
    /// conditional.
    pub fn spec(self, base: &ModelSpec) -> ModelSpec {
        let (variant, cond) = match self {
            CompareVariant::FuturePredictor => (Variant::FuturePredictor, false),
            CompareVariant::Composite => (Variant::Composite, false),
            CompareVariant::ConditionalFuturePredictor => (Variant::FuturePredictor, true),
            CompareVariant::CompositeConditionalFuture => (Variant::Composite, true),
        };
        ModelSpec {
            variant,
            conditional_recon: false,
            conditional_future: cond,
            ..base.clone()
        }
    }

    pub fn config(self, base: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            model: self.spec(&base.model),
            ..base.clone()
        }
    }
}

/// Where compare-variants gets its models.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSource {
    /// Train every slot, saving checkpoints under the output directory.
    Train,
    /// Load `DIR/<variant>/seed_<s>.svck`; a missing file is an error.
    Load(PathBuf),
}

pub fn slot_path(dir: &Path, v: CompareVariant, seed: u64) -> PathBuf {
    dir.join(v.name()).join(format!("seed_{seed}.svck"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub variant: CompareVariant,
    pub seed: u64,
    pub future_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub rank: usize,
    pub variant: CompareVariant,
    pub seeds: usize,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    /// Sorted by mean loss, lowest first.
    pub summary: Vec<CompareSummary>,
}

impl CompareReport {
    pub fn losses(&self, v: CompareVariant) -> Vec<f64> {
        self.rows.iter().filter(|r| r.variant == v).map(|r| r.future_loss).collect()
    }

    pub fn rows_csv(&self) -> String {
        let mut s = String::from("variant,seed,future_loss\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.variant.name(), r.seed, r.future_loss));
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("rank,variant,seeds,mean_future_loss,stderr\n");
        for r in &self.summary {
            s.push_str(&format!("{},{},{},{},{}\n", r.rank, r.variant.name(), r.seeds, r.mean, r.stderr));
        }
        s
    }
}

/// Mean held-out future loss of one model; conditional decoders feed on
/// their own outputs.
pub fn future_loss(ck: &Checkpoint, eval: &EvalProtocol) -> Result<f64> {
    if !ck.model.spec.variant.has_future() {
        bail!(Usage, "{:?} model has no future decoder", ck.model.spec.variant);
    }
    let feed = DataFeed::heldout(&ck.config, eval.heldout_seed)?;
    Ok(evaluate(&ck.model, &feed, 0, eval.heldout_count, eval.batch_size, Mode::Generate)?.future)
}

/// Scores named checkpoints on the same held-out sequences.
pub fn evaluate_slots(slots: &[(CompareVariant, u64, &Checkpoint)], eval: &EvalProtocol) -> Result<Vec<CompareRow>> {
    slots
        .iter()
        .map(|&(variant, seed, ck)| {
            Ok(CompareRow {
                variant,
                seed,
                future_loss: future_loss(ck, eval)?,
            })
        })
        .collect()
}

/// Trains or loads every variant for every seed, evaluates them and, with
/// `out`, writes `csv/compare_rows.csv` and `csv/compare_summary.csv`.
pub fn compare_variants(
    base: &TrainConfig,
    seeds: &[u64],
    eval: &EvalProtocol,
    source: &ModelSource,
    out: Option<&Path>,
    layout: &OutputLayout,
) -> Result<CompareReport> {
    if seeds.is_empty() {
        bail!(Usage, "compare-variants needs at least one seed");
    }
    let mut cks = Vec::new();
    for v in CompareVariant::ALL {
        for &seed in seeds {
            let ck = match source {
                ModelSource::Load(dir) => {
                    let p = slot_path(dir, v, seed);
                    if !p.exists() {
                        bail!(Usage, "missing checkpoint for {} seed {seed}: {}", v.name(), p.display());
                    }
                    checkpoint_load(&p)?
                }
                ModelSource::Train => {
                    log::info!("training {} seed {seed}", v.name());
                    let ck = Trainer::new(v.config(base, seed))?.run(None)?;
                    if let Some(dir) = out {
                        let p = slot_path(&dir.join(&layout.checkpoints), v, seed);
                        std::fs::create_dir_all(p.parent().unwrap())?;
                        checkpoint_save(&ck, p)?;
                    }
                    ck
                }
            };
            cks.push((v, seed, ck));
        }
    }
    let slots: Vec<_> = cks.iter().map(|(v, s, c)| (*v, *s, c)).collect();
    let rows = evaluate_slots(&slots, eval)?;
    let report = CompareReport { summary: summarize(&rows), rows };
    if let Some(dir) = out {
        let csv = dir.join(&layout.csv);
        std::fs::create_dir_all(&csv)?;
        std::fs::write(csv.join("compare_rows.csv"), report.rows_csv())?;
        std::fs::write(csv.join("compare_summary.csv"), report.summary_csv())?;
    }
    Ok(report)
}

fn summarize(rows: &[CompareRow]) -> Vec<CompareSummary> {
    let mut out: Vec<CompareSummary> = CompareVariant::ALL
        .iter()
        .filter_map(|&v| {
            let xs: Vec<f64> = rows.iter().filter(|r| r.variant == v).map(|r| r.future_loss).collect();
            (!xs.is_empty()).then(|| {
                let (mean, stderr) = mean_stderr(&xs);
                CompareSummary { rank: 0, variant: v, seeds: xs.len(), mean, stderr }
            })
        })
        .collect();
    out.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    for (i, s) in out.iter_mut().enumerate() {
        s.rank = i + 1;
    }
    out
}

/// Sample mean and standard error of the mean (zero for one sample).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One-sided paired sign test of "`a` tends to be smaller than `b`".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    /// Pairs with `a < b`.
    pub wins: usize,
    pub ties: usize,
    /// Pairs that are not ties.
    pub n: usize,
    /// `P(X ≥ wins)` for `X ~ Binomial(n, 1/2)`.
    pub p_value: f64,
}

pub fn sign_test(a: &[f64], b: &[f64]) -> Result<SignTest> {
    if a.len() != b.len() {
        bail!(Dimension, "sign test needs paired samples ({} vs {})", a.len(), b.len());
    }
    let wins = a.iter().zip(b).filter(|(x, y)| x < y).count();
    let ties = a.iter().zip(b).filter(|(x, y)| x == y).count();
    let n = a.len() - ties;
    if n > 120 {
        bail!(Usage, "sign test supports at most 120 untied pairs, got {n}");
    }
    // Σ_{k ≥ wins} C(n, k) / 2ⁿ with exact integer binomials.
    let mut c = 1u128;
    let mut tail = 0u128;
    for k in 0..=n {
        if k >= wins {
            tail += c;
        }
        c = c * (n - k) as u128 / (k + 1) as u128;
    }
    let p_value = tail as f64 / 2f64.powi(n as i32);
    Ok(SignTest { wins, ties, n, p_value })
}
