//! Training one model per modality set and comparing Acc@1.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::benchmark::{run_benchmark, BenchmarkReport, ModelScorer, RunLabel};
use crate::dataio::{split_dataset, Dataset, DEFAULT_TRAIN_FRACTION};
use crate::error::{Error, Result};
use crate::language::Vocab;
use crate::model::{train, Modalities, ModelConfig, OrParams, TrainExample, TrainHyper, TrainLog};
use crate::pipeline::{dataset_vocab, training_examples, FeatureConfig};

/// Layer sizes shared by every model of an ablation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSizes {
    pub embed_dim: usize,
    pub lang_hidden: usize,
    pub visual_hidden: usize,
    pub fusion_hidden: usize,
}

impl Default for ModelSizes {
    fn default() -> Self {
        ModelSizes {
            embed_dim: 16,
            lang_hidden: 24,
            visual_hidden: 16,
            fusion_hidden: 32,
        }
    }
}

impl ModelSizes {
    pub fn config(&self, features: &FeatureConfig, vocab_size: usize, modalities: Modalities) -> ModelConfig {
        let mut c = features.model_config(vocab_size, modalities);
        c.embed_dim = self.embed_dim;
        c.lang_hidden = self.lang_hidden;
        c.visual_hidden = self.visual_hidden;
        c.fusion_hidden = self.fusion_hidden;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSetup {
    pub features: FeatureConfig,
    pub sizes: ModelSizes,
    pub hyper: TrainHyper,
    pub train_fraction: f64,
    pub split_seed: u64,
    /// Set the deltas are measured against; image-only when present,
    /// otherwise the first set.
    pub baseline: Option<Modalities>,
}

impl Default for AblationSetup {
    fn default() -> Self {
        AblationSetup {
            features: FeatureConfig::default(),
            sizes: ModelSizes::default(),
            hyper: TrainHyper {
                epochs: 60,
                batch_size: 16,
                ..TrainHyper::default()
            },
            train_fraction: DEFAULT_TRAIN_FRACTION,
            split_seed: 0,
            baseline: None,
        }
    }
}

/// Trains a fresh model seeded with `seed` and evaluates it.
pub fn train_and_evaluate(
    examples: &[TrainExample],
    vocab: &Vocab,
    eval: &Dataset,
    config: &ModelConfig,
    features: &FeatureConfig,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<(OrParams, TrainLog, BenchmarkReport)> {
    let mut params = OrParams::init(config, seed)?;
    let hyper = TrainHyper { seed, ..hyper.clone() };
    let log = train(&mut params, examples, &hyper)?;
    let label = RunLabel {
        modalities: config.modalities.to_string(),
        seed,
    };
    let report = run_benchmark(&ModelScorer { params: &params, vocab }, eval, features, &[1], &label)?;
    Ok((params, log, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub modalities: Modalities,
    /// Acc@1 per seed, in seed order.
    pub acc_at_1: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    /// Mean and sd over seeds of Acc@1 minus the baseline's Acc@1.
    pub delta_mean: f64,
    pub delta_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub baseline: Modalities,
    pub seeds: Vec<u64>,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub rows: Vec<AblationRow>,
}

/// Sample mean and standard deviation; the sd of one value is 0.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Splits `dataset`, then for every seed trains and evaluates one model per
/// modality set on the same split.
pub fn ablation_report(
    dataset: &Dataset,
    sets: &[Modalities],
    seeds: &[u64],
    setup: &AblationSetup,
) -> Result<AblationReport> {
    if sets.len() < 2 {
        return Err(Error::Contract("an ablation needs at least two modality sets".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Contract("an ablation needs at least one seed".into()));
    }
    let baseline = setup
        .baseline
        .or_else(|| sets.contains(&Modalities::I).then_some(Modalities::I))
        .unwrap_or(sets[0]);
    let base_idx = sets
        .iter()
        .position(|s| *s == baseline)
        .ok_or_else(|| Error::Config(format!("baseline {baseline} is not among the sets")))?;
    let (train_ds, eval_ds) = split_dataset(dataset, setup.train_fraction, setup.split_seed)?;
    let vocab = dataset_vocab(&train_ds)?;
    let examples = training_examples(&train_ds, &vocab, &setup.features)?;

    let mut acc = vec![Vec::with_capacity(seeds.len()); sets.len()];
    for &seed in seeds {
        for (i, &m) in sets.iter().enumerate() {
            let config = setup.sizes.config(&setup.features, vocab.len(), m);
            let (_, log, report) = train_and_evaluate(
                &examples,
                &vocab,
                &eval_ds,
                &config,
                &setup.features,
                &setup.hyper,
                seed,
            )?;
            log::info!(
                "seed {seed} {m}: final loss {:.4}, Acc@1 {:.3}",
                log.epoch_loss.last().copied().unwrap_or(f64::NAN),
                report.acc_at_1
            );
            acc[i].push(report.acc_at_1);
        }
    }
    let rows = sets
        .iter()
        .zip(&acc)
        .map(|(&m, a)| {
            let (mean, sd) = mean_sd(a);
            let deltas: Vec<f64> = a.iter().zip(&acc[base_idx]).map(|(x, b)| x - b).collect();
            let (delta_mean, delta_sd) = mean_sd(&deltas);
            AblationRow {
                modalities: m,
                acc_at_1: a.clone(),
                mean,
                sd,
                delta_mean,
                delta_sd,
            }
        })
        .collect();
    Ok(AblationReport {
        baseline,
        seeds: seeds.to_vec(),
        train_scenes: train_ds.scenes.len(),
        eval_scenes: eval_ds.scenes.len(),
        rows,
    })
}

impl AblationReport {
    pub fn row(&self, m: Modalities) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.modalities == m)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6}{:>10}{:>8}{:>10}{:>10}   (baseline {}, {} seeds)",
            "set",
            "Acc@1",
            "sd",
            "delta",
            "sd",
            self.baseline,
            self.seeds.len()
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<6}{:>10.3}{:>8.3}{:>+10.3}{:>10.3}",
                r.modalities.to_string(),
                r.mean,
                r.sd,
                r.delta_mean,
                r.delta_sd
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, Ambiguity, SynthSpec};

    #[test]
    fn mean_and_sd() {
        assert_eq!(mean_sd(&[4.0]), (4.0, 0.0));
        let (m, s) = mean_sd(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn identical_sets_give_zero_delta() {
        let ds = generate_synthetic(
            &SynthSpec {
                num_scenes: 10,
                ambiguity: Ambiguity::Mixed,
                ..SynthSpec::default()
            },
            0,
        )
        .unwrap();
        let setup = AblationSetup {
            features: FeatureConfig {
                grid: 2,
                track_len: 2,
                num_candidates: 6,
                ..FeatureConfig::default()
            },
            sizes: ModelSizes {
                embed_dim: 4,
                lang_hidden: 4,
                visual_hidden: 4,
                fusion_hidden: 4,
            },
            hyper: TrainHyper {
                epochs: 2,
                batch_size: 4,
                ..TrainHyper::default()
            },
            ..AblationSetup::default()
        };
        let r = ablation_report(&ds, &[Modalities::IO, Modalities::IO], &[1, 2], &setup).unwrap();
        assert_eq!(r.baseline, Modalities::IO);
        assert_eq!((r.train_scenes, r.eval_scenes), (8, 2));
        assert_eq!(r.rows[0].acc_at_1, r.rows[1].acc_at_1);
        assert_eq!((r.rows[1].delta_mean, r.rows[1].delta_sd), (0.0, 0.0));
        assert!(r.to_text().contains("IO"));
        assert!(ablation_report(&ds, &[Modalities::IO], &[1], &setup).is_err());
    }
}
