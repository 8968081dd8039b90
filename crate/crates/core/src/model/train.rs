use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::VisualStream;
use super::forward::{word_logits, CandidateFeatures, FeatureBundle};
use super::params::OrParams;
use crate::error::{Error, Result};
use crate::language::Expression;
use crate::numkit::ops::{log_softmax_raw, softmax_raw};
use crate::numkit::tensor::{matvec_t_acc, outer_acc};
use crate::numkit::{adam_step, clip_global_norm, AdamHyper, AdamState};

/// A ground-truth expression paired with the features of its box.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub features: CandidateFeatures,
    pub expression: Expression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamHyper,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    pub seed: u64,
    /// Stop once an epoch's mean per-token NLL falls below this.
    #[serde(default)]
    pub target_nll: Option<f64>,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            epochs: 100,
            batch_size: 16,
            adam: AdamHyper::default(),
            clip_norm: 5.0,
            seed: 0,
            target_nll: None,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.adam.lr > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::Config("learning rate and clip norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean per-token NLL of each epoch, measured before each batch update.
    pub epoch_loss: Vec<f64>,
    pub stopped_early: bool,
}

/// Adds `weight × ∂NLL/∂θ` for one example into `grads` and returns the
/// summed NLL of its tokens.
pub(crate) fn accumulate_example(
    params: &OrParams,
    ex: &TrainExample,
    weight: f64,
    grads: &mut OrParams,
) -> Result<f64> {
    let c = &params.config;
    let feats = &ex.features;
    let expr = &ex.expression;
    feats.check(c)?;
    expr.check_ids(c.vocab_size)?;

    // Visual encoders.
    let mut caches: [Vec<_>; 7] = Default::default();
    let mut streams: [Option<Vec<f64>>; 7] = Default::default();
    for s in VisualStream::ALL {
        if let Some(p) = params.stream(s) {
            let run = p.run_sequence(&feats.stream_inputs(s));
            streams[s.index()] = run.last().map(|c| c.h.clone());
            caches[s.index()] = run;
        }
    }
    let bundle = FeatureBundle {
        streams,
        spatial: feats.spatial,
    };
    let local_static = bundle.local_static();
    let global_static = bundle.global_static();

    // Language and fusion encoders.
    let input_ids = expr.input_ids();
    let lang_in: Vec<&[f64]> = input_ids.iter().map(|&i| params.embedding.row(i)).collect();
    let lang = params.lstm_language.run_sequence(&lang_in);
    let cat = |h: &[f64], fixed: &[f64]| [h, fixed].concat();
    let local_in: Vec<Vec<f64>> = lang.iter().map(|s| cat(&s.h, &local_static)).collect();
    let global_in: Vec<Vec<f64>> = lang.iter().map(|s| cat(&s.h, &global_static)).collect();
    let hl = params.lstm_local_fusion.run_sequence(&local_in);
    let hg = params.lstm_global_fusion.run_sequence(&global_in);

    // Word predictor.
    let hf = c.fusion_hidden;
    let mut nll = 0.0;
    let mut dhl = Vec::with_capacity(hl.len());
    let mut dhg = Vec::with_capacity(hg.len());
    for ((l, g), &target) in hl.iter().zip(&hg).zip(expr.target_ids()) {
        let z = word_logits(params, &l.h, &g.h);
        nll -= log_softmax_raw(&z)[target];
        let mut dz = softmax_raw(&z);
        dz[target] -= 1.0;
        for v in &mut dz {
            *v *= weight;
        }
        outer_acc(grads.w_local.data_mut(), &dz, &l.h);
        outer_acc(grads.w_global.data_mut(), &dz, &g.h);
        for (r, d) in grads.r.data_mut().iter_mut().zip(&dz) {
            *r += d;
        }
        let mut a = vec![0.0; hf];
        matvec_t_acc(params.w_local.data(), hf, &dz, &mut a);
        dhl.push(a);
        let mut b = vec![0.0; hf];
        matvec_t_acc(params.w_global.data(), hf, &dz, &mut b);
        dhg.push(b);
    }

    let dxl = params
        .lstm_local_fusion
        .backward_sequence(&hl, &dhl, &mut grads.lstm_local_fusion);
    let dxg = params
        .lstm_global_fusion
        .backward_sequence(&hg, &dhg, &mut grads.lstm_global_fusion);

    let hlang = c.lang_hidden;
    let mut d_local = vec![0.0; local_static.len()];
    let mut d_global = vec![0.0; global_static.len()];
    let mut dh_lang = Vec::with_capacity(dxl.len());
    for (a, b) in dxl.iter().zip(&dxg) {
        dh_lang.push(
            a[..hlang]
                .iter()
                .zip(&b[..hlang])
                .map(|(x, y)| x + y)
                .collect::<Vec<f64>>(),
        );
        for (d, v) in d_local.iter_mut().zip(&a[hlang..]) {
            *d += v;
        }
        for (d, v) in d_global.iter_mut().zip(&b[hlang..]) {
            *d += v;
        }
    }

    let dx_lang = params
        .lstm_language
        .backward_sequence(&lang, &dh_lang, &mut grads.lstm_language);
    if !c.freeze_embedding {
        for (&id, dx) in input_ids.iter().zip(&dx_lang) {
            for (e, v) in grads.embedding.row_mut(id).iter_mut().zip(dx) {
                *e += v;
            }
        }
    }

    // Only the final hidden state of a visual encoder reaches the fusion
    // inputs. The spatial tail of the local input has no parameters.
    let hv = c.visual_hidden;
    for (order, d) in [
        (&VisualStream::LOCAL[..], &d_local),
        (&VisualStream::GLOBAL[..], &d_global),
    ] {
        let mut offset = 0;
        for &s in order {
            let Some(p) = params.stream(s) else { continue };
            let run = &caches[s.index()];
            let mut dh = vec![vec![0.0; hv]; run.len()];
            if let Some(last) = dh.last_mut() {
                last.copy_from_slice(&d[offset..offset + hv]);
            }
            let g = grads.visual[s.index()].as_mut().expect("grads share the params layout");
            p.backward_sequence(run, &dh, g);
            offset += hv;
        }
    }
    Ok(nll)
}

/// Examples per sequential accumulation chunk. Fixed so that the summation
/// order, and hence every bit of the result, is independent of thread count.
const CHUNK: usize = 4;

fn token_count(examples: &[&TrainExample]) -> usize {
    examples.iter().map(|e| e.expression.len()).sum()
}

fn batch_loss_and_grad(params: &OrParams, batch: &[&TrainExample]) -> Result<(f64, OrParams)> {
    let tokens = token_count(batch);
    if tokens == 0 {
        return Err(Error::Contract("empty training batch".into()));
    }
    let weight = 1.0 / tokens as f64;
    let partials = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = params.zeros_like();
            let mut nll = 0.0;
            for ex in chunk {
                nll += accumulate_example(params, ex, weight, &mut g)?;
            }
            Ok((nll, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut iter = partials.into_iter();
    let (mut nll, mut grads) = iter.next().expect("batch is nonempty");
    for (n, g) in iter {
        nll += n;
        grads.add_assign(&g);
    }
    Ok((nll * weight, grads))
}

/// Mean per-token NLL over `examples` and its exact gradient.
pub fn loss_and_grad(params: &OrParams, examples: &[TrainExample]) -> Result<(f64, OrParams)> {
    let refs: Vec<&TrainExample> = examples.iter().collect();
    batch_loss_and_grad(params, &refs)
}

/// Mean per-token NLL over `examples`.
pub fn dataset_loss(params: &OrParams, examples: &[TrainExample]) -> Result<f64> {
    let tokens: usize = examples.iter().map(|e| e.expression.len()).sum();
    if tokens == 0 {
        return Err(Error::Contract("empty dataset".into()));
    }
    let nll = examples
        .par_iter()
        .map(|ex| super::forward::score_candidate(params, &ex.features, &ex.expression))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum::<f64>();
    Ok(-nll / tokens as f64)
}

/// Minibatch Adam on the mean per-token NLL of the ground-truth expressions.
pub fn train(params: &mut OrParams, examples: &[TrainExample], hyper: &TrainHyper) -> Result<TrainLog> {
    train_monitored(params, examples, hyper, |_, _, _| Ok(false))
}

/// [`train`] with a hook called after every epoch with the epoch index, its
/// mean token NLL and the current parameters. Returning `true` stops
/// training; the log then records an early stop.
pub fn train_monitored<F>(
    params: &mut OrParams,
    examples: &[TrainExample],
    hyper: &TrainHyper,
    mut on_epoch: F,
) -> Result<TrainLog>
where
    F: FnMut(usize, f64, &OrParams) -> Result<bool>,
{
    hyper.validate()?;
    params.validate()?;
    if examples.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    for ex in examples {
        ex.features.check(&params.config)?;
        ex.expression.check_ids(params.config.vocab_size)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut adam = AdamState::new();
    let mut log = TrainLog::default();
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let (mut nll, mut tokens) = (0.0, 0usize);
        for (b, idx) in order.chunks(hyper.batch_size).enumerate() {
            let batch: Vec<&TrainExample> = idx.iter().map(|&i| &examples[i]).collect();
            let (loss, mut grads) = batch_loss_and_grad(params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            let n = token_count(&batch);
            nll += loss * n as f64;
            tokens += n;
            clip_global_norm(&mut grads, hyper.clip_norm);
            adam_step(params, &grads, &mut adam, &hyper.adam)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {b}: {e}")))?;
        }
        let mean = nll / tokens as f64;
        log::debug!("epoch {epoch}: mean token NLL {mean:.5}");
        log.epoch_loss.push(mean);
        if hyper.target_nll.is_some_and(|t| mean < t) || on_epoch(epoch, mean, params)? {
            log.stopped_early = true;
            break;
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{Modalities, ModelConfig};
    use crate::model::forward::tests::{random_features, tiny_config};
    use crate::model::verify::reference_loss;
    use crate::numkit::{grad_check, GradCheckOptions, ParamSet};
    use rand::Rng;

    fn examples(c: &ModelConfig, n: usize, seed: u64) -> Vec<TrainExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.gen_range(1..5);
                let ids = (0..len).map(|_| rng.gen_range(4..c.vocab_size)).collect();
                TrainExample {
                    features: random_features(c, &mut rng),
                    expression: Expression::from_ids("", ids).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, m) in [(0, Modalities::IDOG), (1, Modalities::IO), (2, Modalities::I)] {
            let mut c = tiny_config();
            c.modalities = m;
            let p = OrParams::init(&c, seed).unwrap();
            let data = examples(&c, 3, seed + 10);
            let (_, g) = loss_and_grad(&p, &data).unwrap();
            let report = grad_check(
                |q| reference_loss(q, &data).unwrap(),
                &p,
                &g,
                &GradCheckOptions {
                    max_coords_per_group: Some(12),
                    seed,
                    ..Default::default()
                },
            );
            assert!(report.max_relative_error < 1e-6, "{m}: {report:?}");
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let c = tiny_config();
        let p = OrParams::init(&c, 3).unwrap();
        let data = examples(&c, 2, 3);
        let (_, mut g) = loss_and_grad(&p, &data).unwrap();
        let (_, t) = g
            .groups_mut()
            .into_iter()
            .find(|(n, _)| n == "lstm_motion_local.w_x")
            .unwrap();
        let k = t.data().iter().position(|v| v.abs() > 1e-6).unwrap();
        t.data_mut()[k] *= 2.0;
        let report = grad_check(
            |q| dataset_loss(q, &data).unwrap(),
            &p,
            &g,
            &GradCheckOptions::default(),
        );
        assert!(report.max_relative_error > 1e-2);
        assert_eq!(report.worst_group, "lstm_motion_local.w_x");
    }

    #[test]
    fn loss_matches_forward_scores() {
        let c = tiny_config();
        let p = OrParams::init(&c, 4).unwrap();
        let data = examples(&c, 5, 4);
        let (l1, _) = loss_and_grad(&p, &data).unwrap();
        let l2 = dataset_loss(&p, &data).unwrap();
        let l3 = reference_loss(&p, &data).unwrap().to_f64();
        assert!((l1 - l2).abs() < 1e-12);
        assert!((l2 - l3).abs() < 1e-12);
    }

    #[test]
    fn frozen_embedding_gets_no_gradient() {
        let mut c = tiny_config();
        c.freeze_embedding = true;
        let p = OrParams::init(&c, 5).unwrap();
        let (_, g) = loss_and_grad(&p, &examples(&c, 2, 5)).unwrap();
        assert!(g.embedding.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn memorizes_one_example() {
        let c = tiny_config();
        let mut p = OrParams::init(&c, 6).unwrap();
        let data = examples(&c, 1, 6);
        let hyper = TrainHyper {
            epochs: 500,
            batch_size: 1,
            adam: AdamHyper {
                lr: 0.01,
                ..Default::default()
            },
            ..Default::default()
        };
        let log = train(&mut p, &data, &hyper).unwrap();
        assert!(log.epoch_loss[0] > log.epoch_loss[log.epoch_loss.len() - 1]);
        assert!(dataset_loss(&p, &data).unwrap() < 0.05);
    }

    #[test]
    fn training_is_deterministic() {
        let c = tiny_config();
        let data = examples(&c, 9, 7);
        let hyper = TrainHyper {
            epochs: 5,
            batch_size: 4,
            seed: 3,
            ..Default::default()
        };
        let run = || {
            let mut p = OrParams::init(&c, 7).unwrap();
            let log = train(&mut p, &data, &hyper).unwrap();
            (p, log)
        };
        let (p1, l1) = run();
        let (p2, l2) = run();
        assert_eq!(l1, l2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn non_finite_features_abort() {
        let c = tiny_config();
        let mut p = OrParams::init(&c, 8).unwrap();
        let mut data = examples(&c, 2, 8);
        data[1].features.image[0][0] = f64::NAN;
        assert!(train(&mut p, &data, &TrainHyper::default()).unwrap_err().is_numeric());
    }
}
