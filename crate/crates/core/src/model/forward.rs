use std::borrow::Cow;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, VisualStream, SPATIAL_DIM};
use super::params::OrParams;
use crate::error::{Error, Result};
use crate::language::{encode_expression, Expression, BOS};
use crate::numkit::ops::{log_softmax_raw, softmax_raw};
use crate::numkit::tensor::matvec_acc;
use crate::numkit::LstmParams;

/// Whole-frame feature sequences of one scene, shared by all its candidates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GlobalFeatures {
    pub image: Vec<Vec<f64>>,
    pub depth: Vec<Vec<f64>>,
    pub motion: Vec<Vec<f64>>,
}

/// Raw per-frame inputs of one candidate box, oldest frame first.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateFeatures {
    pub image: Vec<Vec<f64>>,
    pub depth: Vec<Vec<f64>>,
    pub motion: Vec<Vec<f64>>,
    pub gaze: Vec<f64>,
    pub spatial: [f64; SPATIAL_DIM],
    pub global: Arc<GlobalFeatures>,
}

impl CandidateFeatures {
    /// Input sequence of one visual encoder. The gaze vector becomes a
    /// sequence of scalars.
    pub fn stream_inputs(&self, s: VisualStream) -> Cow<'_, [Vec<f64>]> {
        match s {
            VisualStream::ImageLocal => Cow::Borrowed(&self.image),
            VisualStream::DepthLocal => Cow::Borrowed(&self.depth),
            VisualStream::MotionLocal => Cow::Borrowed(&self.motion),
            VisualStream::ImageGlobal => Cow::Borrowed(&self.global.image),
            VisualStream::DepthGlobal => Cow::Borrowed(&self.global.depth),
            VisualStream::MotionGlobal => Cow::Borrowed(&self.global.motion),
            VisualStream::Gaze => Cow::Owned(self.gaze.iter().map(|&g| vec![g]).collect()),
        }
    }

    /// Checks the enabled streams against the model configuration.
    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        for s in VisualStream::ALL {
            if !s.enabled(&config.modalities) {
                continue;
            }
            let seq = self.stream_inputs(s);
            let (steps, dim) = (config.stream_steps(s), config.stream_input_dim(s));
            if seq.len() != steps {
                return Err(Error::Config(format!(
                    "{}: {} steps supplied, model expects {steps}",
                    s.name(),
                    seq.len()
                )));
            }
            if let Some(x) = seq.iter().find(|x| x.len() != dim) {
                return Err(Error::Config(format!(
                    "{}: feature of length {}, model expects {dim}",
                    s.name(),
                    x.len()
                )));
            }
            if seq.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("{}: non-finite feature", s.name())));
            }
        }
        if self.spatial.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite spatial feature".into()));
        }
        Ok(())
    }
}

/// Encoded features of one candidate: the final hidden state of every
/// enabled visual encoder, plus the spatial configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    pub streams: [Option<Vec<f64>>; 7],
    pub spatial: [f64; SPATIAL_DIM],
}

impl FeatureBundle {
    pub fn stream(&self, s: VisualStream) -> Option<&[f64]> {
        self.streams[s.index()].as_deref()
    }

    /// Static part of the local fusion input.
    pub fn local_static(&self) -> Vec<f64> {
        let mut v: Vec<f64> = VisualStream::LOCAL
            .iter()
            .filter_map(|&s| self.stream(s))
            .flatten()
            .copied()
            .collect();
        v.extend_from_slice(&self.spatial);
        v
    }

    /// Static part of the global fusion input.
    pub fn global_static(&self) -> Vec<f64> {
        VisualStream::GLOBAL
            .iter()
            .filter_map(|&s| self.stream(s))
            .flatten()
            .copied()
            .collect()
    }
}

fn encode_streams(
    params: &OrParams,
    feats: &CandidateFeatures,
    which: &[VisualStream],
    out: &mut [Option<Vec<f64>>; 7],
) {
    for &s in which {
        if let Some(p) = params.stream(s) {
            out[s.index()] = Some(p.final_hidden(&feats.stream_inputs(s)));
        }
    }
}

/// Runs every enabled visual encoder over its sequence from the zero state.
pub fn encode_visuals(params: &OrParams, feats: &CandidateFeatures) -> Result<FeatureBundle> {
    feats.check(&params.config)?;
    let mut streams: [Option<Vec<f64>>; 7] = Default::default();
    encode_streams(params, feats, &VisualStream::ALL, &mut streams);
    Ok(FeatureBundle {
        streams,
        spatial: feats.spatial,
    })
}

/// Encodes a batch of candidates, running the global encoders once per
/// distinct shared [`GlobalFeatures`].
pub fn encode_candidates(params: &OrParams, feats: &[CandidateFeatures]) -> Result<Vec<FeatureBundle>> {
    let mut out = Vec::with_capacity(feats.len());
    let mut last: Option<(&Arc<GlobalFeatures>, [Option<Vec<f64>>; 7])> = None;
    for f in feats {
        f.check(&params.config)?;
        let mut streams: [Option<Vec<f64>>; 7] = Default::default();
        match &last {
            Some((g, cached)) if Arc::ptr_eq(g, &f.global) => {
                for s in VisualStream::GLOBAL {
                    streams[s.index()] = cached[s.index()].clone();
                }
            }
            _ => {
                encode_streams(params, f, &VisualStream::GLOBAL, &mut streams);
                last = Some((&f.global, streams.clone()));
            }
        }
        encode_streams(params, f, &VisualStream::LOCAL, &mut streams);
        out.push(FeatureBundle {
            streams,
            spatial: f.spatial,
        });
    }
    Ok(out)
}

/// Hidden states of the language encoder over `<bos>, w_1, …`.
pub fn language_states(params: &OrParams, expr: &Expression) -> Result<Vec<Vec<f64>>> {
    encode_expression(expr, &params.embedding, &params.lstm_language)
}

fn fusion_input(h_lang: &[f64], fixed: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(h_lang.len() + fixed.len());
    x.extend_from_slice(h_lang);
    x.extend_from_slice(fixed);
    x
}

/// Word logits `W_local h_local + W_global h_global + r`.
pub(crate) fn word_logits(params: &OrParams, h_local: &[f64], h_global: &[f64]) -> Vec<f64> {
    let hf = params.config.fusion_hidden;
    let mut z = params.r.data().to_vec();
    matvec_acc(params.w_local.data(), hf, h_local, &mut z);
    matvec_acc(params.w_global.data(), hf, h_global, &mut z);
    z
}

/// Incremental scorer for one candidate. It holds the language and fusion
/// states, so an expression can be scored in segments.
#[derive(Clone, Debug)]
pub struct WordScorer<'a> {
    params: &'a OrParams,
    local_static: Vec<f64>,
    global_static: Vec<f64>,
    lang: (Vec<f64>, Vec<f64>),
    local: (Vec<f64>, Vec<f64>),
    global: (Vec<f64>, Vec<f64>),
    log_probs: Vec<f64>,
}

fn advance(p: &LstmParams, x: &[f64], state: &mut (Vec<f64>, Vec<f64>)) {
    let s = p.step_raw(x, &state.0, &state.1);
    *state = (s.h, s.c);
}

impl<'a> WordScorer<'a> {
    /// Starts a scorer that has consumed `<bos>`.
    pub fn new(params: &'a OrParams, bundle: &FeatureBundle) -> Result<Self> {
        let c = &params.config;
        let local_static = bundle.local_static();
        let global_static = bundle.global_static();
        if local_static.len() != c.local_static_dim() || global_static.len() != c.global_static_dim() {
            return Err(Error::Config(
                "feature bundle does not match the model's modalities".into(),
            ));
        }
        let zero = |n| (vec![0.0; n], vec![0.0; n]);
        let mut scorer = WordScorer {
            params,
            local_static,
            global_static,
            lang: zero(c.lang_hidden),
            local: zero(c.fusion_hidden),
            global: zero(c.fusion_hidden),
            log_probs: Vec::new(),
        };
        scorer.feed(BOS);
        Ok(scorer)
    }

    fn feed(&mut self, token: usize) {
        let p = self.params;
        advance(&p.lstm_language, p.embedding.row(token), &mut self.lang);
        advance(
            &p.lstm_local_fusion,
            &fusion_input(&self.lang.0, &self.local_static),
            &mut self.local,
        );
        advance(
            &p.lstm_global_fusion,
            &fusion_input(&self.lang.0, &self.global_static),
            &mut self.global,
        );
        self.log_probs = log_softmax_raw(&word_logits(p, &self.local.0, &self.global.0));
    }

    /// Log-distribution over the next token.
    pub fn next_log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    /// Adds up `log p(token)` for each token in turn, feeding it back as the
    /// next input.
    pub fn score_tokens(&mut self, tokens: &[usize]) -> Result<f64> {
        let v = self.params.config.vocab_size;
        let mut total = 0.0;
        for &t in tokens {
            if t >= v {
                return Err(Error::Vocab(format!("token id {t} out of range for vocabulary of {v}")));
            }
            total += self.log_probs[t];
            self.feed(t);
        }
        Ok(total)
    }
}

/// Probability rows of the word predictor, one per target position.
pub fn forward_words_encoded(params: &OrParams, bundle: &FeatureBundle, expr: &Expression) -> Result<Vec<Vec<f64>>> {
    expr.check_ids(params.config.vocab_size)?;
    let lang = language_states(params, expr)?;
    let local_static = bundle.local_static();
    let global_static = bundle.global_static();
    let c = &params.config;
    if local_static.len() != c.local_static_dim() || global_static.len() != c.global_static_dim() {
        return Err(Error::Config(
            "feature bundle does not match the model's modalities".into(),
        ));
    }
    let local_in: Vec<Vec<f64>> = lang.iter().map(|h| fusion_input(h, &local_static)).collect();
    let global_in: Vec<Vec<f64>> = lang.iter().map(|h| fusion_input(h, &global_static)).collect();
    let hl = params.lstm_local_fusion.run_sequence(&local_in);
    let hg = params.lstm_global_fusion.run_sequence(&global_in);
    Ok(hl
        .iter()
        .zip(&hg)
        .map(|(l, g)| softmax_raw(&word_logits(params, &l.h, &g.h)))
        .collect())
}

pub fn forward_words(params: &OrParams, feats: &CandidateFeatures, expr: &Expression) -> Result<Vec<Vec<f64>>> {
    let bundle = encode_visuals(params, feats)?;
    forward_words_encoded(params, &bundle, expr)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub index: usize,
    /// `Σ log p(w_n | w_<n, features)`
    pub log_score: f64,
}

pub fn score_encoded(params: &OrParams, bundle: &FeatureBundle, expr: &Expression) -> Result<f64> {
    expr.check_ids(params.config.vocab_size)?;
    WordScorer::new(params, bundle)?.score_tokens(expr.target_ids())
}

pub fn score_candidate(params: &OrParams, feats: &CandidateFeatures, expr: &Expression) -> Result<f64> {
    score_encoded(params, &encode_visuals(params, feats)?, expr)
}

/// Sorts descending by score, ties to the lower index.
pub fn sort_scores(scores: &mut [CandidateScore]) {
    scores.sort_by(|a, b| b.log_score.total_cmp(&a.log_score).then(a.index.cmp(&b.index)));
}

pub fn rank_candidates(
    params: &OrParams,
    candidates: &[CandidateFeatures],
    expr: &Expression,
) -> Result<Vec<CandidateScore>> {
    if candidates.is_empty() {
        return Err(Error::Contract("no candidates to rank".into()));
    }
    let bundles = encode_candidates(params, candidates)?;
    let mut scores = bundles
        .iter()
        .enumerate()
        .map(|(index, b)| {
            Ok(CandidateScore {
                index,
                log_score: score_encoded(params, b, expr)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_scores(&mut scores);
    Ok(scores)
}
