use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, VisualStream};
use crate::error::{Error, Result};
use crate::numkit::{LstmParams, ParamSet, Tensor};

/// Every trainable weight of the network. A value of this type also serves
/// as the gradient accumulator for itself.
#[derive(Clone, Debug, PartialEq)]
pub struct OrParams {
    pub config: ModelConfig,
    /// `[V × embed_dim]`
    pub embedding: Tensor,
    pub lstm_language: LstmParams,
    /// Indexed by [`VisualStream::index`]; `None` for disabled modalities.
    pub visual: [Option<LstmParams>; 7],
    pub lstm_local_fusion: LstmParams,
    pub lstm_global_fusion: LstmParams,
    /// `[V × fusion_hidden]`
    pub w_local: Tensor,
    /// `[V × fusion_hidden]`
    pub w_global: Tensor,
    /// `[V]`
    pub r: Tensor,
}

impl OrParams {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let visual = VisualStream::ALL.map(|s| {
            s.enabled(&c.modalities)
                .then(|| LstmParams::zeros(c.stream_input_dim(s), c.visual_hidden))
        });
        Ok(OrParams {
            config: c.clone(),
            embedding: Tensor::zeros(&[c.vocab_size, c.embed_dim]),
            lstm_language: LstmParams::zeros(c.embed_dim, c.lang_hidden),
            visual,
            lstm_local_fusion: LstmParams::zeros(c.local_fusion_input(), c.fusion_hidden),
            lstm_global_fusion: LstmParams::zeros(c.global_fusion_input(), c.fusion_hidden),
            w_local: Tensor::zeros(&[c.vocab_size, c.fusion_hidden]),
            w_global: Tensor::zeros(&[c.vocab_size, c.fusion_hidden]),
            r: Tensor::zeros(&[c.vocab_size]),
        })
    }

    /// Random initialization, deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut p = OrParams::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config;
        let a = 1.0 / (c.embed_dim as f64).sqrt();
        for v in p.embedding.data_mut() {
            *v = rng.gen_range(-a..a);
        }
        p.lstm_language = LstmParams::init(c.embed_dim, c.lang_hidden, &mut rng);
        for s in VisualStream::ALL {
            if s.enabled(&c.modalities) {
                p.visual[s.index()] = Some(LstmParams::init(c.stream_input_dim(s), c.visual_hidden, &mut rng));
            }
        }
        p.lstm_local_fusion = LstmParams::init(c.local_fusion_input(), c.fusion_hidden, &mut rng);
        p.lstm_global_fusion = LstmParams::init(c.global_fusion_input(), c.fusion_hidden, &mut rng);
        let a = 1.0 / (c.fusion_hidden as f64).sqrt();
        for v in p.w_local.data_mut().iter_mut().chain(p.w_global.data_mut()) {
            *v = rng.gen_range(-a..a);
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        OrParams::zeros(&self.config).expect("config was validated at construction")
    }

    pub fn stream(&self, s: VisualStream) -> Option<&LstmParams> {
        self.visual[s.index()].as_ref()
    }

    /// Checks every tensor shape against the configuration.
    pub fn validate(&self) -> Result<()> {
        let reference = OrParams::zeros(&self.config)?;
        let mine = self.groups();
        let want = reference.groups();
        if mine.len() != want.len() {
            return Err(Error::Config(format!(
                "{} parameter groups, configuration needs {}",
                mine.len(),
                want.len()
            )));
        }
        for ((n1, t1), (n2, t2)) in mine.iter().zip(&want) {
            if n1 != n2 || t1.dims() != t2.dims() {
                return Err(Error::Config(format!(
                    "parameter `{n1}` {:?} does not match `{n2}` {:?}",
                    t1.dims(),
                    t2.dims()
                )));
            }
        }
        for (name, t) in &mine {
            t.check_finite(name)?;
        }
        Ok(())
    }

    /// Adds `other` into `self`, group by group.
    pub fn add_assign(&mut self, other: &OrParams) {
        for ((_, a), (_, b)) in self.groups_mut().into_iter().zip(other.groups()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (_, t) in self.groups_mut() {
            for x in t.data_mut() {
                *x *= k;
            }
        }
    }
}

fn lstm_groups<'a>(prefix: &str, p: &'a LstmParams, out: &mut Vec<(String, &'a Tensor)>) {
    for (n, t) in p.tensors() {
        out.push((format!("{prefix}.{n}"), t));
    }
}

fn lstm_groups_mut<'a>(prefix: &str, p: &'a mut LstmParams, out: &mut Vec<(String, &'a mut Tensor)>) {
    for (n, t) in p.tensors_mut() {
        out.push((format!("{prefix}.{n}"), t));
    }
}

impl ParamSet for OrParams {
    fn groups(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        lstm_groups("lstm_language", &self.lstm_language, &mut out);
        for s in VisualStream::ALL {
            if let Some(p) = &self.visual[s.index()] {
                lstm_groups(s.name(), p, &mut out);
            }
        }
        lstm_groups("lstm_local_fusion", &self.lstm_local_fusion, &mut out);
        lstm_groups("lstm_global_fusion", &self.lstm_global_fusion, &mut out);
        out.push(("w_local".into(), &self.w_local));
        out.push(("w_global".into(), &self.w_global));
        out.push(("r".into(), &self.r));
        out
    }

    fn groups_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("embedding".to_string(), &mut self.embedding)];
        lstm_groups_mut("lstm_language", &mut self.lstm_language, &mut out);
        for (s, p) in VisualStream::ALL.iter().zip(self.visual.iter_mut()) {
            if let Some(p) = p {
                lstm_groups_mut(s.name(), p, &mut out);
            }
        }
        lstm_groups_mut("lstm_local_fusion", &mut self.lstm_local_fusion, &mut out);
        lstm_groups_mut("lstm_global_fusion", &mut self.lstm_global_fusion, &mut out);
        out.push(("w_local".into(), &mut self.w_local));
        out.push(("w_global".into(), &mut self.w_global));
        out.push(("r".into(), &mut self.r));
        out
    }
}
