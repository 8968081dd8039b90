use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one buffer per parameter group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update of `params` using `grads`.
pub fn adam_step<P: ParamSet>(params: &mut P, grads: &P, state: &mut AdamState, hyper: &AdamHyper) -> Result<()> {
    let grad_groups = grads.groups();
    let mut param_groups = params.groups_mut();
    if grad_groups.len() != param_groups.len() {
        return Err(Error::Dimension(format!(
            "{} gradient groups for {} parameter groups",
            grad_groups.len(),
            param_groups.len()
        )));
    }
    for ((pname, p), (gname, g)) in param_groups.iter().zip(&grad_groups) {
        if p.dims() != g.dims() {
            return Err(Error::Dimension(format!(
                "gradient `{gname}` {:?} does not match parameter `{pname}` {:?}",
                g.dims(),
                p.dims()
            )));
        }
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in `{gname}`")));
        }
    }
    if state.m.is_empty() {
        state.m = param_groups.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != param_groups.len()
        || state.m.iter().zip(&param_groups).any(|(m, (_, p))| m.len() != p.len())
    {
        return Err(Error::Dimension("optimizer state does not match parameters".into()));
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for (gi, ((_, p), (_, g))) in param_groups.iter_mut().zip(&grad_groups).enumerate() {
        let m = &mut state.m[gi];
        let v = &mut state.v[gi];
        for (k, (w, &dw)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * dw;
            v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * dw * dw;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *w -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::params::NamedTensors;
    use crate::numkit::tensor::Tensor;

    fn scalar(v: f64) -> NamedTensors {
        NamedTensors(vec![("w".into(), Tensor::vector(vec![v]).unwrap())])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = NamedTensors(vec![("w".into(), Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap())]);
        let before = p.clone();
        let g = NamedTensors(vec![("w".into(), Tensor::zeros(&[3]))]);
        let mut st = AdamState::new();
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut st, &AdamHyper::default()).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(0.0);
        let mut st = AdamState::new();
        let h = AdamHyper::default();
        adam_step(&mut p, &scalar(1.0), &mut st, &h).unwrap();
        let w = p.0[0].1.data()[0];
        assert!((w + h.lr).abs() < 1e-10, "{w}");
    }

    #[test]
    fn descends_quadratic() {
        let mut p = scalar(1.0);
        let mut st = AdamState::new();
        let h = AdamHyper {
            lr: 1e-2,
            ..AdamHyper::default()
        };
        for _ in 0..100 {
            let w = p.0[0].1.data()[0];
            adam_step(&mut p, &scalar(2.0 * w), &mut st, &h).unwrap();
        }
        assert!(p.0[0].1.data()[0].abs() < 0.5);
    }

    #[test]
    fn non_finite_gradient_names_group() {
        let mut p = scalar(0.0);
        let mut g = scalar(0.0);
        g.0[0].0 = "lstm_gaze.w_x".into();
        g.0[0].1.data_mut()[0] = f64::NAN;
        let err = adam_step(&mut p, &g, &mut AdamState::new(), &AdamHyper::default()).unwrap_err();
        assert!(err.to_string().contains("lstm_gaze.w_x"), "{err}");
    }

    #[test]
    fn bitwise_deterministic() {
        let run = || {
            let mut p = NamedTensors(vec![("w".into(), Tensor::vector(vec![0.3, -0.7]).unwrap())]);
            let mut st = AdamState::new();
            for i in 0..50 {
                let g = NamedTensors(vec![(
                    "w".into(),
                    Tensor::vector(vec![(i as f64).sin(), 0.1 * i as f64]).unwrap(),
                )]);
                adam_step(&mut p, &g, &mut st, &AdamHyper::default()).unwrap();
            }
            p.0[0].1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
