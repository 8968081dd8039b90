//! Standard LSTM cell (no peepholes) with exact backward pass.
//!
//! Gate blocks are stacked in the order input, forget, output, candidate:
//! rows `[0, H)` of `w_x`, `w_h` and `b` drive the input gate, `[H, 2H)` the
//! forget gate, `[2H, 3H)` the output gate and `[3H, 4H)` the candidate.

use rand::Rng;

use super::tensor::{matvec_acc, matvec_t_acc, outer_acc, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `[4H × input_dim]`
    pub w_x: Tensor,
    /// `[4H × H]`
    pub w_h: Tensor,
    /// `[4H]`
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden_dim],
            c: vec![0.0; hidden_dim],
        }
    }
}

/// Intermediates of one forward step, consumed by the backward pass.
#[derive(Clone, Debug)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Activated gates `[i | f | o | g]`, length 4H.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl StepCache {
    pub fn state(&self) -> LstmState {
        LstmState {
            h: self.h.clone(),
            c: self.c.clone(),
        }
    }
}

/// Result of [`lstm_backward`].
#[derive(Clone, Debug)]
pub struct StepGrads {
    pub params: LstmParams,
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmParams {
            input_dim,
            hidden_dim,
            w_x: Tensor::zeros(&[4 * hidden_dim, input_dim]),
            w_h: Tensor::zeros(&[4 * hidden_dim, hidden_dim]),
            b: Tensor::zeros(&[4 * hidden_dim]),
        }
    }

    /// Uniform(-a, a) weights with `a = 1/sqrt(hidden_dim)`, zero biases
    /// except the forget block which starts at +1.
    pub fn init<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut p = LstmParams::zeros(input_dim, hidden_dim);
        let a = 1.0 / (hidden_dim as f64).sqrt();
        for v in p.w_x.data_mut().iter_mut().chain(p.w_h.data_mut()) {
            *v = rng.gen_range(-a..a);
        }
        p.b.data_mut()[hidden_dim..2 * hidden_dim].fill(1.0);
        p
    }

    pub fn zeros_like(&self) -> Self {
        LstmParams::zeros(self.input_dim, self.hidden_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let (i, h) = (self.input_dim, self.hidden_dim);
        if i == 0 || h == 0 {
            return Err(Error::Dimension("LSTM dims must be positive".into()));
        }
        if self.w_x.dims() != [4 * h, i] || self.w_h.dims() != [4 * h, h] || self.b.dims() != [4 * h] {
            return Err(Error::Dimension(format!(
                "LSTM tensors {:?}/{:?}/{:?} inconsistent with input {i}, hidden {h}",
                self.w_x.dims(),
                self.w_h.dims(),
                self.b.dims()
            )));
        }
        Ok(())
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 3] {
        [("w_x", &self.w_x), ("w_h", &self.w_h), ("b", &self.b)]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 3] {
        [("w_x", &mut self.w_x), ("w_h", &mut self.w_h), ("b", &mut self.b)]
    }

    /// Unchecked forward step; inputs must have the right lengths.
    pub fn step_raw(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
        let h = self.hidden_dim;
        let mut gates = self.b.data().to_vec();
        matvec_acc(self.w_x.data(), self.input_dim, x, &mut gates);
        matvec_acc(self.w_h.data(), h, h_prev, &mut gates);
        for z in &mut gates[..3 * h] {
            *z = sigmoid(*z);
        }
        for z in &mut gates[3 * h..] {
            *z = z.tanh();
        }
        let mut c = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        let mut h_new = vec![0.0; h];
        for k in 0..h {
            let (ig, fg, og, gg) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            c[k] = fg * c_prev[k] + ig * gg;
            tanh_c[k] = c[k].tanh();
            h_new[k] = og * tanh_c[k];
        }
        StepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            c,
            tanh_c,
            h: h_new,
        }
    }

    /// Unchecked backward step. Accumulates parameter gradients into `grads`
    /// and returns `(dx, dh_prev, dc_prev)`.
    pub fn backward_raw(
        &self,
        cache: &StepCache,
        dh: &[f64],
        dc: &[f64],
        grads: &mut LstmParams,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let h = self.hidden_dim;
        let g = &cache.gates;
        let mut da = vec![0.0; 4 * h];
        let mut dc_prev = vec![0.0; h];
        for k in 0..h {
            let (ig, fg, og, gg) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
            let t = cache.tanh_c[k];
            let d_o = dh[k] * t;
            let dct = dc[k] + dh[k] * og * (1.0 - t * t);
            da[k] = dct * gg * ig * (1.0 - ig);
            da[h + k] = dct * cache.c_prev[k] * fg * (1.0 - fg);
            da[2 * h + k] = d_o * og * (1.0 - og);
            da[3 * h + k] = dct * ig * (1.0 - gg * gg);
            dc_prev[k] = dct * fg;
        }
        outer_acc(grads.w_x.data_mut(), &da, &cache.x);
        outer_acc(grads.w_h.data_mut(), &da, &cache.h_prev);
        for (gb, d) in grads.b.data_mut().iter_mut().zip(&da) {
            *gb += d;
        }
        let mut dx = vec![0.0; self.input_dim];
        matvec_t_acc(self.w_x.data(), self.input_dim, &da, &mut dx);
        let mut dh_prev = vec![0.0; h];
        matvec_t_acc(self.w_h.data(), h, &da, &mut dh_prev);
        (dx, dh_prev, dc_prev)
    }

    /// Runs the cell over `inputs` from the zero state.
    pub fn run_sequence<X: AsRef<[f64]>>(&self, inputs: &[X]) -> Vec<StepCache> {
        let mut caches: Vec<StepCache> = Vec::with_capacity(inputs.len());
        let zero = vec![0.0; self.hidden_dim];
        for x in inputs {
            let cache = match caches.last() {
                Some(prev) => self.step_raw(x.as_ref(), &prev.h, &prev.c),
                None => self.step_raw(x.as_ref(), &zero, &zero),
            };
            caches.push(cache);
        }
        caches
    }

    /// Final hidden state of [`LstmParams::run_sequence`] without keeping caches.
    pub fn final_hidden<X: AsRef<[f64]>>(&self, inputs: &[X]) -> Vec<f64> {
        let mut h = vec![0.0; self.hidden_dim];
        let mut c = vec![0.0; self.hidden_dim];
        for x in inputs {
            let s = self.step_raw(x.as_ref(), &h, &c);
            h = s.h;
            c = s.c;
        }
        h
    }

    /// Backpropagation through time for a sequence started from the zero
    /// state. `dh[n]` is the external gradient on the hidden state of step n.
    /// Returns the gradient of every input.
    pub fn backward_sequence(&self, caches: &[StepCache], dh: &[Vec<f64>], grads: &mut LstmParams) -> Vec<Vec<f64>> {
        debug_assert_eq!(caches.len(), dh.len());
        let h = self.hidden_dim;
        let mut carry_h = vec![0.0; h];
        let mut carry_c = vec![0.0; h];
        let mut dxs = vec![Vec::new(); caches.len()];
        for n in (0..caches.len()).rev() {
            let total: Vec<f64> = dh[n].iter().zip(&carry_h).map(|(a, b)| a + b).collect();
            let (dx, dhp, dcp) = self.backward_raw(&caches[n], &total, &carry_c, grads);
            dxs[n] = dx;
            carry_h = dhp;
            carry_c = dcp;
        }
        dxs
    }
}

fn check_vec(v: &[f64], len: usize, what: &str) -> Result<()> {
    if v.len() != len {
        return Err(Error::Dimension(format!(
            "{what}: expected length {len}, got {}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("{what}: non-finite value")));
    }
    Ok(())
}

/// One checked forward step of the cell.
pub fn lstm_step(x: &Tensor, prev: &LstmState, p: &LstmParams) -> Result<(LstmState, StepCache)> {
    p.validate()?;
    check_vec(x.data(), p.input_dim, "lstm input")?;
    check_vec(&prev.h, p.hidden_dim, "previous h")?;
    check_vec(&prev.c, p.hidden_dim, "previous c")?;
    let cache = p.step_raw(x.data(), &prev.h, &prev.c);
    Ok((cache.state(), cache))
}

/// Exact gradients of one step given upstream gradients on `h'` and `c'`.
pub fn lstm_backward(cache: &StepCache, dh: &Tensor, dc: &Tensor, p: &LstmParams) -> Result<StepGrads> {
    p.validate()?;
    let (i, h) = (p.input_dim, p.hidden_dim);
    if cache.x.len() != i
        || cache.h_prev.len() != h
        || cache.c_prev.len() != h
        || cache.gates.len() != 4 * h
        || cache.c.len() != h
    {
        return Err(Error::Contract("step cache does not match the LSTM parameters".into()));
    }
    check_vec(dh.data(), h, "dh")?;
    check_vec(dc.data(), h, "dc")?;
    let mut grads = p.zeros_like();
    let (dx, dh_prev, dc_prev) = p.backward_raw(cache, dh.data(), dc.data(), &mut grads);
    Ok(StepGrads {
        params: grads,
        dx,
        dh_prev,
        dc_prev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Second, deliberately naive implementation used as an oracle.
    fn reference_step(p: &LstmParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hd = p.hidden_dim;
        let pre = |row: usize| {
            let mut z = p.b.data()[row];
            for j in 0..p.input_dim {
                z += p.w_x.get2(row, j) * x[j];
            }
            for j in 0..hd {
                z += p.w_h.get2(row, j) * h[j];
            }
            z
        };
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut h2 = vec![0.0; hd];
        let mut c2 = vec![0.0; hd];
        for k in 0..hd {
            let i = sig(pre(k));
            let f = sig(pre(hd + k));
            let o = sig(pre(2 * hd + k));
            let g = pre(3 * hd + k).tanh();
            c2[k] = f * c[k] + i * g;
            h2[k] = o * c2[k].tanh();
        }
        (h2, c2)
    }

    fn random_params(seed: u64, i: usize, h: usize) -> LstmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = LstmParams::init(i, h, &mut rng);
        for v in p.b.data_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
        p
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_params_zero_state() {
        let p = LstmParams::zeros(3, 4);
        let x = Tensor::vector(vec![0.3, -2.0, 5.0]).unwrap();
        let (s, _) = lstm_step(&x, &LstmState::zeros(4), &p).unwrap();
        assert_eq!(s.h, vec![0.0; 4]);
        assert_eq!(s.c, vec![0.0; 4]);
    }

    #[test]
    fn zero_params_unit_cell() {
        let p = LstmParams::zeros(2, 3);
        let prev = LstmState {
            h: vec![0.7, -0.1, 0.2],
            c: vec![1.0; 3],
        };
        let x = Tensor::vector(vec![1.0, 1.0]).unwrap();
        let (s, _) = lstm_step(&x, &prev, &p).unwrap();
        for k in 0..3 {
            assert!((s.c[k] - 0.5).abs() < 1e-15);
            assert!((s.h[k] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
            assert!((s.h[k] - 0.2311).abs() < 1e-4);
        }
    }

    #[test]
    fn matches_reference_cell() {
        let p = random_params(0, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut h = random_vec(&mut rng, 4);
        let mut c = random_vec(&mut rng, 4);
        for _ in 0..5 {
            let x = random_vec(&mut rng, 3);
            let got = p.step_raw(&x, &h, &c);
            let (h_ref, c_ref) = reference_step(&p, &x, &h, &c);
            for k in 0..4 {
                assert!((got.h[k] - h_ref[k]).abs() < 1e-14);
                assert!((got.c[k] - c_ref[k]).abs() < 1e-14);
            }
            h = got.h;
            c = got.c;
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = random_params(3, 3, 4);
        let x = Tensor::vector(vec![0.1, 0.2, 0.3]).unwrap();
        let prev = LstmState {
            h: vec![0.1; 4],
            c: vec![0.5; 4],
        };
        let (_, cache) = lstm_step(&x, &prev, &p).unwrap();
        let z = Tensor::zeros(&[4]);
        let g = lstm_backward(&cache, &z, &z, &p).unwrap();
        assert!(g.dx.iter().chain(&g.dh_prev).chain(&g.dc_prev).all(|v| *v == 0.0));
        assert!(g.params.w_x.data().iter().all(|v| *v == 0.0));
        assert!(g.params.b.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mismatched_cache_is_contract_violation() {
        let p = random_params(1, 3, 4);
        let other = random_params(1, 2, 4);
        let (_, cache) = lstm_step(&Tensor::vector(vec![0.0; 2]).unwrap(), &LstmState::zeros(4), &other).unwrap();
        let z = Tensor::zeros(&[4]);
        assert!(matches!(lstm_backward(&cache, &z, &z, &p), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_and_value_errors() {
        let p = LstmParams::zeros(3, 2);
        let bad = Tensor::vector(vec![0.0; 2]).unwrap();
        assert!(matches!(
            lstm_step(&bad, &LstmState::zeros(2), &p),
            Err(Error::Dimension(_))
        ));
        let prev = LstmState {
            h: vec![f64::NAN, 0.0],
            c: vec![0.0; 2],
        };
        assert!(matches!(
            lstm_step(&Tensor::zeros(&[3]), &prev, &p),
            Err(Error::Numeric(_))
        ));
    }

    /// Scalar objective `<a, h'> + <b, c'>` of one step, for finite differences.
    fn objective(p: &LstmParams, x: &[f64], h: &[f64], c: &[f64], a: &[f64], b: &[f64]) -> f64 {
        let s = p.step_raw(x, h, c);
        s.h.iter().zip(a).map(|(u, v)| u * v).sum::<f64>() + s.c.iter().zip(b).map(|(u, v)| u * v).sum::<f64>()
    }

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
    }

    #[test]
    fn backward_matches_finite_differences_on_random_configs() {
        let eps = 1e-5;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let (i, h) = (rng.gen_range(1..5), rng.gen_range(1..6));
            let p = random_params(seed, i, h);
            let x = random_vec(&mut rng, i);
            let hp = random_vec(&mut rng, h);
            let cp = random_vec(&mut rng, h);
            let a = random_vec(&mut rng, h);
            let b = random_vec(&mut rng, h);
            let cache = p.step_raw(&x, &hp, &cp);
            let mut grads = p.zeros_like();
            let (dx, dhp, dcp) = p.backward_raw(&cache, &a, &b, &mut grads);
            let mut worst: f64 = 0.0;

            for k in 0..x.len() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[k] += eps;
                xm[k] -= eps;
                let num = (objective(&p, &xp, &hp, &cp, &a, &b) - objective(&p, &xm, &hp, &cp, &a, &b)) / (2.0 * eps);
                worst = worst.max(rel_err(dx[k], num));
            }
            for k in 0..h {
                let (mut up, mut um) = (hp.clone(), hp.clone());
                up[k] += eps;
                um[k] -= eps;
                let num = (objective(&p, &x, &up, &cp, &a, &b) - objective(&p, &x, &um, &cp, &a, &b)) / (2.0 * eps);
                worst = worst.max(rel_err(dhp[k], num));
                let (mut up, mut um) = (cp.clone(), cp.clone());
                up[k] += eps;
                um[k] -= eps;
                let num = (objective(&p, &x, &hp, &up, &a, &b) - objective(&p, &x, &hp, &um, &a, &b)) / (2.0 * eps);
                worst = worst.max(rel_err(dcp[k], num));
            }
            let names = ["w_x", "w_h", "b"];
            for (gi, name) in names.iter().enumerate() {
                let n = grads.tensors()[gi].1.len();
                for k in 0..n {
                    let mut pp = p.clone();
                    let mut pm = p.clone();
                    pp.tensors_mut()[gi].1.data_mut()[k] += eps;
                    pm.tensors_mut()[gi].1.data_mut()[k] -= eps;
                    let num =
                        (objective(&pp, &x, &hp, &cp, &a, &b) - objective(&pm, &x, &hp, &cp, &a, &b)) / (2.0 * eps);
                    let an = grads.tensors()[gi].1.data()[k];
                    let e = rel_err(an, num);
                    assert!(e < 1e-4, "seed {seed} {name}[{k}]: analytic {an} numeric {num}");
                    worst = worst.max(e);
                }
            }
            assert!(worst < 1e-4, "seed {seed}: worst relative error {worst}");
        }
    }

    #[test]
    fn input_jacobian_matches_column_perturbation() {
        // d(sum_k h'_k)/dx_j from backward equals the perturbed-forward column sums.
        let p = random_params(0, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_vec(&mut rng, 3);
        let hp = random_vec(&mut rng, 4);
        let cp = random_vec(&mut rng, 4);
        let cache = p.step_raw(&x, &hp, &cp);
        let mut grads = p.zeros_like();
        let (dx, _, _) = p.backward_raw(&cache, &[1.0; 4], &[0.0; 4], &mut grads);
        let eps = 1e-5;
        for j in 0..3 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += eps;
            xm[j] -= eps;
            let hp_ = p.step_raw(&xp, &hp, &cp).h;
            let hm_ = p.step_raw(&xm, &hp, &cp).h;
            let col: f64 = hp_.iter().zip(&hm_).map(|(a, b)| (a - b) / (2.0 * eps)).sum();
            assert!(rel_err(dx[j], col) < 1e-6, "column {j}: {} vs {col}", dx[j]);
        }
    }

    #[test]
    fn sequence_backward_matches_stepwise_composition() {
        let p = random_params(5, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, 2)).collect();
        let caches = p.run_sequence(&xs);
        assert_eq!(caches.last().unwrap().h, p.final_hidden(&xs));
        let a = random_vec(&mut rng, 3);
        let loss = |p: &LstmParams| -> f64 { p.final_hidden(&xs).iter().zip(&a).map(|(u, v)| u * v).sum() };
        let mut dh = vec![vec![0.0; 3]; 4];
        dh[3] = a.clone();
        let mut grads = p.zeros_like();
        p.backward_sequence(&caches, &dh, &mut grads);
        let eps = 1e-5;
        for k in 0..p.w_h.len() {
            let mut pp = p.clone();
            let mut pm = p.clone();
            pp.w_h.data_mut()[k] += eps;
            pm.w_h.data_mut()[k] -= eps;
            let num = (loss(&pp) - loss(&pm)) / (2.0 * eps);
            assert!(rel_err(grads.w_h.data()[k], num) < 1e-4);
        }
    }

    proptest::proptest! {
        #[test]
        fn hidden_output_strictly_inside_unit_interval(
            seed in 0u64..1000,
            scale in 0.1f64..3.0,
        ) {
            let mut p = random_params(seed, 3, 4);
            for v in p.w_x.data_mut() { *v *= scale; }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let s = p.step_raw(&x, &[0.0; 4], &c);
            proptest::prop_assert!(s.h.iter().all(|v| v.abs() < 1.0));
        }
    }
}
