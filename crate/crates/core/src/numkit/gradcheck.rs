use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dd::Dd;
use super::params::ParamSet;

/// Scalar a loss function may return. Extended-precision losses keep the
/// finite difference `up − down` free of `f64` cancellation.
pub trait LossValue: Copy {
    fn difference(self, other: Self) -> f64;
}

impl LossValue for f64 {
    fn difference(self, other: f64) -> f64 {
        self - other
    }
}

impl LossValue for Dd {
    fn difference(self, other: Dd) -> f64 {
        (self - other).to_f64()
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Groups larger than this are checked on a random subset of this many
    /// coordinates. `None` checks every coordinate.
    pub max_coords_per_group: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_coords_per_group: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_group: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coords_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares `analytic` gradients against central differences of `loss_fn`
/// around `params`.
pub fn grad_check<P, F, L>(mut loss_fn: F, params: &P, analytic: &P, opts: &GradCheckOptions) -> GradCheckReport
where
    P: ParamSet + Clone,
    F: FnMut(&P) -> L,
    L: LossValue,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_group: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coords_checked: 0,
    };
    let analytic_groups = analytic.groups();
    let n_groups = analytic_groups.len();
    for gi in 0..n_groups {
        let (name, grad) = &analytic_groups[gi];
        let len = grad.len();
        let coords: Vec<usize> = match opts.max_coords_per_group {
            Some(k) if k < len => {
                let mut idx = sample(&mut rng, len, k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..len).collect(),
        };
        for k in coords {
            let orig = probe.groups()[gi].1.data()[k];
            let (hi, lo) = (orig + opts.eps, orig - opts.eps);
            probe.groups_mut()[gi].1.data_mut()[k] = hi;
            let up = loss_fn(&probe);
            probe.groups_mut()[gi].1.data_mut()[k] = lo;
            let down = loss_fn(&probe);
            probe.groups_mut()[gi].1.data_mut()[k] = orig;
            // The rounded step, not 2·eps, is the true denominator.
            let numeric = up.difference(down) / (hi - lo);
            let a = grad.data()[k];
            let e = relative_error(a, numeric);
            report.coords_checked += 1;
            if report.coords_checked == 1 || e > report.max_relative_error {
                report.max_relative_error = e;
                report.worst_group = name.clone();
                report.worst_index = k;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::params::NamedTensors;
    use crate::numkit::tensor::Tensor;

    fn quadratic(p: &NamedTensors) -> f64 {
        p.0.iter()
            .enumerate()
            .map(|(gi, (_, t))| {
                t.data()
                    .iter()
                    .enumerate()
                    .map(|(k, v)| (gi + k + 1) as f64 * v * v)
                    .sum::<f64>()
            })
            .sum()
    }

    fn quadratic_grad(p: &NamedTensors) -> NamedTensors {
        let mut g = p.clone();
        for (gi, (_, t)) in g.0.iter_mut().enumerate() {
            for (k, v) in t.data_mut().iter_mut().enumerate() {
                *v *= 2.0 * (gi + k + 1) as f64;
            }
        }
        g
    }

    fn params() -> NamedTensors {
        NamedTensors(vec![
            ("a".into(), Tensor::vector(vec![0.5, -1.5, 2.0]).unwrap()),
            ("b".into(), Tensor::new(vec![2, 2], vec![0.1, 0.2, -0.3, 0.4]).unwrap()),
        ])
    }

    #[test]
    fn exact_on_quadratic() {
        let p = params();
        let r = grad_check(quadratic, &p, &quadratic_grad(&p), &GradCheckOptions::default());
        assert_eq!(r.coords_checked, 7);
        assert!(r.max_relative_error < 1e-8, "{r:?}");
    }

    #[test]
    fn detects_corrupted_gradient() {
        let p = params();
        let mut g = quadratic_grad(&p);
        g.0[1].1.data_mut()[2] *= 2.0;
        let r = grad_check(quadratic, &p, &g, &GradCheckOptions::default());
        assert!(r.max_relative_error > 1e-2);
        assert_eq!((r.worst_group.as_str(), r.worst_index), ("b", 2));
    }

    #[test]
    fn subsamples_large_groups() {
        let p = NamedTensors(vec![(
            "big".into(),
            Tensor::vector((0..500).map(|i| i as f64 * 1e-3).collect()).unwrap(),
        )]);
        let opts = GradCheckOptions {
            max_coords_per_group: Some(200),
            ..Default::default()
        };
        let r = grad_check(quadratic, &p, &quadratic_grad(&p), &opts);
        assert_eq!(r.coords_checked, 200);
        assert!(r.max_relative_error < 1e-5, "{r:?}");
    }
}
