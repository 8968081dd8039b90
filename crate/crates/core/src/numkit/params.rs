use super::lstm::LstmParams;
use super::tensor::Tensor;

/// A collection of named parameter tensors with a fixed iteration order.
///
/// Optimizers, gradient clipping and the finite-difference checker all walk
/// parameters through this trait, so a gradient value of the same type lines
/// up group-for-group with the parameters it belongs to.
pub trait ParamSet {
    fn groups(&self) -> Vec<(String, &Tensor)>;
    fn groups_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn num_params(&self) -> usize {
        self.groups().iter().map(|(_, t)| t.len()).sum()
    }
}

impl ParamSet for LstmParams {
    fn groups(&self) -> Vec<(String, &Tensor)> {
        self.tensors().into_iter().map(|(n, t)| (n.to_string(), t)).collect()
    }

    fn groups_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.tensors_mut()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t))
            .collect()
    }
}

/// Plain list of named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensors(pub Vec<(String, Tensor)>);

impl ParamSet for NamedTensors {
    fn groups(&self) -> Vec<(String, &Tensor)> {
        self.0.iter().map(|(n, t)| (n.clone(), t)).collect()
    }

    fn groups_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.0.iter_mut().map(|(n, t)| (n.clone(), t)).collect()
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<P: ParamSet>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads.groups().iter().map(|(_, t)| t.squared_norm()).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, t) in grads.groups_mut() {
            for v in t.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
