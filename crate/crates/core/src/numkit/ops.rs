use crate::error::{Error, Result};

/// Max-shifted softmax.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::Dimension("softmax of an empty vector".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("softmax input is not finite".into()));
    }
    Ok(softmax_raw(z))
}

pub(crate) fn softmax_raw(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for v in &mut out {
        *v /= s;
    }
    out
}

/// `log(softmax(z))`, computed via log-sum-exp.
pub fn log_softmax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::Dimension("log_softmax of an empty vector".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("log_softmax input is not finite".into()));
    }
    Ok(log_softmax_raw(z))
}

pub(crate) fn log_softmax_raw(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}
