use crate::error::{Error, Result};

/// Dense row-major array of rank 0 to 3.
///
/// Every value is finite; construction rejects NaN and infinities.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.len() > 3 {
            return Err(Error::Dimension(format!("rank {} exceeds 3", dims.len())));
        }
        if dims.contains(&0) {
            return Err(Error::Dimension(format!("zero-length axis in {dims:?}")));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at index {i}")));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(dims: &[usize], value: f64) -> Self {
        assert!(value.is_finite());
        let mut t = Tensor::zeros(dims);
        t.data.fill(value);
        t
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the buffer. Callers that write computed values are
    /// responsible for keeping them finite (see [`Tensor::check_finite`]).
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Numeric(format!("{what}: non-finite value at index {i}"))),
            None => Ok(()),
        }
    }

    /// Row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.dims[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.dims[1];
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.dims[1] + c]
    }

    pub fn get3(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.dims[1] + b) * self.dims[2] + c]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(&self.dims)
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// `out += m · x` for a row-major `rows × cols` matrix.
pub(crate) fn matvec_acc(m: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(m.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// `out += mᵀ · y` for a row-major `rows × cols` matrix.
pub(crate) fn matvec_t_acc(m: &[f64], cols: usize, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), cols);
    for (yi, row) in y.iter().zip(m.chunks_exact(cols)) {
        if *yi == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += yi * a;
        }
    }
}

/// `m += y ⊗ x`.
pub(crate) fn outer_acc(m: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (yi, row) in y.iter().zip(m.chunks_exact_mut(cols)) {
        if *yi == 0.0 {
            continue;
        }
        for (o, a) in row.iter_mut().zip(x) {
            *o += yi * a;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            Tensor::new(vec![1], vec![f64::INFINITY]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![0.0; 3]),
            Err(Error::Dimension(_))
        ));
        assert!(Tensor::new(vec![1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn matvec_helpers() {
        let m = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0; 2];
        matvec_acc(&m, 3, &[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, [-2.0, -2.0]);
        let mut back = [0.0; 3];
        matvec_t_acc(&m, 3, &[1.0, 1.0], &mut back);
        assert_eq!(back, [5.0, 7.0, 9.0]);
        let mut g = [0.0; 6];
        outer_acc(&mut g, &[1.0, 2.0], &[1.0, 0.0, 3.0]);
        assert_eq!(g, [1.0, 0.0, 3.0, 2.0, 0.0, 6.0]);
    }
}
