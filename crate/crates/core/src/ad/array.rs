//! Dense row-major arrays of tape scalars, rank 0..=2.

use super::scalar::Scalar;

/// Contiguous 64-bit-float-backed array (possibly carrying derivative payload
/// through the scalar type). Shape `[]` is a scalar, `[n]` a vector, `[n, m]`
/// a row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Array<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Array<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Array { shape, data }
    }

    pub fn scalar(v: S) -> Self {
        Array { shape: vec![], data: vec![v] }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Array { shape, data: vec![S::ZERO; n] }
    }

    pub fn from_f64s(shape: Vec<usize>, vals: &[f64]) -> Self {
        Array::new(shape, vals.iter().map(|&v| S::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.len() <= 1
    }

    /// Scalar payload; panics unless the array holds exactly one element.
    pub fn item(&self) -> S {
        assert!(self.data.len() == 1, "item() on array of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn primals(&self) -> Vec<f64> {
        self.data.iter().map(|s| s.primal()).collect()
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => panic!("rows() on non-matrix shape {:?}", self.shape),
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            _ => panic!("cols() on non-matrix shape {:?}", self.shape),
        }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        Array { shape, data: self.data.clone() }
    }
}

/// C = A @ B for [n,k] x [k,m].
pub fn matmul_nn<S: Scalar>(a: &Array<S>, b: &Array<S>) -> Array<S> {
    let (n, k) = (a.rows(), a.cols());
    let (kb, m) = (b.rows(), b.cols());
    assert_eq!(k, kb, "matmul inner dims {k} vs {kb}");
    let mut out = vec![S::ZERO; n * m];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for kk in 0..k {
            let aik = ad[i * k + kk];
            let brow = &bd[kk * m..(kk + 1) * m];
            for j in 0..m {
                orow[j] = orow[j] + aik * brow[j];
            }
        }
    }
    Array::new(vec![n, m], out)
}

/// C = A @ B^T for [n,k] x [m,k]. The dot product runs four independent
/// accumulator chains so the reduction pipelines (and vectorizes) instead of
/// serializing on one dependency chain.
pub fn matmul_nt<S: Scalar>(a: &Array<S>, b: &Array<S>) -> Array<S> {
    let (n, k) = (a.rows(), a.cols());
    let (m, kb) = (b.rows(), b.cols());
    assert_eq!(k, kb, "matmul_nt inner dims {k} vs {kb}");
    let mut out = vec![S::ZERO; n * m];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..n {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &bd[j * k..(j + 1) * k];
            let (mut a0, mut a1, mut a2, mut a3) = (S::ZERO, S::ZERO, S::ZERO, S::ZERO);
            let mut kk = 0;
            while kk + 4 <= k {
                a0 = a0 + arow[kk] * brow[kk];
                a1 = a1 + arow[kk + 1] * brow[kk + 1];
                a2 = a2 + arow[kk + 2] * brow[kk + 2];
                a3 = a3 + arow[kk + 3] * brow[kk + 3];
                kk += 4;
            }
            let mut acc = (a0 + a1) + (a2 + a3);
            while kk < k {
                acc = acc + arow[kk] * brow[kk];
                kk += 1;
            }
            out[i * m + j] = acc;
        }
    }
    Array::new(vec![n, m], out)
}

/// C = A^T @ B for [k,n] x [k,m].
pub fn matmul_tn<S: Scalar>(a: &Array<S>, b: &Array<S>) -> Array<S> {
    let (k, n) = (a.rows(), a.cols());
    let (kb, m) = (b.rows(), b.cols());
    assert_eq!(k, kb, "matmul_tn inner dims {k} vs {kb}");
    let mut out = vec![S::ZERO; n * m];
    let (ad, bd) = (a.data(), b.data());
    for kk in 0..k {
        let arow = &ad[kk * n..(kk + 1) * n];
        let brow = &bd[kk * m..(kk + 1) * m];
        for i in 0..n {
            let aki = arow[i];
            let orow = &mut out[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] = orow[j] + aki * brow[j];
            }
        }
    }
    Array::new(vec![n, m], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = Array::<f64>::from_f64s(vec![2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Array::<f64>::from_f64s(vec![3, 2], &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = matmul_nn(&a, &b);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);

        // A @ B == A @ (B^T)^T
        let bt = Array::<f64>::from_f64s(vec![2, 3], &[7.0, 9.0, 11.0, 8.0, 10.0, 12.0]);
        assert_eq!(matmul_nt(&a, &bt).data(), c.data());

        // A @ B == (A^T)^T @ B
        let at = Array::<f64>::from_f64s(vec![3, 2], &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(matmul_tn(&at, &b).data(), c.data());
    }
}
