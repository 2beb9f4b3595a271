use serde::{Deserialize, Serialize};

/// Dense row-major matrix of `f64`. Vectors are `1 x n` or `n x 1`, scalars `1 x 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length does not match shape");
        Self { rows, cols, data }
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_vec(1, 1, vec![value])
    }

    pub fn column(values: Vec<f64>) -> Self {
        let n = values.len();
        Self::from_vec(n, 1, values)
    }

    pub fn row(values: Vec<f64>) -> Self {
        let n = values.len();
        Self::from_vec(1, n, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// `a (m x k) * b (k x n)`
pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        axpy_rows(&mut out[i * n..(i + 1) * n], a_row, &b.data, n);
    }
    Tensor::from_vec(m, n, out)
}

/// `out += Σ_p coeffs[p] * rows[p]`, four source rows per pass over `out`.
fn axpy_rows(out: &mut [f64], coeffs: &[f64], rows: &[f64], n: usize) {
    let mut p = 0;
    while p + 4 <= coeffs.len() {
        let c = [coeffs[p], coeffs[p + 1], coeffs[p + 2], coeffs[p + 3]];
        if c != [0.0; 4] {
            let block = &rows[p * n..(p + 4) * n];
            let (r0, rest) = block.split_at(n);
            let (r1, rest) = rest.split_at(n);
            let (r2, r3) = rest.split_at(n);
            for ((((o, x0), x1), x2), x3) in out.iter_mut().zip(r0).zip(r1).zip(r2).zip(r3) {
                *o += c[0] * x0 + c[1] * x1 + c[2] * x2 + c[3] * x3;
            }
        }
        p += 4;
    }
    for q in p..coeffs.len() {
        let c = coeffs[q];
        if c != 0.0 {
            for (o, &r) in out.iter_mut().zip(&rows[q * n..(q + 1) * n]) {
                *o += c * r;
            }
        }
    }
}

/// `a (m x n) * b^T` where `b` is `k x n`; result `m x k`.
pub(crate) fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, n) = (b.rows, b.cols);
    let mut bt = vec![0.0; n * k];
    for j in 0..k {
        for (c, &v) in b.data[j * n..(j + 1) * n].iter().enumerate() {
            bt[c * k + j] = v;
        }
    }
    matmul(a, &Tensor::from_vec(n, k, bt))
}

/// `a^T * b` where `a` is `m x k` and `b` is `m x n`; result `k x n`.
pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; k * n];
    let mut column = vec![0.0; m];
    for p in 0..k {
        for (i, c) in column.iter_mut().enumerate() {
            *c = a.data[i * k + p];
        }
        axpy_rows(&mut out[p * n..(p + 1) * n], &column, &b.data, n);
    }
    Tensor::from_vec(k, n, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * b.get(p, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn transpose(t: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(t.cols(), t.rows());
        for i in 0..t.rows() {
            for j in 0..t.cols() {
                out.set(j, i, t.get(i, j));
            }
        }
        out
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let a = Tensor::from_vec(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, 4.0]);
        let b = Tensor::from_vec(3, 2, vec![0.25, 1.0, -1.0, 2.0, 3.0, 0.0]);
        let expect = naive(&a, &b);
        assert_eq!(matmul(&a, &b), expect);
        assert_eq!(matmul_nt(&a, &transpose(&b)), expect);
        assert_eq!(matmul_tn(&transpose(&a), &b), expect);
    }
}
