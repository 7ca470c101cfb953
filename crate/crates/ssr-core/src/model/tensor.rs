//! Minimal row-major f64 matrix. Everything the model needs and nothing
//! more: three matmul variants, row views, and elementwise helpers.

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend(row);
        }
        Self { rows: r, cols: c, data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// C = A · B
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul shape {}x{} . {}x{}", a.rows, a.cols, b.rows, b.cols);
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let av = a.data[i * a.cols + k];
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// C = Aᵀ · B, with A of shape [k, r] and B of shape [k, c].
pub fn matmul_at(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows, b.rows, "matmul_at shape");
    let mut out = Tensor::zeros(a.cols, b.cols);
    for t in 0..a.rows {
        let arow = &a.data[t * a.cols..(t + 1) * a.cols];
        let brow = &b.data[t * b.cols..(t + 1) * b.cols];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// C = A · Bᵀ, with A of shape [r, k] and B of shape [c, k].
pub fn matmul_bt(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.cols, "matmul_bt shape");
    let mut out = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = &a.data[i * a.cols..(i + 1) * a.cols];
        for j in 0..b.rows {
            let brow = &b.data[j * b.cols..(j + 1) * b.cols];
            let mut dot = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                dot += av * bv;
            }
            out.data[i * b.rows + j] = dot;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let b = Tensor::from_rows(vec![vec![7.0, 8.0, 9.0], vec![10.0, 11.0, 12.0]]);
        let c = matmul(&a, &b); // [3,3]
        assert_eq!(c.at(0, 0), 27.0);
        assert_eq!(c.at(2, 2), 117.0);

        // Aᵀ·B with A stored transposed equals matmul
        let a_t = Tensor::from_rows(vec![vec![1.0, 3.0, 5.0], vec![2.0, 4.0, 6.0]]);
        let c2 = matmul_at(&a_t, &b_like(&a_t));
        let c3 = matmul(&a, &b_like(&a_t));
        assert_eq!(c2.data, c3.data);

        // A·Bᵀ against direct computation
        let d = matmul_bt(&a, &a);
        assert_eq!(d.at(0, 1), 11.0);
        assert_eq!(d.at(1, 2), 39.0);
    }

    fn b_like(a: &Tensor) -> Tensor {
        let mut t = Tensor::zeros(a.rows, 2);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = i as f64;
        }
        t
    }
}
