//! Dense row-major `f64` matrices.
//!
//! `Mat` is plain storage plus a few kernels (dgemm, axpy). It carries no
//! differentiation state; the autodiff graph in [`crate::tensor`] owns that.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "Mat::from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Convenience for tests and small literals.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn column(values: &[f64]) -> Self {
        Mat {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn scalar(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// self += scale * other (shapes must match).
    pub fn axpy(&mut self, scale: f64, other: &Mat) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    /// C = A · B via dgemm. `ta`/`tb` transpose the respective operand.
    pub fn matmul(a: &Mat, ta: bool, b: &Mat, tb: bool) -> Result<Mat> {
        let (am, ak) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
        let (bk, bn) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
        if ak != bk {
            return Err(Error::dim(
                "matmul",
                format!("inner dimensions {ak} vs {bk}"),
            ));
        }
        let mut out = Mat::zeros(am, bn);
        if am == 0 || bn == 0 || ak == 0 {
            return Ok(out);
        }
        let (a_rs, a_cs) = if ta {
            (1isize, a.cols as isize)
        } else {
            (a.cols as isize, 1isize)
        };
        let (b_rs, b_cs) = if tb {
            (1isize, b.cols as isize)
        } else {
            (b.cols as isize, 1isize)
        };
        unsafe {
            matrixmultiply::dgemm(
                am,
                ak,
                bn,
                1.0,
                a.data.as_ptr(),
                a_rs,
                a_cs,
                b.data.as_ptr(),
                b_rs,
                b_cs,
                0.0,
                out.data.as_mut_ptr(),
                bn as isize,
                1,
            );
        }
        Ok(out)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += x * y;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let eye = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let c = Mat::matmul(&a, false, &eye, false).unwrap();
        assert_eq!(c, a);
    }

    #[test]
    fn matmul_transposed_operands() {
        let a = Mat::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]); // 2x3
        let b = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]); // 3x2
        let c = Mat::matmul(&a, false, &b, false).unwrap();
        // aT has shape 3x2; (aT)T·b = a·b
        let c2 = Mat::matmul(&Mat::matmul(&a, false, &eye(3), false).unwrap(), false, &b, false)
            .unwrap();
        assert_eq!(c, c2);
        // transpose flags against explicit transposes
        let at = transpose(&a);
        let c3 = Mat::matmul(&at, true, &b, false).unwrap();
        assert_eq!(c, c3);
        let bt = transpose(&b);
        let c4 = Mat::matmul(&a, false, &bt, true).unwrap();
        assert_eq!(c, c4);
    }

    #[test]
    fn matmul_shape_error() {
        let a = Mat::zeros(2, 3);
        let b = Mat::zeros(2, 3);
        assert!(Mat::matmul(&a, false, &b, false).is_err());
    }

    fn eye(n: usize) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    fn transpose(a: &Mat) -> Mat {
        let mut t = Mat::zeros(a.cols(), a.rows());
        for r in 0..a.rows() {
            for c in 0..a.cols() {
                t.set(c, r, a.get(r, c));
            }
        }
        t
    }
}
