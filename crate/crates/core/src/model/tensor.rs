//! Dense row-major matrices and the scalar trait the network is generic over.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

/// `f32` for training, `f64` for gradient checks and exact determinism runs.
pub trait Scalar:
    Float + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + Sum + 'static
{
    fn from_f64(x: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c = alpha * a · b + beta * c` with arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn from_f64(x: f64) -> Self {
                x as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every index touched lies inside the slices (checked above).
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape {rows}x{cols} vs {} values", data.len());
        Mat { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    pub fn add_assign(&mut self, other: &Mat<F>) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn argmax_row(&self, r: usize) -> usize {
        let row = self.row(r);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            // First maximum wins so ties resolve to the lower id.
            if v > row[best] {
                best = i;
            }
        }
        best
    }
}

/// `c += a · op(b)` where `op(b)` is `b` or `bᵀ`. `a` is `m × k`.
pub fn matmul_acc<F: Scalar>(a: &[F], m: usize, k: usize, b: &[F], b_rows: usize, b_cols: usize, trans_b: bool, c: &mut [F]) {
    let n = if trans_b { b_rows } else { b_cols };
    let (rsb, csb) = if trans_b { (1, b_cols as isize) } else { (b_cols as isize, 1) };
    F::gemm(m, k, n, F::one(), a, k as isize, 1, b, rsb, csb, F::one(), c, n as isize, 1);
}

/// `c += aᵀ · g` where `a` is `m × k` and `g` is `m × n`.
pub fn matmul_at_acc<F: Scalar>(a: &[F], m: usize, k: usize, g: &[F], n: usize, c: &mut [F]) {
    F::gemm(k, m, n, F::one(), a, 1, k as isize, g, n as isize, 1, F::one(), c, n as isize, 1);
}
