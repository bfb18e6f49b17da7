//! Dense linear algebra for small symmetric systems.
//!
//! The posterior formulas in this crate only ever factor matrices whose side is
//! the parameter or grid dimension (a few to ~100), so a straightforward
//! generic Cholesky and a cyclic Jacobi eigensolver are sufficient and keep the
//! whole crate generic over [`Scalar`](crate::Scalar). Positive-definite solves
//! go through [`CholeskyFactor`], which retries with escalating diagonal jitter
//! before reporting failure.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Jitter schedule for barely-not-PD matrices: no jitter, then 1e-10 escalating
/// tenfold up to 1e-6.
const JITTER_SCHEDULE: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct CholeskyFactor<T> {
    lower: Array2<T>,
    /// Diagonal jitter that had to be added before factorization succeeded.
    pub jitter: f64,
}

impl<T: Scalar> CholeskyFactor<T> {
    /// Factors `a`, adding diagonal jitter per the retry schedule if needed.
    pub fn new(a: &Array2<T>) -> Result<Self> {
        let n = square_dim(a, "cholesky")?;
        let mut last_err = None;
        for &jitter in &JITTER_SCHEDULE {
            let mut work = a.clone();
            if jitter > 0.0 {
                let j = T::cast(jitter);
                for i in 0..n {
                    work[(i, i)] += j;
                }
            }
            match cholesky_in_place(&mut work) {
                Ok(()) => return Ok(Self { lower: work, jitter }),
                Err(e) => last_err = Some(e),
            }
        }
        let detail = last_err.map(|e| e.to_string()).unwrap_or_default();
        Err(Error::Linalg(format!(
            "matrix not positive definite even with jitter up to {:.0e}: {detail}",
            JITTER_SCHEDULE[JITTER_SCHEDULE.len() - 1]
        )))
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &Array2<T> {
        &self.lower
    }

    /// Solves `A x = b` for one right-hand side.
    pub fn solve_vec(&self, b: &Array1<T>) -> Result<Array1<T>> {
        if b.len() != self.dim() {
            return Err(Error::shape(
                "cholesky solve",
                format!("vector of length {}", self.dim()),
                format!("length {}", b.len()),
            ));
        }
        let mut x = b.clone();
        forward_substitute(&self.lower, x.as_slice_mut().expect("contiguous"));
        back_substitute_transposed(&self.lower, x.as_slice_mut().expect("contiguous"));
        Ok(x)
    }

    /// Solves `A X = B` column by column.
    pub fn solve_mat(&self, b: &Array2<T>) -> Result<Array2<T>> {
        if b.nrows() != self.dim() {
            return Err(Error::shape(
                "cholesky solve",
                format!("{} rows", self.dim()),
                format!("{} rows", b.nrows()),
            ));
        }
        let mut out = Array2::zeros(b.raw_dim());
        for (j, col) in b.columns().into_iter().enumerate() {
            let x = self.solve_vec(&col.to_owned())?;
            out.column_mut(j).assign(&x);
        }
        Ok(out)
    }

    /// Explicit inverse; prefer the solve methods when a product suffices.
    pub fn inverse(&self) -> Result<Array2<T>> {
        let n = self.dim();
        let inv = self.solve_mat(&Array2::eye(n))?;
        // Round-trip asymmetry from the two triangular sweeps is below
        // factorization error; symmetrize so downstream validation holds.
        Ok(symmetrize(&inv))
    }

    /// Applies the factor to a standard-normal vector: `mean + L z`.
    pub fn correlate(&self, z: &Array1<T>) -> Array1<T> {
        let n = self.dim();
        let mut out = Array1::zeros(n);
        for i in 0..n {
            let mut acc = T::zero();
            for j in 0..=i {
                acc = acc + self.lower[(i, j)] * z[j];
            }
            out[i] = acc;
        }
        out
    }

    /// log(det A) via the factor diagonal.
    pub fn log_det(&self) -> T {
        let two = T::cast(2.0);
        (0..self.dim()).map(|i| self.lower[(i, i)].ln() * two).sum()
    }
}

fn cholesky_in_place<T: Scalar>(a: &mut Array2<T>) -> Result<()> {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d = d - a[(j, k)] * a[(j, k)];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(Error::Linalg(format!(
                "non-positive pivot {d} at column {j}"
            )));
        }
        let root = d.sqrt();
        a[(j, j)] = root;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s = s - a[(i, k)] * a[(j, k)];
            }
            a[(i, j)] = s / root;
        }
        for i in 0..j {
            a[(i, j)] = T::zero();
        }
    }
    Ok(())
}

fn forward_substitute<T: Scalar>(l: &Array2<T>, x: &mut [T]) {
    let n = l.nrows();
    for i in 0..n {
        let mut acc = x[i];
        for j in 0..i {
            acc = acc - l[(i, j)] * x[j];
        }
        x[i] = acc / l[(i, i)];
    }
}

fn back_substitute_transposed<T: Scalar>(l: &Array2<T>, x: &mut [T]) {
    let n = l.nrows();
    for i in (0..n).rev() {
        let mut acc = x[i];
        for j in (i + 1)..n {
            acc = acc - l[(j, i)] * x[j];
        }
        x[i] = acc / l[(i, i)];
    }
}

/// Solves the SPD system `A x = b` with the jittered factorization.
pub fn spd_solve_vec<T: Scalar>(a: &Array2<T>, b: &Array1<T>) -> Result<Array1<T>> {
    CholeskyFactor::new(a)?.solve_vec(b)
}

/// Inverse of an SPD matrix with the jittered factorization.
pub fn spd_inverse<T: Scalar>(a: &Array2<T>) -> Result<Array2<T>> {
    CholeskyFactor::new(a)?.inverse()
}

/// `(A + Aᵀ)/2`, used before constructing validated Gaussian covariances.
pub fn symmetrize<T: Scalar>(a: &Array2<T>) -> Array2<T> {
    let half = T::cast(0.5);
    let mut out = a.clone();
    let n = a.nrows();
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = (a[(i, j)] + a[(j, i)]) * half;
        }
    }
    out
}

/// Maximum absolute difference between `a` and its transpose.
pub fn asymmetry<T: Scalar>(a: &Array2<T>) -> T {
    let n = a.nrows();
    let mut worst = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (a[(i, j)] - a[(j, i)]).abs();
            if gap > worst {
                worst = gap;
            }
        }
    }
    worst
}

/// Frobenius norm.
pub fn frobenius<T: Scalar>(a: &Array2<T>) -> T {
    a.iter().map(|&v| v * v).sum::<T>().sqrt()
}

/// Eigenvalues of a symmetric matrix via cyclic Jacobi rotations, ascending.
///
/// Converges quadratically for the small matrices this crate handles; the
/// tolerance is relative to the on-entry Frobenius norm.
pub fn sym_eigenvalues<T: Scalar>(a: &Array2<T>) -> Result<Vec<T>> {
    let n = square_dim(a, "sym_eigenvalues")?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut m = a.clone();
    let scale = frobenius(&m);
    let tol = T::cast(1e-14) * scale.max(T::one());
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off = off + m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= tol * T::cast(1e-2) {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (T::cast(2.0) * apq);
                // Smaller-magnitude root keeps the rotation angle under 45°.
                let t = {
                    let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                    sign / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eigs: Vec<T> = (0..n).map(|i| m[(i, i)]).collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).expect("eigenvalues are finite"));
    Ok(eigs)
}

fn square_dim<T>(a: &Array2<T>, context: &str) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::shape(
            context,
            "square matrix",
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    Ok(a.nrows())
}
