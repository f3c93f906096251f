//! Dense symmetric linear algebra shared by the rest of the crate.
//!
//! Everything here is a thin, deterministic layer over `nalgebra`:
//! eigen- and singular-value orderings are always descending and
//! eigenvector signs are fixed so that downstream projections (the
//! Gramian eigenbasis, Lanczos vectors) are reproducible bit for bit.
//!
//! The one piece of hand-written factorization is [`BandedCholesky`],
//! used by the forward solver, where the shifted finite-difference
//! operators are banded and symmetric positive definite.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{LslError, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vector,
    /// Orthonormal eigenvectors stored column-wise, in the order of `values`.
    pub vectors: Matrix,
}

impl SymEig {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `V diag(f(σ)) Vᵀ`.
    pub fn apply_fn(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let mut scaled = self.vectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[k]);
        }
        &scaled * self.vectors.transpose()
    }
}

/// `(A + Aᵀ)/2`.
pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// Largest absolute entry.
pub fn max_abs(a: &Matrix) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// `‖A − Aᵀ‖_max / ‖A‖_max`, zero for the null matrix.
pub fn relative_asymmetry(a: &Matrix) -> f64 {
    let scale = max_abs(a);
    if scale == 0.0 {
        return 0.0;
    }
    max_abs(&(a - a.transpose())) / scale
}

fn require_square(a: &Matrix, context: &'static str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(LslError::dims(
            context,
            "square matrix",
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    Ok(())
}

/// Flip the sign of a column so its first non-negligible entry is positive.
fn fix_sign(mut col: nalgebra::DVectorViewMut<'_, f64>) {
    let scale = col.amax();
    if scale == 0.0 {
        return;
    }
    let cutoff = scale * 1e-8;
    if let Some(first) = col.iter().copied().find(|v| v.abs() > cutoff) {
        if first < 0.0 {
            col.neg_mut();
        }
    }
}

/// Eigendecomposition of a symmetric matrix.
///
/// The input is symmetrized first. Eigenvalues come out in descending
/// order, ties keep the order in which the solver produced them, and
/// each eigenvector has its first non-negligible component positive.
pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    require_square(a, "sym_eig")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(SymEig {
            values: Vector::zeros(0),
            vectors: Matrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::new(symmetrize(a));

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let values = Vector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
        fix_sign(vectors.column_mut(dst));
    }
    Ok(SymEig { values, vectors })
}

/// `G^{-1/2}` for symmetric positive definite `G`.
///
/// Fails with [`LslError::Breakdown`] carrying the smallest eigenvalue
/// when `G` is not positive definite.
pub fn inv_sqrt_spd(g: &Matrix) -> Result<Matrix> {
    let eig = spd_eig(g, "inv_sqrt_spd")?;
    Ok(eig.apply_fn(|s| 1.0 / s.sqrt()))
}

/// `G^{1/2}` for symmetric positive definite `G`.
pub fn sqrt_spd(g: &Matrix) -> Result<Matrix> {
    let eig = spd_eig(g, "sqrt_spd")?;
    Ok(eig.apply_fn(f64::sqrt))
}

fn spd_eig(g: &Matrix, context: &'static str) -> Result<SymEig> {
    let eig = sym_eig(g)?;
    if let Some(&smallest) = eig.values.as_slice().last() {
        if !(smallest > 0.0) {
            return Err(LslError::Breakdown {
                context,
                eigenvalue: smallest,
            });
        }
    }
    Ok(eig)
}

/// Thin singular value decomposition `A = U diag(σ) Vᵀ` with descending σ.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vector,
    pub v: Matrix,
}

impl Svd {
    pub fn new(a: &Matrix) -> Self {
        let (rows, cols) = a.shape();
        if rows == 0 || cols == 0 {
            return Svd {
                u: Matrix::zeros(rows, 0),
                singular_values: Vector::zeros(0),
                v: Matrix::zeros(cols, 0),
            };
        }
        // Wide systems (few equations, many grid nodes) go through a QR of
        // Aᵀ so the bidiagonalization only sees a small square factor.
        if cols > 2 * rows {
            let qr = a.transpose().qr();
            let (q, r) = qr.unpack();
            // Aᵀ = Q R  =>  A = Rᵀ Qᵀ = (U Σ Wᵀ) Qᵀ
            let inner = Svd::new(&r.transpose());
            return Svd {
                u: inner.u,
                singular_values: inner.singular_values,
                v: q * inner.v,
            };
        }
        let svd = a.clone().svd(true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested Vᵀ");
        let k = svd.singular_values.len();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));

        let mut uu = Matrix::zeros(rows, k);
        let mut vv = Matrix::zeros(cols, k);
        let mut s = Vector::zeros(k);
        for (dst, &src) in order.iter().enumerate() {
            s[dst] = svd.singular_values[src];
            uu.set_column(dst, &u.column(src));
            vv.set_column(dst, &v_t.row(src).transpose());
        }
        Svd {
            u: uu,
            singular_values: s,
            v: vv,
        }
    }

    pub fn sigma_max(&self) -> f64 {
        self.singular_values.iter().copied().fold(0.0, f64::max)
    }

    /// Number of triplets kept by [`Svd::solve_truncated`] at this threshold.
    pub fn retained(&self, rel_threshold: f64) -> usize {
        let cut = rel_threshold * self.sigma_max();
        self.singular_values.iter().filter(|&&s| s > 0.0 && s >= cut).count()
    }

    /// Minimal-norm least-squares solution using the triplets with
    /// `σᵢ ≥ rel_threshold·σ_max`.
    pub fn solve_truncated(&self, rhs: &Vector, rel_threshold: f64) -> Result<Vector> {
        if rhs.len() != self.u.nrows() {
            return Err(LslError::dims(
                "truncated_pinv_solve",
                format!("rhs of length {}", self.u.nrows()),
                rhs.len(),
            ));
        }
        let mut x = Vector::zeros(self.v.nrows());
        let cut = rel_threshold * self.sigma_max();
        for (k, &s) in self.singular_values.iter().enumerate() {
            if !(s > 0.0) || s < cut {
                continue;
            }
            let coeff = self.u.column(k).dot(rhs) / s;
            x.axpy(coeff, &self.v.column(k), 1.0);
        }
        Ok(x)
    }
}

/// Truncated pseudoinverse solve `A⁺ rhs`, keeping `σᵢ ≥ rel_threshold·σ_max`.
/// Returns the zero vector for the null matrix.
pub fn truncated_pinv_solve(a: &Matrix, rhs: &Vector, rel_threshold: f64) -> Result<Vector> {
    if rhs.len() != a.nrows() {
        return Err(LslError::dims(
            "truncated_pinv_solve",
            format!("rhs of length {}", a.nrows()),
            rhs.len(),
        ));
    }
    Svd::new(a).solve_truncated(rhs, rel_threshold)
}

/// Cholesky factorization of a symmetric positive definite band matrix.
///
/// Only the lower band is stored: `band[(i, d)] = A[i, i - d]` for
/// `d = 0..=bandwidth`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bandwidth: usize,
    factor: Matrix,
}

/// Lower band of a symmetric matrix, filled entry by entry before factoring.
#[derive(Debug, Clone)]
pub struct SymBand {
    n: usize,
    bandwidth: usize,
    band: Matrix,
}

impl SymBand {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        SymBand {
            n,
            bandwidth,
            band: Matrix::zeros(n, bandwidth + 1),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Adds `v` to `A[i, j]` (and implicitly `A[j, i]`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        assert!(d <= self.bandwidth, "entry ({i}, {j}) outside band");
        self.band[(hi, d)] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        if d > self.bandwidth {
            0.0
        } else {
            self.band[(hi, d)]
        }
    }

    pub fn add_diagonal(&mut self, diag: &[f64], scale: f64) {
        for (i, &d) in diag.iter().enumerate() {
            self.band[(i, 0)] += scale * d;
        }
    }

    pub fn to_dense(&self) -> Matrix {
        Matrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// `A x` for a dense block of column vectors.
    pub fn mul(&self, x: &Matrix) -> Matrix {
        let mut y = Matrix::zeros(self.n, x.ncols());
        for c in 0..x.ncols() {
            for i in 0..self.n {
                let mut acc = self.band[(i, 0)] * x[(i, c)];
                for d in 1..=self.bandwidth.min(i) {
                    let a = self.band[(i, d)];
                    if a != 0.0 {
                        acc += a * x[(i - d, c)];
                        y[(i - d, c)] += a * x[(i, c)];
                    }
                }
                y[(i, c)] += acc;
            }
        }
        y
    }

    pub fn cholesky(&self) -> Result<BandedCholesky> {
        let (n, bw) = (self.n, self.bandwidth);
        let mut l = self.band.clone();
        for j in 0..n {
            let mut diag = l[(j, 0)];
            for k in j.saturating_sub(bw)..j {
                let ljk = l[(j, j - k)];
                diag -= ljk * ljk;
            }
            if !(diag > 0.0) {
                return Err(LslError::Singular(format!("banded Cholesky pivot {diag:e} at row {j}")));
            }
            let djj = diag.sqrt();
            l[(j, 0)] = djj;
            for i in (j + 1)..(j + bw + 1).min(n) {
                let mut s = l[(i, i - j)];
                for k in i.saturating_sub(bw)..j {
                    s -= l[(i, i - k)] * l[(j, j - k)];
                }
                l[(i, i - j)] = s / djj;
            }
        }
        Ok(BandedCholesky {
            n,
            bandwidth: bw,
            factor: l,
        })
    }
}

impl BandedCholesky {
    pub fn solve(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(rhs.nrows(), self.n, "rhs row count");
        let (n, bw) = (self.n, self.bandwidth);
        let l = &self.factor;
        let mut x = rhs.clone();
        for c in 0..x.ncols() {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in i.saturating_sub(bw)..i {
                    s -= l[(i, i - k)] * x[(k, c)];
                }
                x[(i, c)] = s / l[(i, 0)];
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in (i + 1)..(i + bw + 1).min(n) {
                    s -= l[(k, k - i)] * x[(k, c)];
                }
                x[(i, c)] = s / l[(i, 0)];
            }
        }
        x
    }
}
