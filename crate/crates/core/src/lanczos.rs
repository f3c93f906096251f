//! `M`-symmetric Lanczos tridiagonalization of a reduced pencil `(S, M)`.
//!
//! With `A = M⁻¹S` and start block `M⁻¹B`, the factorization produces an
//! `M`-orthonormal `Q` and a (block) tridiagonal `T` with
//!
//! ```text
//! A Q = Q T,    Qᵀ M Q = I.
//! ```
//!
//! Both the scalar and the block variants reorthogonalize every new vector
//! against all previous ones (classical Gram-Schmidt, applied twice). The
//! models here are at most a few dozen dimensions, so the extra work is
//! negligible.
//!
//! Sign conventions: scalar off-diagonals are nonnegative and each block
//! is normalized through the symmetric (polar) factor, so `Q` is unique.

use nalgebra::Cholesky;

use crate::error::{LslError, Result};
use crate::numerics::{sym_eig, symmetrize, Matrix, SymEig, Vector};

const BREAKDOWN_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LanczosFactors {
    /// `l × n` matrix of `M`-orthonormal Lanczos vectors.
    pub q: Matrix,
    /// `n × n` symmetric (block) tridiagonal matrix.
    pub t: Matrix,
    pub block_size: usize,
    /// Number of (block) steps taken.
    pub steps: usize,
    /// Width of every block of `Q` (all ones for the scalar recurrence).
    pub block_widths: Vec<usize>,
    /// `(BᵀM⁻¹B)^{1/2}`: maps the first block back to `M⁻¹B`.
    pub start_norm: Matrix,
    /// Step at which the scalar recurrence broke down, if it did.
    pub breakdown: Option<usize>,
}

impl LanczosFactors {
    pub fn len(&self) -> usize {
        self.q.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.q.ncols() == 0
    }

    /// `Q⁻¹ = QᵀM`, valid when `Q` is square.
    pub fn inverse(&self, m: &Matrix) -> Matrix {
        self.q.transpose() * m
    }
}

/// `M⁻¹` and `M`-inner products for the reduced pencil.
struct MetricPencil<'a> {
    m: &'a Matrix,
    s: &'a Matrix,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl<'a> MetricPencil<'a> {
    fn new(m: &'a Matrix, s: &'a Matrix) -> Result<Self> {
        if m.nrows() != m.ncols() || s.shape() != m.shape() {
            return Err(LslError::dims(
                "Lanczos pencil",
                format!("{0}x{0}", m.nrows()),
                format!("{}x{}", s.nrows(), s.ncols()),
            ));
        }
        let chol = Cholesky::new(m.clone()).ok_or_else(|| {
            let smallest = sym_eig(m)
                .ok()
                .and_then(|e| e.values.as_slice().last().copied())
                .unwrap_or(f64::NAN);
            LslError::Breakdown {
                context: "Lanczos mass matrix",
                eigenvalue: smallest,
            }
        })?;
        Ok(MetricPencil { m, s, chol })
    }

    fn solve(&self, x: &Matrix) -> Matrix {
        self.chol.solve(x)
    }

    /// `M⁻¹S x`.
    fn apply(&self, x: &Matrix) -> Matrix {
        self.chol.solve(&(self.s * x))
    }

    /// Remove the `M`-projection onto the columns of `basis`, twice.
    fn reorthogonalize(&self, w: &mut Matrix, basis: &Matrix) {
        if basis.ncols() == 0 {
            return;
        }
        for _ in 0..2 {
            let coeff = basis.transpose() * (self.m * &*w);
            *w -= basis * coeff;
        }
    }

    fn gram(&self, w: &Matrix) -> Matrix {
        symmetrize(&(w.transpose() * self.m * w))
    }
}

/// Scalar `M`-symmetric Lanczos started from `M⁻¹b / √(bᵀM⁻¹b)`.
///
/// Runs until `Q` is square. If an off-diagonal coefficient falls below
/// `1e-12` of the running scale of `T`, the factorization stops there and
/// `breakdown` records the step.
pub fn m_symmetric_lanczos(m: &Matrix, s: &Matrix, b: &Vector) -> Result<LanczosFactors> {
    let pencil = MetricPencil::new(m, s)?;
    let l = m.nrows();
    if b.len() != l {
        return Err(LslError::dims("Lanczos start vector", l, b.len()));
    }
    let x = pencil.solve(&Matrix::from_column_slice(l, 1, b.as_slice()));
    let nb2 = b.dot(&x.column(0));
    if !(nb2 > 0.0) {
        return Err(LslError::Breakdown {
            context: "Lanczos start vector",
            eigenvalue: nb2,
        });
    }
    let beta0 = nb2.sqrt();

    let mut q = Matrix::zeros(l, l);
    q.set_column(0, &(x.column(0) / beta0));
    let mut alphas = Vec::with_capacity(l);
    let mut betas: Vec<f64> = Vec::with_capacity(l);
    let mut scale = 0.0_f64;
    let mut breakdown = None;
    let mut cols = 1;

    for i in 0..l {
        let qi = q.columns(i, 1).into_owned();
        let sq = s * &qi;
        let alpha = qi.dot(&sq);
        let mut w = pencil.solve(&sq) - &qi * alpha;
        if i > 0 {
            w -= q.columns(i - 1, 1) * betas[i - 1];
        }
        pencil.reorthogonalize(&mut w, &q.columns(0, cols).into_owned());
        alphas.push(alpha);
        scale = scale.max(alpha.abs());
        if cols == l {
            break;
        }
        let beta = pencil.gram(&w)[(0, 0)].max(0.0).sqrt();
        scale = scale.max(beta);
        if beta <= BREAKDOWN_RTOL * scale {
            breakdown = Some(i + 1);
            break;
        }
        betas.push(beta);
        q.set_column(cols, &(w.column(0) / beta));
        cols += 1;
    }

    let n = alphas.len();
    let mut t = Matrix::zeros(n, n);
    for (i, &a) in alphas.iter().enumerate() {
        t[(i, i)] = a;
    }
    for (i, &bta) in betas.iter().enumerate().take(n.saturating_sub(1)) {
        t[(i + 1, i)] = bta;
        t[(i, i + 1)] = bta;
    }
    Ok(LanczosFactors {
        q: q.columns(0, n).into_owned(),
        t,
        block_size: 1,
        steps: n,
        block_widths: vec![1; n],
        start_norm: Matrix::from_element(1, 1, beta0),
        breakdown,
    })
}

/// Options for [`block_lanczos_with`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockOptions {
    /// Drop directions of a new block whose normalization singular value
    /// falls below this fraction of the block's largest one. The
    /// factorization then may end with fewer than `l` vectors.
    pub deflation_tol: Option<f64>,
    /// Use exactly these block widths, e.g. to mirror a deflated run on
    /// related data. Runs stop when the list is exhausted.
    pub widths: Option<Vec<usize>>,
}

/// Normalize a residual block to `width` `M`-orthonormal columns.
///
/// Full-width blocks use the polar factor `R = q·G^{1/2}`, `G = RᵀMR`.
/// Narrower blocks (deflation, or the last block of a model whose
/// dimension is not a multiple of the block size) keep the `width`
/// dominant directions of `G`.
fn normalize_block(r: &Matrix, eig: &SymEig, width: usize, tol: f64, step: usize) -> Result<(Matrix, Matrix)> {
    let needed = eig.values[width - 1];
    if !(needed > tol) {
        return Err(LslError::LanczosBreakdown {
            step,
            eigenvalue: needed,
        });
    }
    if width == r.ncols() {
        let inv_sqrt = eig.apply_fn(|s| 1.0 / s.sqrt());
        let sqrt = eig.apply_fn(f64::sqrt);
        Ok((r * inv_sqrt, symmetrize(&sqrt)))
    } else {
        let v = eig.vectors.columns(0, width).into_owned();
        let sig = eig.values.rows(0, width);
        let mut scaled = v.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col /= sig[k].sqrt();
        }
        let mut coef = v.transpose();
        for (k, mut row) in coef.row_iter_mut().enumerate() {
            row *= sig[k].sqrt();
        }
        Ok((r * scaled, coef))
    }
}

/// Width of the next block and whether the recurrence stops after it.
///
/// Directions with a normalization eigenvalue at or below `floor` are
/// exactly (to rounding) invariant and are always dropped; the recurrence
/// continues with the narrower block.
fn block_width(opts: &BlockOptions, step: usize, eig: &SymEig, cap: usize, floor: f64) -> (usize, bool) {
    if let Some(ws) = &opts.widths {
        let width = ws.get(step).copied().unwrap_or(0).min(cap);
        return (width, step + 1 >= ws.len());
    }
    let cap = cap.min(eig.values.iter().take_while(|&&g| g > floor).count());
    match opts.deflation_tol {
        Some(tol) => {
            let top = eig.values[0].max(0.0).sqrt();
            let significant = eig
                .values
                .iter()
                .take_while(|&&g| g.max(0.0).sqrt() > tol * top)
                .count();
            // A dropped direction reappears in the next residual, so the
            // recurrence ends with the significant part of this block.
            // Taking only some of the significant directions would be an
            // arbitrary choice; stop before the block instead.
            if significant > cap {
                (0, true)
            } else {
                (significant, significant < eig.values.len())
            }
        }
        None => (cap, false),
    }
}

/// Block `M`-symmetric Lanczos with start block
/// `M⁻¹B (BᵀM⁻¹B)^{-1/2}` and polar normalization inside each block.
///
/// Directions of a normalization block that vanish to rounding are
/// dropped and `breakdown` records the first such step; `Q` then may have
/// fewer than `l` columns. Only an empty start block is an error.
pub fn block_lanczos(m: &Matrix, s: &Matrix, b: &Matrix) -> Result<LanczosFactors> {
    block_lanczos_with(m, s, b, &BlockOptions::default())
}

/// [`block_lanczos`] with optional deflation or prescribed block widths.
pub fn block_lanczos_with(m: &Matrix, s: &Matrix, b: &Matrix, opts: &BlockOptions) -> Result<LanczosFactors> {
    let pencil = MetricPencil::new(m, s)?;
    let l = m.nrows();
    let k = b.ncols();
    if b.nrows() != l || k == 0 {
        return Err(LslError::dims(
            "block Lanczos start block",
            format!("{l}xK"),
            format!("{}x{}", b.nrows(), k),
        ));
    }
    let x = pencil.solve(b);
    let g0_eig = sym_eig(&symmetrize(&(b.transpose() * &x)))?;
    let top = g0_eig.values[0].max(0.0);
    let start_tol = BREAKDOWN_RTOL * BREAKDOWN_RTOL * top;
    let (width0, mut stop) = block_width(opts, 0, &g0_eig, k.min(l), start_tol);
    if width0 == 0 {
        return Err(LslError::LanczosBreakdown {
            step: 0,
            eigenvalue: top,
        });
    }
    let mut breakdown = (width0 < k.min(l) && opts.widths.is_none()).then_some(0);
    let (q1, start_norm) = normalize_block(&x, &g0_eig, width0, start_tol, 0)?;

    let mut q = Matrix::zeros(l, l);
    q.columns_mut(0, width0).copy_from(&q1);
    let mut offsets = vec![0usize];
    let mut widths = vec![width0];
    let mut diag_blocks: Vec<Matrix> = Vec::new();
    let mut sub_blocks: Vec<Matrix> = Vec::new();
    let mut cols = width0;
    let mut scale = 0.0_f64;

    loop {
        let step = diag_blocks.len();
        let (off, wk) = (offsets[step], widths[step]);
        let qk = q.columns(off, wk).into_owned();
        let sq = s * &qk;
        let a_k = symmetrize(&(qk.transpose() * &sq));
        let mut w = pencil.solve(&sq) - &qk * &a_k;
        if step > 0 {
            let prev = q.columns(offsets[step - 1], widths[step - 1]);
            w -= prev * sub_blocks[step - 1].transpose();
        }
        pencil.reorthogonalize(&mut w, &q.columns(0, cols).into_owned());
        scale = scale.max(a_k.amax());
        diag_blocks.push(a_k);
        if cols == l || stop {
            break;
        }
        let eig = sym_eig(&pencil.gram(&w))?;
        let tol = (BREAKDOWN_RTOL * scale).powi(2);
        let (width, last) = block_width(opts, step + 1, &eig, wk.min(l - cols), tol);
        if width < wk.min(l - cols) && opts.widths.is_none() && breakdown.is_none() {
            breakdown = Some(step + 1);
        }
        if width == 0 {
            break;
        }
        stop = last;
        let (q_next, beta) = normalize_block(&w, &eig, width, tol, step + 1)?;
        scale = scale.max(beta.amax());
        q.columns_mut(cols, width).copy_from(&q_next);
        offsets.push(cols);
        widths.push(width);
        sub_blocks.push(beta);
        cols += width;
    }

    let mut t = Matrix::zeros(cols, cols);
    for (i, a) in diag_blocks.iter().enumerate() {
        t.view_mut((offsets[i], offsets[i]), (widths[i], widths[i]))
            .copy_from(a);
    }
    for (i, bta) in sub_blocks.iter().enumerate() {
        t.view_mut((offsets[i + 1], offsets[i]), (widths[i + 1], widths[i]))
            .copy_from(bta);
        t.view_mut((offsets[i], offsets[i + 1]), (widths[i], widths[i + 1]))
            .copy_from(&bta.transpose());
    }
    Ok(LanczosFactors {
        q: q.columns(0, cols).into_owned(),
        t,
        block_size: k,
        steps: diag_blocks.len(),
        block_widths: widths,
        start_norm,
        breakdown,
    })
}

/// Largest principal angle (radians) between the spans of the first `k`
/// sequentially `M`-Gram-Schmidt-orthogonalized ROM time snapshots and
/// the first `k` Lanczos vectors, maximized over `k = 1..=steps`.
///
/// The snapshots follow the exact cosine recurrence of `S d + M d'' = 0`:
///
/// ```text
/// d(0) = M⁻¹b,  d(τ) = (I − τ²A/2) d(0),
/// d(τ(i+1)) = (2I − τ²A) d(τi) − d(τ(i−1)),   A = M⁻¹S.
/// ```
///
/// Breakdown of either orthogonalization is reported as an angle of 1.
pub fn krylov_equivalence_check(m: &Matrix, s: &Matrix, b: &Vector, tau: f64, steps: usize) -> Result<f64> {
    let l = m.nrows();
    if steps == 0 || steps > l {
        return Err(LslError::dims("Krylov check steps", format!("1..={l}"), steps));
    }
    if !(tau > 0.0) {
        return Err(LslError::Config(format!("time step must be positive, got {tau}")));
    }
    let pencil = MetricPencil::new(m, s)?;

    let d0 = pencil.solve(&Matrix::from_column_slice(l, 1, b.as_slice()));
    let mut snaps = Matrix::zeros(l, steps);
    snaps.set_column(0, &d0.column(0));
    if steps > 1 {
        let d1 = &d0 - pencil.apply(&d0) * (0.5 * tau * tau);
        snaps.set_column(1, &d1.column(0));
        let (mut prev, mut cur) = (d0, d1);
        for i in 2..steps {
            let next = &cur * 2.0 - pencil.apply(&cur) * (tau * tau) - &prev;
            snaps.set_column(i, &next.column(0));
            prev = cur;
            cur = next;
        }
    }

    // Sequential Gram-Schmidt in the M-inner product.
    let mut gs = Matrix::zeros(l, steps);
    for i in 0..steps {
        let mut w = snaps.columns(i, 1).into_owned();
        let norm0 = pencil.gram(&w)[(0, 0)].max(0.0).sqrt();
        pencil.reorthogonalize(&mut w, &gs.columns(0, i).into_owned());
        let norm = pencil.gram(&w)[(0, 0)].max(0.0).sqrt();
        if !(norm > 1e-14 * norm0) {
            return Ok(1.0);
        }
        gs.set_column(i, &(w.column(0) / norm));
    }

    let lanczos = m_symmetric_lanczos(m, s, b)?;
    if lanczos.len() < steps {
        return Ok(1.0);
    }
    let mut worst = 0.0_f64;
    for k in 1..=steps {
        let x = gs.columns(0, k).into_owned();
        let y = lanczos.q.columns(0, k).into_owned();
        let resid = &x - &y * (y.transpose() * m * &x);
        let g = pencil.gram(&resid);
        let top = sym_eig(&g)?.values[0].max(0.0);
        worst = worst.max(top.sqrt().min(1.0).asin());
    }
    Ok(worst)
}
