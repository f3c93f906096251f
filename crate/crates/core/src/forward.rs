//! Finite-difference forward model for the Schrödinger and Helmholtz
//! resolvent problems with homogeneous Neumann boundary conditions.
//!
//! The Laplacian uses ghost-node reflection at the boundary. Multiplying
//! the resulting (non-symmetric) nodal operator by the trapezoid weights
//! `w` gives a symmetric matrix, which is what [`ForwardOperator`] stores:
//!
//! ```text
//! stiffness = diag(w)·(−Δ_h + diag(p))        (Schrödinger)
//! stiffness = diag(w)·(−Δ_h)                  (Helmholtz)
//! weight    = 1 (Schrödinger),  n (Helmholtz)  (nodal values)
//! ```
//!
//! and a resolvent solve at λ is `(stiffness + λ·diag(w·weight)) u = diag(w) g`.
//! Every discrete inner product in the crate is `⟨a, b⟩ = Σ wᵢ aᵢ bᵢ`, so
//! the Loewner/Gramian identities hold exactly at the discrete level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LslError, Result};
use crate::numerics::{symmetrize, Matrix, SymBand};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquationKind {
    Schrodinger,
    Helmholtz,
}

impl EquationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EquationKind::Schrodinger => "schrodinger",
            EquationKind::Helmholtz => "helmholtz",
        }
    }

    /// Coefficient value of the homogeneous background medium.
    pub fn background_value(self) -> f64 {
        match self {
            EquationKind::Schrodinger => 0.0,
            EquationKind::Helmholtz => 1.0,
        }
    }
}

impl std::str::FromStr for EquationKind {
    type Err = LslError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "schrodinger" => Ok(EquationKind::Schrodinger),
            "helmholtz" => Ok(EquationKind::Helmholtz),
            other => Err(LslError::Config(format!("unknown equation kind '{other}'"))),
        }
    }
}

/// Uniform tensor grid on `[lower, upper]^dimension`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    dimension: usize,
    lower: f64,
    upper: f64,
    nodes: usize,
}

impl GridSpec {
    /// Grid with `nodes` points per axis.
    pub fn new(dimension: usize, lower: f64, upper: f64, nodes: usize) -> Result<Self> {
        if dimension != 1 && dimension != 2 {
            return Err(LslError::Config(format!(
                "grid dimension must be 1 or 2, got {dimension}"
            )));
        }
        if nodes < 3 {
            return Err(LslError::Config(format!("need at least 3 nodes per axis, got {nodes}")));
        }
        if !(upper > lower) || !lower.is_finite() || !upper.is_finite() {
            return Err(LslError::Config(format!("invalid extent [{lower}, {upper}]")));
        }
        Ok(GridSpec {
            dimension,
            lower,
            upper,
            nodes,
        })
    }

    /// Grid with the given step; the extent must be an integer multiple of it.
    pub fn with_spacing(dimension: usize, lower: f64, upper: f64, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(LslError::Config(format!(
                "grid spacing must be positive, got {spacing}"
            )));
        }
        let cells = ((upper - lower) / spacing).round();
        if ((cells * spacing) - (upper - lower)).abs() > 1e-12 * (upper - lower).abs().max(1.0) {
            return Err(LslError::Config(format!(
                "extent {} is not a multiple of spacing {spacing}",
                upper - lower
            )));
        }
        GridSpec::new(dimension, lower, upper, cells as usize + 1)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.nodes - 1) as f64
    }

    pub fn node_count(&self) -> usize {
        self.nodes.pow(self.dimension as u32)
    }

    pub fn axis(&self, i: usize) -> f64 {
        self.lower + i as f64 * self.spacing()
    }

    /// Flat index of node `(i, j)`; x varies fastest.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + j * self.nodes
    }

    /// Coordinates of a flat node index (`y` is zero in 1D).
    pub fn coords(&self, idx: usize) -> (f64, f64) {
        match self.dimension {
            1 => (self.axis(idx), 0.0),
            _ => (self.axis(idx % self.nodes), self.axis(idx / self.nodes)),
        }
    }

    /// Trapezoid quadrature weights.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.spacing();
        let edge = |i: usize| if i == 0 || i == self.nodes - 1 { 0.5 } else { 1.0 };
        match self.dimension {
            1 => (0..self.nodes).map(|i| h * edge(i)).collect(),
            _ => (0..self.node_count())
                .map(|idx| h * h * edge(idx % self.nodes) * edge(idx / self.nodes))
                .collect(),
        }
    }

    fn bandwidth(&self) -> usize {
        match self.dimension {
            1 => 1,
            _ => self.nodes,
        }
    }
}

/// Nodal values of the unknown coefficient: the potential `p` or the index `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub kind: EquationKind,
    pub values: Vec<f64>,
}

impl CoefficientField {
    pub fn background(kind: EquationKind, grid: &GridSpec) -> Self {
        CoefficientField {
            kind,
            values: vec![kind.background_value(); grid.node_count()],
        }
    }

    /// Background plus a perturbation evaluated at node coordinates.
    pub fn from_perturbation(kind: EquationKind, grid: &GridSpec, perturbation: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.node_count())
            .map(|idx| {
                let (x, y) = grid.coords(idx);
                kind.background_value() + perturbation(x, y)
            })
            .collect();
        CoefficientField { kind, values }
    }

    /// `p` or `n − 1`.
    pub fn perturbation(&self) -> Vec<f64> {
        let bg = self.kind.background_value();
        self.values.iter().map(|v| v - bg).collect()
    }

    pub fn is_background(&self) -> bool {
        let bg = self.kind.background_value();
        self.values.iter().all(|&v| v == bg)
    }
}

/// Discrete source functions `g⁽ʳ⁾`, one column each, with unit discrete
/// integral `Σ wᵢ gᵢ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSet {
    /// Node at which each source is centred.
    pub nodes: Vec<usize>,
    /// `N × K` nodal source values.
    pub vectors: Matrix,
}

impl SourceSet {
    /// Discrete deltas (value `1/wᵢ` at a single node).
    pub fn deltas(grid: &GridSpec, nodes: &[usize]) -> Result<Self> {
        let w = grid.weights();
        let mut vectors = Matrix::zeros(grid.node_count(), nodes.len());
        for (r, &node) in nodes.iter().enumerate() {
            if node >= grid.node_count() {
                return Err(LslError::Config(format!("source node {node} outside grid")));
            }
            vectors[(node, r)] = 1.0 / w[node];
        }
        Ok(SourceSet {
            nodes: nodes.to_vec(),
            vectors,
        })
    }

    /// Gaussian-smoothed sources of standard deviation `width` (length
    /// units), renormalized to unit discrete integral. `width = 0` gives
    /// [`SourceSet::deltas`].
    pub fn smoothed(grid: &GridSpec, nodes: &[usize], width: f64) -> Result<Self> {
        if width == 0.0 {
            return SourceSet::deltas(grid, nodes);
        }
        if !(width > 0.0) {
            return Err(LslError::Config(format!("source smoothing must be >= 0, got {width}")));
        }
        let w = grid.weights();
        let mut vectors = Matrix::zeros(grid.node_count(), nodes.len());
        for (r, &node) in nodes.iter().enumerate() {
            if node >= grid.node_count() {
                return Err(LslError::Config(format!("source node {node} outside grid")));
            }
            let (cx, cy) = grid.coords(node);
            let mut total = 0.0;
            for idx in 0..grid.node_count() {
                let (x, y) = grid.coords(idx);
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                let v = (-0.5 * d2 / (width * width)).exp();
                vectors[(idx, r)] = v;
                total += w[idx] * v;
            }
            vectors.column_mut(r).scale_mut(1.0 / total);
        }
        Ok(SourceSet {
            nodes: nodes.to_vec(),
            vectors,
        })
    }

    /// Multiply every source by `strength`; transfer data scale by
    /// `strength²`. With `strength = h^{d/2}` the data of point sources are
    /// `h^d` times the unit-integral data, which is what a solve with a unit
    /// right-hand side at the source node returns at that node.
    pub fn scaled(mut self, strength: f64) -> Self {
        self.vectors *= strength;
        self
    }

    /// Single source at the left end of a 1D grid (offset in nodes).
    pub fn siso(grid: &GridSpec, offset: usize, width: f64) -> Result<Self> {
        SourceSet::smoothed(grid, &[offset], width)
    }

    /// Two sources on every edge of a 2D box, at the nodes nearest the 1/3
    /// and 2/3 points, `offset` nodes inside the boundary. Order: bottom,
    /// right, top, left; each side in increasing coordinate.
    pub fn boundary_pairs(grid: &GridSpec, offset: usize, width: f64) -> Result<Self> {
        if grid.dimension() != 2 {
            return Err(LslError::Config("boundary source pairs need a 2D grid".into()));
        }
        let n = grid.nodes_per_axis();
        let last = n - 1;
        if offset >= n / 2 {
            return Err(LslError::Config(format!("source offset {offset} too large")));
        }
        let a = ((last as f64) / 3.0).round() as usize;
        let b = ((2 * last) as f64 / 3.0).round() as usize;
        let (lo, hi) = (offset, last - offset);
        let nodes = [
            grid.index(a, lo),
            grid.index(b, lo),
            grid.index(hi, a),
            grid.index(hi, b),
            grid.index(a, hi),
            grid.index(b, hi),
            grid.index(lo, a),
            grid.index(lo, b),
        ];
        SourceSet::smoothed(grid, &nodes, width)
    }

    pub fn len(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.ncols() == 0
    }
}

/// Assembled symmetric operators of the shifted pencil.
#[derive(Debug, Clone)]
pub struct ForwardOperator {
    pub grid: GridSpec,
    pub kind: EquationKind,
    /// `diag(w)(−Δ_h + diag(p))`, symmetric, band storage.
    pub stiffness: SymBand,
    /// Nodal weight `W`: ones (Schrödinger) or `n` (Helmholtz).
    pub weight: Vec<f64>,
    /// Trapezoid quadrature weights `w`.
    pub quadrature: Vec<f64>,
}

impl ForwardOperator {
    /// `diag(w·W)`, the mass term multiplying λ.
    pub fn mass_diagonal(&self) -> Vec<f64> {
        self.weight.iter().zip(&self.quadrature).map(|(a, b)| a * b).collect()
    }

    /// Dense copy of `diag(w)(−Δ_h + p)`, mostly for tests.
    pub fn stiffness_dense(&self) -> Matrix {
        self.stiffness.to_dense()
    }
}

/// Assemble the Neumann finite-difference operators for a coefficient field.
pub fn assemble_operator(grid: &GridSpec, field: &CoefficientField) -> Result<ForwardOperator> {
    let n = grid.node_count();
    if field.values.len() != n {
        return Err(LslError::dims("assemble_operator", n, field.values.len()));
    }
    if let Some(bad) = field.values.iter().find(|v| !v.is_finite()) {
        return Err(LslError::Coefficient(format!("non-finite coefficient value {bad}")));
    }
    let quadrature = grid.weights();
    let mut stiffness = SymBand::zeros(n, grid.bandwidth());
    let h = grid.spacing();
    let per_axis = grid.nodes_per_axis();
    let mut edge = |a: usize, b: usize, c: f64| {
        stiffness.add(a, a, c);
        stiffness.add(b, b, c);
        stiffness.add(a, b, -c);
    };
    match grid.dimension() {
        1 => {
            for i in 0..per_axis - 1 {
                edge(i, i + 1, 1.0 / h);
            }
        }
        _ => {
            // Edge coefficient (transverse trapezoid weight)/h; square cells
            // reduce it to 1 in the interior and 1/2 along the boundary.
            let half = |i: usize| if i == 0 || i == per_axis - 1 { 0.5 } else { 1.0 };
            for j in 0..per_axis {
                for i in 0..per_axis - 1 {
                    edge(grid.index(i, j), grid.index(i + 1, j), half(j));
                }
            }
            for j in 0..per_axis - 1 {
                for i in 0..per_axis {
                    edge(grid.index(i, j), grid.index(i, j + 1), half(i));
                }
            }
        }
    }

    let weight = match field.kind {
        EquationKind::Schrodinger => {
            let potential: Vec<f64> = field.values.iter().zip(&quadrature).map(|(p, w)| p * w).collect();
            stiffness.add_diagonal(&potential, 1.0);
            vec![1.0; n]
        }
        EquationKind::Helmholtz => {
            if let Some(bad) = field.values.iter().find(|&&v| !(v > 0.0)) {
                return Err(LslError::Coefficient(format!(
                    "Helmholtz index must be positive, found {bad}"
                )));
            }
            field.values.clone()
        }
    };

    Ok(ForwardOperator {
        grid: *grid,
        kind: field.kind,
        stiffness,
        weight,
        quadrature,
    })
}

/// Solve `(stiffness + λ·diag(w·W)) U = diag(w) G` for every source.
pub fn solve_resolvent(op: &ForwardOperator, lambda: f64, sources: &SourceSet) -> Result<Matrix> {
    solve_shifted(op, lambda, &weighted_rhs(op, &sources.vectors)?)
}

/// `diag(w)·X` for a nodal block `X`.
fn weighted_rhs(op: &ForwardOperator, x: &Matrix) -> Result<Matrix> {
    if x.nrows() != op.quadrature.len() {
        return Err(LslError::dims("resolvent rhs", op.quadrature.len(), x.nrows()));
    }
    let mut rhs = x.clone();
    for (i, mut row) in rhs.row_iter_mut().enumerate() {
        row *= op.quadrature[i];
    }
    Ok(rhs)
}

/// Solve the shifted pencil for an already quadrature-weighted right-hand side.
pub fn solve_shifted(op: &ForwardOperator, lambda: f64, rhs: &Matrix) -> Result<Matrix> {
    if !(lambda > 0.0) {
        return Err(LslError::Config(format!(
            "spectral point must be positive, got {lambda}"
        )));
    }
    let mut pencil = op.stiffness.clone();
    pencil.add_diagonal(&op.mass_diagonal(), lambda);
    Ok(pencil.cholesky()?.solve(rhs))
}

/// `F = Gᵀ diag(w) U`.
pub fn transfer_function(sources: &SourceSet, u: &Matrix, quadrature: &[f64]) -> Result<Matrix> {
    if sources.vectors.nrows() != u.nrows() || quadrature.len() != u.nrows() {
        return Err(LslError::dims("transfer_function", u.nrows(), sources.vectors.nrows()));
    }
    Ok(weighted_gram(&sources.vectors, u, quadrature, None))
}

/// `dF/dλ = −Uᵀ diag(w·W) U`, exact for the discrete resolvent.
pub fn transfer_derivative(u: &Matrix, weight: &[f64], quadrature: &[f64]) -> Result<Matrix> {
    if weight.len() != u.nrows() || quadrature.len() != u.nrows() {
        return Err(LslError::dims("transfer_derivative", u.nrows(), weight.len()));
    }
    Ok(-weighted_gram(u, u, quadrature, Some(weight)))
}

/// `Aᵀ diag(w·extra) B`.
pub(crate) fn weighted_gram(a: &Matrix, b: &Matrix, w: &[f64], extra: Option<&[f64]>) -> Matrix {
    let mut wb = b.clone();
    for (i, mut row) in wb.row_iter_mut().enumerate() {
        let scale = w[i] * extra.map_or(1.0, |e| e[i]);
        row *= scale;
    }
    a.transpose() * wb
}

/// How a dataset was perturbed, if at all.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseInfo {
    pub percent: f64,
    pub seed: u64,
}

/// Transfer-function samples `F(λⱼ)` and `dF/dλ(λⱼ)`: the only input the
/// inversion sees.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferDataset {
    pub kind: EquationKind,
    pub grid: GridSpec,
    pub lambdas: Vec<f64>,
    pub f: Vec<Matrix>,
    pub df: Vec<Matrix>,
    pub noise: Option<NoiseInfo>,
}

impl TransferDataset {
    pub fn sources(&self) -> usize {
        self.f.first().map_or(0, |f| f.nrows())
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn check_compatible(&self, other: &TransferDataset) -> Result<()> {
        if self.lambdas != other.lambdas {
            return Err(LslError::dims(
                "dataset spectral points",
                format!("{:?}", self.lambdas),
                format!("{:?}", other.lambdas),
            ));
        }
        if self.sources() != other.sources() {
            return Err(LslError::dims("dataset source count", self.sources(), other.sources()));
        }
        if self.kind != other.kind {
            return Err(LslError::Config("datasets have different equation kinds".into()));
        }
        Ok(())
    }
}

/// Dataset together with the grid snapshots that produced it.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub dataset: TransferDataset,
    /// One `N × K` block of solutions per spectral point.
    pub snapshots: Vec<Matrix>,
    pub operator: ForwardOperator,
}

pub fn check_spectral_points(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(LslError::Config("empty spectral point list".into()));
    }
    for (j, pair) in lambdas.windows(2).enumerate() {
        if !(pair[1] > pair[0]) {
            return Err(LslError::Config(format!(
                "spectral points must be strictly increasing (positions {j} and {})",
                j + 1
            )));
        }
    }
    if let Some(bad) = lambdas.iter().find(|&&l| !(l > 0.0)) {
        return Err(LslError::Config(format!(
            "spectral points must be positive, found {bad}"
        )));
    }
    Ok(())
}

/// Solve the forward problem at every spectral point.
pub fn simulate(grid: &GridSpec, field: &CoefficientField, lambdas: &[f64], sources: &SourceSet) -> Result<Simulation> {
    check_spectral_points(lambdas)?;
    let op = assemble_operator(grid, field)?;
    let snapshots: Vec<Matrix> = lambdas
        .par_iter()
        .map(|&l| solve_resolvent(&op, l, sources))
        .collect::<Result<_>>()?;
    let mut f = Vec::with_capacity(lambdas.len());
    let mut df = Vec::with_capacity(lambdas.len());
    for u in &snapshots {
        f.push(symmetrize(&transfer_function(sources, u, &op.quadrature)?));
        df.push(symmetrize(&transfer_derivative(u, &op.weight, &op.quadrature)?));
    }
    Ok(Simulation {
        dataset: TransferDataset {
            kind: field.kind,
            grid: *grid,
            lambdas: lambdas.to_vec(),
            f,
            df,
            noise: None,
        },
        snapshots,
        operator: op,
    })
}

/// Clean synthetic transfer data.
pub fn generate_dataset(
    grid: &GridSpec,
    field: &CoefficientField,
    lambdas: &[f64],
    sources: &SourceSet,
) -> Result<TransferDataset> {
    Ok(simulate(grid, field, lambdas, sources)?.dataset)
}

/// Add seeded uniform noise scaled entrywise by `percent/100·|F₀ − F|`
/// (and likewise for `dF`), then re-symmetrize.
pub fn add_noise(
    clean: &TransferDataset,
    background: &TransferDataset,
    percent: f64,
    seed: u64,
) -> Result<TransferDataset> {
    clean.check_compatible(background)?;
    if !(percent >= 0.0) {
        return Err(LslError::Config(format!("noise percent must be >= 0, got {percent}")));
    }
    if percent == 0.0 {
        return Ok(clean.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = percent / 100.0;
    let mut perturb = |x: &Matrix, x0: &Matrix| {
        let mut out = x.clone();
        for c in 0..x.ncols() {
            for r in 0..x.nrows() {
                let draw: f64 = rng.random_range(-1.0..=1.0);
                out[(r, c)] += draw * scale * (x0[(r, c)] - x[(r, c)]).abs();
            }
        }
        symmetrize(&out)
    };
    let mut noisy = clean.clone();
    for j in 0..clean.len() {
        noisy.f[j] = perturb(&clean.f[j], &background.f[j]);
        noisy.df[j] = perturb(&clean.df[j], &background.df[j]);
    }
    noisy.noise = Some(NoiseInfo { percent, seed });
    Ok(noisy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(nodes: usize) -> GridSpec {
        GridSpec::new(1, 0.0, 1.0, nodes).unwrap()
    }

    #[test]
    fn three_node_stiffness() {
        // Ghost-node rows (2,−2,0; −1,2,−1; 0,−2,2)/h² weighted by
        // diag(h/2, h, h/2) give (1,−1,0; −1,2,−1; 0,−1,1)/h; at h = 0.5
        // that is (2,−2,0; −2,4,−2; 0,−2,2).
        let grid = line(3);
        let op = assemble_operator(&grid, &CoefficientField::background(EquationKind::Schrodinger, &grid)).unwrap();
        let a = op.stiffness_dense();
        let expected = Matrix::from_row_slice(3, 3, &[2., -2., 0., -2., 4., -2., 0., -2., 2.]);
        assert!((&a - expected).amax() < 1e-14);
        assert_eq!(a, a.transpose());
        let ones = Matrix::from_element(3, 1, 1.0);
        assert!((&a * ones).amax() < 1e-14);
    }

    #[test]
    fn helmholtz_background_weight_is_one() {
        let grid = line(5);
        let op = assemble_operator(&grid, &CoefficientField::background(EquationKind::Helmholtz, &grid)).unwrap();
        assert!(op.weight.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn helmholtz_rejects_nonpositive_index() {
        let grid = line(5);
        let mut field = CoefficientField::background(EquationKind::Helmholtz, &grid);
        field.values[2] = 0.0;
        let err = assemble_operator(&grid, &field).unwrap_err();
        assert_eq!(err.category(), "coefficient");
    }

    #[test]
    fn two_d_stiffness_symmetric_with_constant_nullspace() {
        let grid = GridSpec::new(2, -1.0, 1.0, 6).unwrap();
        let field = CoefficientField::from_perturbation(EquationKind::Schrodinger, &grid, |x, y| x * x + y);
        let op = assemble_operator(&grid, &field).unwrap();
        let a = op.stiffness_dense();
        assert_eq!(a, a.transpose());
        let bg = assemble_operator(&grid, &CoefficientField::background(EquationKind::Schrodinger, &grid)).unwrap();
        let ones = Matrix::from_element(grid.node_count(), 1, 1.0);
        assert!((bg.stiffness_dense() * ones).amax() < 1e-12);
    }

    #[test]
    fn analytic_green_function() {
        // u(x) = cosh(√λ(1−x)) / (√λ sinh √λ) for a unit delta at x = 0.
        let lambda: f64 = 4.0;
        let k = lambda.sqrt();
        let exact = |x: f64| (k * (1.0 - x)).cosh() / (k * k.sinh());
        let mut errors = Vec::new();
        for nodes in [101, 201] {
            let grid = line(nodes);
            let field = CoefficientField::background(EquationKind::Schrodinger, &grid);
            let op = assemble_operator(&grid, &field).unwrap();
            let src = SourceSet::siso(&grid, 0, 0.0).unwrap();
            let u = solve_resolvent(&op, lambda, &src).unwrap();
            let err = (0..nodes)
                .map(|i| (u[(i, 0)] - exact(grid.axis(i))).abs())
                .fold(0.0, f64::max);
            errors.push(err);
        }
        // second order: halving h quarters the error
        let ratio = errors[0] / errors[1];
        assert!(ratio > 3.8 && ratio < 4.2, "ratio {ratio}");
        assert!(errors[1] < 1e-4);
    }

    #[test]
    fn analytic_transfer_and_derivative() {
        let lambda: f64 = 4.0;
        let k = lambda.sqrt();
        let f_exact = 1.0 / (k * k.tanh());
        // d/dλ [coth(√λ)/√λ] = −coth(√λ)/(2λ^{3/2}) − csch²(√λ)/(2λ)
        let df_exact = -1.0 / (k.tanh() * 2.0 * lambda * k) - 1.0 / (2.0 * lambda * k.sinh().powi(2));
        let grid = line(1001);
        let data = generate_dataset(
            &grid,
            &CoefficientField::background(EquationKind::Schrodinger, &grid),
            &[lambda],
            &SourceSet::siso(&grid, 0, 0.0).unwrap(),
        )
        .unwrap();
        let h2 = grid.spacing().powi(2);
        assert!((data.f[0][(0, 0)] - f_exact).abs() < 2.0 * h2);
        assert!((data.df[0][(0, 0)] - df_exact).abs() < 2.0 * h2);
        assert!(data.df[0][(0, 0)] < 0.0);
    }

    #[test]
    fn zero_source_gives_zero_transfer() {
        let grid = line(11);
        let op = assemble_operator(&grid, &CoefficientField::background(EquationKind::Schrodinger, &grid)).unwrap();
        let src = SourceSet {
            nodes: vec![0],
            vectors: Matrix::zeros(11, 1),
        };
        let u = solve_resolvent(&op, 2.0, &src).unwrap();
        let f = transfer_function(&src, &u, &op.quadrature).unwrap();
        assert_eq!(f[(0, 0)], 0.0);
    }

    #[test]
    fn resolvent_decays_like_one_over_lambda() {
        let grid = line(41);
        let op = assemble_operator(&grid, &CoefficientField::background(EquationKind::Schrodinger, &grid)).unwrap();
        let src = SourceSet::smoothed(&grid, &[20], 0.1).unwrap();
        let big = solve_resolvent(&op, 1e6, &src).unwrap();
        let bigger = solve_resolvent(&op, 1e7, &src).unwrap();
        let ratio = big.norm() / bigger.norm();
        assert!((ratio - 10.0).abs() < 0.1, "ratio {ratio}");
        assert!((big.norm() * 1e6 - src.vectors.norm()).abs() / src.vectors.norm() < 0.05);
    }

    #[test]
    fn sources_have_unit_integral() {
        let grid = GridSpec::new(2, -1.0, 1.0, 11).unwrap();
        let w = grid.weights();
        for width in [0.0, 0.1] {
            let src = SourceSet::boundary_pairs(&grid, 0, width).unwrap();
            assert_eq!(src.len(), 8);
            for c in 0..8 {
                let total: f64 = (0..grid.node_count()).map(|i| w[i] * src.vectors[(i, c)]).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noise_zero_is_identity_and_seeded() {
        let grid = line(51);
        let src = SourceSet::siso(&grid, 0, 0.0).unwrap();
        let lambdas = [2.0, 4.0, 8.0];
        let bg = generate_dataset(
            &grid,
            &CoefficientField::background(EquationKind::Schrodinger, &grid),
            &lambdas,
            &src,
        )
        .unwrap();
        let field = CoefficientField::from_perturbation(EquationKind::Schrodinger, &grid, |x, _| {
            (-(x - 0.3).powi(2) / 0.01).exp()
        });
        let data = generate_dataset(&grid, &field, &lambdas, &src).unwrap();
        assert_eq!(add_noise(&data, &bg, 0.0, 1).unwrap(), data);
        let a = add_noise(&data, &bg, 1.0, 9).unwrap();
        let b = add_noise(&data, &bg, 1.0, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.f, data.f);
        let c = add_noise(&data, &bg, 5.0, 3).unwrap();
        for j in 0..3 {
            let bound = 0.05 * (bg.f[j][(0, 0)] - data.f[j][(0, 0)]).abs();
            assert!((c.f[j][(0, 0)] - data.f[j][(0, 0)]).abs() <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn spacing_must_divide_extent() {
        assert!(GridSpec::with_spacing(1, 0.0, 1.0, 0.3).is_err());
        let g = GridSpec::with_spacing(1, 0.0, 1.0, 0.002).unwrap();
        assert_eq!(g.nodes_per_axis(), 501);
        let g2 = GridSpec::with_spacing(2, -1.0, 1.0, 0.04).unwrap();
        assert_eq!(g2.node_count(), 51 * 51);
        assert!(GridSpec::new(1, 0.0, 1.0, 2).is_err());
    }
}
