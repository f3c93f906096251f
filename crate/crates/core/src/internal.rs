//! Snapshot bases and data-generated internal solutions.
//!
//! The true fields `U` inside the medium are unknown. Orthogonalizing them
//! with the Lanczos vectors gives a basis that barely depends on the
//! coefficient, so the background basis `V₀ZQ₀` stands in for it:
//!
//! ```text
//! 𝐔 = V₀ Z Q₀ Q⁻¹ Zᵀ,    Q⁻¹ = QᵀM̃.
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LslError, Result};
use crate::forward::{simulate, CoefficientField, EquationKind, GridSpec, SourceSet};
use crate::lanczos::LanczosFactors;
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    True,
    Background,
    DataGenerated,
}

/// Grid fields, one column per `(λⱼ, source r)` at index `j·K + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    pub grid: GridSpec,
    pub lambdas: Vec<f64>,
    pub k: usize,
    pub columns: Matrix,
    pub provenance: Provenance,
}

impl SnapshotMatrix {
    /// Stack per-λ solution blocks (`N × K` each) side by side.
    pub fn from_blocks(grid: &GridSpec, lambdas: &[f64], blocks: &[Matrix], provenance: Provenance) -> Result<Self> {
        if blocks.len() != lambdas.len() || blocks.is_empty() {
            return Err(LslError::dims("snapshot blocks", lambdas.len(), blocks.len()));
        }
        let n = grid.node_count();
        let k = blocks[0].ncols();
        let mut columns = Matrix::zeros(n, k * blocks.len());
        for (j, b) in blocks.iter().enumerate() {
            if b.shape() != (n, k) {
                return Err(LslError::dims(
                    "snapshot block",
                    format!("{n}x{k}"),
                    format!("{}x{}", b.nrows(), b.ncols()),
                ));
            }
            columns.columns_mut(j * k, k).copy_from(b);
        }
        if columns.iter().any(|v| !v.is_finite()) {
            return Err(LslError::Singular("non-finite snapshot entry".into()));
        }
        Ok(SnapshotMatrix {
            grid: *grid,
            lambdas: lambdas.to_vec(),
            k,
            columns,
            provenance,
        })
    }

    /// `N × K` block of fields at spectral point `j`.
    pub fn block(&self, j: usize) -> Matrix {
        self.columns.columns(j * self.k, self.k).into_owned()
    }

    pub fn column(&self, j: usize, r: usize) -> crate::numerics::Vector {
        self.columns.column(j * self.k + r).into_owned()
    }

    /// Write one CSV per spectral point: grid coordinates then one column
    /// per source. Returns the written paths.
    pub fn write_csv(&self, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| LslError::io(dir, e))?;
        let mut paths = Vec::with_capacity(self.lambdas.len());
        for j in 0..self.lambdas.len() {
            let path = dir.join(format!("{prefix}_{j:02}.csv"));
            let block = self.block(j);
            let mut text = String::new();
            let coords = if self.grid.dimension() == 1 { "x" } else { "x,y" };
            text.push_str(coords);
            for r in 0..self.k {
                let _ = write!(text, ",u{r}");
            }
            text.push('\n');
            for i in 0..block.nrows() {
                let (x, y) = self.grid.coords(i);
                if self.grid.dimension() == 1 {
                    let _ = write!(text, "{x:.6}");
                } else {
                    let _ = write!(text, "{x:.6},{y:.6}");
                }
                for r in 0..self.k {
                    let _ = write!(text, ",{:.10e}", block[(i, r)]);
                }
                text.push('\n');
            }
            std::fs::write(&path, text).map_err(|e| LslError::io(&path, e))?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// Exact discrete background solutions (`p = 0` or `n = 1`) at every
/// `(λⱼ, r)`.
pub fn background_basis(
    grid: &GridSpec,
    kind: EquationKind,
    lambdas: &[f64],
    sources: &SourceSet,
) -> Result<SnapshotMatrix> {
    let field = CoefficientField::background(kind, grid);
    let sim = simulate(grid, &field, lambdas, sources)?;
    SnapshotMatrix::from_blocks(grid, lambdas, &sim.snapshots, Provenance::Background)
}

/// `𝐔 = V₀·Z·Q₀·(QᵀM̃)·Zᵀ`.
///
/// `q0` comes from the projected background model, `q` and `m_tilde` from
/// the perturbed truncated model. If the two factorizations have different
/// lengths (one broke down early) only the common leading vectors are used.
pub fn data_internal_solutions(
    v0: &SnapshotMatrix,
    z: &Matrix,
    q0: &Matrix,
    q: &Matrix,
    m_tilde: &Matrix,
) -> Result<SnapshotMatrix> {
    let l = z.ncols();
    if z.nrows() != v0.columns.ncols() {
        return Err(LslError::dims("projection basis rows", v0.columns.ncols(), z.nrows()));
    }
    for (name, mat) in [("Q0", q0), ("Q", q)] {
        if mat.nrows() != l {
            return Err(LslError::dims(name, l, mat.nrows()));
        }
    }
    if m_tilde.shape() != (l, l) {
        return Err(LslError::dims("projected mass matrix", l, m_tilde.nrows()));
    }
    let n = q0.ncols().min(q.ncols());
    let basis = &v0.columns * z * q0.columns(0, n);
    let q_inv = q.columns(0, n).transpose() * m_tilde;
    let columns = basis * (q_inv * z.transpose());
    Ok(SnapshotMatrix {
        grid: v0.grid,
        lambdas: v0.lambdas.clone(),
        k: v0.k,
        columns,
        provenance: Provenance::DataGenerated,
    })
}

/// `‖V₀ − V₀ZZᵀ‖_F / ‖V₀‖_F`: how much of the background snapshot space
/// the retained eigenvectors miss.
pub fn projector_defect(v0: &SnapshotMatrix, z: &Matrix) -> f64 {
    let proj = &v0.columns * z * z.transpose();
    (&v0.columns - proj).norm() / v0.columns.norm()
}

/// The internal solution at an arbitrary spectral point,
/// `V₀ZQ₀ (T + λI)⁻¹ E₁ β₀` (one column per source).
///
/// `basis` is `V₀ZQ₀` and `factors` the Lanczos factorization whose `T`
/// and start normalization define the resolvent.
pub fn internal_at(lambda: f64, basis: &Matrix, factors: &LanczosFactors) -> Result<Matrix> {
    let coeff = resolvent_column(lambda, factors, 1)?;
    Ok(leading(basis, coeff.nrows())? * coeff)
}

/// `d/dλ` of [`internal_at`]: `−V₀ZQ₀ (T + λI)⁻² E₁ β₀`.
pub fn internal_derivative_at(lambda: f64, basis: &Matrix, factors: &LanczosFactors) -> Result<Matrix> {
    let coeff = resolvent_column(lambda, factors, 2)?;
    Ok(-(leading(basis, coeff.nrows())? * coeff))
}

/// Single-source shorthand for [`internal_at`].
pub fn siso_internal_at(lambda: f64, basis: &Matrix, factors: &LanczosFactors) -> Result<crate::numerics::Vector> {
    Ok(internal_at(lambda, basis, factors)?.column(0).into_owned())
}

fn leading(basis: &Matrix, n: usize) -> Result<nalgebra::DMatrixView<'_, f64>> {
    if basis.ncols() < n {
        return Err(LslError::dims("internal-solution basis columns", n, basis.ncols()));
    }
    Ok(basis.columns(0, n))
}

/// `(T + λI)^{-power} E₁ β₀`.
fn resolvent_column(lambda: f64, factors: &LanczosFactors, power: usize) -> Result<Matrix> {
    let n = factors.t.nrows();
    let (rows, sources) = factors.start_norm.shape();
    let shifted = &factors.t + Matrix::identity(n, n) * lambda;
    let lu = shifted.lu();
    let mut rhs = Matrix::zeros(n, sources);
    rhs.view_mut((0, 0), (rows, sources)).copy_from(&factors.start_norm);
    for _ in 0..power {
        rhs = lu
            .solve(&rhs)
            .ok_or_else(|| LslError::Singular(format!("T + λI singular at λ = {lambda}")))?;
    }
    Ok(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{generate_dataset, SourceSet};
    use crate::lanczos::m_symmetric_lanczos;
    use crate::regularize::{project_background, truncate_gramian};
    use crate::rom::build_rom;

    fn siso_setup() -> (GridSpec, SourceSet, Vec<f64>) {
        let grid = GridSpec::with_spacing(1, 0.0, 1.0, 0.01).unwrap();
        let sources = SourceSet::siso(&grid, 0, 0.0).unwrap();
        (grid, sources, vec![1.0, 3.0, 9.0])
    }

    #[test]
    fn backgrounds_coincide() {
        let (grid, sources, lambdas) = siso_setup();
        let a = background_basis(&grid, EquationKind::Schrodinger, &lambdas, &sources).unwrap();
        let b = background_basis(&grid, EquationKind::Helmholtz, &lambdas, &sources).unwrap();
        assert_eq!(a.columns, b.columns);
        assert_eq!(a.columns.ncols(), 3);
        assert_eq!(a.provenance, Provenance::Background);
    }

    #[test]
    fn zero_contrast_is_pure_projection() {
        let (grid, sources, lambdas) = siso_setup();
        let v0 = background_basis(&grid, EquationKind::Schrodinger, &lambdas, &sources).unwrap();
        let field = CoefficientField::background(EquationKind::Schrodinger, &grid);
        let data = generate_dataset(&grid, &field, &lambdas, &sources).unwrap();
        let rom = build_rom(&data).unwrap();
        let t = truncate_gramian(&rom, 1e-14).unwrap();
        let t0 = project_background(&rom, &t.z).unwrap();
        let f = m_symmetric_lanczos(&t.m, &t.s, &t.b.column(0).into_owned()).unwrap();
        let f0 = m_symmetric_lanczos(&t0.m, &t0.s, &t0.b.column(0).into_owned()).unwrap();
        let u = data_internal_solutions(&v0, &t.z, &f0.q, &f.q, &t.m).unwrap();
        let proj = &v0.columns * &t.z * t.z.transpose();
        assert!((&u.columns - proj).amax() <= 1e-9 * v0.columns.amax());
        assert_eq!(u.provenance, Provenance::DataGenerated);
    }

    #[test]
    fn resolvent_formula_reproduces_background() {
        let (grid, sources, lambdas) = siso_setup();
        let v0 = background_basis(&grid, EquationKind::Schrodinger, &lambdas, &sources).unwrap();
        let field = CoefficientField::background(EquationKind::Schrodinger, &grid);
        let data = generate_dataset(&grid, &field, &lambdas, &sources).unwrap();
        let rom = build_rom(&data).unwrap();
        let t = truncate_gramian(&rom, 1e-300).unwrap();
        assert_eq!(t.dim(), 3);
        let f = m_symmetric_lanczos(&t.m, &t.s, &t.b.column(0).into_owned()).unwrap();
        let basis = &v0.columns * &t.z * &f.q;
        for j in 0..3 {
            let got = siso_internal_at(lambdas[j], &basis, &f).unwrap();
            let want = v0.column(j, 0);
            assert!((&got - &want).norm() <= 1e-8 * want.norm());
        }
        // Linear in the source strength.
        let mut scaled = f.clone();
        scaled.start_norm *= 2.0;
        let a = siso_internal_at(5.0, &basis, &f).unwrap();
        let b = siso_internal_at(5.0, &basis, &scaled).unwrap();
        assert!((b - a * 2.0).amax() < 1e-14 * 2.0 * basis.amax());
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        let (grid, sources, lambdas) = siso_setup();
        let v0 = background_basis(&grid, EquationKind::Schrodinger, &lambdas, &sources).unwrap();
        let field = CoefficientField::background(EquationKind::Schrodinger, &grid);
        let data = generate_dataset(&grid, &field, &lambdas, &sources).unwrap();
        let t = truncate_gramian(&build_rom(&data).unwrap(), 1e-300).unwrap();
        let f = m_symmetric_lanczos(&t.m, &t.s, &t.b.column(0).into_owned()).unwrap();
        let basis = &v0.columns * &t.z * &f.q;
        let d = 1e-4;
        let fd = (internal_at(4.0 + d, &basis, &f).unwrap() - internal_at(4.0 - d, &basis, &f).unwrap()) / (2.0 * d);
        let exact = internal_derivative_at(4.0, &basis, &f).unwrap();
        assert!((&fd - &exact).norm() <= 1e-6 * exact.norm());
    }

    #[test]
    fn csv_export_one_file_per_lambda() {
        let (grid, sources, lambdas) = siso_setup();
        let v0 = background_basis(&grid, EquationKind::Schrodinger, &lambdas, &sources).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = v0.write_csv(dir.path(), "u0").unwrap();
        assert_eq!(paths.len(), 3);
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        assert!(text.starts_with("x,u0\n"));
        assert_eq!(text.lines().count(), grid.node_count() + 1);
    }

    #[test]
    fn shape_errors() {
        let (grid, sources, lambdas) = siso_setup();
        let v0 = background_basis(&grid, EquationKind::Schrodinger, &lambdas, &sources).unwrap();
        let z = Matrix::identity(2, 2);
        assert!(data_internal_solutions(&v0, &z, &z, &z, &z).is_err());
    }
}
