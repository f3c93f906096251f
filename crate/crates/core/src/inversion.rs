//! Linearized Lippmann-Schwinger system and its solution.
//!
//! For every spectral point `λⱼ` and source pair `r ≤ s`
//!
//! ```text
//! F₀ − F = ∫ u₀⁽ʳ⁾ p 𝐮⁽ˢ⁾ dx              (Schrödinger, unknown p)
//! F₀ − F = λⱼ ∫ u₀⁽ʳ⁾ (n − 1) 𝐮⁽ˢ⁾ dx     (Helmholtz, unknown n − 1)
//! ```
//!
//! Born replaces `𝐮` with `u₀`. Plain LSL uses the untruncated model
//! (cut only at rounding level) and, for a single source, adds the
//! λ-derivative of each equation. Reg-LSL uses the Gramian-truncated model.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LslError, Result};
use crate::forward::{simulate, CoefficientField, EquationKind, ForwardOperator, GridSpec, SourceSet, TransferDataset};
use crate::internal::{data_internal_solutions, internal_derivative_at, projector_defect, Provenance, SnapshotMatrix};
use crate::lanczos::{block_lanczos_with, m_symmetric_lanczos, BlockOptions};
use crate::numerics::{Matrix, Svd, Vector};
use crate::regularize::{
    negative_floor, noise_floor, project_background, trim_to_blocks, truncate_gramian_with, ThresholdMode,
};
use crate::rom::build_rom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Born,
    Lsl,
    RegLsl,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Born => "born",
            Mode::Lsl => "lsl",
            Mode::RegLsl => "reg_lsl",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowMeta {
    pub lambda_index: usize,
    pub lambda: f64,
    pub r: usize,
    pub s: usize,
    pub derivative: bool,
}

/// `⟨W, unknown⟩ = δF`, with quadrature weights folded into the kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct LslSystem {
    pub kind: EquationKind,
    pub mode: Mode,
    /// One row per equation, one column per grid node.
    pub kernel: Matrix,
    pub rhs: Vector,
    pub rows: Vec<RowMeta>,
}

impl LslSystem {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// λ-derivatives of the background and internal fields, needed for the
/// derivative rows of single-source plain LSL.
#[derive(Debug, Clone)]
pub struct DerivativeSnapshots {
    pub du0: SnapshotMatrix,
    pub du: SnapshotMatrix,
}

/// Build the system from background snapshots `u0`, internal fields `u`
/// (ignored in Born mode) and the two datasets.
pub fn assemble_system(
    u0: &SnapshotMatrix,
    u: &SnapshotMatrix,
    data: &TransferDataset,
    data0: &TransferDataset,
    mode: Mode,
    derivatives: Option<&DerivativeSnapshots>,
) -> Result<LslSystem> {
    data.check_compatible(data0)?;
    let k = data.sources();
    let m_pts = data.len();
    if u0.columns.ncols() != m_pts * k {
        return Err(LslError::dims("background snapshots", m_pts * k, u0.columns.ncols()));
    }
    let field = if mode == Mode::Born { u0 } else { u };
    if field.columns.shape() != u0.columns.shape() {
        return Err(LslError::dims(
            "internal snapshots",
            u0.columns.ncols(),
            field.columns.ncols(),
        ));
    }
    if derivatives.is_some() && (mode != Mode::Lsl || k != 1) {
        return Err(LslError::Config(
            "derivative rows are only defined for single-source plain LSL".into(),
        ));
    }
    let weights = u0.grid.weights();
    let n = weights.len();
    let helmholtz = data.kind == EquationKind::Helmholtz;

    let mut rows = Vec::new();
    let mut kernels: Vec<Vec<f64>> = Vec::new();
    let mut rhs = Vec::new();
    for j in 0..m_pts {
        let lam = data.lambdas[j];
        let scale = if helmholtz { lam } else { 1.0 };
        for r in 0..k {
            for s in r..k {
                let a = u0.columns.column(j * k + r);
                let b = field.columns.column(j * k + s);
                kernels.push((0..n).map(|i| scale * weights[i] * a[i] * b[i]).collect());
                rhs.push(data0.f[j][(r, s)] - data.f[j][(r, s)]);
                rows.push(RowMeta {
                    lambda_index: j,
                    lambda: lam,
                    r,
                    s,
                    derivative: false,
                });
            }
        }
    }
    if let Some(d) = derivatives {
        for j in 0..m_pts {
            let lam = data.lambdas[j];
            let (a, b) = (u0.columns.column(j), field.columns.column(j));
            let (da, db) = (d.du0.columns.column(j), d.du.columns.column(j));
            let row = (0..n)
                .map(|i| {
                    let dprod = da[i] * b[i] + a[i] * db[i];
                    let v = if helmholtz { a[i] * b[i] + lam * dprod } else { dprod };
                    weights[i] * v
                })
                .collect();
            kernels.push(row);
            rhs.push(data0.df[j][(0, 0)] - data.df[j][(0, 0)]);
            rows.push(RowMeta {
                lambda_index: j,
                lambda: lam,
                r: 0,
                s: 0,
                derivative: true,
            });
        }
    }
    let kernel = Matrix::from_fn(kernels.len(), n, |i, c| kernels[i][c]);
    Ok(LslSystem {
        kind: data.kind,
        mode,
        kernel,
        rhs: Vector::from_vec(rhs),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructionResult {
    pub kind: EquationKind,
    pub mode: Mode,
    /// `p̂` (Schrödinger) or `n̂ − 1` (Helmholtz) at every grid node.
    pub estimate: Vec<f64>,
    pub pinv_threshold: f64,
    pub retained_singular_values: usize,
    pub residual_norm: f64,
    pub rows: usize,
}

impl ReconstructionResult {
    /// The reconstructed coefficient itself: `p̂`, or `n̂ = 1 + estimate`.
    pub fn coefficient(&self) -> Vec<f64> {
        let base = self.kind.background_value();
        self.estimate.iter().map(|v| base + v).collect()
    }
}

/// Minimal-norm truncated-pseudoinverse solution of the system.
pub fn solve_reconstruction(system: &LslSystem, rel_threshold: f64) -> Result<ReconstructionResult> {
    if system.is_empty() {
        return Err(LslError::Config("empty Lippmann-Schwinger system".into()));
    }
    let svd = Svd::new(&system.kernel);
    let x = svd.solve_truncated(&system.rhs, rel_threshold)?;
    let residual = (&system.kernel * &x - &system.rhs).norm();
    Ok(ReconstructionResult {
        kind: system.kind,
        mode: system.mode,
        estimate: x.iter().copied().collect(),
        pinv_threshold: rel_threshold,
        retained_singular_values: svd.retained(rel_threshold),
        residual_norm: residual,
        rows: system.len(),
    })
}

/// Background quantities shared by every mode.
#[derive(Debug, Clone)]
pub struct BackgroundModel {
    pub data0: TransferDataset,
    pub v0: SnapshotMatrix,
    pub operator: ForwardOperator,
}

impl BackgroundModel {
    pub fn new(grid: &GridSpec, kind: EquationKind, lambdas: &[f64], sources: &SourceSet) -> Result<Self> {
        let field = CoefficientField::background(kind, grid);
        let sim = simulate(grid, &field, lambdas, sources)?;
        let v0 = SnapshotMatrix::from_blocks(grid, lambdas, &sim.snapshots, Provenance::Background)?;
        Ok(BackgroundModel {
            data0: sim.dataset,
            v0,
            operator: sim.operator,
        })
    }

    /// `du₀/dλ = −(A₀ + λ diag(w))⁻¹ diag(w) u₀` at every data point.
    pub fn derivative_snapshots(&self) -> Result<SnapshotMatrix> {
        let mass = self.operator.mass_diagonal();
        let mut blocks = Vec::with_capacity(self.v0.lambdas.len());
        for (j, &lam) in self.v0.lambdas.iter().enumerate() {
            let mut rhs = self.v0.block(j);
            for (i, mut row) in rhs.row_iter_mut().enumerate() {
                row *= mass[i];
            }
            blocks.push(-crate::forward::solve_shifted(&self.operator, lam, &rhs)?);
        }
        SnapshotMatrix::from_blocks(&self.v0.grid, &self.v0.lambdas, &blocks, Provenance::Background)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionSettings {
    pub mode: Mode,
    /// Gramian truncation threshold; ignored by Born and plain LSL.
    #[serde(default)]
    pub gramian_threshold: f64,
    #[serde(default)]
    pub threshold_mode: ThresholdMode,
    /// Relative truncation level of the pseudoinverse.
    pub pinv_threshold: f64,
    /// Append λ-derivative equations in single-source plain LSL.
    #[serde(default = "default_true")]
    pub derivative_rows: bool,
    /// Raise the Gramian threshold to the magnitude of the most negative
    /// eigenvalue of `M`, a lower bound on the size of the data error.
    #[serde(default = "default_true")]
    pub floor_guard: bool,
    /// Relative deflation tolerance of the block Lanczos process. Off by
    /// default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lanczos_deflation: Option<f64>,
}

fn default_true() -> bool {
    true
}

impl InversionSettings {
    pub fn new(mode: Mode, gramian_threshold: f64, pinv_threshold: f64) -> Self {
        InversionSettings {
            mode,
            gramian_threshold,
            threshold_mode: ThresholdMode::Absolute,
            pinv_threshold,
            derivative_rows: true,
            floor_guard: true,
            lanczos_deflation: None,
        }
    }
}

/// What the reduced-model stages looked like for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InversionDiagnostics {
    pub mode: Mode,
    pub model_dim: usize,
    pub retained: usize,
    pub gramian_threshold: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub lanczos_len: usize,
    pub breakdown: Option<usize>,
    pub background_breakdown: Option<usize>,
    pub projector_defect: f64,
    pub rows: usize,
    pub retained_singular_values: usize,
    pub residual_norm: f64,
}

#[derive(Debug, Clone)]
pub struct ModeOutcome {
    pub result: ReconstructionResult,
    pub diagnostics: InversionDiagnostics,
    /// Internal fields used in the kernel (`u₀` for Born).
    pub internal: SnapshotMatrix,
}

/// Full pipeline for one mode: model, truncation, Lanczos, internal
/// fields, system, solve.
pub fn run_mode(
    data: &TransferDataset,
    background: &BackgroundModel,
    settings: &InversionSettings,
) -> Result<ModeOutcome> {
    let data0 = &background.data0;
    data.check_compatible(data0)?;
    let v0 = &background.v0;
    let k = data.sources();
    let rom_dim = data.len() * k;

    if settings.mode == Mode::Born {
        let system = assemble_system(v0, v0, data, data0, Mode::Born, None)?;
        let result = solve_reconstruction(&system, settings.pinv_threshold)?;
        let diagnostics = InversionDiagnostics {
            mode: Mode::Born,
            model_dim: rom_dim,
            retained: 0,
            gramian_threshold: 0.0,
            sigma_min: f64::NAN,
            sigma_max: f64::NAN,
            lanczos_len: 0,
            breakdown: None,
            background_breakdown: None,
            projector_defect: f64::NAN,
            rows: result.rows,
            retained_singular_values: result.retained_singular_values,
            residual_norm: result.residual_norm,
        };
        return Ok(ModeOutcome {
            result,
            diagnostics,
            internal: v0.clone(),
        });
    }

    let rom = build_rom(data)?;
    let rom0 = build_rom(data0)?;
    let (mut alpha, threshold_mode) = match settings.mode {
        Mode::Lsl => (noise_floor(&rom)?, ThresholdMode::Absolute),
        _ => (settings.gramian_threshold, settings.threshold_mode),
    };
    if settings.mode == Mode::RegLsl && settings.floor_guard {
        let (floor, sigma_max) = negative_floor(&rom)?;
        alpha = match threshold_mode {
            ThresholdMode::Absolute => alpha.max(floor),
            ThresholdMode::Relative => alpha.max(floor / sigma_max),
        };
    }
    let mut t = truncate_gramian_with(&rom, alpha, threshold_mode)?;
    let (f, f0) = if k == 1 {
        let t0 = project_background(&rom0, &t.z)?;
        (
            m_symmetric_lanczos(&t.m, &t.s, &t.b.column(0).into_owned())?,
            m_symmetric_lanczos(&t0.m, &t0.s, &t0.b.column(0).into_owned())?,
        )
    } else {
        t = trim_to_blocks(&rom, &t, k)?;
        let t0 = project_background(&rom0, &t.z)?;
        let opts = BlockOptions {
            deflation_tol: settings.lanczos_deflation,
            widths: None,
        };
        let f = block_lanczos_with(&t.m, &t.s, &t.b, &opts)?;
        let mirror = BlockOptions {
            deflation_tol: None,
            widths: Some(f.block_widths.clone()),
        };
        (f, block_lanczos_with(&t0.m, &t0.s, &t0.b, &mirror)?)
    };
    let internal = data_internal_solutions(v0, &t.z, &f0.q, &f.q, &t.m)?;

    let derivatives = if settings.mode == Mode::Lsl && k == 1 && settings.derivative_rows {
        let basis = &v0.columns * &t.z * &f0.q;
        let mut blocks = Vec::with_capacity(data.len());
        for &lam in &data.lambdas {
            blocks.push(internal_derivative_at(lam, &basis, &f)?);
        }
        let du = SnapshotMatrix::from_blocks(&v0.grid, &data.lambdas, &blocks, Provenance::DataGenerated)?;
        Some(DerivativeSnapshots {
            du0: background.derivative_snapshots()?,
            du,
        })
    } else {
        None
    };

    let system = assemble_system(v0, &internal, data, data0, settings.mode, derivatives.as_ref())?;
    let result = solve_reconstruction(&system, settings.pinv_threshold)?;
    let diagnostics = InversionDiagnostics {
        mode: settings.mode,
        model_dim: rom_dim,
        retained: t.dim(),
        gramian_threshold: t.alpha,
        sigma_min: t.sigma.iter().copied().fold(f64::INFINITY, f64::min),
        sigma_max: t.sigma.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        lanczos_len: f.len(),
        breakdown: f.breakdown,
        background_breakdown: f0.breakdown,
        projector_defect: projector_defect(v0, &t.z),
        rows: result.rows,
        retained_singular_values: result.retained_singular_values,
        residual_norm: result.residual_norm,
    };
    Ok(ModeOutcome {
        result,
        diagnostics,
        internal,
    })
}

/// Run several modes on the same data.
pub fn compare_modes(
    data: &TransferDataset,
    background: &BackgroundModel,
    settings: &[InversionSettings],
) -> Result<Vec<ModeOutcome>> {
    settings.iter().map(|s| run_mode(data, background, s)).collect()
}

/// `‖est − truth‖ / ‖truth‖` in the quadrature-weighted L² norm,
/// optionally restricted to the nodes where `mask` is true.
pub fn relative_l2_error(estimate: &[f64], truth: &[f64], weights: &[f64], mask: Option<&[bool]>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..truth.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        num += weights[i] * (estimate[i] - truth[i]).powi(2);
        den += weights[i] * truth[i].powi(2);
    }
    (num / den).sqrt()
}

/// CSV of a grid function: `x[,y],value`.
pub fn field_csv(grid: &GridSpec, values: &[f64]) -> String {
    let mut text = String::from(if grid.dimension() == 1 {
        "x,value\n"
    } else {
        "x,y,value\n"
    });
    for (i, v) in values.iter().enumerate() {
        let (x, y) = grid.coords(i);
        if grid.dimension() == 1 {
            let _ = writeln!(text, "{x:.6},{v:.10e}");
        } else {
            let _ = writeln!(text, "{x:.6},{y:.6},{v:.10e}");
        }
    }
    text
}

pub fn write_field_csv(grid: &GridSpec, values: &[f64], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| LslError::io(dir, e))?;
    }
    std::fs::write(path, field_csv(grid, values)).map_err(|e| LslError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::generate_dataset;

    fn bump(grid: &GridSpec, kind: EquationKind, amp: f64) -> CoefficientField {
        CoefficientField::from_perturbation(kind, grid, |x, _| amp * (-((x - 0.3) / 0.05).powi(2) / 2.0).exp())
    }

    fn siso(kind: EquationKind, amp: f64) -> (TransferDataset, BackgroundModel) {
        let grid = GridSpec::with_spacing(1, 0.0, 1.0, 0.01).unwrap();
        let sources = SourceSet::siso(&grid, 0, 0.0).unwrap();
        let lambdas = [2.0, 4.0, 8.0, 16.0];
        let data = generate_dataset(&grid, &bump(&grid, kind, amp), &lambdas, &sources).unwrap();
        let bg = BackgroundModel::new(&grid, kind, &lambdas, &sources).unwrap();
        (data, bg)
    }

    fn settings(mode: Mode) -> InversionSettings {
        InversionSettings::new(mode, 1e-12, 1e-3)
    }

    #[test]
    fn row_counts() {
        let (data, bg) = siso(EquationKind::Schrodinger, 0.5);
        assert_eq!(run_mode(&data, &bg, &settings(Mode::Lsl)).unwrap().result.rows, 8);
        assert_eq!(run_mode(&data, &bg, &settings(Mode::RegLsl)).unwrap().result.rows, 4);
        assert_eq!(run_mode(&data, &bg, &settings(Mode::Born)).unwrap().result.rows, 4);
    }

    #[test]
    fn zero_contrast_gives_zero_everywhere() {
        let (_, bg) = siso(EquationKind::Helmholtz, 0.0);
        let data = bg.data0.clone();
        for mode in [Mode::Born, Mode::Lsl, Mode::RegLsl] {
            let out = run_mode(&data, &bg, &settings(mode)).unwrap();
            assert!(out.result.estimate.iter().all(|&v| v == 0.0), "{mode}");
        }
    }

    #[test]
    fn born_rows_symmetric_in_source_pair() {
        let grid = GridSpec::new(2, -1.0, 1.0, 9).unwrap();
        let sources = SourceSet::boundary_pairs(&grid, 0, 0.0).unwrap();
        let bg = BackgroundModel::new(&grid, EquationKind::Schrodinger, &[1.0, 4.0], &sources).unwrap();
        let sys = assemble_system(&bg.v0, &bg.v0, &bg.data0, &bg.data0, Mode::Born, None).unwrap();
        assert_eq!(sys.len(), 2 * 36);
        assert!(sys.rhs.iter().all(|&v| v == 0.0));
        // The (r, s) kernel equals the (s, r) kernel by construction.
        let w = grid.weights();
        let (a, b) = (bg.v0.column(0, 1), bg.v0.column(0, 4));
        let row = sys.rows.iter().position(|m| m.r == 1 && m.s == 4).unwrap();
        for i in 0..grid.node_count() {
            assert_eq!(sys.kernel[(row, i)], w[i] * b[i] * a[i]);
        }
    }

    #[test]
    fn derivative_rows_rejected_for_multiple_sources() {
        let grid = GridSpec::new(2, -1.0, 1.0, 9).unwrap();
        let sources = SourceSet::boundary_pairs(&grid, 0, 0.0).unwrap();
        let bg = BackgroundModel::new(&grid, EquationKind::Schrodinger, &[1.0, 4.0], &sources).unwrap();
        let d = DerivativeSnapshots {
            du0: bg.v0.clone(),
            du: bg.v0.clone(),
        };
        let err = assemble_system(&bg.v0, &bg.v0, &bg.data0, &bg.data0, Mode::Lsl, Some(&d)).unwrap_err();
        assert_eq!(err.category(), "config");
    }

    #[test]
    fn background_derivative_matches_difference() {
        let (_, bg) = siso(EquationKind::Schrodinger, 0.0);
        let du0 = bg.derivative_snapshots().unwrap();
        let grid = bg.v0.grid;
        let sources = SourceSet::siso(&grid, 0, 0.0).unwrap();
        let d = 1e-4;
        let plus = BackgroundModel::new(&grid, EquationKind::Schrodinger, &[4.0 + d], &sources).unwrap();
        let minus = BackgroundModel::new(&grid, EquationKind::Schrodinger, &[4.0 - d], &sources).unwrap();
        let fd = (plus.v0.columns - minus.v0.columns) / (2.0 * d);
        let exact = du0.block(1);
        assert!((&fd - &exact).norm() <= 1e-6 * exact.norm());
    }

    #[test]
    fn linear_in_data() {
        let (data, bg) = siso(EquationKind::Schrodinger, 0.5);
        let sys = assemble_system(&bg.v0, &bg.v0, &data, &bg.data0, Mode::Born, None).unwrap();
        let mut doubled = sys.clone();
        doubled.rhs *= 2.0;
        let a = solve_reconstruction(&sys, 1e-3).unwrap();
        let b = solve_reconstruction(&doubled, 1e-3).unwrap();
        for (x, y) in a.estimate.iter().zip(&b.estimate) {
            assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn relative_error_with_mask() {
        let w = [1.0, 1.0, 1.0];
        assert_eq!(relative_l2_error(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &w, None), 0.0);
        let e = relative_l2_error(&[0.0, 2.0, 9.0], &[1.0, 2.0, 3.0], &w, Some(&[true, true, false]));
        assert!((e - (1.0f64 / 5.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let grid = GridSpec::new(2, -1.0, 1.0, 3).unwrap();
        let text = field_csv(&grid, &[0.0; 9]);
        assert!(text.starts_with("x,y,value\n-1.000000,-1.000000,0.0000000000e0\n"));
        assert_eq!(text.lines().count(), 10);
    }
}
