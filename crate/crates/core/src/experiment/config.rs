//! TOML experiment description.
//!
//! ```toml
//! name = "siso_schrodinger"
//! kind = "schrodinger"
//! seed = 1
//! lambdas = [2.0, 4.0, 8.0, 16.0, 32.0, 48.0]
//!
//! [grid]
//! dimension = 1
//! lower = 0.0
//! upper = 1.0
//! spacing = 0.002
//!
//! [sources]
//! layout = "siso"
//!
//! [[bumps]]
//! amplitude = 0.125
//! center = [0.2]
//! deviation = [0.05]
//! scale = "density"
//!
//! [[runs]]
//! mode = "reg_lsl"
//! gramian_threshold = 5e-12
//! pinv_threshold = 6e-5
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LslError, Result};
use crate::forward::{CoefficientField, EquationKind, GridSpec, SourceSet};
use crate::inversion::{InversionSettings, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: EquationKind,
    #[serde(default)]
    pub seed: u64,
    pub lambdas: Vec<f64>,
    /// Write the internal fields of every LSL run as CSV.
    #[serde(default)]
    pub export_internal: bool,
    /// Per-axis `[lo, hi]` box the L² error is restricted to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_box: Option<Vec<[f64; 2]>>,
    pub grid: GridConfig,
    pub sources: SourceConfig,
    #[serde(default)]
    pub bumps: Vec<Bump>,
    #[serde(default)]
    pub runs: Vec<InversionSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dimension: usize,
    pub lower: f64,
    pub upper: f64,
    pub spacing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceLayout {
    /// One source at the left end of a 1D grid.
    Siso,
    /// Two sources per side of a 2D square.
    BoundaryPairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceNormalization {
    /// Unit discrete integral.
    #[default]
    UnitIntegral,
    /// Unit finite-difference right-hand side: the data are `h^d` times
    /// the unit-integral data.
    Kronecker,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub layout: SourceLayout,
    /// Inward offset from the boundary, in nodes.
    #[serde(default)]
    pub offset: usize,
    /// Gaussian smoothing width; 0 for point sources.
    #[serde(default)]
    pub width: f64,
    #[serde(default)]
    pub normalization: SourceNormalization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BumpScale {
    /// `amplitude · exp(−|x − μ|²_σ / 2)`: the amplitude is the peak.
    #[default]
    Peak,
    /// `amplitude` times the normal probability density.
    Density,
}

/// Axis-aligned Gaussian added to the background coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub deviation: Vec<f64>,
    #[serde(default)]
    pub scale: BumpScale,
}

impl Bump {
    pub fn value(&self, point: &[f64]) -> f64 {
        let mut q = 0.0;
        let mut norm = 1.0;
        for ((x, mu), sigma) in point.iter().zip(&self.center).zip(&self.deviation) {
            q += ((x - mu) / sigma).powi(2);
            norm *= sigma * (2.0 * std::f64::consts::PI).sqrt();
        }
        let shape = (-0.5 * q).exp();
        match self.scale {
            BumpScale::Peak => self.amplitude * shape,
            BumpScale::Density => self.amplitude * shape / norm,
        }
    }
}

/// Paired Gramian / pseudoinverse thresholds for a Reg-LSL sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub gramian_thresholds: Vec<f64>,
    pub pinv_thresholds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub percents: Vec<f64>,
    /// One per level, or a single value used for every level.
    pub pinv_thresholds: Vec<f64>,
    pub gramian_threshold: f64,
    #[serde(default = "default_noise_mode")]
    pub mode: Mode,
}

fn default_noise_mode() -> Mode {
    Mode::RegLsl
}

impl NoiseConfig {
    pub fn pinv_for(&self, level: usize) -> f64 {
        if self.pinv_thresholds.len() == 1 {
            self.pinv_thresholds[0]
        } else {
            self.pinv_thresholds[level]
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| LslError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LslError::io(path, e))?;
        toml::from_str::<ExperimentConfig>(&text)
            .map_err(|e| LslError::Config(format!("{}: {e}", path.display())))?
            .validated()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LslError::Config(msg));
        let d = self.grid.dimension;
        if self.lambdas.is_empty() {
            return bad("lambdas must not be empty".into());
        }
        match (self.sources.layout, d) {
            (SourceLayout::Siso, 1) | (SourceLayout::BoundaryPairs, 2) => {}
            (layout, _) => return bad(format!("source layout {layout:?} does not fit a {d}D grid")),
        }
        if !(self.sources.width >= 0.0) {
            return bad(format!("source width must be >= 0, got {}", self.sources.width));
        }
        for (i, b) in self.bumps.iter().enumerate() {
            if b.center.len() != d || b.deviation.len() != d {
                return bad(format!("bump {i}: center and deviation need {d} components"));
            }
            if b.deviation.iter().any(|s| !(*s > 0.0)) {
                return bad(format!("bump {i}: deviations must be positive"));
            }
            if !b.amplitude.is_finite() {
                return bad(format!("bump {i}: amplitude must be finite"));
            }
        }
        if let Some(boxes) = &self.error_box {
            if boxes.len() != d || boxes.iter().any(|[lo, hi]| !(lo < hi)) {
                return bad(format!("error_box needs {d} increasing [lo, hi] pairs"));
            }
        }
        for run in &self.runs {
            check_run(run.mode, run.gramian_threshold, run.pinv_threshold)?;
        }
        if let Some(sweep) = &self.sweep {
            if sweep.gramian_thresholds.is_empty() || sweep.gramian_thresholds.len() != sweep.pinv_thresholds.len() {
                return bad("sweep needs equally many (nonzero) Gramian and pseudoinverse thresholds".into());
            }
            for (&g, &p) in sweep.gramian_thresholds.iter().zip(&sweep.pinv_thresholds) {
                check_run(Mode::RegLsl, g, p)?;
            }
        }
        if let Some(noise) = &self.noise {
            if noise.percents.is_empty() || noise.percents.iter().any(|p| !(*p >= 0.0)) {
                return bad("noise percents must be a nonempty list of values >= 0".into());
            }
            let n = noise.pinv_thresholds.len();
            if n != 1 && n != noise.percents.len() {
                return bad("noise needs one pseudoinverse threshold or one per level".into());
            }
            for &p in &noise.pinv_thresholds {
                check_run(noise.mode, noise.gramian_threshold, p)?;
            }
        }
        self.grid_spec().map(|_| ())
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        let g = self.grid;
        GridSpec::with_spacing(g.dimension, g.lower, g.upper, g.spacing)
    }

    pub fn source_set(&self, grid: &GridSpec) -> Result<SourceSet> {
        let s = self.sources;
        let set = match s.layout {
            SourceLayout::Siso => SourceSet::siso(grid, s.offset, s.width)?,
            SourceLayout::BoundaryPairs => SourceSet::boundary_pairs(grid, s.offset, s.width)?,
        };
        Ok(match s.normalization {
            SourceNormalization::UnitIntegral => set,
            SourceNormalization::Kronecker => {
                let cell = grid.spacing().powi(grid.dimension() as i32);
                set.scaled(cell.sqrt())
            }
        })
    }

    /// Sum of the bumps at `(x, y)`; `y` is ignored on 1D grids.
    pub fn perturbation_at(&self, x: f64, y: f64) -> f64 {
        let point = [x, y];
        let point = &point[..self.grid.dimension];
        self.bumps.iter().map(|b| b.value(point)).sum()
    }

    pub fn true_field(&self, grid: &GridSpec) -> CoefficientField {
        CoefficientField::from_perturbation(self.kind, grid, |x, y| self.perturbation_at(x, y))
    }

    /// Nodes inside the closed `error_box`, up to rounding of the node
    /// coordinates (all nodes if unset).
    pub fn error_mask(&self, grid: &GridSpec) -> Option<Vec<bool>> {
        let boxes = self.error_box.as_ref()?;
        let slack = 1e-9 * grid.spacing();
        Some(
            (0..grid.node_count())
                .map(|i| {
                    let (x, y) = grid.coords(i);
                    [x, y]
                        .iter()
                        .zip(boxes)
                        .all(|(v, [lo, hi])| lo - slack <= *v && *v <= hi + slack)
                })
                .collect(),
        )
    }
}

fn check_run(mode: Mode, gramian: f64, pinv: f64) -> Result<()> {
    if !(pinv > 0.0) {
        return Err(LslError::Config(format!(
            "{mode}: pseudoinverse threshold must be positive, got {pinv}"
        )));
    }
    if mode == Mode::RegLsl && !(gramian > 0.0) {
        return Err(LslError::Config(format!(
            "{mode}: Gramian threshold must be positive, got {gramian}"
        )));
    }
    Ok(())
}
