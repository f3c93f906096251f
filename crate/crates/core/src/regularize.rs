//! Gramian truncation: keep the eigenvectors of the data-driven mass
//! matrix whose eigenvalues clear a threshold, and project the model (and
//! later the background model) onto them.

use serde::{Deserialize, Serialize};

use crate::error::{LslError, Result};
use crate::forward::EquationKind;
use crate::numerics::{sym_eig, symmetrize, Matrix, Vector};
use crate::rom::RomMatrices;

/// How the truncation threshold α is compared against eigenvalues of `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Keep `σₖ ≥ α`.
    #[default]
    Absolute,
    /// Keep `σₖ ≥ α·σ_max`.
    Relative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedRom {
    pub kind: EquationKind,
    /// Retained eigenvectors of the perturbed mass matrix, `mK × l`.
    pub z: Matrix,
    /// Retained eigenvalues, descending.
    pub sigma: Vector,
    /// `ZᵀMZ`, `l × l`.
    pub m: Matrix,
    /// `ZᵀSZ`, `l × l`.
    pub s: Matrix,
    /// `ZᵀB`, `l × K`.
    pub b: Matrix,
    /// Effective absolute threshold that was applied.
    pub alpha: f64,
    pub lambdas: Vec<f64>,
    pub k: usize,
}

impl TruncatedRom {
    pub fn dim(&self) -> usize {
        self.z.ncols()
    }
}

/// Threshold at the numerical noise floor of `M`: drops eigenvalues that
/// are not distinguishable from rounding (`mK·ε·σ_max`).
pub fn noise_floor(rom: &RomMatrices) -> Result<f64> {
    let eig = sym_eig(&rom.m)?;
    let sigma_max = eig.values.iter().copied().fold(0.0, f64::max);
    Ok(rom.dim() as f64 * f64::EPSILON * sigma_max)
}

/// `(max(0, −σ_min), σ_max)` of `M`. Rounding and data errors push the
/// trailing eigenvalues of a Gramian below zero, so the most negative one
/// bounds the error level from below.
pub fn negative_floor(rom: &RomMatrices) -> Result<(f64, f64)> {
    let eig = sym_eig(&rom.m)?;
    let sigma_min = eig.values.iter().copied().fold(f64::INFINITY, f64::min);
    let sigma_max = eig.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(((-sigma_min).max(0.0), sigma_max))
}

/// Truncate with an absolute threshold.
pub fn truncate_gramian(rom: &RomMatrices, alpha: f64) -> Result<TruncatedRom> {
    truncate_gramian_with(rom, alpha, ThresholdMode::Absolute)
}

pub fn truncate_gramian_with(rom: &RomMatrices, alpha: f64, mode: ThresholdMode) -> Result<TruncatedRom> {
    if !(alpha > 0.0) {
        return Err(LslError::Config(format!(
            "Gramian threshold must be positive, got {alpha}"
        )));
    }
    let eig = sym_eig(&rom.m)?;
    let sigma_max = eig.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cut = match mode {
        ThresholdMode::Absolute => alpha,
        ThresholdMode::Relative => alpha * sigma_max.max(0.0),
    };
    // Eigenvalues are sorted, so the retained set is a prefix. Non-positive
    // eigenvalues never pass since cut > 0 (or the model is empty).
    let l = eig.values.iter().take_while(|&&s| s >= cut && s > 0.0).count();
    if l == 0 {
        return Err(LslError::EmptyModel { alpha: cut, sigma_max });
    }
    let z = eig.vectors.columns(0, l).into_owned();
    let sigma = eig.values.rows(0, l).into_owned();
    let mut out = project(rom, &z)?;
    out.sigma = sigma;
    out.alpha = cut;
    Ok(out)
}

/// Project a background model onto the eigenvectors `Z` chosen from the
/// perturbed data. The projected mass matrix must stay positive definite.
pub fn project_background(rom0: &RomMatrices, z: &Matrix) -> Result<TruncatedRom> {
    let out = project(rom0, z)?;
    let eig = sym_eig(&out.m)?;
    if let Some(&smallest) = eig.values.as_slice().last() {
        if !(smallest > 0.0) {
            return Err(LslError::Breakdown {
                context: "projected background mass matrix",
                eigenvalue: smallest,
            });
        }
    }
    Ok(TruncatedRom {
        sigma: eig.values,
        ..out
    })
}

/// Drop trailing retained modes so the model dimension is a multiple of
/// `block`. Block Lanczos then never has to pick a partial last block,
/// whose direction choice is not stable under small data changes. A model
/// smaller than one block is kept as is.
pub fn trim_to_blocks(rom: &RomMatrices, t: &TruncatedRom, block: usize) -> Result<TruncatedRom> {
    let l = t.dim() / block * block;
    if l == t.dim() || l == 0 {
        return Ok(t.clone());
    }
    let mut out = project(rom, &t.z.columns(0, l).into_owned())?;
    out.sigma = t.sigma.rows(0, l).into_owned();
    out.alpha = t.alpha;
    Ok(out)
}

fn project(rom: &RomMatrices, z: &Matrix) -> Result<TruncatedRom> {
    if z.nrows() != rom.dim() {
        return Err(LslError::dims("projection basis rows", rom.dim(), z.nrows()));
    }
    let zt = z.transpose();
    Ok(TruncatedRom {
        kind: rom.kind,
        z: z.clone(),
        sigma: Vector::zeros(0),
        m: symmetrize(&(&zt * &rom.m * z)),
        s: symmetrize(&(&zt * &rom.s * z)),
        b: &zt * &rom.b,
        alpha: 0.0,
        lambdas: rom.lambdas.clone(),
        k: rom.k,
    })
}
