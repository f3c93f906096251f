//! Data-driven Galerkin reduced-order model.
//!
//! From samples `F(λⱼ)` and `F'(λⱼ)` alone the mass and stiffness matrices
//! of the Galerkin projection onto the (unknown) snapshot space are
//!
//! ```text
//! Mᵢⱼ = (F(λᵢ) − F(λⱼ)) / (λⱼ − λᵢ),      Mᵢᵢ = −F'(λᵢ)
//! Sᵢⱼ = (λⱼF(λⱼ) − λᵢF(λᵢ)) / (λⱼ − λᵢ),  Sᵢᵢ = F(λᵢ) + λᵢF'(λᵢ)
//! Bᵢ  = F(λᵢ)
//! ```
//!
//! with `K × K` blocks for multi-source data. Row/column index of source
//! `r` at spectral point `j` is `j·K + r`.

use nalgebra::linalg::FullPivLU;

use crate::error::{LslError, Result};
use crate::forward::{EquationKind, TransferDataset};
use crate::numerics::{relative_asymmetry, sym_eig, symmetrize, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct RomMatrices {
    pub kind: EquationKind,
    /// Mass matrix (data-driven Gramian), `mK × mK`.
    pub m: Matrix,
    /// Stiffness matrix, `mK × mK`.
    pub s: Matrix,
    /// Source block, `mK × K`.
    pub b: Matrix,
    pub lambdas: Vec<f64>,
    pub k: usize,
    /// Relative asymmetry of `M` and `S` before symmetrization.
    pub raw_asymmetry: (f64, f64),
}

impl RomMatrices {
    pub fn dim(&self) -> usize {
        self.m.nrows()
    }
}

/// Assemble `M`, `S`, `B` from transfer data.
pub fn build_rom(data: &TransferDataset) -> Result<RomMatrices> {
    let m_pts = data.len();
    let k = data.sources();
    if m_pts == 0 || k == 0 {
        return Err(LslError::Config("empty dataset".into()));
    }
    for i in 0..m_pts {
        for j in (i + 1)..m_pts {
            if data.lambdas[i] == data.lambdas[j] {
                return Err(LslError::RepeatedSpectralPoint { first: i, second: j });
            }
        }
    }
    let n = m_pts * k;
    let mut m = Matrix::zeros(n, n);
    let mut s = Matrix::zeros(n, n);
    let mut b = Matrix::zeros(n, k);
    for i in 0..m_pts {
        let (li, fi) = (data.lambdas[i], &data.f[i]);
        b.view_mut((i * k, 0), (k, k)).copy_from(fi);
        for j in 0..m_pts {
            let (mij, sij) = if i == j {
                let dfi = &data.df[i];
                (-dfi, fi + dfi * li)
            } else {
                let (lj, fj) = (data.lambdas[j], &data.f[j]);
                let denom = lj - li;
                ((fi - fj) / denom, (fj * lj - fi * li) / denom)
            };
            m.view_mut((i * k, j * k), (k, k)).copy_from(&mij);
            s.view_mut((i * k, j * k), (k, k)).copy_from(&sij);
        }
    }
    let raw_asymmetry = (relative_asymmetry(&m), relative_asymmetry(&s));
    Ok(RomMatrices {
        kind: data.kind,
        m: symmetrize(&m),
        s: symmetrize(&s),
        b,
        lambdas: data.lambdas.clone(),
        k,
        raw_asymmetry,
    })
}

/// `Bᵀ (S + λM)⁻¹ B`.
pub fn rom_transfer(rom: &RomMatrices, lambda: f64) -> Result<Matrix> {
    pencil_transfer(&rom.m, &rom.s, &rom.b, lambda)
}

pub(crate) fn pencil_transfer(m: &Matrix, s: &Matrix, b: &Matrix, lambda: f64) -> Result<Matrix> {
    let pencil = s + m * lambda;
    let lu = FullPivLU::new(pencil);
    let c = lu
        .solve(b)
        .ok_or_else(|| LslError::Singular(format!("model pencil singular at λ = {lambda}")))?;
    Ok(b.transpose() * c)
}

/// Spectral diagnostics of a data-driven model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RomHealth {
    pub m_min: f64,
    pub m_max: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub m_nonpositive: usize,
    pub m_asymmetry: f64,
    pub s_asymmetry: f64,
}

pub fn rom_health(rom: &RomMatrices) -> Result<RomHealth> {
    let me = sym_eig(&rom.m)?;
    let se = sym_eig(&rom.s)?;
    let ends = |v: &crate::numerics::Vector| {
        (
            v.iter().copied().fold(f64::INFINITY, f64::min),
            v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let (m_min, m_max) = ends(&me.values);
    let (s_min, s_max) = ends(&se.values);
    Ok(RomHealth {
        m_min,
        m_max,
        s_min,
        s_max,
        m_nonpositive: me.values.iter().filter(|&&v| v <= 0.0).count(),
        m_asymmetry: rom.raw_asymmetry.0,
        s_asymmetry: rom.raw_asymmetry.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::GridSpec;

    fn scalar_dataset(lambdas: &[f64], f: &[f64], df: &[f64]) -> TransferDataset {
        TransferDataset {
            kind: EquationKind::Schrodinger,
            grid: GridSpec::new(1, 0.0, 1.0, 3).unwrap(),
            lambdas: lambdas.to_vec(),
            f: f.iter().map(|&v| Matrix::from_element(1, 1, v)).collect(),
            df: df.iter().map(|&v| Matrix::from_element(1, 1, v)).collect(),
            noise: None,
        }
    }

    #[test]
    fn single_point_model() {
        let d = scalar_dataset(&[3.0], &[0.7], &[-0.2]);
        let rom = build_rom(&d).unwrap();
        assert_eq!(rom.m[(0, 0)], 0.2);
        assert_eq!(rom.s[(0, 0)], 0.7 + 3.0 * -0.2);
        assert_eq!(rom.b[(0, 0)], 0.7);
        let f = rom_transfer(&rom, 3.0).unwrap();
        assert!((f[(0, 0)] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn repeated_lambda_rejected() {
        let d = scalar_dataset(&[2.0, 2.0], &[0.5, 0.5], &[-0.1, -0.1]);
        match build_rom(&d) {
            Err(LslError::RepeatedSpectralPoint { first: 0, second: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn identity_mass_health() {
        let rom = RomMatrices {
            kind: EquationKind::Schrodinger,
            m: Matrix::identity(3, 3),
            s: Matrix::identity(3, 3) * 2.0,
            b: Matrix::zeros(3, 1),
            lambdas: vec![1.0, 2.0, 3.0],
            k: 1,
            raw_asymmetry: (0.0, 0.0),
        };
        let h = rom_health(&rom).unwrap();
        assert_eq!((h.m_min, h.m_max), (1.0, 1.0));
        assert_eq!(h.m_nonpositive, 0);
    }

    #[test]
    fn symmetric_by_construction() {
        // Resolvent of a 3-state system: F(λ) = Σ c²/(θ+λ).
        let poles = [0.5, 3.0, 11.0];
        let weights = [0.3, 0.5, 0.2];
        let lambdas = [1.0, 2.5, 7.0];
        let f: Vec<f64> = lambdas
            .iter()
            .map(|l| poles.iter().zip(&weights).map(|(t, c)| c / (t + l)).sum())
            .collect();
        let df: Vec<f64> = lambdas
            .iter()
            .map(|l| poles.iter().zip(&weights).map(|(t, c)| -c / (t + l).powi(2)).sum())
            .collect();
        let rom = build_rom(&scalar_dataset(&lambdas, &f, &df)).unwrap();
        assert_eq!(rom.m, rom.m.transpose());
        assert_eq!(rom.s, rom.s.transpose());
        // A 3-pole function is reproduced exactly away from the samples.
        for l in [0.3, 4.0, 20.0] {
            let exact: f64 = poles.iter().zip(&weights).map(|(t, c)| c / (t + l)).sum();
            let got = rom_transfer(&rom, l).unwrap()[(0, 0)];
            assert!((got - exact).abs() < 1e-12 * exact.abs(), "λ={l}: {got} vs {exact}");
        }
    }
}
