//! Plain-text container for datasets and model matrices.
//!
//! ```text
//! lsl-container 1
//! kind = dataset
//! equation = schrodinger
//! lambdas = 2.0000000000000000e0 4.0000000000000000e0
//! matrix F[0] 1 1
//! 1.2345678901234567e-1
//! end
//! ```
//!
//! Scalars are written with 17 significant digits so a write/read cycle
//! reproduces every `f64` exactly. Attributes keep insertion order.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{LslError, Result};
use crate::forward::{EquationKind, GridSpec, NoiseInfo, TransferDataset};
use crate::numerics::Matrix;
use crate::rom::RomMatrices;

const MAGIC: &str = "lsl-container 1";

/// Round-trip decimal formatting (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub attrs: Vec<(String, String)>,
    pub matrices: Vec<(String, Matrix)>,
}

impl Container {
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.attrs.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.attrs.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| LslError::Config(format!("container is missing attribute '{key}'")))
    }

    pub fn push_matrix(&mut self, name: impl Into<String>, m: Matrix) {
        self.matrices.push((name.into(), m));
    }

    pub fn matrix(&self, name: &str) -> Result<&Matrix> {
        self.matrices
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| LslError::Config(format!("container is missing matrix '{name}'")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for (k, v) in &self.attrs {
            let _ = writeln!(out, "{k} = {v}");
        }
        for (name, m) in &self.matrices {
            let _ = writeln!(out, "matrix {name} {} {}", m.nrows(), m.ncols());
            for r in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|c| fmt_f64(m[(r, c)])).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, message: String| LslError::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        match lines.next() {
            Some((_, MAGIC)) => {}
            Some((n, other)) => return Err(err(n, format!("bad header '{other}'"))),
            None => return Err(err(0, "empty file".into())),
        }
        let mut c = Container::default();
        let mut finished = false;
        while let Some((n, line)) = lines.next() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "end" {
                finished = true;
                break;
            }
            if let Some(rest) = line.strip_prefix("matrix ") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(err(n, format!("bad matrix header '{line}'")));
                }
                let rows: usize = parts[1].parse().map_err(|_| err(n, "bad row count".into()))?;
                let cols: usize = parts[2].parse().map_err(|_| err(n, "bad column count".into()))?;
                let mut m = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let (rn, row) = lines
                        .next()
                        .ok_or_else(|| err(n, format!("matrix {} truncated", parts[0])))?;
                    let vals: Vec<f64> = row
                        .split_whitespace()
                        .map(str::parse)
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| err(rn, format!("bad number: {e}")))?;
                    if vals.len() != cols {
                        return Err(err(rn, format!("expected {cols} values, found {}", vals.len())));
                    }
                    for (col, v) in vals.into_iter().enumerate() {
                        m[(r, col)] = v;
                    }
                }
                c.matrices.push((parts[0].to_string(), m));
                continue;
            }
            match line.split_once(" = ") {
                Some((k, v)) => c.attrs.push((k.trim().to_string(), v.trim().to_string())),
                None => return Err(err(n, format!("unrecognized line '{line}'"))),
            }
        }
        if !finished {
            return Err(err(0, "missing 'end' marker".into()));
        }
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| LslError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LslError::io(path, e))?;
        Container::parse(&text, &path.display().to_string())
    }
}

fn fmt_list(values: &[f64]) -> String {
    values.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(" ")
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| LslError::Config(format!("bad number '{t}': {e}")))
        })
        .collect()
}

fn grid_attr(grid: &GridSpec) -> String {
    format!(
        "{} {} {} {}",
        grid.dimension(),
        fmt_f64(grid.lower()),
        fmt_f64(grid.upper()),
        grid.nodes_per_axis()
    )
}

fn parse_grid(s: &str) -> Result<GridSpec> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    let bad = || LslError::Config(format!("bad grid descriptor '{s}'"));
    if parts.len() != 4 {
        return Err(bad());
    }
    GridSpec::new(
        parts[0].parse().map_err(|_| bad())?,
        parts[1].parse().map_err(|_| bad())?,
        parts[2].parse().map_err(|_| bad())?,
        parts[3].parse().map_err(|_| bad())?,
    )
}

impl TransferDataset {
    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.set("kind", "dataset");
        c.set("equation", self.kind.as_str());
        c.set("grid", grid_attr(&self.grid));
        c.set("sources", self.sources().to_string());
        c.set("lambdas", fmt_list(&self.lambdas));
        c.set(
            "noise",
            match self.noise {
                None => "clean".to_string(),
                Some(n) => format!("{} {}", fmt_f64(n.percent), n.seed),
            },
        );
        for (j, f) in self.f.iter().enumerate() {
            c.push_matrix(format!("F[{j}]"), f.clone());
        }
        for (j, df) in self.df.iter().enumerate() {
            c.push_matrix(format!("dF[{j}]"), df.clone());
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.require("kind")? != "dataset" {
            return Err(LslError::Config("container does not hold a dataset".into()));
        }
        let kind: EquationKind = c.require("equation")?.parse()?;
        let grid = parse_grid(c.require("grid")?)?;
        let lambdas = parse_list(c.require("lambdas")?)?;
        let sources: usize = c
            .require("sources")?
            .parse()
            .map_err(|_| LslError::Config("bad source count".into()))?;
        let noise = match c.require("noise")? {
            "clean" => None,
            other => {
                let parts: Vec<&str> = other.split_whitespace().collect();
                let bad = || LslError::Config(format!("bad noise descriptor '{other}'"));
                if parts.len() != 2 {
                    return Err(bad());
                }
                Some(NoiseInfo {
                    percent: parts[0].parse().map_err(|_| bad())?,
                    seed: parts[1].parse().map_err(|_| bad())?,
                })
            }
        };
        let mut f = Vec::with_capacity(lambdas.len());
        let mut df = Vec::with_capacity(lambdas.len());
        for j in 0..lambdas.len() {
            let fj = c.matrix(&format!("F[{j}]"))?.clone();
            let dfj = c.matrix(&format!("dF[{j}]"))?.clone();
            for m in [&fj, &dfj] {
                if m.shape() != (sources, sources) {
                    return Err(LslError::dims(
                        "dataset block",
                        format!("{sources}x{sources}"),
                        format!("{}x{}", m.nrows(), m.ncols()),
                    ));
                }
            }
            f.push(fj);
            df.push(dfj);
        }
        Ok(TransferDataset {
            kind,
            grid,
            lambdas,
            f,
            df,
            noise,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        TransferDataset::from_container(&Container::read(path)?)
    }
}

impl RomMatrices {
    /// Debug export in the dataset container format.
    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.set("kind", "rom");
        c.set("equation", self.kind.as_str());
        c.set("sources", self.k.to_string());
        c.set("lambdas", fmt_list(&self.lambdas));
        c.push_matrix("M", self.m.clone());
        c.push_matrix("S", self.s.clone());
        c.push_matrix("B", self.b.clone());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.require("kind")? != "rom" {
            return Err(LslError::Config("container does not hold a model".into()));
        }
        let lambdas = parse_list(c.require("lambdas")?)?;
        let k: usize = c
            .require("sources")?
            .parse()
            .map_err(|_| LslError::Config("bad source count".into()))?;
        let rom = RomMatrices {
            kind: c.require("equation")?.parse()?,
            m: c.matrix("M")?.clone(),
            s: c.matrix("S")?.clone(),
            b: c.matrix("B")?.clone(),
            lambdas,
            k,
            raw_asymmetry: (0.0, 0.0),
        };
        let n = rom.lambdas.len() * k;
        if rom.m.shape() != (n, n) || rom.s.shape() != (n, n) || rom.b.shape() != (n, k) {
            return Err(LslError::dims(
                "model matrices",
                format!("{n}x{n}"),
                format!("{:?}", rom.m.shape()),
            ));
        }
        Ok(rom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(values: &[f64]) -> TransferDataset {
        let grid = GridSpec::new(1, 0.0, 1.0, 11).unwrap();
        TransferDataset {
            kind: EquationKind::Helmholtz,
            grid,
            lambdas: vec![2.0, 4.0],
            f: vec![
                Matrix::from_row_slice(2, 2, &values[0..4]),
                Matrix::from_row_slice(2, 2, &values[4..8]),
            ],
            df: vec![
                Matrix::from_row_slice(2, 2, &values[8..12]),
                Matrix::from_row_slice(2, 2, &values[12..16]),
            ],
            noise: Some(NoiseInfo { percent: 2.0, seed: 17 }),
        }
    }

    proptest! {
        #[test]
        fn dataset_text_round_trip_is_exact(values in proptest::collection::vec(-1e300f64..1e300, 16)) {
            let d = dataset(&values);
            let text = d.to_container().to_text();
            let back = TransferDataset::from_container(&Container::parse(&text, "mem").unwrap()).unwrap();
            prop_assert_eq!(back, d);
        }
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(2.0), "2.0000000000000000e0");
    }

    #[test]
    fn truncated_matrix_is_a_parse_error() {
        let text = "lsl-container 1\nkind = dataset\nmatrix F[0] 2 2\n1 2\n";
        let err = Container::parse(text, "broken.txt").unwrap_err();
        assert_eq!(err.category(), "parse");
        assert!(err.to_string().contains("broken.txt"));
    }

    #[test]
    fn wrong_row_width_reports_line() {
        let text = "lsl-container 1\nmatrix A 1 2\n1.0\nend\n";
        match Container::parse(text, "x") {
            Err(LslError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
