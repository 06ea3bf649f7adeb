//! Structural exports: what the trained gating network learned, as plain
//! numeric CSV matrices plus a JSON manifest. Plotting is out of scope.

use boltzgate::error::{Error, Result};
use boltzgate::model::ClassifierParams;
use std::path::Path;

/// Aggregated view of one trained model over a dataset.
///
/// * `latent_usage[m]` — mean activation of latent unit m (over samples,
///   layers, and heads).
/// * `pair_matrix[i][j]` — mean effective pairwise coupling between frame
///   positions i and j (over samples, layers, and heads).
/// * `module_position[m][s]` — signed edge-to-latent coupling of module m
///   at frame position s, averaged over layers and heads;
///   `module_position_abs` averages the magnitudes instead.
#[derive(Clone, Debug)]
pub struct StructureExport {
    pub latent_usage: Vec<f64>,
    pub pair_matrix: Vec<Vec<f64>>,
    pub module_position: Vec<Vec<f64>>,
    pub module_position_abs: Vec<Vec<f64>>,
}

/// One retained module–position interaction.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperedge {
    pub module: usize,
    pub position: usize,
    pub weight: f64,
}

impl StructureExport {
    pub fn validate(&self) -> Result<()> {
        let m = self.latent_usage.len();
        let s = self.pair_matrix.len();
        if self.pair_matrix.iter().any(|row| row.len() != s) {
            return Err(Error::ShapeMismatch("pair matrix is not square".into()));
        }
        for mat in [&self.module_position, &self.module_position_abs] {
            if mat.len() != m || mat.iter().any(|row| row.len() != s) {
                return Err(Error::ShapeMismatch(format!(
                    "module-position matrix is not [{m} x {s}]"
                )));
            }
        }
        let all = self
            .latent_usage
            .iter()
            .chain(self.pair_matrix.iter().flatten())
            .chain(self.module_position.iter().flatten())
            .chain(self.module_position_abs.iter().flatten());
        for &v in all {
            if !v.is_finite() {
                return Err(Error::NonFinite("structure export".into()));
            }
        }
        Ok(())
    }

    /// The strongest `fraction` positive and `fraction` negative signed
    /// module–position couplings, by magnitude, strongest first. Each
    /// sign keeps exactly ⌈fraction·M·S⌉ entries, fewer only when the
    /// matrix does not contain that many strictly positive (negative)
    /// values.
    pub fn hyperedges(&self, fraction: f64) -> Vec<Hyperedge> {
        let m = self.module_position.len();
        let s = self.module_position.first().map_or(0, |r| r.len());
        let keep = ((fraction * (m * s) as f64).ceil() as usize).max(1);
        let mut pos: Vec<Hyperedge> = Vec::new();
        let mut neg: Vec<Hyperedge> = Vec::new();
        for (mi, row) in self.module_position.iter().enumerate() {
            for (si, &w) in row.iter().enumerate() {
                let e = Hyperedge {
                    module: mi,
                    position: si,
                    weight: w,
                };
                if w > 0.0 {
                    pos.push(e);
                } else if w < 0.0 {
                    neg.push(e);
                }
            }
        }
        let by_magnitude =
            |a: &Hyperedge, b: &Hyperedge| b.weight.abs().total_cmp(&a.weight.abs());
        pos.sort_by(by_magnitude);
        neg.sort_by(by_magnitude);
        pos.truncate(keep);
        neg.truncate(keep);
        let mut out = pos;
        out.extend(neg);
        out.sort_by(by_magnitude);
        out
    }

    /// Expected hyperedge count for `fraction`, given the signed matrix.
    pub fn expected_edge_count(&self, fraction: f64) -> usize {
        let m = self.module_position.len();
        let s = self.module_position.first().map_or(0, |r| r.len());
        let keep = ((fraction * (m * s) as f64).ceil() as usize).max(1);
        let pos = self
            .module_position
            .iter()
            .flatten()
            .filter(|&&w| w > 0.0)
            .count();
        let neg = self
            .module_position
            .iter()
            .flatten()
            .filter(|&&w| w < 0.0)
            .count();
        keep.min(pos) + keep.min(neg)
    }
}

/// Parameter-side matrices: signed and absolute W_lat, averaged over
/// layers and heads, transposed to [M x S].
pub fn module_position_maps(params: &ClassifierParams) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let first = &params.layers[0].attn.energy.w_lat;
    let (h, s, m) = (first.shape()[0], first.shape()[1], first.shape()[2]);
    let mut signed = vec![vec![0.0; s]; m];
    let mut magnitude = vec![vec![0.0; s]; m];
    let n = (params.layers.len() * h) as f64;
    for layer in &params.layers {
        let w = &layer.attn.energy.w_lat;
        for hi in 0..h {
            for si in 0..s {
                for mi in 0..m {
                    let v = w.at(&[hi, si, mi]);
                    signed[mi][si] += v / n;
                    magnitude[mi][si] += v.abs() / n;
                }
            }
        }
    }
    (signed, magnitude)
}

pub fn write_csv_matrix<P: AsRef<Path>>(path: P, rows: &[Vec<f64>]) -> Result<()> {
    let mut text = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_csv_vector<P: AsRef<Path>>(path: P, values: &[f64]) -> Result<()> {
    write_csv_matrix(path, &[values.to_vec()])
}

pub fn write_hyperedges<P: AsRef<Path>>(path: P, edges: &[Hyperedge]) -> Result<()> {
    let mut text = String::from("module,position,weight\n");
    for e in edges {
        text.push_str(&format!("{},{},{}\n", e.module, e.position, e.weight));
    }
    std::fs::write(path, text)?;
    Ok(())
}
