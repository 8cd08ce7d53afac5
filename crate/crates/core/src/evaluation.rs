//! Geodesic error and PCK curves for correspondences against ground truth.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::EdgeGraph;
use crate::mesh::TriangleMesh;
use crate::pipeline::MatchMode;
use crate::pointwise::HardCorrespondence;
use crate::scalar::Real;

pub const PCK_CSV_HEADER: &str = "threshold,pck";
const DEFAULT_PCK_POINTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_vertex_errors: Vec<f64>,
    pub mean_geo_error_x100: f64,
    pub pck: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Per-vertex geodesic distance on `M` between predicted and true targets,
/// divided by `√area(M)`. Distances are shortest paths on the edge graph.
pub fn geodesic_error<T: Real>(pred: &HardCorrespondence, gt: &HardCorrespondence, mesh_m: &TriangleMesh<T>) -> Result<Vec<f64>> {
    if pred.source_size() != gt.source_size() {
        return Err(Error::dims("geodesic error", gt.source_size(), pred.source_size()));
    }
    let n = mesh_m.num_vertices();
    for (&p, &g) in pred.targets().iter().zip(gt.targets()) {
        for index in [p, g] {
            if index >= n {
                return Err(Error::IndexOutOfRange {
                    index,
                    len: n,
                    context: "geodesic error target",
                });
            }
        }
    }
    let scale = mesh_m.total_area().to_f64_lossless().sqrt();
    if !(scale > 0.0) {
        return Err(Error::InvalidInput("mesh has zero area".into()));
    }

    // one Dijkstra run per distinct true target that was missed
    let mut queries: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, (&p, &g)) in pred.targets().iter().zip(gt.targets()).enumerate() {
        if p != g {
            queries.entry(g).or_default().push(i);
        }
    }
    let graph = EdgeGraph::new(mesh_m);
    let solved: Vec<(usize, Vec<T>)> = queries.keys().par_bridge().map(|&g| (g, graph.distances_from(g))).collect();

    let mut errors = vec![0.0; pred.source_size()];
    for (g, dist) in solved {
        for &i in &queries[&g] {
            errors[i] = dist[pred.targets()[i]].to_f64_lossless() / scale;
        }
    }
    Ok(errors)
}

/// `count` evenly spaced thresholds from 0 to `max`.
pub fn thresholds(max: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![max],
        _ => {
            let mut t: Vec<f64> = (0..count).map(|i| max * i as f64 / (count - 1) as f64).collect();
            t[count - 1] = max;
            t
        }
    }
}

pub fn default_thresholds(mode: MatchMode) -> Vec<f64> {
    let max = match mode {
        MatchMode::NearIsometric => 0.10,
        MatchMode::NonIsometric | MatchMode::Partial => 0.20,
    };
    thresholds(max, DEFAULT_PCK_POINTS)
}

/// Fraction of errors `≤ t` at each threshold and the trapezoidal area
/// under that curve on `[0, auc_max]`, divided by `auc_max`.
pub fn pck_curve(errors: &[f64], thresholds: &[f64], auc_max: f64) -> Result<(Vec<(f64, f64)>, f64)> {
    if errors.is_empty() {
        return Err(Error::InvalidInput("no errors to evaluate".into()));
    }
    if thresholds.is_empty() || thresholds.windows(2).any(|w| !(w[0] < w[1])) || thresholds[0] < 0.0 {
        return Err(Error::InvalidInput("thresholds must be non-negative and strictly ascending".into()));
    }
    if !(auc_max > 0.0) || auc_max != *thresholds.last().unwrap() {
        return Err(Error::InvalidInput(format!("auc_max {auc_max} must equal the last threshold")));
    }
    if errors.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::InvalidInput("errors must be finite and non-negative".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let total = sorted.len() as f64;
    let pck: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| (t, sorted.partition_point(|&e| e <= t) as f64 / total))
        .collect();

    // curve starts at t = 0 even if the first threshold is later
    let mut points = Vec::with_capacity(pck.len() + 1);
    if thresholds[0] > 0.0 {
        points.push((0.0, sorted.partition_point(|&e| e <= 0.0) as f64 / total));
    }
    points.extend_from_slice(&pck);
    let area: f64 = points.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum();
    let auc = if points.len() == 1 { points[0].1 } else { (area / auc_max).clamp(0.0, 1.0) };
    Ok((pck, auc))
}

pub fn evaluate<T: Real>(
    pred: &HardCorrespondence,
    gt: &HardCorrespondence,
    mesh_m: &TriangleMesh<T>,
    thresholds: &[f64],
) -> Result<EvalReport> {
    let errors = geodesic_error(pred, gt, mesh_m)?;
    let auc_max = thresholds.last().copied().unwrap_or(0.0);
    let (pck, auc) = pck_curve(&errors, thresholds, auc_max)?;
    Ok(EvalReport {
        mean_geo_error_x100: mean_geo_error_x100(&errors),
        per_vertex_errors: errors,
        pck,
        auc,
    })
}

pub fn mean_geo_error_x100(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    100.0 * errors.iter().sum::<f64>() / errors.len() as f64
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse(None, e.to_string()))
    }

    pub fn write_pck_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{PCK_CSV_HEADER}")?;
        for (t, f) in &self.pck {
            writeln!(out, "{t},{f}")?;
        }
        Ok(())
    }

    pub fn save_pck_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_pck_csv(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

/// Reads a `threshold,pck` CSV written by [`EvalReport::write_pck_csv`].
pub fn read_pck_csv(text: &str, location: Option<&Path>) -> Result<Vec<(f64, f64)>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == PCK_CSV_HEADER => {}
        other => return Err(Error::parse(location, format!("expected header {PCK_CSV_HEADER:?}, found {other:?}"))),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let (t, f) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(location, format!("line {}: expected two fields", i + 2)))?;
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::parse(location, format!("line {}: {e}", i + 2)));
            Ok((parse(t)?, parse(f)?))
        })
        .collect()
}
