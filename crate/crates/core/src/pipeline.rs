//! Training, test-time adaptation and inference on shape pairs.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamState, FeatureNet, NetConfig, Tape, Var};
use crate::descriptors::{compute_wks, standardize, WksConfig};
use crate::error::{Error, Result};
use crate::fmap::{solve_fmap_on_tape, SolverConfig};
use crate::linalg::Matrix;
use crate::losses::{
    bijectivity_loss, coupling_loss, dirichlet_loss, estimate_partial_rank, orthogonality_loss, total_loss, LossTerms,
    LossValues, LossWeights, Partiality,
};
use crate::mesh::{compute_laplacian, LaplacianPair, TriangleMesh};
use crate::pointwise::{nn_pmap, soft_pmap, soft_pmap_on_tape, spectral_filtered_pmap, HardCorrespondence};
use crate::scalar::Real;
use crate::spectral::{eigendecompose, SpectralBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    NearIsometric,
    NonIsometric,
    Partial,
}

impl FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "near_isometric" => Ok(Self::NearIsometric),
            "non_isometric" => Ok(Self::NonIsometric),
            "partial" => Ok(Self::Partial),
            other => Err(Error::InvalidInput(format!(
                "unknown mode {other:?} (expected near_isometric, non_isometric or partial)"
            ))),
        }
    }
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NearIsometric => "near_isometric",
            Self::NonIsometric => "non_isometric",
            Self::Partial => "partial",
        })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub k: usize,
    pub tau: f64,
    pub solver: SolverConfig,
    pub weights: LossWeights,
    /// Dirichlet weight used during adaptation in `non_isometric` mode.
    pub tta_dirichlet: f64,
    pub lr: f64,
    pub epochs: usize,
    pub tta_iters: usize,
    pub mode: MatchMode,
    pub seed: u64,
    pub net: NetConfig,
    pub wks: WksConfig,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            k: 200,
            tau: 0.07,
            solver: SolverConfig::default(),
            weights: LossWeights::default(),
            tta_dirichlet: 5.0,
            lr: 1e-3,
            epochs: 100,
            tta_iters: 15,
            mode: MatchMode::NearIsometric,
            seed: 0,
            net: NetConfig::default(),
            wks: WksConfig::default(),
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidInput(format!("k must be >= 2, got {}", self.k)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidInput(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidInput(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.tta_dirichlet >= 0.0 && self.tta_dirichlet.is_finite()) {
            return Err(Error::InvalidInput(format!("tta_dirichlet must be >= 0, got {}", self.tta_dirichlet)));
        }
        if self.wks.num_energies != self.net.input_dim {
            return Err(Error::InvalidInput(format!(
                "WKS dimension {} must equal the network input_dim {}",
                self.wks.num_energies, self.net.input_dim
            )));
        }
        self.solver.validate()?;
        self.weights.validate()?;
        self.net.validate()?;
        self.wks.validate()
    }

    /// Loss weights in effect while adapting to a single pair.
    pub fn adaptation_weights(&self) -> LossWeights {
        match self.mode {
            MatchMode::NonIsometric => LossWeights {
                dirichlet: self.tta_dirichlet,
                ..self.weights
            },
            _ => self.weights,
        }
    }
}

/// A mesh with everything the matcher needs precomputed.
#[derive(Debug, Clone)]
pub struct Shape<T> {
    pub mesh: TriangleMesh<T>,
    pub laplacian: LaplacianPair<T>,
    pub basis: SpectralBasis<T>,
    /// Network input: the WKS with every energy channel standardized.
    pub wks: Matrix<T>,
}

impl<T: Real> Shape<T> {
    /// Laplacian, `min(k, n − 2)` eigenpairs and standardized WKS.
    pub fn prepare(mesh: TriangleMesh<T>, k: usize, wks: &WksConfig) -> Result<Self> {
        let laplacian = compute_laplacian(&mesh)?;
        let k = k.min(mesh.num_vertices().saturating_sub(2)).max(1);
        let basis = eigendecompose(&laplacian, k)?;
        let wks = standardize(&compute_wks(&basis, wks)?, &laplacian.mass)?;
        Ok(Self {
            mesh,
            laplacian,
            basis,
            wks,
        })
    }

    /// Assembles a shape from a precomputed basis and raw (unstandardized)
    /// WKS, as stored in the preprocessing cache.
    pub fn from_parts(mesh: TriangleMesh<T>, basis: SpectralBasis<T>, wks: Matrix<T>) -> Result<Self> {
        let laplacian = compute_laplacian(&mesh)?;
        if basis.num_vertices() != mesh.num_vertices() || wks.rows() != mesh.num_vertices() {
            return Err(Error::dims(
                "shape parts",
                mesh.num_vertices(),
                format!("basis {} / wks {}", basis.num_vertices(), wks.rows()),
            ));
        }
        let wks = standardize(&wks, &laplacian.mass)?;
        Ok(Self {
            mesh,
            laplacian,
            basis,
            wks,
        })
    }

    pub fn name(&self) -> &str {
        self.mesh.name()
    }

    pub fn num_vertices(&self) -> usize {
        self.mesh.num_vertices()
    }
}

/// Ordered pair: `n` is matched onto `m`. Ground truth is deliberately not
/// part of the pair.
#[derive(Debug, Clone, Copy)]
pub struct ShapePair<'a, T> {
    pub m: &'a Shape<T>,
    pub n: &'a Shape<T>,
}

impl<'a, T: Real> ShapePair<'a, T> {
    pub fn new(m: &'a Shape<T>, n: &'a Shape<T>) -> Result<Self> {
        if m.basis.k() != n.basis.k() {
            return Err(Error::dims("shape pair spectral resolution", m.basis.k(), n.basis.k()));
        }
        Ok(Self { m, n })
    }

    pub fn label(&self) -> String {
        format!("{}->{}", self.n.name(), self.m.name())
    }

    fn is_self_pair(&self) -> bool {
        std::ptr::eq(self.m, self.n)
    }

    fn partiality(&self, mode: MatchMode) -> Partiality {
        let (area_m, area_n) = (self.m.laplacian.total_area.to_f64_lossless(), self.n.laplacian.total_area.to_f64_lossless());
        if mode == MatchMode::Partial && area_n < area_m {
            Partiality::Partial {
                rank: estimate_partial_rank(self.m.basis.k(), area_m, area_n),
            }
        } else {
            Partiality::Full
        }
    }
}

/// All ordered pairs of distinct shapes; a single shape is paired with
/// itself.
pub fn ordered_pairs(count: usize) -> Vec<(usize, usize)> {
    if count == 1 {
        return vec![(0, 0)];
    }
    (0..count)
        .flat_map(|i| (0..count).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect()
}

/// Squared median edge length over the shapes, the default starting
/// diffusion time.
pub fn initial_diffusion_time<T: Real>(shapes: &[&Shape<T>]) -> f64 {
    let mut lengths: Vec<f64> = shapes.iter().map(|s| s.mesh.median_edge_length().to_f64_lossless()).collect();
    lengths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = lengths.get(lengths.len() / 2).copied().unwrap_or(1.0);
    median * median
}

/// Loss of one pair recorded on `tape`.
pub struct PairForward {
    pub total: Var,
    pub terms: LossTerms,
    pub features_m: Var,
    pub features_n: Var,
}

pub fn pair_forward<T: Real>(
    tape: &mut Tape<T>,
    net: &FeatureNet<T>,
    bound: &[Var],
    pair: &ShapePair<'_, T>,
    cfg: &MatchConfig,
    weights: &LossWeights,
) -> Result<PairForward> {
    let (m, n) = (pair.m, pair.n);
    let f_m = net.forward(tape, bound, &m.basis, &m.wks)?;
    let f_n = if pair.is_self_pair() {
        f_m
    } else {
        net.forward(tape, bound, &n.basis, &n.wks)?
    };
    let c_mn = solve_fmap_on_tape(tape, &m.basis, &n.basis, f_m, f_n, &cfg.solver)?;
    let c_nm = solve_fmap_on_tape(tape, &n.basis, &m.basis, f_n, f_m, &cfg.solver)?;
    let pi_nm = soft_pmap_on_tape(tape, f_n, f_m, cfg.tau)?;
    let pi_mn = soft_pmap_on_tape(tape, f_m, f_n, cfg.tau)?;

    let part = pair.partiality(cfg.mode);
    let bij = bijectivity_loss(tape, c_mn, c_nm, part)?;
    let orth = orthogonality_loss(tape, c_mn, c_nm, part)?;
    let couple_mn = coupling_loss(tape, c_mn, pi_nm, &m.basis, &n.basis)?;
    let couple_nm = coupling_loss(tape, c_nm, pi_mn, &n.basis, &m.basis)?;
    let couple = tape.add(couple_mn, couple_nm)?;
    let dirichlet = if weights.dirichlet > 0.0 {
        Some(dirichlet_loss(tape, pi_nm, &m.mesh.positions(), &n.laplacian.stiffness)?)
    } else {
        None
    };
    let terms = LossTerms {
        bij,
        orth,
        couple,
        dirichlet,
    };
    let total = total_loss(tape, &terms, weights)?;
    Ok(PairForward {
        total,
        terms,
        features_m: f_m,
        features_n: f_n,
    })
}

/// Loss of a pair without taking a step.
pub fn evaluate_pair<T: Real>(net: &FeatureNet<T>, pair: &ShapePair<'_, T>, cfg: &MatchConfig, weights: &LossWeights) -> Result<LossValues> {
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape);
    let fwd = pair_forward(&mut tape, net, &bound, pair, cfg, weights)?;
    Ok(fwd.terms.values(&tape, fwd.total))
}

/// One optimizer step on one pair. Returns the loss before the step.
fn step_pair<T: Real>(
    net: &mut FeatureNet<T>,
    adam: &mut AdamState<T>,
    pair: &ShapePair<'_, T>,
    cfg: &MatchConfig,
    weights: &LossWeights,
    epoch: usize,
) -> Result<LossValues> {
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape);
    let fwd = pair_forward(&mut tape, net, &bound, pair, cfg, weights).map_err(|e| match e {
        Error::NonFinite(_) => Error::NonFiniteLoss {
            epoch,
            pair: pair.label(),
        },
        other => other,
    })?;
    let values = fwd.terms.values(&tape, fwd.total);
    if !values.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch,
            pair: pair.label(),
        });
    }
    tape.backward(fwd.total)?;
    let grads: Vec<Matrix<T>> = bound
        .iter()
        .zip(net.params())
        .map(|(&v, p)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(p.value.rows(), p.value.cols()))
        })
        .collect();
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss {
            epoch,
            pair: pair.label(),
        });
    }
    adam.step(net.params_mut(), &grads, cfg.lr)?;
    Ok(values)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub pair: String,
    pub values: LossValues,
}

/// Trains on every ordered pair, reshuffled each epoch with `cfg.seed`.
pub fn train<T: Real>(pairs: &[ShapePair<'_, T>], net: &mut FeatureNet<T>, cfg: &MatchConfig) -> Result<Vec<LossRecord>> {
    let mut adam = AdamState::new(net.params());
    train_from(pairs, net, &mut adam, cfg)
}

/// [`train`] continuing from an existing optimizer state, which is updated
/// in place.
pub fn train_from<T: Real>(
    pairs: &[ShapePair<'_, T>],
    net: &mut FeatureNet<T>,
    adam: &mut AdamState<T>,
    cfg: &MatchConfig,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput("training needs at least one shape pair".into()));
    }
    let k = pairs[0].m.basis.k();
    if let Some(p) = pairs.iter().find(|p| p.m.basis.k() != k || p.n.basis.k() != k) {
        return Err(Error::dims("training spectral resolution", k, format!("{} in {}", p.m.basis.k().max(p.n.basis.k()), p.label())));
    }
    adam.check_compatible(net.params())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs * pairs.len());
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let values = step_pair(net, adam, &pairs[i], cfg, &cfg.weights, epoch)?;
            log::debug!("epoch {epoch} {} loss {:.6e}", pairs[i].label(), values.total);
            log.push(LossRecord {
                epoch,
                pair: pairs[i].label(),
                values,
            });
        }
    }
    Ok(log)
}

/// Per-pair refinement of a copy of `net`. Optimization continues from
/// `optimizer` (the state left by training) when given, otherwise from a
/// fresh Adam state. The returned trajectory holds the loss before each
/// step and after the last one.
pub fn test_time_adapt<T: Real>(
    pair: &ShapePair<'_, T>,
    net: &FeatureNet<T>,
    optimizer: Option<&AdamState<T>>,
    cfg: &MatchConfig,
) -> Result<(FeatureNet<T>, Vec<LossValues>)> {
    cfg.validate()?;
    let weights = cfg.adaptation_weights();
    let mut adapted = net.clone();
    let mut adam = match optimizer {
        Some(state) => {
            state.check_compatible(net.params())?;
            state.clone()
        }
        None => AdamState::new(adapted.params()),
    };
    let mut trajectory = Vec::with_capacity(cfg.tta_iters + 1);
    for it in 0..cfg.tta_iters {
        trajectory.push(step_pair(&mut adapted, &mut adam, pair, cfg, &weights, it)?);
    }
    trajectory.push(evaluate_pair(&adapted, pair, cfg, &weights)?);
    Ok((adapted, trajectory))
}

/// Hard map from the features of an already adapted (or trained) network.
pub fn infer<T: Real>(pair: &ShapePair<'_, T>, net: &FeatureNet<T>, cfg: &MatchConfig) -> Result<HardCorrespondence> {
    let f_m = net.features(&pair.m.basis, &pair.m.wks)?;
    let f_n = if pair.is_self_pair() {
        f_m.clone()
    } else {
        net.features(&pair.n.basis, &pair.n.wks)?
    };
    match cfg.mode {
        MatchMode::NearIsometric => {
            let soft = soft_pmap(&f_n, &f_m, cfg.tau)?;
            spectral_filtered_pmap(&soft.pi, &pair.m.basis, &pair.n.basis)
        }
        MatchMode::NonIsometric | MatchMode::Partial => nn_pmap(&f_n, &f_m),
    }
}

/// Correspondence from every vertex of `pair.n` to a vertex of `pair.m`,
/// optionally after test-time adaptation.
pub fn match_pair<T: Real>(
    pair: &ShapePair<'_, T>,
    net: &FeatureNet<T>,
    optimizer: Option<&AdamState<T>>,
    cfg: &MatchConfig,
    adapt: bool,
) -> Result<HardCorrespondence> {
    if adapt && cfg.tta_iters > 0 {
        let (adapted, trajectory) = test_time_adapt(pair, net, optimizer, cfg)?;
        if let (Some(first), Some(last)) = (trajectory.first(), trajectory.last()) {
            log::info!(
                "adapted {} over {} iterations: loss {:.6e} -> {:.6e}",
                pair.label(),
                cfg.tta_iters,
                first.total,
                last.total
            );
        }
        infer(pair, &adapted, cfg)
    } else {
        infer(pair, net, cfg)
    }
}

pub const LOSS_CSV_HEADER: &str = "epoch,pair,loss_total,loss_bij,loss_orth,loss_couple,loss_dirichlet";

pub fn write_loss_csv(w: &mut impl Write, log: &[LossRecord]) -> Result<()> {
    writeln!(w, "{LOSS_CSV_HEADER}")?;
    for r in log {
        let v = &r.values;
        writeln!(
            w,
            "{},{},{:e},{:e},{:e},{:e},{:e}",
            r.epoch, r.pair, v.total, v.bij, v.orth, v.couple, v.dirichlet
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_enumeration() {
        assert_eq!(ordered_pairs(1), vec![(0, 0)]);
        assert_eq!(ordered_pairs(3).len(), 6);
        assert!(ordered_pairs(3).iter().all(|(a, b)| a != b));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [MatchMode::NearIsometric, MatchMode::NonIsometric, MatchMode::Partial] {
            assert_eq!(m.to_string().parse::<MatchMode>().unwrap(), m);
        }
        assert!("isometric".parse::<MatchMode>().is_err());
    }

    #[test]
    fn adaptation_weights_follow_mode() {
        let mut cfg = MatchConfig::default();
        assert_eq!(cfg.adaptation_weights().dirichlet, 0.0);
        cfg.mode = MatchMode::NonIsometric;
        assert_eq!(cfg.adaptation_weights().dirichlet, 5.0);
    }

    #[test]
    fn loss_csv_layout() {
        let log = vec![LossRecord {
            epoch: 0,
            pair: "a->b".into(),
            values: LossValues {
                total: 3.0,
                bij: 1.0,
                orth: 1.0,
                couple: 1.0,
                dirichlet: 0.0,
            },
        }];
        let mut buf = Vec::new();
        write_loss_csv(&mut buf, &log).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), LOSS_CSV_HEADER);
        assert_eq!(text.lines().nth(1).unwrap(), "0,a->b,3e0,1e0,1e0,1e0,0e0");
    }
}
