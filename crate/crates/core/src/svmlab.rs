//! Distributed SVM experiments: synthetic data, feature map, partitioning,
//! centralized baseline and evaluation.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostError, CostModel, LocalCost, SvmHingeCost};
use crate::engine::{integrate, EngineError, Network, SolverConfig, Trace};
use crate::nonlinear::{sector_bounds, Interval, SectorMode};
use crate::spectral::{assemble, bounds_for_system, SpectralError, StepSizeBounds};

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("radius must lie in (0, 1), got {0}")]
    Radius(f64),
    #[error("margin gap must be non-negative and finite, got {0}")]
    MarginGap(f64),
    #[error("resampling budget exhausted after {0} draws; margin gap too large")]
    Budget(usize),
    #[error("dataset needs both labels")]
    SingleClass,
    #[error("cannot split {points} points among {agents} agents")]
    TooManyAgents { agents: usize, points: usize },
    #[error("stratified split needs at least {agents} points of each label, label {label} has {count}")]
    ClassTooSmall { agents: usize, label: i8, count: usize },
    #[error("gradient descent stopped after {iterations} iterations with gradient norm {grad_norm:e}")]
    IterationCap { iterations: usize, grad_norm: f64 },
    #[error("dataset row {row}: {msg}")]
    Csv { row: usize, msg: String },
    #[error(transparent)]
    CsvRead(#[from] csv::Error),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationMeta {
    pub seed: u64,
    pub radius: f64,
    pub margin_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<f64>,
    pub meta: Option<GenerationMeta>,
}

impl LabeledDataset {
    pub fn new(points: Vec<[f64; 2]>, labels: Vec<f64>) -> Result<Self, SvmError> {
        if points.len() != labels.len() || points.len() < 2 {
            return Err(SvmError::TooFewPoints(points.len().min(labels.len())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l != 1.0 && l != -1.0) {
            return Err(CostError::Label(l).into());
        }
        if !(labels.contains(&1.0) && labels.contains(&-1.0)) {
            return Err(SvmError::SingleClass);
        }
        Ok(Self { points, labels, meta: None })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same points with every label flipped.
    pub fn negated(&self) -> Self {
        Self {
            points: self.points.clone(),
            labels: self.labels.iter().map(|l| -l).collect(),
            meta: self.meta,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), SvmError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["chi1", "chi2", "label"])?;
        for (p, l) in self.points.iter().zip(&self.labels) {
            w.write_record([format!("{:?}", p[0]), format!("{:?}", p[1]), format!("{l}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `chi1, chi2, label` rows; a header row is optional.
    pub fn read_csv(path: &Path) -> Result<Self, SvmError> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(SvmError::Csv { row: row + 1, msg: format!("expected 3 columns, found {}", rec.len()) });
            }
            let vals: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            match vals {
                Ok(v) => {
                    points.push([v[0], v[1]]);
                    labels.push(v[2]);
                }
                Err(_) if row == 0 => continue,
                Err(e) => return Err(SvmError::Csv { row: row + 1, msg: e.to_string() }),
            }
        }
        Self::new(points, labels)
    }
}

/// Uniform points on `[-1, 1]^2` labelled `+1` outside radius `r` and `-1`
/// on or inside it; draws within `margin_gap` of the circle are redrawn.
pub fn generate_ellipse_data(
    n_points: usize,
    seed: u64,
    radius: f64,
    margin_gap: f64,
) -> Result<LabeledDataset, SvmError> {
    if n_points < 2 {
        return Err(SvmError::TooFewPoints(n_points));
    }
    if !(radius > 0.0 && radius < 1.0) {
        return Err(SvmError::Radius(radius));
    }
    if !(margin_gap >= 0.0 && margin_gap.is_finite()) {
        return Err(SvmError::MarginGap(margin_gap));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = 1000 * n_points;
    let mut draws = 0;
    let mut points = Vec::with_capacity(n_points);
    let mut labels = Vec::with_capacity(n_points);
    while points.len() < n_points {
        if draws == budget {
            return Err(SvmError::Budget(budget));
        }
        draws += 1;
        let p: [f64; 2] = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
        let d = p[0].hypot(p[1]);
        if (d - radius).abs() < margin_gap {
            continue;
        }
        points.push(p);
        labels.push(label_for_radius(d, radius));
    }
    let mut data = LabeledDataset::new(points, labels)?;
    data.meta = Some(GenerationMeta { seed, radius, margin_gap });
    Ok(data)
}

pub fn label_for_radius(norm: f64, radius: f64) -> f64 {
    if norm > radius {
        1.0
    } else {
        -1.0
    }
}

/// `phi(chi) = [chi1^2, chi2^2, sqrt(2) chi1 chi2]`, so that
/// `phi(a)^T phi(b) = (a^T b)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMap {
    #[default]
    Quadratic,
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        3
    }

    /// Decision dimension `[w; nu]`.
    pub fn decision_dim(&self) -> usize {
        self.dim() + 1
    }

    pub fn apply(&self, p: &[f64; 2]) -> Vec<f64> {
        vec![p[0] * p[0], p[1] * p[1], std::f64::consts::SQRT_2 * p[0] * p[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    #[default]
    Stratified,
    Contiguous,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub assignment: Vec<Vec<usize>>,
}

impl Partition {
    pub fn counts(&self) -> Vec<usize> {
        self.assignment.iter().map(Vec::len).collect()
    }
}

pub fn partition(
    data: &LabeledDataset,
    n: usize,
    mode: PartitionMode,
    seed: u64,
) -> Result<Partition, SvmError> {
    let total = data.len();
    if n == 0 || n > total {
        return Err(SvmError::TooManyAgents { agents: n, points: total });
    }
    let mut assignment = vec![Vec::new(); n];
    match mode {
        PartitionMode::Contiguous => {
            let base = total / n;
            let extra = total % n;
            let mut start = 0;
            for (i, part) in assignment.iter_mut().enumerate() {
                let len = base + usize::from(i < extra);
                part.extend(start..start + len);
                start += len;
            }
        }
        PartitionMode::Stratified => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut slot = 0;
            for label in [1.0, -1.0] {
                let mut idx: Vec<usize> = (0..total).filter(|&j| data.labels[j] == label).collect();
                if idx.len() < n {
                    return Err(SvmError::ClassTooSmall { agents: n, label: label as i8, count: idx.len() });
                }
                idx.shuffle(&mut rng);
                for j in idx {
                    assignment[slot % n].push(j);
                    slot += 1;
                }
            }
        }
    }
    Ok(Partition { assignment })
}

/// Hyperplane `w^T phi(chi) - nu` in feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub omega: Vec<f64>,
    pub nu: f64,
}

impl Classifier {
    /// Splits a decision vector `[w; nu]`.
    pub fn from_decision(x: &[f64]) -> Self {
        let (w, nu) = x.split_at(x.len() - 1);
        Self { omega: w.to_vec(), nu: nu[0] }
    }

    pub fn to_decision(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.omega.len() + 1,
            self.omega.iter().copied().chain(std::iter::once(self.nu)),
        )
    }

    pub fn is_degenerate(&self) -> bool {
        self.omega.iter().all(|w| *w == 0.0)
    }

    pub fn score(&self, phi: &[f64]) -> f64 {
        self.omega.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>() - self.nu
    }

    /// `+1`, `-1`, or `0` on the hyperplane.
    pub fn predict(&self, map: FeatureMap, p: &[f64; 2]) -> f64 {
        let s = self.score(&map.apply(p));
        if s > 0.0 {
            1.0
        } else if s < 0.0 {
            -1.0
        } else {
            0.0
        }
    }

    pub fn negated(&self) -> Self {
        Self { omega: self.omega.iter().map(|w| -w).collect(), nu: -self.nu }
    }

    pub fn inf_distance(&self, other: &Classifier) -> f64 {
        (self.to_decision() - other.to_decision()).amax()
    }
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w: Vec<String> = self.omega.iter().map(|v| format!("{v:?}")).collect();
        writeln!(f, "omega: {}", w.join(", "))?;
        write!(f, "nu: {:?}", self.nu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub true_pos: usize,
    pub true_neg: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    /// Points exactly on the hyperplane; counted as wrong.
    pub ties: usize,
}

pub fn evaluate(c: &Classifier, data: &LabeledDataset, map: FeatureMap) -> Evaluation {
    let mut e = Evaluation { accuracy: 0.0, true_pos: 0, true_neg: 0, false_pos: 0, false_neg: 0, ties: 0 };
    for (p, &l) in data.points.iter().zip(&data.labels) {
        match (c.predict(map, p), l > 0.0) {
            (s, _) if s == 0.0 => e.ties += 1,
            (s, true) if s > 0.0 => e.true_pos += 1,
            (_, true) => e.false_neg += 1,
            (s, false) if s < 0.0 => e.true_neg += 1,
            (_, false) => e.false_pos += 1,
        }
    }
    e.accuracy = (e.true_pos + e.true_neg) as f64 / data.len().max(1) as f64;
    e
}

/// How the centralized objective relates to the distributed one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    /// Regularizers counted once per agent, as in the distributed sum.
    #[default]
    Matched,
    /// Single regularizer over the pooled data.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

pub const ARMIJO: f64 = 1e-4;
pub const SHRINK: f64 = 0.5;

/// Gradient descent with Armijo backtracking until `||grad|| <= tol`. Each
/// iteration starts its line search from twice the last accepted step.
/// Once the required decrease is below the floating-point resolution of `f`
/// the approximate Armijo test on the directional derivative takes over.
pub fn gradient_descent(
    f: &dyn LocalCost,
    x0: DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<GdResult, SvmError> {
    let mut x = x0;
    let mut e = f.eval(x.as_slice());
    let mut step = 1.0;
    for it in 0..max_iter {
        let gn2 = e.gradient.norm_squared();
        if gn2.sqrt() <= tol {
            return Ok(GdResult { value: e.value, grad_norm: gn2.sqrt(), x, iterations: it });
        }
        step *= 2.0;
        loop {
            let cand = &x - &e.gradient * step;
            let v = f.value(cand.as_slice());
            let accept = if step * gn2 > 1e-10 * (1.0 + e.value.abs()) {
                v <= e.value - ARMIJO * step * gn2
            } else {
                // Decrease below the resolution of f: use the quadratic-model
                // form of the same condition on the directional derivative.
                v <= e.value + 1e-12 * (1.0 + e.value.abs())
                    && f.gradient(cand.as_slice()).dot(&e.gradient) >= (1.0 - 2.0 * ARMIJO) * gn2
            };
            if accept {
                x = cand;
                break;
            }
            step *= SHRINK;
            if step < 1e-300 {
                return Err(SvmError::IterationCap { iterations: it, grad_norm: gn2.sqrt() });
            }
        }
        e = f.eval(x.as_slice());
    }
    let grad_norm = e.gradient.norm();
    if grad_norm <= tol {
        Ok(GdResult { value: e.value, grad_norm, x, iterations: max_iter })
    } else {
        Err(SvmError::IterationCap { iterations: max_iter, grad_norm })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmParams {
    pub mu: f64,
    pub c: f64,
    pub eps_nu: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { mu: 2.0, c: 1.0, eps_nu: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub classifier: Classifier,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

pub const ORACLE_MAX_ITER: usize = 2_000_000;

/// Centralized smoothed-hinge SVM over the pooled data. In `Matched` mode
/// with `n_agents` agents the objective is
/// `n (w^T w + eps nu^2) + C sum L`, the distributed sum of local costs.
pub fn centralized_oracle(
    data: &LabeledDataset,
    map: FeatureMap,
    params: &SvmParams,
    mode: OracleMode,
    n_agents: usize,
    tol: f64,
) -> Result<OracleResult, SvmError> {
    if !(tol > 0.0) {
        return Err(SvmError::IterationCap { iterations: 0, grad_norm: f64::NAN });
    }
    let scale = match mode {
        OracleMode::Matched => n_agents.max(1) as f64,
        OracleMode::Literal => 1.0,
    };
    // Matched objective divided by n: w^T w + (C/n) sum L + eps nu^2.
    let features = data.points.iter().map(|p| map.apply(p)).collect();
    let cost = SvmHingeCost::new(map.dim(), features, data.labels.clone(), params.mu, params.c / scale, params.eps_nu)?;
    let res = gradient_descent(&cost, DVector::zeros(map.decision_dim()), tol / scale, ORACLE_MAX_ITER)?;
    Ok(OracleResult {
        classifier: Classifier::from_decision(res.x.as_slice()),
        objective: res.value * scale,
        grad_norm: res.grad_norm * scale,
        iterations: res.iterations,
    })
}

/// Per-agent local SVM costs for a partition.
pub fn build_cost_model(
    data: &LabeledDataset,
    part: &Partition,
    map: FeatureMap,
    params: &SvmParams,
) -> Result<CostModel, SvmError> {
    let agents = part
        .assignment
        .iter()
        .map(|idx| {
            let features = idx.iter().map(|&j| map.apply(&data.points[j])).collect();
            let labels = idx.iter().map(|&j| data.labels[j]).collect();
            SvmHingeCost::new(map.dim(), features, labels, params.mu, params.c, params.eps_nu)
                .map(|c| Arc::new(c) as Arc<dyn LocalCost>)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CostModel::new(agents)?)
}

#[derive(Debug, Clone)]
pub struct DsvmSetup {
    pub data: LabeledDataset,
    pub map: FeatureMap,
    pub n_agents: usize,
    pub partition_mode: PartitionMode,
    pub seed: u64,
    pub network: Network,
    pub params: SvmParams,
    pub solver: SolverConfig,
    pub oracle_mode: OracleMode,
    pub oracle_tol: f64,
    /// Initial states are drawn uniformly from this range.
    pub x0_range: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct DsvmReport {
    pub agent_classifiers: Vec<Classifier>,
    pub consensus: Classifier,
    pub consensus_spread: f64,
    pub oracle: OracleResult,
    pub distance_to_oracle: f64,
    pub consensus_eval: Evaluation,
    pub oracle_eval: Evaluation,
    pub final_sum_grad_norm: f64,
    pub max_state_norm: f64,
    pub bounds: Option<StepSizeBounds>,
    pub warnings: Vec<String>,
    pub trace: Trace,
}

impl DsvmReport {
    pub fn accuracy_matches(&self) -> bool {
        self.consensus_eval.accuracy == self.oracle_eval.accuracy
    }
}

impl fmt::Display for DsvmReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "status: {}", self.trace.status)?;
        writeln!(f, "final_time: {}", self.trace.last().t)?;
        writeln!(f, "final_sum_grad_norm: {:.6e}", self.final_sum_grad_norm)?;
        writeln!(f, "consensus_spread: {:.6e}", self.consensus_spread)?;
        writeln!(f, "distance_to_oracle_inf: {:.6e}", self.distance_to_oracle)?;
        writeln!(f, "consensus_accuracy: {}", self.consensus_eval.accuracy)?;
        writeln!(f, "oracle_accuracy: {}", self.oracle_eval.accuracy)?;
        writeln!(f, "oracle_objective: {:.12e}", self.oracle.objective)?;
        writeln!(f, "max_state_norm: {:.6e}", self.max_state_norm)?;
        writeln!(f, "consensus_classifier:\n{}", self.consensus)?;
        write!(f, "oracle_classifier:\n{}", self.oracle.classifier)?;
        for w in &self.warnings {
            write!(f, "\nwarning: {w}")?;
        }
        Ok(())
    }
}

/// Step-size bounds at state `x` for links with the given sector bounds.
fn bounds_at(
    setup: &DsvmSetup,
    model: &CostModel,
    x: &DVector<f64>,
) -> Result<Option<StepSizeBounds>, SvmError> {
    let domain = Interval::unbounded();
    let sb = sector_bounds(&setup.solver.g_x, domain, SectorMode::Linearized)
        .and_then(|a| sector_bounds(&setup.solver.g_y, domain, SectorMode::Linearized).map(|b| a.combine(&b)));
    let Ok(sb) = sb else { return Ok(None) };
    if sb.kappa <= 0.0 {
        return Ok(None);
    }
    let h = model.aggregate_hessian(x)?;
    let w = crate::graph::laplacian(setup.network.w.base());
    let a = crate::graph::laplacian(setup.network.a.as_ref().unwrap_or(&setup.network.w).base());
    let nm = model.n() * model.m();
    let mats = assemble(&w, &a, &h, &crate::nonlinear::LinkGainSnapshot::uniform(2 * nm, 1.0), 0.0, model.m())?;
    Ok(Some(bounds_for_system(&mats, sb.kappa, sb.upper)?))
}

pub fn dsvm_experiment(setup: &DsvmSetup) -> Result<DsvmReport, SvmError> {
    let part = partition(&setup.data, setup.n_agents, setup.partition_mode, setup.seed)?;
    let model = build_cost_model(&setup.data, &part, setup.map, &setup.params)?;
    let oracle = centralized_oracle(
        &setup.data,
        setup.map,
        &setup.params,
        setup.oracle_mode,
        setup.n_agents,
        setup.oracle_tol,
    )?;
    let m = model.m();
    let n = model.n();
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed.wrapping_add(1));
    let (lo, hi) = setup.x0_range;
    let x0 = DVector::from_fn(n * m, |_, _| if hi > lo { rng.gen_range(lo..hi) } else { lo });

    let mut warnings = Vec::new();
    let bounds = bounds_at(setup, &model, &oracle.classifier.to_decision().iter().cycle().take(n * m).copied().collect::<Vec<_>>().into())?;
    match &bounds {
        Some(b) if setup.solver.alpha > b.alpha_bar_tight => warnings.push(format!(
            "alpha {} exceeds alpha_bar_tight {:.4e} evaluated at the oracle optimum",
            setup.solver.alpha, b.alpha_bar_tight
        )),
        None => warnings.push("step-size bounds unavailable: links are not strongly sign-preserving".into()),
        _ => {}
    }

    let reference = match setup.oracle_mode {
        OracleMode::Matched => Some(oracle.classifier.to_decision()),
        OracleMode::Literal => None,
    };
    let trace = integrate(&setup.network, &model, &x0, &setup.solver, reference.as_ref())?;
    warnings.extend(trace.warnings.iter().cloned());
    let last = trace.last();
    let agent_classifiers = (0..n)
        .map(|i| Classifier::from_decision(&last.x.as_slice()[i * m..(i + 1) * m]))
        .collect();
    let consensus = Classifier::from_decision(trace.final_mean().as_slice());
    let max_state_norm = trace
        .rows
        .iter()
        .map(|r| (r.x.norm_squared() + r.y.norm_squared()).sqrt())
        .fold(0.0, f64::max);
    Ok(DsvmReport {
        agent_classifiers,
        consensus_spread: last.consensus_error,
        distance_to_oracle: consensus.inf_distance(&oracle.classifier),
        consensus_eval: evaluate(&consensus, &setup.data, setup.map),
        oracle_eval: evaluate(&oracle.classifier, &setup.data, setup.map),
        final_sum_grad_norm: last.sum_grad_norm,
        consensus,
        oracle,
        max_state_norm,
        bounds,
        warnings,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn generation_is_deterministic_and_labelled_by_radius() {
        let a = generate_ellipse_data(200, 7, 0.6, 0.05).unwrap();
        let b = generate_ellipse_data(200, 7, 0.6, 0.05).unwrap();
        assert_eq!(a, b);
        for (p, l) in a.points.iter().zip(&a.labels) {
            let d = p[0].hypot(p[1]);
            assert!((d - 0.6).abs() >= 0.05);
            assert_eq!(*l, label_for_radius(d, 0.6));
        }
        assert_eq!(label_for_radius(0.6, 0.6), -1.0);
    }

    #[test]
    fn generation_errors() {
        assert!(matches!(generate_ellipse_data(1, 0, 0.6, 0.0), Err(SvmError::TooFewPoints(1))));
        assert!(matches!(generate_ellipse_data(10, 0, 1.0, 0.0), Err(SvmError::Radius(_))));
        assert!(matches!(generate_ellipse_data(10, 0, 0.6, 5.0), Err(SvmError::Budget(_))));
    }

    #[test]
    fn partition_modes() {
        let data = generate_ellipse_data(200, 7, 0.6, 0.05).unwrap();
        let one = partition(&data, 1, PartitionMode::Stratified, 1).unwrap();
        assert_eq!(one.counts(), vec![200]);
        let p = partition(&data, 5, PartitionMode::Stratified, 1).unwrap();
        assert_eq!(p.counts(), vec![40; 5]);
        let pos = data.labels.iter().filter(|&&l| l > 0.0).count() as f64;
        for part in &p.assignment {
            let local = part.iter().filter(|&&j| data.labels[j] > 0.0).count() as f64;
            assert!((local - pos / 5.0).abs() <= 1.0);
        }
        assert!(matches!(partition(&data, 201, PartitionMode::Contiguous, 0), Err(SvmError::TooManyAgents { .. })));

        let mut order: Vec<usize> = (0..data.len()).collect();
        order.sort_by(|&a, &b| data.labels[a].total_cmp(&data.labels[b]));
        let sorted = LabeledDataset::new(
            order.iter().map(|&j| data.points[j]).collect(),
            order.iter().map(|&j| data.labels[j]).collect(),
        )
        .unwrap();
        let c = partition(&sorted, 5, PartitionMode::Contiguous, 0).unwrap();
        let single_label = c.assignment.iter().filter(|part| {
            let first = sorted.labels[part[0]];
            part.iter().all(|&j| sorted.labels[j] == first)
        });
        assert!(single_label.count() >= 3);
    }

    proptest! {
        #[test]
        fn partitions_are_disjoint_and_exhaustive(seed in 0u64..500, n in 1usize..12, contiguous in any::<bool>()) {
            let data = generate_ellipse_data(60, seed, 0.6, 0.0).unwrap();
            let mode = if contiguous { PartitionMode::Contiguous } else { PartitionMode::Stratified };
            if let Ok(p) = partition(&data, n, mode, seed) {
                let mut all: Vec<usize> = p.assignment.concat();
                all.sort_unstable();
                prop_assert_eq!(all, (0..60).collect::<Vec<_>>());
            } else {
                prop_assert!(!contiguous);
            }
        }

        #[test]
        fn kernel_identity(a in prop::array::uniform2(-3.0f64..3.0), b in prop::array::uniform2(-3.0f64..3.0)) {
            let fa = FeatureMap::Quadratic.apply(&a);
            let fb = FeatureMap::Quadratic.apply(&b);
            let lhs: f64 = fa.iter().zip(&fb).map(|(x, y)| x * y).sum();
            let rhs = (a[0] * b[0] + a[1] * b[1]).powi(2);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn evaluation_tie_rule_and_negation() {
        let data = generate_ellipse_data(50, 3, 0.6, 0.05).unwrap();
        let zero = Classifier { omega: vec![0.0; 3], nu: 0.0 };
        assert!(zero.is_degenerate());
        let e = evaluate(&zero, &data, FeatureMap::Quadratic);
        assert_eq!((e.accuracy, e.ties), (0.0, 50));
        let c = Classifier { omega: vec![1.0, 1.0, 0.0], nu: 0.36 };
        let a = evaluate(&c, &data, FeatureMap::Quadratic);
        let b = evaluate(&c.negated(), &data, FeatureMap::Quadratic);
        assert_eq!(a.ties, b.ties);
        assert_eq!(a.accuracy + b.accuracy, (50 - a.ties) as f64 / 50.0);
    }

    #[test]
    fn oracle_separates_the_generated_data() {
        let data = generate_ellipse_data(200, 7, 0.6, 0.05).unwrap();
        let o = centralized_oracle(&data, FeatureMap::Quadratic, &SvmParams::default(), OracleMode::Literal, 5, 1e-9).unwrap();
        assert!(o.grad_norm <= 1e-9);
        assert_eq!(evaluate(&o.classifier, &data, FeatureMap::Quadratic).accuracy, 1.0);
    }

    #[test]
    fn oracle_symmetric_four_points() {
        let a = 0.5;
        let data = LabeledDataset::new(
            vec![[a, 0.0], [-a, 0.0], [0.0, a], [0.0, -a]],
            vec![-1.0, -1.0, 1.0, 1.0],
        )
        .unwrap();
        let o = centralized_oracle(&data, FeatureMap::Quadratic, &SvmParams::default(), OracleMode::Literal, 1, 1e-10).unwrap();
        assert!(o.grad_norm <= 1e-10);
        assert!(o.classifier.omega[2].abs() < 1e-9);
    }

    #[test]
    fn label_flip_negates_oracle() {
        let data = generate_ellipse_data(80, 11, 0.6, 0.05).unwrap();
        let p = SvmParams::default();
        let a = centralized_oracle(&data, FeatureMap::Quadratic, &p, OracleMode::Matched, 4, 1e-10).unwrap();
        let b = centralized_oracle(&data.negated(), FeatureMap::Quadratic, &p, OracleMode::Matched, 4, 1e-10).unwrap();
        assert!(a.classifier.inf_distance(&b.classifier.negated()) < 1e-7);
    }

    #[test]
    fn larger_margin_weight_does_not_increase_hinge_term() {
        let data = generate_ellipse_data(80, 5, 0.6, 0.0).unwrap();
        let hinge_total = |c: f64| {
            let p = SvmParams { c, ..SvmParams::default() };
            let o = centralized_oracle(&data, FeatureMap::Quadratic, &p, OracleMode::Literal, 1, 1e-10).unwrap();
            let reg: f64 = o.classifier.omega.iter().map(|w| w * w).sum::<f64>() + p.eps_nu * o.classifier.nu.powi(2);
            (o.objective - reg) / c
        };
        assert!(hinge_total(2.0) <= hinge_total(1.0) + 1e-9);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let data = generate_ellipse_data(20, 2, 0.6, 0.05).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        data.write_csv(&path).unwrap();
        let back = LabeledDataset::read_csv(&path).unwrap();
        assert_eq!(back.points, data.points);
        assert_eq!(back.labels, data.labels);
    }
}
