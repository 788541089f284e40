//! Fixed-step integration of the gradient-tracking dynamics over switching
//! networks, with per-sample diagnostics.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostError, CostModel};
use crate::graph::{laplacian, SwitchMode, SwitchingSchedule};
use crate::nonlinear::{LinkNonlinearity, NonlinearError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("sample_stride must be at least 1")]
    Stride,
    #[error("network has {graph} nodes but the cost model has {agents} agents")]
    AgentCount { graph: usize, agents: usize },
    #[error("initial state has length {got}, expected {expected}")]
    StateLength { expected: usize, got: usize },
    #[error("reference optimum has length {got}, expected {expected}")]
    ReferenceLength { expected: usize, got: usize },
    #[error("x-link nonlinearity: {0}")]
    LinkX(NonlinearError),
    #[error("y-link nonlinearity: {0}")]
    LinkY(NonlinearError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum YInit {
    Zero,
    #[default]
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    Euler,
    Rk4,
}

pub const DEFAULT_BLOWUP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub alpha: f64,
    pub eta: f64,
    pub t_end: f64,
    pub y_init: YInit,
    pub g_x: LinkNonlinearity,
    pub g_y: LinkNonlinearity,
    pub integrator: Integrator,
    pub sample_stride: usize,
    pub blowup: f64,
}

impl SolverConfig {
    pub fn new(alpha: f64, eta: f64, t_end: f64) -> Self {
        Self {
            alpha,
            eta,
            t_end,
            y_init: YInit::default(),
            g_x: LinkNonlinearity::Identity,
            g_y: LinkNonlinearity::Identity,
            integrator: Integrator::default(),
            sample_stride: 1,
            blowup: DEFAULT_BLOWUP,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        for (name, value) in [
            ("alpha", self.alpha),
            ("eta", self.eta),
            ("t_end", self.t_end),
            ("blowup", self.blowup),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(EngineError::NonPositive { name, value });
            }
        }
        if self.sample_stride == 0 {
            return Err(EngineError::Stride);
        }
        self.g_x.validate().map_err(EngineError::LinkX)?;
        self.g_y.validate().map_err(EngineError::LinkY)?;
        Ok(())
    }
}

/// Topology signals for the `x` line (`W`) and the `y` line (`A`).
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub w: SwitchingSchedule,
    pub a: Option<SwitchingSchedule>,
}

impl Network {
    pub fn shared(w: SwitchingSchedule) -> Self {
        Self { w, a: None }
    }

    pub fn n(&self) -> usize {
        self.w.base().n()
    }

    fn a_schedule(&self) -> &SwitchingSchedule {
        self.a.as_ref().unwrap_or(&self.w)
    }

    fn schedules(&self) -> impl Iterator<Item = &SwitchingSchedule> {
        std::iter::once(&self.w).chain(self.a.as_ref())
    }

    /// Shortest switching period among schedules that actually switch.
    fn min_switch_period(&self) -> Option<f64> {
        self.schedules()
            .filter(|s| s.mode() == SwitchMode::Permute)
            .map(|s| s.switch_period())
            .reduce(f64::min)
    }

    /// Laplacians active during the step starting at `k eta`. The interval is
    /// looked up at the step midpoint so that snapped steps never straddle a
    /// switch.
    pub fn laplacians_for_step(&self, k: u64, eta: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let t_mid = (k as f64 + 0.5) * eta;
        let w = laplacian(&self.w.graph_at(t_mid)).matrix().clone();
        let a = laplacian(&self.a_schedule().graph_at(t_mid)).matrix().clone();
        (w, a)
    }
}

/// Largest step not exceeding `eta` that divides `period`.
pub fn snap_step(eta: f64, period: f64) -> f64 {
    let ratio = period / eta;
    let k = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) {
        ratio.round()
    } else {
        ratio.ceil()
    };
    period / k.max(1.0)
}

/// `sum_{j != i} l_ij (g_j - g_i)` per agent block, which is exactly zero at
/// consensus.
fn laplacian_flow(l: &DMatrix<f64>, g: &DVector<f64>, m: usize) -> DVector<f64> {
    let n = l.nrows();
    let mut out = DVector::zeros(n * m);
    for i in 0..n {
        for j in 0..n {
            let w = l[(i, j)];
            if j == i || w == 0.0 {
                continue;
            }
            for k in 0..m {
                out[i * m + k] += w * (g[j * m + k] - g[i * m + k]);
            }
        }
    }
    out
}

/// Right-hand side of the dynamics for a frozen topology:
/// `dx = W (g_x(x)) - alpha y`, `dy = A (g_y(y)) + H(x) dx`.
pub fn derivative(
    x: &DVector<f64>,
    y: &DVector<f64>,
    w: &DMatrix<f64>,
    a: &DMatrix<f64>,
    model: &CostModel,
    cfg: &SolverConfig,
) -> (DVector<f64>, DVector<f64>) {
    let m = model.m();
    let dx = laplacian_flow(w, &cfg.g_x.apply_vec(x), m) - y * cfg.alpha;
    let mut dy = laplacian_flow(a, &cfg.g_y.apply_vec(y), m);
    for i in 0..model.n() {
        let h = model.agent(i).hessian(&x.as_slice()[i * m..(i + 1) * m]);
        let hdx = h * dx.rows(i * m, m);
        let mut block = dy.rows_mut(i * m, m);
        block += hdx;
    }
    (dx, dy)
}

fn step(
    x: &DVector<f64>,
    y: &DVector<f64>,
    w: &DMatrix<f64>,
    a: &DMatrix<f64>,
    model: &CostModel,
    cfg: &SolverConfig,
    eta: f64,
) -> (DVector<f64>, DVector<f64>) {
    let f = |x: &DVector<f64>, y: &DVector<f64>| derivative(x, y, w, a, model, cfg);
    match cfg.integrator {
        Integrator::Euler => {
            let (dx, dy) = f(x, y);
            (x + dx * eta, y + dy * eta)
        }
        Integrator::Rk4 => {
            let h = 0.5 * eta;
            let (k1x, k1y) = f(x, y);
            let (k2x, k2y) = f(&(x + &k1x * h), &(y + &k1y * h));
            let (k3x, k3y) = f(&(x + &k2x * h), &(y + &k2y * h));
            let (k4x, k4y) = f(&(x + &k3x * eta), &(y + &k3y * eta));
            let s = eta / 6.0;
            (
                x + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * s,
                y + (k1y + k2y * 2.0 + k3y * 2.0 + k4y) * s,
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub cost: f64,
    pub sum_grad_norm: f64,
    pub consensus_error: f64,
    pub conservation_residual: f64,
    pub lyapunov: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunStatus {
    Completed,
    Diverged { t: f64, step: u64 },
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunStatus::Completed => write!(f, "completed"),
            RunStatus::Diverged { t, step } => write!(f, "diverged at t = {t} (step {step})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub n: usize,
    pub m: usize,
    pub eta: f64,
    pub steps: u64,
    pub sample_stride: usize,
    pub rows: Vec<TraceRow>,
    pub status: RunStatus,
    /// `sum y(0) - sum grad f(x(0))`, the conserved offset.
    pub conserved_offset: DVector<f64>,
    pub warnings: Vec<String>,
}

impl Trace {
    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("a trace always holds its initial row")
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }

    /// Network mean of the agents' `x` at the final sample.
    pub fn final_mean(&self) -> DVector<f64> {
        block_mean(&self.last().x, self.n, self.m)
    }

    pub fn max_conservation_residual(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.conservation_residual)
            .fold(0.0, f64::max)
    }

    /// CSV with columns `t, x_<i>_<k>..., y_<i>_<k>..., cost, sum_grad_norm,
    /// consensus_error, conservation_residual, lyapunov`. Floats use Rust's
    /// shortest round-trip formatting.
    pub fn write_csv(&self, mut out: impl Write) -> Result<(), EngineError> {
        let mut header = vec!["t".to_string()];
        for prefix in ["x", "y"] {
            for i in 0..self.n {
                for k in 0..self.m {
                    header.push(format!("{prefix}_{i}_{k}"));
                }
            }
        }
        header.extend(
            ["cost", "sum_grad_norm", "consensus_error", "conservation_residual", "lyapunov"]
                .map(String::from),
        );
        writeln!(out, "{}", header.join(","))?;
        for r in &self.rows {
            let mut line = format!("{:?}", r.t);
            for v in r.x.iter().chain(r.y.iter()) {
                line.push_str(&format!(",{v:?}"));
            }
            line.push_str(&format!(
                ",{:?},{:?},{:?},{:?},",
                r.cost, r.sum_grad_norm, r.consensus_error, r.conservation_residual
            ));
            if let Some(v) = r.lyapunov {
                line.push_str(&format!("{v:?}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

pub fn block_mean(x: &DVector<f64>, n: usize, m: usize) -> DVector<f64> {
    let mut mean = DVector::zeros(m);
    for i in 0..n {
        mean += x.rows(i * m, m);
    }
    mean / n as f64
}

/// `max_i ||x_i - mean||`.
pub fn consensus_error(x: &DVector<f64>, n: usize, m: usize) -> f64 {
    let mean = block_mean(x, n, m);
    (0..n)
        .map(|i| (x.rows(i * m, m) - &mean).norm())
        .fold(0.0, f64::max)
}

/// `||(sum y - sum grad f) - offset||`.
pub fn conservation_residual(
    y: &DVector<f64>,
    sum_grad: &DVector<f64>,
    offset: &DVector<f64>,
    n: usize,
    m: usize,
) -> f64 {
    (block_mean(y, n, m) * n as f64 - sum_grad - offset).norm()
}

/// `V = 1/2 (||x - 1 x*||^2 + ||y||^2)`.
pub fn lyapunov(x: &DVector<f64>, y: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    let m = reference.len();
    let dx: f64 = (0..x.len() / m)
        .map(|i| (x.rows(i * m, m) - reference).norm_squared())
        .sum();
    0.5 * (dx + y.norm_squared())
}

fn state_norm(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (x.norm_squared() + y.norm_squared()).sqrt()
}

/// Integrates from `x0` (stacked `nm`-vector). `y(0)` follows
/// `cfg.y_init`. With `reference` set, each row carries the Lyapunov value
/// against `[1 x*; 0]`.
pub fn integrate(
    net: &Network,
    model: &CostModel,
    x0: &DVector<f64>,
    cfg: &SolverConfig,
    reference: Option<&DVector<f64>>,
) -> Result<Trace, EngineError> {
    cfg.validate()?;
    let (n, m) = (model.n(), model.m());
    if net.n() != n || net.a_schedule().base().n() != n {
        return Err(EngineError::AgentCount { graph: net.n(), agents: n });
    }
    if x0.len() != n * m {
        return Err(EngineError::StateLength { expected: n * m, got: x0.len() });
    }
    if let Some(r) = reference {
        if r.len() != m {
            return Err(EngineError::ReferenceLength { expected: m, got: r.len() });
        }
    }
    let mut warnings = Vec::new();
    let mut eta = cfg.eta;
    if let Some(period) = net.min_switch_period() {
        let snapped = snap_step(eta, period);
        if snapped != eta {
            let msg = format!("eta {eta} does not divide the switch period {period}; using {snapped}");
            log::warn!("{msg}");
            warnings.push(msg);
            eta = snapped;
        }
    }
    let steps = (cfg.t_end / eta).round().max(1.0) as u64;

    let mut x = x0.clone();
    let mut y = match cfg.y_init {
        YInit::Zero => DVector::zeros(n * m),
        YInit::Gradient => model.stacked_gradient(&x)?,
    };
    let offset = block_mean(&y, n, m) * n as f64 - model.sum_gradient(&x)?;

    let row = |t: f64, x: &DVector<f64>, y: &DVector<f64>| -> Result<TraceRow, EngineError> {
        let sum_grad = model.sum_gradient(x)?;
        Ok(TraceRow {
            t,
            cost: model.global_cost(x)?,
            sum_grad_norm: sum_grad.norm(),
            consensus_error: consensus_error(x, n, m),
            conservation_residual: conservation_residual(y, &sum_grad, &offset, n, m),
            lyapunov: reference.map(|r| lyapunov(x, y, r)),
            x: x.clone(),
            y: y.clone(),
        })
    };

    let mut rows = vec![row(0.0, &x, &y)?];
    let mut status = RunStatus::Completed;
    let mut cached: Option<(u64, u64, DMatrix<f64>, DMatrix<f64>)> = None;
    for k in 0..steps {
        let t_mid = (k as f64 + 0.5) * eta;
        let key = (
            net.w.interval_index(t_mid),
            net.a_schedule().interval_index(t_mid),
        );
        if cached.as_ref().is_none_or(|c| (c.0, c.1) != key) {
            let (w, a) = net.laplacians_for_step(k, eta);
            cached = Some((key.0, key.1, w, a));
        }
        let (_, _, w, a) = cached.as_ref().expect("topology cached above");
        let (nx, ny) = step(&x, &y, w, a, model, cfg, eta);
        x = nx;
        y = ny;
        let t = (k + 1) as f64 * eta;
        let norm = state_norm(&x, &y);
        if !norm.is_finite() || norm > cfg.blowup {
            status = RunStatus::Diverged { t, step: k + 1 };
            break;
        }
        if (k + 1) % cfg.sample_stride as u64 == 0 {
            rows.push(row(t, &x, &y)?);
        }
    }
    Ok(Trace {
        n,
        m,
        eta,
        steps,
        sample_stride: cfg.sample_stride,
        rows,
        status,
        conserved_offset: offset,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovReport {
    pub t: Vec<f64>,
    pub values: Vec<f64>,
    /// Per-sample ratio `V_{k+1} / V_k` (`NaN` when `V_k = 0`).
    pub ratios: Vec<f64>,
    /// Largest increase `V_{k+1} - V_k` relative to `V(0)`.
    pub max_rel_increase: f64,
}

impl LyapunovReport {
    pub fn non_increasing(&self, rel_tol: f64) -> bool {
        self.max_rel_increase <= rel_tol
    }

    /// Decay rate `-d ln V / dt` from a least-squares fit of the upper
    /// envelope of `ln V`, over samples with `V` between `lo * V(0)` and
    /// `hi * V(0)`.
    pub fn decay_rate(&self, hi: f64, lo: f64) -> Option<f64> {
        let v0 = *self.values.first()?;
        if v0 <= 0.0 {
            return None;
        }
        let mut env = vec![f64::NEG_INFINITY; self.values.len()];
        let mut run = f64::NEG_INFINITY;
        for k in (0..self.values.len()).rev() {
            run = run.max(self.values[k].max(f64::MIN_POSITIVE).ln());
            env[k] = run;
        }
        let (lo, hi) = ((lo * v0).ln(), (hi * v0).ln());
        let pts: Vec<(f64, f64)> = self
            .t
            .iter()
            .zip(&env)
            .filter(|(_, &e)| e <= hi && e >= lo)
            .map(|(&t, &e)| (t, e))
            .collect();
        if pts.len() < 3 {
            return None;
        }
        let k = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let me = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let num: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - me)).sum();
        let den: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        Some(-num / den)
    }
}

/// Lyapunov series of a trace against the optimum `reference`.
pub fn lyapunov_series(trace: &Trace, reference: &DVector<f64>) -> LyapunovReport {
    let values: Vec<f64> = trace
        .rows
        .iter()
        .map(|r| lyapunov(&r.x, &r.y, reference))
        .collect();
    let v0 = values.first().copied().unwrap_or(0.0);
    let ratios = values
        .windows(2)
        .map(|w| if w[0] == 0.0 { f64::NAN } else { w[1] / w[0] })
        .collect();
    let max_rel_increase = values
        .windows(2)
        .map(|w| if v0 > 0.0 { (w[1] - w[0]) / v0 } else { w[1] - w[0] })
        .fold(f64::NEG_INFINITY, f64::max);
    LyapunovReport {
        t: trace.rows.iter().map(|r| r.t).collect(),
        values,
        ratios,
        max_rel_increase,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{LocalCost, QuadraticCost};
    use crate::graph::{make_khop_ring, WeightedGraph};
    use std::sync::Arc;

    fn scalar_quadratics(centers: &[f64], curv: &[f64]) -> CostModel {
        CostModel::new(
            centers
                .iter()
                .zip(curv)
                .map(|(&b, &q)| Arc::new(QuadraticCost::scalar(q, b).unwrap()) as Arc<dyn LocalCost>)
                .collect(),
        )
        .unwrap()
    }

    fn ring_net(n: usize, k: usize, tw: f64) -> Network {
        Network::shared(SwitchingSchedule::fixed(make_khop_ring(n, k, tw).unwrap()).unwrap())
    }

    #[test]
    fn single_agent_flows_exponentially() {
        // n = 1 has no links: dx = -alpha y and y tracks grad f = x - 3.
        let g = WeightedGraph::new(DMatrix::zeros(1, 1)).unwrap();
        let model = scalar_quadratics(&[3.0], &[1.0]);
        let l = laplacian(&g).matrix().clone();
        let cfg = SolverConfig::new(1.0, 1e-3, 1.0);
        let x = DVector::from_element(1, 5.0);
        let y = DVector::from_element(1, 2.0);
        let (dx, dy) = derivative(&x, &y, &l, &l, &model, &cfg);
        assert_eq!(dx[0], -2.0);
        assert_eq!(dy[0], -2.0);
    }

    #[test]
    fn equilibrium_derivative_is_exactly_zero() {
        let model = scalar_quadratics(&[1.0, -2.0, 4.0, 0.5, 1.5], &[1.0; 5]);
        let l = laplacian(&make_khop_ring(5, 2, 0.8).unwrap()).matrix().clone();
        let x = DVector::from_element(5, 1.0);
        let y = DVector::zeros(5);
        for g in [
            LinkNonlinearity::Identity,
            LinkNonlinearity::LogQuantizer { rho: 1.0 },
            LinkNonlinearity::UniformQuantizer { rho: 0.5 },
        ] {
            let mut cfg = SolverConfig::new(0.3, 1e-2, 1.0);
            cfg.g_x = g.clone();
            cfg.g_y = g;
            let (dx, dy) = derivative(&x, &y, &l, &l, &model, &cfg);
            assert!(dx.iter().chain(dy.iter()).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn start_at_optimum_stays_put() {
        let model = scalar_quadratics(&[1.0, -2.0, 4.0, 0.5, 1.5], &[1.0; 5]);
        let x0 = DVector::from_element(5, 1.0);
        let mut cfg = SolverConfig::new(0.3, 1e-2, 2.0);
        cfg.y_init = YInit::Zero;
        let ref_opt = DVector::from_element(1, 1.0);
        let tr = integrate(&ring_net(5, 1, 0.6), &model, &x0, &cfg, Some(&ref_opt)).unwrap();
        assert!(tr.rows.iter().all(|r| r.x == x0 && r.lyapunov == Some(0.0)));
    }

    #[test]
    fn row_count_follows_stride() {
        let model = scalar_quadratics(&[1.0, 2.0, 3.0], &[1.0; 3]);
        let x0 = DVector::zeros(3);
        let mut cfg = SolverConfig::new(0.1, 0.01, 1.0);
        cfg.sample_stride = 7;
        let tr = integrate(&ring_net(3, 1, 0.6), &model, &x0, &cfg, None).unwrap();
        assert_eq!(tr.steps, 100);
        assert_eq!(tr.rows.len(), 100 / 7 + 1);
        assert!(tr.rows.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn quadratic_fixture_converges() {
        let centers = [1.0, -2.0, 4.0, 0.5, 1.5];
        let curv = [1.0, 2.0, 0.5, 1.5, 3.0];
        let model = scalar_quadratics(&centers, &curv);
        let opt = centers.iter().zip(&curv).map(|(b, q)| b * q).sum::<f64>() / curv.iter().sum::<f64>();
        let x0 = DVector::from_vec(vec![0.0, 1.0, -1.0, 2.0, 0.5]);
        let mut cfg = SolverConfig::new(0.3, 0.01, 50.0);
        cfg.integrator = Integrator::Rk4;
        let tr = integrate(&ring_net(5, 2, 0.8), &model, &x0, &cfg, None).unwrap();
        assert_eq!(tr.status, RunStatus::Completed);
        let last = tr.last();
        assert!(last.consensus_error < 1e-6, "{}", last.consensus_error);
        assert!(last.sum_grad_norm < 1e-6);
        assert!((tr.final_mean()[0] - opt).abs() < 1e-6);
    }

    #[test]
    fn huge_alpha_diverges_under_euler() {
        let model = scalar_quadratics(&[1.0, -2.0, 4.0, 0.5, 1.5], &[1.0; 5]);
        let x0 = DVector::from_vec(vec![0.0, 1.0, -1.0, 2.0, 0.5]);
        let cfg = SolverConfig::new(500.0, 0.05, 50.0);
        let tr = integrate(&ring_net(5, 2, 0.8), &model, &x0, &cfg, None).unwrap();
        assert!(tr.diverged());
    }

    #[test]
    fn eta_is_snapped_to_divide_the_switch_period() {
        assert_eq!(snap_step(0.001, 0.001), 0.001);
        assert_eq!(snap_step(0.3, 1.0), 0.25);
        let g = make_khop_ring(5, 1, 0.6).unwrap();
        let net = Network::shared(SwitchingSchedule::new(g, 0.1, 3, SwitchMode::Permute).unwrap());
        let model = scalar_quadratics(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0; 5]);
        let cfg = SolverConfig::new(0.1, 0.03, 0.3);
        let tr = integrate(&net, &model, &DVector::zeros(5), &cfg, None).unwrap();
        assert_eq!(tr.eta, 0.025);
        assert_eq!(tr.warnings.len(), 1);
    }

    #[test]
    fn config_errors() {
        let model = scalar_quadratics(&[1.0, 2.0, 3.0], &[1.0; 3]);
        let net = ring_net(3, 1, 0.6);
        let bad = SolverConfig::new(-1.0, 0.1, 1.0);
        assert!(matches!(
            integrate(&net, &model, &DVector::zeros(3), &bad, None),
            Err(EngineError::NonPositive { name: "alpha", .. })
        ));
        let cfg = SolverConfig::new(0.1, 0.1, 1.0);
        assert!(matches!(
            integrate(&net, &model, &DVector::zeros(4), &cfg, None),
            Err(EngineError::StateLength { .. })
        ));
        assert!(matches!(
            integrate(&ring_net(4, 1, 0.6), &model, &DVector::zeros(3), &cfg, None),
            Err(EngineError::AgentCount { .. })
        ));
    }

    #[test]
    fn csv_has_documented_columns() {
        let model = scalar_quadratics(&[1.0, 2.0, 3.0], &[1.0; 3]);
        let cfg = SolverConfig::new(0.1, 0.1, 0.3);
        let tr = integrate(&ring_net(3, 1, 0.6), &model, &DVector::zeros(3), &cfg, None).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            "t,x_0_0,x_1_0,x_2_0,y_0_0,y_1_0,y_2_0,cost,sum_grad_norm,consensus_error,conservation_residual,lyapunov"
        );
        assert_eq!(text.lines().count(), 5);
    }
}
