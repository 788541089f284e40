//! Subcommand implementations. Everything here is callable as a library so
//! the integration tests can drive the same code paths as the binary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use linkgt::corpus::{run_verify, Mutation, SuiteResult, VerifyOptions};
use linkgt::cost::{CostError, CostModel, HessianAggregate, LocalCost, QuadraticCost};
use linkgt::engine::{integrate, lyapunov_series, EngineError, Network, SolverConfig, Trace};
use linkgt::graph::{
    laplacian, make_directed_circulant, make_khop_ring, GraphError, SwitchingSchedule, WeightedGraph,
};
use linkgt::nonlinear::{
    sector_bounds, Interval, LinkGainSnapshot, LinkNonlinearity, NonlinearError, SectorBounds,
};
use linkgt::spectral::{
    assemble, bisect_frontier, bounds_for_system, laplacian_extremes, log_grid, stability_sweep,
    standard_regimes, SpectralError, StepSizeBounds, SweepFixture, SweepTable,
};
use linkgt::svmlab::{
    build_cost_model, centralized_oracle, dsvm_experiment, generate_ellipse_data, partition,
    DsvmReport, DsvmSetup, FeatureMap, LabeledDataset, SvmError, SvmParams,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::config::{resolve, ConfigError, CostKind, DataKind, ExperimentConfig, LoadedConfig, SweepMode, Topology};
use crate::plot::{HeatMap, LineChart, Series};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const RUNTIME: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const DIVERGED: i32 = 3;
    pub const VERIFY_FAILED: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Nonlinear(#[from] NonlinearError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Read { .. }) => exit::RUNTIME,
            CliError::Config(_) | CliError::Usage(_) => exit::VALIDATION,
            _ => exit::RUNTIME,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

// ---------------------------------------------------------------------------
// Problem construction

pub fn base_graph(cfg: &ExperimentConfig, base_dir: Option<&Path>) -> Result<WeightedGraph, CliError> {
    let n = cfg.n_agents();
    let net = &cfg.network;
    let g = match net.topology {
        Topology::Ring => make_khop_ring(n, net.hops, net.total_weight)?,
        Topology::DirectedCirculant => make_directed_circulant(n, net.hops, net.total_weight)?,
        Topology::EdgeList => {
            let p = resolve(base_dir, net.edges.as_deref().expect("validated"));
            let text = fs::read_to_string(&p).map_err(io_err(&p))?;
            let g = WeightedGraph::from_edge_list(&text)?;
            if g.n() != n {
                return Err(CliError::Usage(format!(
                    "edge list {} has {} nodes but partition.agents = {n}",
                    p.display(),
                    g.n()
                )));
            }
            g
        }
    };
    Ok(g)
}

fn schedule(cfg: &ExperimentConfig, base: WeightedGraph) -> Result<Network, CliError> {
    let s = SwitchingSchedule::new(base, cfg.network.switch_period, cfg.seed, cfg.network.switching)?;
    Ok(Network::shared(s))
}

pub fn solver_config(cfg: &ExperimentConfig) -> SolverConfig {
    let s = &cfg.solver;
    SolverConfig {
        alpha: s.alpha,
        eta: s.eta,
        t_end: s.t_end,
        y_init: s.y_init,
        g_x: cfg.nonlinearity.x.clone(),
        g_y: cfg.nonlinearity.y_link().clone(),
        integrator: s.integrator,
        sample_stride: s.sample_stride,
        blowup: s.blowup,
    }
}

fn load_data(cfg: &ExperimentConfig, base_dir: Option<&Path>) -> Result<LabeledDataset, CliError> {
    Ok(match cfg.data.kind {
        DataKind::Ellipse => generate_ellipse_data(cfg.data.points, cfg.seed, cfg.data.radius, cfg.data.gap)?,
        DataKind::Csv => {
            let p = resolve(base_dir, cfg.data.path.as_deref().expect("validated"));
            LabeledDataset::read_csv(&p)?
        }
    })
}

fn svm_params(cfg: &ExperimentConfig) -> SvmParams {
    SvmParams { mu: cfg.cost.mu, c: cfg.cost.c, eps_nu: cfg.cost.eps_nu }
}

pub fn dsvm_setup(cfg: &ExperimentConfig, base_dir: Option<&Path>) -> Result<DsvmSetup, CliError> {
    Ok(DsvmSetup {
        data: load_data(cfg, base_dir)?,
        map: FeatureMap::Quadratic,
        n_agents: cfg.n_agents(),
        partition_mode: cfg.partition.mode,
        seed: cfg.seed,
        network: schedule(cfg, base_graph(cfg, base_dir)?)?,
        params: svm_params(cfg),
        solver: solver_config(cfg),
        oracle_mode: cfg.cost.oracle,
        oracle_tol: cfg.cost.oracle_tol,
        x0_range: (cfg.solver.x0_range[0], cfg.solver.x0_range[1]),
    })
}

/// Everything a generic run needs, plus the Hessian used for bounds and
/// sweeps (taken at the reference optimum).
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: CostModel,
    pub network: Network,
    pub x0: DVector<f64>,
    pub reference: Option<DVector<f64>>,
    pub hessian: HessianAggregate,
    /// Global cost at the reference point, when known.
    pub optimal_cost: Option<f64>,
}

fn initial_state(cfg: &ExperimentConfig, len: usize) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let [lo, hi] = cfg.solver.x0_range;
    DVector::from_fn(len, |_, _| if hi > lo { rng.gen_range(lo..hi) } else { lo })
}

fn stacked(v: &DVector<f64>, n: usize) -> DVector<f64> {
    DVector::from_iterator(v.len() * n, v.iter().copied().cycle().take(v.len() * n))
}

/// Random quadratics `1/2 (x - b)^T Q (x - b)` drawn from the seed, with
/// `Q` diagonal or randomly rotated. Returns the model and its optimum
/// `(sum Q)^-1 sum Q b`.
fn quadratic_model(cfg: &ExperimentConfig) -> Result<(CostModel, DVector<f64>), CliError> {
    let (n, m) = (cfg.n_agents(), cfg.cost.dim);
    let [lo, hi] = cfg.cost.curvature;
    let s = cfg.cost.center_spread;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut q_sum = DMatrix::zeros(m, m);
    let mut moment = DVector::zeros(m);
    let mut agents: Vec<Arc<dyn LocalCost>> = Vec::with_capacity(n);
    for _ in 0..n {
        let d = DVector::from_fn(m, |_, _| if hi > lo { rng.gen_range(lo..=hi) } else { lo });
        let b = DVector::from_fn(m, |_, _| rng.gen_range(-s..=s));
        let mut q = DMatrix::from_diagonal(&d);
        if cfg.cost.rotate {
            let r = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
            q = &r * q * r.transpose();
            q = (&q + q.transpose()) * 0.5;
        }
        moment += &q * &b;
        q_sum += &q;
        agents.push(Arc::new(QuadraticCost::new(q, b)?));
    }
    let optimum = q_sum.cholesky().expect("sum of positive definite curvatures").solve(&moment);
    Ok((CostModel::new(agents)?, optimum))
}

pub fn build_problem(cfg: &ExperimentConfig, base_dir: Option<&Path>) -> Result<Problem, CliError> {
    let n = cfg.n_agents();
    let network = schedule(cfg, base_graph(cfg, base_dir)?)?;
    let (model, optimum) = match cfg.cost.kind {
        CostKind::Quadratic => quadratic_model(cfg)?,
        CostKind::Svm => {
            let data = load_data(cfg, base_dir)?;
            let part = partition(&data, n, cfg.partition.mode, cfg.seed)?;
            let params = svm_params(cfg);
            let model = build_cost_model(&data, &part, FeatureMap::Quadratic, &params)?;
            let oracle = centralized_oracle(&data, FeatureMap::Quadratic, &params, cfg.cost.oracle, n, cfg.cost.oracle_tol)?;
            (model, oracle.classifier.to_decision())
        }
    };
    let at = stacked(&optimum, n);
    let hessian = model.aggregate_hessian(&at)?;
    let optimal_cost = Some(model.global_cost(&at)?);
    let x0 = initial_state(cfg, n * model.m());
    Ok(Problem { model, network, x0, reference: Some(optimum), hessian, optimal_cost })
}

// ---------------------------------------------------------------------------
// Bounds

/// Sector bounds valid for both link maps on the configured domain.
pub fn link_sector(
    cfg: &ExperimentConfig,
    x: &LinkNonlinearity,
    y: &LinkNonlinearity,
) -> Result<SectorBounds, CliError> {
    let domain = match cfg.nonlinearity.domain {
        Some(d) => Interval::symmetric(d)?,
        None => Interval::unbounded(),
    };
    let mode = cfg.nonlinearity.sector_mode;
    Ok(sector_bounds(x, domain, mode)?.combine(&sector_bounds(y, domain, mode)?))
}

/// Bounds for a fixed graph pair and Hessian; `None` when the links are not
/// strongly sign-preserving.
pub fn bounds_for(
    w: &WeightedGraph,
    hessian: &HessianAggregate,
    sector: &SectorBounds,
) -> Result<Option<StepSizeBounds>, CliError> {
    if !(sector.kappa > 0.0) {
        return Ok(None);
    }
    let l = laplacian(w);
    let m = hessian.m();
    let mats = assemble(&l, &l, hessian, &LinkGainSnapshot::uniform(2 * l.n() * m, 1.0), 0.0, m)?;
    Ok(Some(bounds_for_system(&mats, sector.kappa, sector.upper)?))
}

#[derive(Debug, Clone)]
pub struct BoundsOutcome {
    pub sector: SectorBounds,
    pub bounds: Option<StepSizeBounds>,
    pub alpha: f64,
}

impl BoundsOutcome {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let sb = &self.sector;
        let _ = writeln!(s, "link sector: kappa = {}, upper = {}, ratio = {}", sb.kappa, sb.upper, sb.ratio());
        let _ = writeln!(s, "sector mode: {:?}, domain: [{}, {}]", sb.mode, sb.domain.lo, sb.domain.hi);
        match &self.bounds {
            None => {
                let _ = writeln!(
                    s,
                    "step-size bounds unavailable: kappa = {} (links are not strongly sign-preserving)",
                    sb.kappa
                );
            }
            Some(b) => {
                let _ = writeln!(s, "{b}");
                let _ = writeln!(s, "eigen_ratio: {:.6e}", b.lambda_max / b.lambda_under);
                let yn = |bar: f64| if self.alpha < bar { "yes" } else { "no" };
                let _ = writeln!(s, "alpha = {}:", self.alpha);
                let _ = writeln!(s, "  admissible under alpha_bar_tight: {}", yn(b.alpha_bar_tight));
                let _ = writeln!(s, "  admissible under alpha_bar_matching: {}", yn(b.alpha_bar_matching));
                let _ = writeln!(s, "  admissible under alpha_bar_spectral: {}", yn(b.alpha_bar_spectral));
            }
        }
        s
    }
}

pub fn bounds_from_problem(cfg: &ExperimentConfig, problem: &Problem) -> Result<BoundsOutcome, CliError> {
    let sector = link_sector(cfg, &cfg.nonlinearity.x, cfg.nonlinearity.y_link())?;
    let bounds = bounds_for(problem.network.w.base(), &problem.hessian, &sector)?;
    Ok(BoundsOutcome { sector, bounds, alpha: cfg.solver.alpha })
}

pub fn cmd_bounds(loaded: &LoadedConfig, out: Option<&Path>) -> Result<BoundsOutcome, CliError> {
    let cfg = &loaded.config;
    let base = loaded.base_dir.as_deref();
    let problem = build_problem(cfg, base)?;
    let outcome = bounds_from_problem(cfg, &problem)?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_file(&dir.join("bounds.txt"), &outcome.render())?;
    }
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Run

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub trace: Trace,
    pub dsvm: Option<DsvmReport>,
    pub bounds: BoundsOutcome,
    pub summary: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl RunOutcome {
    pub fn diverged(&self) -> bool {
        self.trace.diverged()
    }

    pub fn exit_code(&self) -> i32 {
        if self.diverged() {
            exit::DIVERGED
        } else {
            exit::OK
        }
    }
}

#[derive(Serialize)]
struct BoundsMeta {
    kappa: f64,
    upper: f64,
    gamma: f64,
    lambda_under: f64,
    lambda_max: f64,
    alpha_bar_tight: f64,
    alpha_bar_matching: f64,
    alpha_bar_spectral_log10: f64,
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'a str,
    version: &'a str,
    source: &'a str,
    seed: u64,
    status: String,
    final_time: f64,
    steps: u64,
    samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp_unix: Option<u64>,
    warnings: &'a [String],
    config_verbatim: &'a str,
    summary: &'a BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bounds: Option<BoundsMeta>,
    config: &'a ExperimentConfig,
}

fn timestamp(cfg: &ExperimentConfig) -> Option<u64> {
    cfg.outputs.timestamp.then(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    })
}

fn inf_norm(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

pub fn cmd_run(loaded: &LoadedConfig, out: &Path) -> Result<RunOutcome, CliError> {
    let cfg = &loaded.config;
    let base = loaded.base_dir.as_deref();
    ensure_dir(out)?;

    let mut summary = BTreeMap::new();
    let (trace, dsvm, bounds, optimal_cost, report_text, mut warnings) = match cfg.cost.kind {
        CostKind::Svm => {
            let setup = dsvm_setup(cfg, base)?;
            let report = dsvm_experiment(&setup)?;
            let sector = link_sector(cfg, &setup.solver.g_x, &setup.solver.g_y)?;
            let bounds = BoundsOutcome { sector, bounds: report.bounds.clone(), alpha: cfg.solver.alpha };
            summary.insert("distance_to_oracle_inf".into(), report.distance_to_oracle);
            summary.insert("consensus_accuracy".into(), report.consensus_eval.accuracy);
            summary.insert("oracle_accuracy".into(), report.oracle_eval.accuracy);
            summary.insert("oracle_objective".into(), report.oracle.objective);
            summary.insert("max_state_norm".into(), report.max_state_norm);
            let text = report.to_string();
            let warnings = report.warnings.clone();
            let cost = Some(report.oracle.objective);
            (report.trace.clone(), Some(report), bounds, cost, text, warnings)
        }
        CostKind::Quadratic => {
            let problem = build_problem(cfg, base)?;
            let bounds = bounds_from_problem(cfg, &problem)?;
            let solver = solver_config(cfg);
            let trace = integrate(&problem.network, &problem.model, &problem.x0, &solver, problem.reference.as_ref())?;
            let mut warnings = trace.warnings.clone();
            if let Some(b) = &bounds.bounds {
                if cfg.solver.alpha > b.alpha_bar_tight {
                    warnings.push(format!(
                        "alpha {} exceeds alpha_bar_tight {:.4e}",
                        cfg.solver.alpha, b.alpha_bar_tight
                    ));
                }
            }
            let optimum = problem.reference.clone().expect("quadratic optimum is closed-form");
            let dist = inf_norm(&trace.final_mean(), &optimum);
            summary.insert("distance_to_optimum_inf".into(), dist);
            let lyap = lyapunov_series(&trace, &optimum);
            summary.insert("lyapunov_max_rel_increase".into(), lyap.max_rel_increase);
            let mut text = String::new();
            let _ = writeln!(text, "status: {}", trace.status);
            let _ = writeln!(text, "final_time: {}", trace.last().t);
            let _ = writeln!(text, "final_sum_grad_norm: {:.6e}", trace.last().sum_grad_norm);
            let _ = writeln!(text, "consensus_spread: {:.6e}", trace.last().consensus_error);
            let _ = writeln!(text, "distance_to_optimum_inf: {dist:.6e}");
            let _ = writeln!(text, "optimum: {:?}", optimum.as_slice());
            let _ = write!(text, "lyapunov_max_rel_increase: {:.3e}", lyap.max_rel_increase);
            for w in &warnings {
                let _ = write!(text, "\nwarning: {w}");
            }
            (trace, None, bounds, problem.optimal_cost, text, warnings)
        }
    };
    let last = trace.last();
    summary.insert("final_sum_grad_norm".into(), last.sum_grad_norm);
    summary.insert("final_consensus_error".into(), last.consensus_error);
    summary.insert("final_cost".into(), last.cost);
    summary.insert("max_conservation_residual".into(), trace.max_conservation_residual());
    warnings.dedup();

    let csv_path = out.join("trace.csv");
    let file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    trace.write_csv(BufWriter::new(file))?;
    write_file(&out.join("report.txt"), &(report_text + "\n"))?;
    write_file(&out.join("bounds.txt"), &bounds.render())?;

    let ts = timestamp(cfg);
    let meta = Metadata {
        tool: "linkgt",
        version: env!("CARGO_PKG_VERSION"),
        source: &loaded.source_name,
        seed: cfg.seed,
        status: trace.status.to_string(),
        final_time: last.t,
        steps: trace.steps,
        samples: trace.rows.len(),
        timestamp_unix: ts,
        warnings: &warnings,
        config_verbatim: &loaded.source_text,
        summary: &summary,
        bounds: bounds.bounds.as_ref().map(|b| BoundsMeta {
            kappa: b.kappa,
            upper: b.upper,
            gamma: b.gamma,
            lambda_under: b.lambda_under,
            lambda_max: b.lambda_max,
            alpha_bar_tight: b.alpha_bar_tight,
            alpha_bar_matching: b.alpha_bar_matching,
            alpha_bar_spectral_log10: b.alpha_bar_spectral_log10,
        }),
        config: cfg,
    };
    let meta_text = toml::to_string(&meta).map_err(|e| CliError::Usage(format!("metadata: {e}")))?;
    write_file(&out.join("metadata.toml"), &meta_text)?;

    if cfg.outputs.plots {
        write_run_plots(out, &trace, optimal_cost, ts)?;
    }
    Ok(RunOutcome { out_dir: out.to_path_buf(), trace, dsvm, bounds, summary, warnings })
}

fn footer(ts: Option<u64>) -> Option<String> {
    ts.map(|t| format!("generated at unix time {t}"))
}

fn write_run_plots(out: &Path, trace: &Trace, optimal_cost: Option<f64>, ts: Option<u64>) -> Result<(), CliError> {
    let (n, m) = (trace.n, trace.m);
    let states = (0..n * m)
        .map(|j| Series {
            name: format!("x{}[{}]", j / m + 1, j % m),
            points: trace.rows.iter().map(|r| (r.t, r.x[j])).collect(),
        })
        .collect();
    let chart = LineChart {
        title: "agent states".into(),
        x_label: "t".into(),
        y_label: "x".into(),
        log_y: false,
        series: states,
        references: Vec::new(),
        footer: footer(ts),
    };
    write_file(&out.join("states.svg"), &chart.render())?;

    let chart = LineChart {
        title: "global cost F(x)".into(),
        x_label: "t".into(),
        y_label: "F".into(),
        log_y: false,
        series: vec![Series { name: "F(x)".into(), points: trace.rows.iter().map(|r| (r.t, r.cost)).collect() }],
        references: optimal_cost.map(|c| ("optimum".to_string(), c)).into_iter().collect(),
        footer: footer(ts),
    };
    write_file(&out.join("cost.svg"), &chart.render())?;

    let chart = LineChart {
        title: "optimality residual".into(),
        x_label: "t".into(),
        y_label: "|sum grad f|".into(),
        log_y: true,
        series: vec![Series {
            name: "|sum grad f|".into(),
            points: trace.rows.iter().map(|r| (r.t, r.sum_grad_norm)).collect(),
        }],
        references: Vec::new(),
        footer: footer(ts),
    };
    write_file(&out.join("sum_grad.svg"), &chart.render())
}

// ---------------------------------------------------------------------------
// Sweep

/// Stability frontier of one link-gain regime.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeFrontier {
    pub regime: String,
    pub last_stable: Option<f64>,
    pub first_unstable: Option<f64>,
    /// Refined boundary between the two grid points.
    pub bisected: Option<f64>,
}

/// Outcome of one simulated sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RunCell {
    pub alpha: f64,
    pub result: Result<(bool, f64), String>,
}

/// One `(rho, khop, eta)` combination of the sweep axes.
#[derive(Debug, Clone)]
pub struct SweepCombo {
    pub rho: Option<f64>,
    pub khop: Option<usize>,
    pub eta: f64,
    pub sector: SectorBounds,
    pub lambda_under: f64,
    pub lambda_max: f64,
    pub bounds: Option<StepSizeBounds>,
    pub table: Result<SweepTable, String>,
    pub frontiers: Vec<RegimeFrontier>,
    pub runs: Vec<RunCell>,
}

impl SweepCombo {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if let Some(r) = self.rho {
            parts.push(format!("rho={r}"));
        }
        if let Some(k) = self.khop {
            parts.push(format!("k={k}"));
        }
        parts.push(format!("eta={}", self.eta));
        parts.join(" ")
    }

    pub fn eigen_ratio(&self) -> f64 {
        self.lambda_max / self.lambda_under
    }

    pub fn alpha_bar_tight(&self) -> Option<f64> {
        self.bounds.as_ref().map(|b| b.alpha_bar_tight)
    }

    /// Smallest refined frontier over all regimes.
    pub fn frontier(&self) -> Option<f64> {
        self.frontiers.iter().filter_map(|f| f.bisected).reduce(f64::min)
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub alphas: Vec<f64>,
    pub combos: Vec<SweepCombo>,
}

impl SweepOutcome {
    /// Cells or combinations that could not be evaluated.
    pub fn failures(&self) -> usize {
        self.combos
            .iter()
            .map(|c| c.table.is_err() as usize + c.runs.iter().filter(|r| r.result.is_err()).count())
            .sum()
    }

    /// Spectral cells strictly below the tight bound that are unstable.
    pub fn unstable_below_tight(&self) -> usize {
        self.combos
            .iter()
            .filter_map(|c| Some((c.alpha_bar_tight()?, c.table.as_ref().ok()?)))
            .map(|(bar, t)| t.cells.iter().filter(|cell| cell.alpha < bar && !cell.stable).count())
            .sum()
    }
}

pub fn sweep_alphas(cfg: &ExperimentConfig) -> Vec<f64> {
    let mut alphas = cfg.sweep.alpha.clone();
    if let Some(r) = cfg.sweep.alpha_range {
        alphas.extend(log_grid(r.lo, r.hi, r.points));
    }
    if alphas.is_empty() {
        alphas.push(cfg.solver.alpha);
    }
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    alphas
}

fn frontiers(fixture: &SweepFixture, table: &SweepTable, regimes: &[linkgt::spectral::XiRegime], refine: usize) -> Result<Vec<RegimeFrontier>, SpectralError> {
    regimes
        .iter()
        .map(|r| {
            let f = table.frontier(&r.name).expect("one frontier per regime");
            let bisected = match (f.last_stable, f.first_unstable) {
                (Some(lo), Some(hi)) => Some(bisect_frontier(fixture, r, lo, hi, refine)?),
                _ => None,
            };
            Ok(RegimeFrontier {
                regime: r.name.clone(),
                last_stable: f.last_stable,
                first_unstable: f.first_unstable,
                bisected,
            })
        })
        .collect()
}

fn simulate_cells(
    problem: &Problem,
    network: &Network,
    solver: &SolverConfig,
    alphas: &[f64],
    jobs: usize,
) -> Vec<RunCell> {
    let jobs = jobs.clamp(1, alphas.len().max(1));
    let chunk = alphas.len().div_ceil(jobs).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = alphas
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|&alpha| {
                            let cfg = SolverConfig { alpha, ..solver.clone() };
                            let result = integrate(network, &problem.model, &problem.x0, &cfg, problem.reference.as_ref())
                                .map(|t| (t.diverged(), t.last().sum_grad_norm))
                                .map_err(|e| e.to_string());
                            RunCell { alpha, result }
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("sweep worker panicked")).collect()
    })
}

/// Evaluates the sweep without writing anything.
pub fn sweep_study(cfg: &ExperimentConfig, base_dir: Option<&Path>, jobs: usize) -> Result<SweepOutcome, CliError> {
    let problem = build_problem(cfg, base_dir)?;
    let alphas = sweep_alphas(cfg);
    let rhos: Vec<Option<f64>> = if cfg.sweep.rho.is_empty() { vec![None] } else { cfg.sweep.rho.iter().map(|&r| Some(r)).collect() };
    let khops: Vec<Option<usize>> = if cfg.sweep.khop.is_empty() { vec![None] } else { cfg.sweep.khop.iter().map(|&k| Some(k)).collect() };
    let etas = if cfg.sweep.eta.is_empty() { vec![cfg.solver.eta] } else { cfg.sweep.eta.clone() };
    let n = cfg.n_agents();
    let m = problem.model.m();

    let mut combos = Vec::new();
    for &rho in &rhos {
        let (gx, gy) = match rho {
            Some(rho) => (LinkNonlinearity::LogQuantizer { rho }, LinkNonlinearity::LogQuantizer { rho }),
            None => (cfg.nonlinearity.x.clone(), cfg.nonlinearity.y_link().clone()),
        };
        let sector = link_sector(cfg, &gx, &gy)?;
        for &khop in &khops {
            let graph = match khop {
                Some(k) => make_khop_ring(n, k, cfg.network.total_weight)?,
                None => base_graph(cfg, base_dir)?,
            };
            let l = laplacian(&graph);
            let (lambda_under, lambda_max) = laplacian_extremes(l.matrix(), l.matrix())?;
            let bounds = bounds_for(&graph, &problem.hessian, &sector)?;
            let network = schedule(cfg, graph)?;
            for &eta in &etas {
                let fixture = SweepFixture { w: l.clone(), a: l.clone(), hessian: problem.hessian.clone(), m, eta: Some(eta) };
                let regimes = standard_regimes(sector.kappa, sector.upper, 2 * n * m, cfg.seed);
                let (table, fronts) = match stability_sweep(&fixture, &alphas, &regimes, jobs) {
                    Ok(t) => {
                        let f = frontiers(&fixture, &t, &regimes, cfg.sweep.refine).unwrap_or_default();
                        (Ok(t), f)
                    }
                    Err(e) => {
                        log::warn!("sweep cell rho={rho:?} k={khop:?} eta={eta} failed: {e}");
                        (Err(e.to_string()), Vec::new())
                    }
                };
                let runs = if cfg.sweep.mode == SweepMode::Runs {
                    let solver = SolverConfig { eta, g_x: gx.clone(), g_y: gy.clone(), ..solver_config(cfg) };
                    simulate_cells(&problem, &network, &solver, &alphas, jobs)
                } else {
                    Vec::new()
                };
                combos.push(SweepCombo {
                    rho,
                    khop,
                    eta,
                    sector,
                    lambda_under,
                    lambda_max,
                    bounds: bounds.clone(),
                    table,
                    frontiers: fronts,
                    runs,
                });
            }
        }
    }
    Ok(SweepOutcome { alphas, combos })
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn opt_e(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v:.12e}"))
}

pub fn sweep_csv(outcome: &SweepOutcome) -> String {
    let mut s = String::from(
        "rho,khop,eta,alpha,xi_regime,zero_count,max_nonzero_real,continuous_stable,euler_radius,stable,below_tight_bound,error\n",
    );
    for c in &outcome.combos {
        let bar = c.alpha_bar_tight();
        let prefix = format!("{},{},{}", opt(c.rho), opt(c.khop), c.eta);
        match &c.table {
            Ok(t) => {
                for cell in &t.cells {
                    let _ = writeln!(
                        s,
                        "{prefix},{:.12e},{},{},{:.12e},{},{},{},{},",
                        cell.alpha,
                        cell.regime,
                        cell.zero_count,
                        cell.max_nonzero_real,
                        cell.continuous_stable,
                        opt_e(cell.euler_radius),
                        cell.stable,
                        opt(bar.map(|b| cell.alpha < b)),
                    );
                }
            }
            Err(e) => {
                for &a in &outcome.alphas {
                    let _ = writeln!(s, "{prefix},{a:.12e},,,,,,,,{}", e.replace(',', ";"));
                }
            }
        }
    }
    s
}

pub fn runs_csv(outcome: &SweepOutcome) -> String {
    let mut s = String::from("rho,khop,eta,alpha,diverged,final_sum_grad_norm,error\n");
    for c in &outcome.combos {
        for r in &c.runs {
            let prefix = format!("{},{},{},{:.12e}", opt(c.rho), opt(c.khop), c.eta, r.alpha);
            match &r.result {
                Ok((div, g)) => {
                    let _ = writeln!(s, "{prefix},{div},{g:.12e},");
                }
                Err(e) => {
                    let _ = writeln!(s, "{prefix},,,{}", e.replace(',', ";"));
                }
            }
        }
    }
    s
}

pub fn frontiers_csv(outcome: &SweepOutcome) -> String {
    let mut s = String::from(
        "rho,khop,eta,xi_regime,kappa,upper,sector_ratio,eigen_ratio,alpha_bar_tight,last_stable,first_unstable,bisected\n",
    );
    for c in &outcome.combos {
        for f in &c.frontiers {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.12e},{:.12e},{:.12e},{:.12e},{},{},{},{}",
                opt(c.rho),
                opt(c.khop),
                c.eta,
                f.regime,
                c.sector.kappa,
                c.sector.upper,
                c.sector.ratio(),
                c.eigen_ratio(),
                opt_e(c.alpha_bar_tight()),
                opt_e(f.last_stable),
                opt_e(f.first_unstable),
                opt_e(f.bisected),
            );
        }
    }
    s
}

pub fn sweep_summary(outcome: &SweepOutcome) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} alpha values in [{:.3e}, {:.3e}], {} combinations",
        outcome.alphas.len(),
        outcome.alphas.first().copied().unwrap_or(f64::NAN),
        outcome.alphas.last().copied().unwrap_or(f64::NAN),
        outcome.combos.len()
    );
    for c in &outcome.combos {
        let _ = write!(
            s,
            "{:<24} ratio {:>8.4}  eigen_ratio {:>8.4}  alpha_bar_tight {:>12}  frontier {:>12}",
            c.label(),
            c.sector.ratio(),
            c.eigen_ratio(),
            c.alpha_bar_tight().map_or("n/a".into(), |v| format!("{v:.5e}")),
            c.frontier().map_or("n/a".into(), |v| format!("{v:.5e}")),
        );
        if !c.runs.is_empty() {
            let div = c.runs.iter().filter(|r| matches!(r.result, Ok((true, _)))).count();
            let _ = write!(s, "  runs diverged {div}/{}", c.runs.len());
        }
        if let Err(e) = &c.table {
            let _ = write!(s, "  FAILED: {e}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "unstable cells below alpha_bar_tight: {}", outcome.unstable_below_tight());
    let _ = write!(s, "failed cells: {}", outcome.failures());
    s
}

fn heat_map(outcome: &SweepOutcome, ts: Option<u64>) -> HeatMap {
    let cells = outcome
        .combos
        .iter()
        .map(|c| match &c.table {
            Err(_) => vec![None; outcome.alphas.len()],
            Ok(t) => outcome
                .alphas
                .iter()
                .map(|&a| {
                    let row: Vec<_> = t.cells.iter().filter(|cell| cell.alpha == a).collect();
                    if row.is_empty() {
                        None
                    } else {
                        Some(row.iter().filter(|cell| cell.stable).count() as f64 / row.len() as f64)
                    }
                })
                .collect(),
        })
        .collect();
    HeatMap {
        title: "stable fraction over link-gain regimes".into(),
        row_labels: outcome.combos.iter().map(SweepCombo::label).collect(),
        col_values: outcome.alphas.clone(),
        cells,
        markers: outcome.combos.iter().map(SweepCombo::alpha_bar_tight).collect(),
        footer: footer(ts),
    }
}

pub fn cmd_sweep(loaded: &LoadedConfig, out: &Path, jobs: usize) -> Result<SweepOutcome, CliError> {
    let cfg = &loaded.config;
    let outcome = sweep_study(cfg, loaded.base_dir.as_deref(), jobs)?;
    ensure_dir(out)?;
    write_file(&out.join("sweep.csv"), &sweep_csv(&outcome))?;
    write_file(&out.join("frontiers.csv"), &frontiers_csv(&outcome))?;
    if cfg.sweep.mode == SweepMode::Runs {
        write_file(&out.join("runs.csv"), &runs_csv(&outcome))?;
    }
    write_file(&out.join("summary.txt"), &(sweep_summary(&outcome) + "\n"))?;
    write_file(&out.join("config.toml"), &loaded.source_text)?;
    if cfg.outputs.plots {
        write_file(&out.join("heatmap.svg"), &heat_map(&outcome, timestamp(cfg)).render())?;
    }
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Verify

pub fn cmd_verify(seed: Option<u64>, inject_fault: bool) -> Vec<SuiteResult> {
    let mut opts = VerifyOptions::default();
    if let Some(s) = seed {
        opts.seed = s;
    }
    if inject_fault {
        opts.mutation = Some(Mutation::NegatedGradientFeed);
    }
    run_verify(&opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_config() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            r#"
seed = 3
[partition]
agents = 4
[network]
topology = "ring"
hops = 1
switching = "fixed"
[cost]
kind = "quadratic"
dim = 2
[solver]
alpha = 0.2
eta = 0.05
t_end = 5.0
integrator = "euler"
sample_stride = 5
"#,
        )
        .unwrap()
    }

    #[test]
    fn quadratic_optimum_zeroes_the_gradient_sum() {
        let cfg = quad_config();
        let p = build_problem(&cfg, None).unwrap();
        let x = stacked(p.reference.as_ref().unwrap(), 4);
        assert!(p.model.sum_gradient(&x).unwrap().amax() < 1e-12);
    }

    #[test]
    fn empty_axes_give_one_cell() {
        let cfg = quad_config();
        let out = sweep_study(&cfg, None, 1).unwrap();
        assert_eq!(out.alphas, vec![0.2]);
        assert_eq!(out.combos.len(), 1);
        assert_eq!(out.combos[0].table.as_ref().unwrap().cells.len(), 4);
    }

    #[test]
    fn uniform_quantizer_has_no_bounds() {
        let mut cfg = quad_config();
        cfg.nonlinearity.x = LinkNonlinearity::UniformQuantizer { rho: 1.0 };
        let p = build_problem(&cfg, None).unwrap();
        let b = bounds_from_problem(&cfg, &p).unwrap();
        assert!(b.bounds.is_none());
        assert!(b.render().contains("unavailable"));
    }
}
