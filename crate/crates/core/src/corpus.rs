//! Seeded fixtures shared by the acceptance tests and the `verify` command,
//! plus the invariant suites built on them.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost::{CostModel, HessianAggregate, LocalCost, QuadraticCost, SvmHingeCost};
use crate::engine::{derivative, integrate, Integrator, Network, SolverConfig, Trace};
use crate::graph::{
    check_weight_balanced, laplacian, make_directed_circulant, make_khop_ring, Laplacian,
    SwitchMode, SwitchingSchedule, WeightedGraph,
};
use crate::linalg::general_eigenvalues;
use crate::nonlinear::{
    sector_bounds, verify_sector_properties, Interval, LinkGainSnapshot, LinkNonlinearity, SectorMode,
};
use crate::spectral::{
    alpha_bar_tight, assemble, eigen_derivative_check, laplacian_extremes, linear_system_matrix,
    matching_distance, spectral_report, SpectralError, SystemMatrices,
};

/// Deliberate assembly faults for testing the tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    /// Flips the sign of the `H x'` feed in the tracker equation, i.e.
    /// `y' = A g(y) - H x'`.
    NegatedGradientFeed,
}

impl Mutation {
    pub fn apply(&self, mats: &SystemMatrices) -> SystemMatrices {
        let nm = mats.n() * mats.m;
        let mut out = mats.clone();
        match self {
            Mutation::NegatedGradientFeed => {
                let hw = -mats.mg0.view((nm, 0), (nm, nm)).clone_owned();
                out.mg0.view_mut((nm, 0), (nm, nm)).copy_from(&hw);
                let h = -mats.m1.view((nm, nm), (nm, nm)).clone_owned();
                out.m1.view_mut((nm, nm), (nm, nm)).copy_from(&h);
                out.mg = &out.mg0 + &out.m1 * mats.alpha;
            }
        }
        out
    }
}

/// Random weight-balanced, strongly connected digraph: a positive
/// combination of permutation matrices that always includes an `n`-cycle.
pub fn random_balanced_graph(n: usize, rng: &mut ChaCha8Rng) -> WeightedGraph {
    let total = rng.gen_range(0.3..0.95);
    let extra = rng.gen_range(0..=3usize);
    let mut shares: Vec<f64> = (0..=extra).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = shares.iter().sum();
    shares.iter_mut().for_each(|v| *v *= total / s);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut w = DMatrix::zeros(n, n);
    for k in 0..n {
        w[(order[(k + 1) % n], order[k])] += shares[0];
    }
    for &c in &shares[1..] {
        // Derangement by rejection; n >= 3 keeps this cheap.
        let perm = loop {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(rng);
            if p.iter().enumerate().all(|(i, &j)| i != j) {
                break p;
            }
        };
        for (i, &j) in perm.iter().enumerate() {
            w[(i, j)] += c;
        }
    }
    WeightedGraph::new(w).expect("derangements leave the diagonal empty")
}

/// Random symmetric positive definite `m x m` block.
pub fn random_spd(m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(m, m) * rng.gen_range(0.2..2.0)
}

/// One randomized instance for the zero-eigenvalue check.
#[derive(Debug, Clone)]
pub struct StabilityFixture {
    pub id: usize,
    pub w: Laplacian,
    pub a: Laplacian,
    pub hessian: HessianAggregate,
    pub xi: LinkGainSnapshot,
    pub kappa: f64,
    pub upper: f64,
    pub alpha: f64,
    pub alpha_bar_tight: f64,
    pub m: usize,
}

impl StabilityFixture {
    pub fn n(&self) -> usize {
        self.w.n()
    }

    pub fn assemble(&self) -> Result<SystemMatrices, SpectralError> {
        assemble(&self.w, &self.a, &self.hessian, &self.xi, self.alpha, self.m)
    }
}

/// `count` fixtures with `n` in 3..=8, `m` in {1, 2}, sector bounds of a
/// log quantizer with random level, constant gains drawn in
/// `[kappa, upper]`, and `alpha` below the tight bound.
pub fn stability_fixtures(count: usize, seed: u64) -> Result<Vec<StabilityFixture>, SpectralError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for id in 0..count {
        let n = rng.gen_range(3..=8usize);
        let m = rng.gen_range(1..=2usize);
        let g = random_balanced_graph(n, &mut rng);
        let w = laplacian(&g);
        let blocks: Vec<_> = (0..n).map(|_| random_spd(m, &mut rng)).collect();
        let hessian = HessianAggregate::from_blocks(blocks);
        let rho = rng.gen_range(0.25..1.6);
        let b = sector_bounds(
            &LinkNonlinearity::LogQuantizer { rho },
            Interval::unbounded(),
            SectorMode::Linearized,
        )
        .expect("rho < 2");
        let xi = DVector::from_fn(2 * n * m, |_, _| rng.gen_range(b.kappa..=b.upper));
        let (lambda_under, _) = laplacian_extremes(w.matrix(), w.matrix())?;
        let bar = alpha_bar_tight(b.kappa, b.upper, hessian.gamma(), lambda_under);
        let alpha = bar * rng.gen_range(0.05..0.95);
        out.push(StabilityFixture {
            id,
            a: w.clone(),
            w,
            hessian,
            xi: LinkGainSnapshot { xi },
            kappa: b.kappa,
            upper: b.upper,
            alpha,
            alpha_bar_tight: bar,
            m,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict {
    pub id: usize,
    pub n: usize,
    pub m: usize,
    pub zero_count: usize,
    pub max_nonzero_real: f64,
    pub passed: bool,
}

/// Exactly `m` eigenvalues within `1e-8 max|lambda|` of zero and every
/// other real part negative.
pub fn check_stability(
    fx: &StabilityFixture,
    mutation: Option<Mutation>,
) -> Result<StabilityVerdict, SpectralError> {
    let mut mats = fx.assemble()?;
    if let Some(mu) = mutation {
        mats = mu.apply(&mats);
    }
    let rep = spectral_report(&mats, None)?;
    Ok(StabilityVerdict {
        id: fx.id,
        n: fx.n(),
        m: fx.m,
        zero_count: rep.zero_count,
        max_nonzero_real: rep.max_nonzero_real,
        passed: rep.zero_count == fx.m && rep.max_nonzero_real < 0.0,
    })
}

/// Quadratic consensus problem with a closed-form optimum.
#[derive(Debug, Clone)]
pub struct QuadraticFixture {
    pub name: String,
    pub model: CostModel,
    pub network: Network,
    pub hessian: HessianAggregate,
    pub x0: DVector<f64>,
    pub optimum: DVector<f64>,
    pub alpha: f64,
    pub alpha_bar_tight: f64,
}

impl QuadraticFixture {
    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn m(&self) -> usize {
        self.model.m()
    }

    /// Laplacian of the topology active at time zero.
    pub fn laplacian(&self) -> Laplacian {
        laplacian(&self.network.w.graph_at(0.0))
    }

    /// Linear system matrix `M` at the fixture's step size.
    pub fn system_matrix(&self) -> Result<DMatrix<f64>, SpectralError> {
        let l = self.laplacian();
        linear_system_matrix(&l, &l, &self.hessian, self.alpha, self.m())
    }

    pub fn system(&self) -> Result<SystemMatrices, SpectralError> {
        let l = self.laplacian();
        let xi = LinkGainSnapshot::uniform(2 * self.n() * self.m(), 1.0);
        assemble(&l, &l, &self.hessian, &xi, self.alpha, self.m())
    }
}

fn quadratic(
    name: &str,
    graph: WeightedGraph,
    switching: Option<f64>,
    m: usize,
    alpha_share: f64,
    rng: &mut ChaCha8Rng,
) -> QuadraticFixture {
    let n = graph.n();
    let qs: Vec<DMatrix<f64>> = (0..n).map(|_| random_spd(m, rng)).collect();
    let centers: Vec<DVector<f64>> = (0..n)
        .map(|_| DVector::from_fn(m, |_, _| rng.gen_range(-3.0..3.0)))
        .collect();
    // x* = (sum Q_i)^{-1} sum Q_i b_i
    let q_sum = qs.iter().fold(DMatrix::zeros(m, m), |acc, q| acc + q);
    let rhs = qs
        .iter()
        .zip(&centers)
        .fold(DVector::zeros(m), |acc, (q, b)| acc + q * b);
    let optimum = q_sum.cholesky().expect("sum of SPD blocks").solve(&rhs);
    let agents: Vec<Arc<dyn LocalCost>> = qs
        .iter()
        .zip(&centers)
        .map(|(q, b)| {
            Arc::new(QuadraticCost::new(q.clone(), b.clone()).expect("SPD by construction"))
                as Arc<dyn LocalCost>
        })
        .collect();
    let hessian = HessianAggregate::from_blocks(qs);
    let l = laplacian(&graph);
    let (lambda_under, _) = laplacian_extremes(l.matrix(), l.matrix()).expect("small matrix");
    let bar = alpha_bar_tight(1.0, 1.0, hessian.gamma(), lambda_under);
    let schedule = match switching {
        Some(period) => SwitchingSchedule::new(graph, period, 11, SwitchMode::Permute),
        None => SwitchingSchedule::fixed(graph),
    }
    .expect("valid generated graph");
    QuadraticFixture {
        name: name.to_string(),
        model: CostModel::new(agents).expect("uniform dimensions"),
        network: Network::shared(schedule),
        hessian,
        x0: DVector::from_fn(n * m, |_, _| rng.gen_range(-2.0..2.0)),
        optimum,
        alpha: bar * alpha_share,
        alpha_bar_tight: bar,
    }
}

/// Fixed family of quadratic fixtures: undirected rings, a directed
/// circulant, a random balanced digraph, and one switching network.
pub fn quadratic_fixtures(seed: u64) -> Vec<QuadraticFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_graph = random_balanced_graph(6, &mut rng);
    vec![
        quadratic("ring5-m1", make_khop_ring(5, 1, 0.6).unwrap(), None, 1, 0.5, &mut rng),
        quadratic("ring8-k2-m2", make_khop_ring(8, 2, 0.8).unwrap(), None, 2, 0.7, &mut rng),
        quadratic(
            "circulant6-m2",
            make_directed_circulant(6, 2, 0.8).unwrap(),
            None,
            2,
            0.5,
            &mut rng,
        ),
        quadratic("random6-m1", random_graph, None, 1, 0.8, &mut rng),
        quadratic(
            "switching5-m2",
            make_khop_ring(5, 1, 0.6).unwrap(),
            Some(0.5),
            2,
            0.5,
            &mut rng,
        ),
    ]
}

/// Five agents with smoothed-hinge costs on scalar features (`m = 2`), a
/// smooth non-quadratic problem for integrator-order studies.
pub fn hinge_fixture(seed: u64) -> (CostModel, Network, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agents: Vec<Arc<dyn LocalCost>> = (0..5)
        .map(|_| {
            let k = 6;
            let feats: Vec<Vec<f64>> = (0..k).map(|_| vec![rng.gen_range(-2.0..2.0)]).collect();
            let labels: Vec<f64> = feats
                .iter()
                .map(|f| if f[0] + rng.gen_range(-0.5..0.5) > 0.3 { 1.0 } else { -1.0 })
                .collect();
            Arc::new(SvmHingeCost::new(1, feats, labels, 2.0, 1.0, 0.1).expect("valid data"))
                as Arc<dyn LocalCost>
        })
        .collect();
    let model = CostModel::new(agents).expect("uniform dimensions");
    let net = Network::shared(SwitchingSchedule::fixed(make_khop_ring(5, 1, 0.6).unwrap()).unwrap());
    let x0 = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
    (model, net, x0)
}

/// Max conservation residual of one run.
pub fn conservation_run(
    model: &CostModel,
    net: &Network,
    x0: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<Trace, crate::engine::EngineError> {
    integrate(net, model, x0, cfg, None)
}

/// Central-difference gradient and Hessian errors of a local cost, relative
/// to `max(1, |analytic|)`.
pub fn derivative_errors(f: &dyn LocalCost, x: &[f64]) -> (f64, f64) {
    let m = f.dim();
    let h = 1e-5;
    let g = f.gradient(x);
    let hs = f.hessian(x);
    let mut ge: f64 = 0.0;
    let mut he: f64 = 0.0;
    for k in 0..m {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[k] += h;
        xm[k] -= h;
        let fd = (f.value(&xp) - f.value(&xm)) / (2.0 * h);
        ge = ge.max((fd - g[k]).abs() / g[k].abs().max(1.0));
        let dg = (f.gradient(&xp) - f.gradient(&xm)) / (2.0 * h);
        for r in 0..m {
            he = he.max((dg[r] - hs[(r, k)]).abs() / hs[(r, k)].abs().max(1.0));
        }
    }
    (ge, he)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: usize,
    pub failed: usize,
    pub failures: Vec<String>,
}

impl SuiteResult {
    fn new(name: &'static str) -> Self {
        Self { name, passed: 0, failed: 0, failures: Vec::new() }
    }

    fn check(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
            self.failures.push(detail());
        }
    }

    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<20} {} passed, {} failed",
            self.name, self.passed, self.failed
        )?;
        for d in &self.failures {
            write!(f, "\n  - {d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub stability_fixtures: usize,
    pub mutation: Option<Mutation>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 2024, stability_fixtures: 200, mutation: None }
    }
}

fn graph_suite(seed: u64) -> SuiteResult {
    let mut s = SuiteResult::new("graph");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..50 {
        let n = rng.gen_range(3..=9);
        let g = random_balanced_graph(n, &mut rng);
        s.check(g.validate().is_ok(), || format!("random graph {t} failed validation"));
        let l = laplacian(&g);
        let rows = l.matrix().column_sum().amax().max(l.matrix().row_sum().amax());
        s.check(rows < 1e-12, || format!("graph {t}: Laplacian sums {rows:e}"));
        let ev = general_eigenvalues(l.matrix()).unwrap_or_default();
        let worst = ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        s.check(worst < 1e-10, || format!("graph {t}: eigenvalue with Re {worst:e}"));
        let perm = {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng);
            p
        };
        let pg = g.permuted(&perm);
        s.check(check_weight_balanced(&pg, 1e-12).balanced, || {
            format!("graph {t}: permutation broke balance")
        });
    }
    // Circulant closed form: lambda_j = sum_d w (2 cos(2 pi j d / n) - 2).
    for (n, k) in [(5, 1), (8, 2), (9, 3), (12, 4)] {
        let tw = 0.8;
        let g = make_khop_ring(n, k, tw).unwrap();
        let w = tw / (2 * k) as f64;
        let mut expected: Vec<f64> = (0..n)
            .map(|j| {
                (1..=k)
                    .map(|d| {
                        w * (2.0 * (2.0 * std::f64::consts::PI * (j * d) as f64 / n as f64).cos()
                            - 2.0)
                    })
                    .sum()
            })
            .collect();
        expected.sort_by(f64::total_cmp);
        let mut got: Vec<f64> = general_eigenvalues(laplacian(&g).matrix())
            .unwrap_or_default()
            .iter()
            .map(|z| z.re)
            .collect();
        got.sort_by(f64::total_cmp);
        let err = expected
            .iter()
            .zip(&got)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        s.check(got.len() == n && err < 1e-12, || {
            format!("ring n={n} k={k}: spectrum off by {err:e}")
        });
    }
    s
}

fn nonlinear_suite(seed: u64) -> SuiteResult {
    let mut s = SuiteResult::new("nonlinearity");
    for (rho, ratio) in [(1.6, 9.0), (1.0, 3.0), (0.25, 9.0 / 7.0)] {
        let b = sector_bounds(
            &LinkNonlinearity::LogQuantizer { rho },
            Interval::unbounded(),
            SectorMode::Linearized,
        )
        .unwrap();
        s.check((b.ratio() - ratio).abs() <= 1e-12 * ratio, || {
            format!("log rho={rho}: ratio {} != {ratio}", b.ratio())
        });
    }
    let cases = [
        (LinkNonlinearity::Identity, Interval::unbounded(), SectorMode::Linearized),
        (LinkNonlinearity::LogQuantizer { rho: 1.0 }, Interval::unbounded(), SectorMode::Tight),
        (LinkNonlinearity::LogQuantizer { rho: 0.25 }, Interval::unbounded(), SectorMode::Tight),
        (
            LinkNonlinearity::Saturation { limit: 2.0 },
            Interval::symmetric(10.0).unwrap(),
            SectorMode::Linearized,
        ),
        (
            LinkNonlinearity::Composite {
                stages: vec![
                    LinkNonlinearity::LogQuantizer { rho: 0.5 },
                    LinkNonlinearity::Saturation { limit: 3.0 },
                ],
            },
            Interval::symmetric(5.0).unwrap(),
            SectorMode::Tight,
        ),
    ];
    for (k, (g, dom, mode)) in cases.iter().enumerate() {
        let b = sector_bounds(g, *dom, *mode).unwrap();
        let rep = verify_sector_properties(g, &b, 4000, seed + k as u64);
        s.check(rep.all_passed(), || format!("{g}: {rep}"));
    }
    let uni = LinkNonlinearity::UniformQuantizer { rho: 1.0 };
    let b = sector_bounds(&uni, Interval::unbounded(), SectorMode::Linearized).unwrap();
    s.check(!b.strongly_sign_preserving, || "uniform quantizer flagged strongly sign-preserving".into());
    s
}

fn cost_suite(seed: u64) -> SuiteResult {
    let mut s = SuiteResult::new("cost-derivatives");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hinge, _, _) = hinge_fixture(seed);
    for t in 0..40 {
        let m = rng.gen_range(1..=3);
        let q = QuadraticCost::new(
            random_spd(m, &mut rng),
            DVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0)),
        )
        .unwrap();
        let x: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (ge, he) = derivative_errors(&q, &x);
        s.check(ge < 1e-6 && he < 1e-6, || format!("quadratic {t}: errors {ge:e} {he:e}"));
        let agent = hinge.agent(t % hinge.n());
        let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (ge, he) = derivative_errors(agent, &x);
        s.check(ge < 1e-6 && he < 1e-6, || format!("hinge {t}: errors {ge:e} {he:e}"));
    }
    s
}

fn stability_suite(opts: &VerifyOptions) -> SuiteResult {
    let mut s = SuiteResult::new("zero-eigenvalue");
    match stability_fixtures(opts.stability_fixtures, opts.seed) {
        Ok(fixtures) => {
            for fx in &fixtures {
                match check_stability(fx, opts.mutation) {
                    Ok(v) => s.check(v.passed, || {
                        format!(
                            "fixture {} (n={}, m={}): {} zero eigenvalues, max Re {:e}",
                            v.id, v.n, v.m, v.zero_count, v.max_nonzero_real
                        )
                    }),
                    Err(e) => s.check(false, || format!("fixture {}: {e}", fx.id)),
                }
            }
        }
        Err(e) => s.check(false, || format!("fixture generation: {e}")),
    }
    s
}

fn eigen_derivative_suite(opts: &VerifyOptions) -> SuiteResult {
    let mut s = SuiteResult::new("eigen-derivative");
    let fixtures = stability_fixtures(opts.stability_fixtures.min(50), opts.seed).unwrap_or_default();
    for fx in &fixtures {
        let res = fx.assemble().and_then(|mut mats| {
            if let Some(mu) = opts.mutation {
                mats = mu.apply(&mats);
            }
            eigen_derivative_check(&mats, 1e-6)
        });
        match res {
            Ok(r) => s.check(r.passed(1e-4), || {
                format!("fixture {}: relative error {:e}", fx.id, r.max_rel_error)
            }),
            Err(e) => s.check(false, || format!("fixture {}: {e}", fx.id)),
        }
    }
    s
}

fn oracle_suite(seed: u64) -> SuiteResult {
    let mut s = SuiteResult::new("linear-oracle");
    for fx in quadratic_fixtures(seed) {
        let err = euler_oracle_error(&fx);
        s.check(err.is_some_and(|e| e <= 1e-12), || {
            format!("{}: Euler step vs (I + eta M) differs by {err:?}", fx.name)
        });
    }
    s
}

/// Max deviation between one engine Euler step from a random state and
/// `(I + eta M) [x; y]`.
pub fn euler_oracle_error(fx: &QuadraticFixture) -> Option<f64> {
    let (n, m) = (fx.n(), fx.m());
    let eta = 0.01;
    let cfg = SolverConfig::new(fx.alpha, eta, eta);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let x = DVector::from_fn(n * m, |_, _| rng.gen_range(-2.0..2.0));
    let y = DVector::from_fn(n * m, |_, _| rng.gen_range(-2.0..2.0));
    let (w, a) = fx.network.laplacians_for_step(0, eta);
    let (dx, dy) = derivative(&x, &y, &w, &a, &fx.model, &cfg);
    let mut z = DVector::zeros(2 * n * m);
    z.rows_mut(0, n * m).copy_from(&x);
    z.rows_mut(n * m, n * m).copy_from(&y);
    let mut step = z.clone();
    step.rows_mut(0, n * m).axpy(eta, &dx, 1.0);
    step.rows_mut(n * m, n * m).axpy(eta, &dy, 1.0);
    let mmat = fx.system_matrix().ok()?;
    let oracle = &z + &mmat * &z * eta;
    Some((step - oracle).amax())
}

/// Residual growth across step halvings for one integrator and link map.
#[derive(Debug, Clone, PartialEq)]
pub struct ConservationStudy {
    pub integrator: Integrator,
    pub link: LinkNonlinearity,
    pub etas: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl ConservationStudy {
    pub fn ratios(&self) -> Vec<f64> {
        self.residuals.windows(2).map(|w| w[0] / w[1]).collect()
    }
}

pub fn conservation_study(
    model: &CostModel,
    net: &Network,
    x0: &DVector<f64>,
    alpha: f64,
    t_end: f64,
    integrator: Integrator,
    link: LinkNonlinearity,
    etas: &[f64],
) -> Result<ConservationStudy, crate::engine::EngineError> {
    let mut residuals = Vec::with_capacity(etas.len());
    for &eta in etas {
        let mut cfg = SolverConfig::new(alpha, eta, t_end);
        cfg.integrator = integrator;
        cfg.g_x = link.clone();
        cfg.g_y = link.clone();
        cfg.sample_stride = 1;
        residuals.push(conservation_run(model, net, x0, &cfg)?.max_conservation_residual());
    }
    Ok(ConservationStudy { integrator, link, etas: etas.to_vec(), residuals })
}

fn conservation_suite(seed: u64) -> SuiteResult {
    let mut s = SuiteResult::new("conservation");
    let fx = &quadratic_fixtures(seed)[0];
    for link in [LinkNonlinearity::Identity, LinkNonlinearity::LogQuantizer { rho: 1.0 }] {
        let mut cfg = SolverConfig::new(fx.alpha, 0.01, 10.0);
        cfg.g_x = link.clone();
        cfg.g_y = link.clone();
        match integrate(&fx.network, &fx.model, &fx.x0, &cfg, None) {
            Ok(tr) => {
                let r = tr.max_conservation_residual();
                s.check(r <= 1e-10, || format!("quadratic {link}: residual {r:e}"))
            }
            Err(e) => s.check(false, || format!("quadratic {link}: {e}")),
        }
    }
    let (model, net, x0) = hinge_fixture(seed);
    for link in [LinkNonlinearity::Identity, LinkNonlinearity::LogQuantizer { rho: 1.0 }] {
        match conservation_study(&model, &net, &x0, 0.2, 5.0, Integrator::Euler, link.clone(), &[0.02, 0.01]) {
            Ok(st) => {
                let r = st.ratios()[0];
                s.check((1.7..=2.3).contains(&r), || format!("hinge Euler {link}: halving ratio {r}"))
            }
            Err(e) => s.check(false, || format!("hinge {link}: {e}")),
        }
    }
    s
}

fn matching_suite(seed: u64) -> SuiteResult {
    let mut s = SuiteResult::new("matching-distance");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spectrum = |rng: &mut ChaCha8Rng, k: usize| -> Vec<Complex64> {
        (0..k)
            .map(|_| Complex64::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)))
            .collect()
    };
    for t in 0..60 {
        let k = rng.gen_range(1..=8);
        let a = spectrum(&mut rng, k);
        let b = spectrum(&mut rng, k);
        let c = spectrum(&mut rng, k);
        let d = |x: &[Complex64], y: &[Complex64]| matching_distance(x, y).unwrap_or(f64::NAN);
        let mut shuffled = a.clone();
        shuffled.shuffle(&mut rng);
        s.check(d(&a, &a) == 0.0, || format!("case {t}: d(a, a) != 0"));
        s.check(d(&a, &shuffled) == 0.0, || format!("case {t}: not permutation invariant"));
        s.check(d(&a, &b) == d(&b, &a), || format!("case {t}: not symmetric"));
        s.check(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12, || {
            format!("case {t}: triangle inequality violated")
        });
    }
    s
}

/// Runs every invariant suite. Deterministic for a given seed.
pub fn run_verify(opts: &VerifyOptions) -> Vec<SuiteResult> {
    vec![
        graph_suite(opts.seed),
        nonlinear_suite(opts.seed),
        cost_suite(opts.seed),
        stability_suite(opts),
        eigen_derivative_suite(opts),
        oracle_suite(opts.seed),
        conservation_suite(opts.seed),
        matching_suite(opts.seed),
    ]
}
