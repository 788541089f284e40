//! Linearized system matrices of the gradient-tracking dynamics, their
//! spectra, step-size bounds and stability sweeps.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::cost::HessianAggregate;
use crate::graph::Laplacian;
use crate::linalg::{general_eigenvalues, kron_identity, EigenError};
use crate::nonlinear::LinkGainSnapshot;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("step size alpha must be finite and non-negative, got {0}")]
    Alpha(f64),
    #[error("link gains must be positive and finite")]
    Gains,
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("lower sector slope {kappa} exceeds upper slope {upper}")]
    SectorOrder { kappa: f64, upper: f64 },
    #[error("spectra have different sizes: {0} vs {1}")]
    Cardinality(usize, usize),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `M^0`, `M^1`, the gain-scaled `M_g^0` and `M_g = M_g^0 + alpha M^1`.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub w_bar: DMatrix<f64>,
    pub a_bar: DMatrix<f64>,
    pub hessian: HessianAggregate,
    pub xi: LinkGainSnapshot,
    pub m0: DMatrix<f64>,
    pub m1: DMatrix<f64>,
    pub mg0: DMatrix<f64>,
    pub mg: DMatrix<f64>,
    pub alpha: f64,
    pub m: usize,
}

impl SystemMatrices {
    pub fn n(&self) -> usize {
        self.w_bar.nrows()
    }

    pub fn w_equals_a(&self) -> bool {
        self.w_bar == self.a_bar
    }

    /// Same fixture at a different step size.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self, SpectralError> {
        check_alpha(alpha)?;
        let mut out = self.clone();
        out.mg = &self.mg0 + &self.m1 * alpha;
        out.alpha = alpha;
        Ok(out)
    }
}

fn check_alpha(alpha: f64) -> Result<(), SpectralError> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(SpectralError::Alpha(alpha))
    }
}

fn check_dims(
    w: &Laplacian,
    a: &Laplacian,
    h: &HessianAggregate,
    m: usize,
) -> Result<usize, SpectralError> {
    let n = w.n();
    let dim = |what, expected, got| {
        if expected == got {
            Ok(())
        } else {
            Err(SpectralError::Dimension { what, expected, got })
        }
    };
    dim("W Laplacian columns", n, w.matrix().ncols())?;
    dim("A Laplacian", n, a.n())?;
    dim("A Laplacian columns", n, a.matrix().ncols())?;
    dim("Hessian blocks", n, h.n())?;
    dim("Hessian block size", m, h.m())?;
    Ok(n)
}

/// `H X` for block-diagonal `H` without forming `H` densely.
fn block_mul(h: &HessianAggregate, x: &DMatrix<f64>) -> DMatrix<f64> {
    let m = h.m();
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for (i, b) in h.blocks().iter().enumerate() {
        out.rows_mut(i * m, m).copy_from(&(b * x.rows(i * m, m)));
    }
    out
}

fn scale_columns(x: &mut DMatrix<f64>, s: &[f64]) {
    for (j, &v) in s.iter().enumerate() {
        x.column_mut(j).scale_mut(v);
    }
}

/// The linear-link system matrix
/// `M = [[W⊗I, -alpha I], [H (W⊗I), A⊗I - alpha H]]`, built directly.
pub fn linear_system_matrix(
    w: &Laplacian,
    a: &Laplacian,
    h: &HessianAggregate,
    alpha: f64,
    m: usize,
) -> Result<DMatrix<f64>, SpectralError> {
    check_alpha(alpha)?;
    let n = check_dims(w, a, h, m)?;
    let nm = n * m;
    let wk = kron_identity(w.matrix(), m);
    let ak = kron_identity(a.matrix(), m);
    let hd = h.to_dense();
    let mut out = DMatrix::zeros(2 * nm, 2 * nm);
    out.view_mut((0, 0), (nm, nm)).copy_from(&wk);
    out.view_mut((0, nm), (nm, nm))
        .copy_from(&(DMatrix::<f64>::identity(nm, nm) * -alpha));
    out.view_mut((nm, 0), (nm, nm)).copy_from(&block_mul(h, &wk));
    out.view_mut((nm, nm), (nm, nm)).copy_from(&(ak - hd * alpha));
    Ok(out)
}

/// Assembles all system matrices. `xi` holds the `2nm` link gains, the
/// first `nm` acting on the `x` channel and the rest on `y`; they scale
/// the Laplacian columns (`W_{q,Ξ} = W_q Ξ`).
pub fn assemble(
    w: &Laplacian,
    a: &Laplacian,
    h: &HessianAggregate,
    xi: &LinkGainSnapshot,
    alpha: f64,
    m: usize,
) -> Result<SystemMatrices, SpectralError> {
    check_alpha(alpha)?;
    let n = check_dims(w, a, h, m)?;
    let nm = n * m;
    if xi.len() != 2 * nm {
        return Err(SpectralError::Dimension {
            what: "link gains",
            expected: 2 * nm,
            got: xi.len(),
        });
    }
    if xi.xi.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(SpectralError::Gains);
    }
    let wk = kron_identity(w.matrix(), m);
    let ak = kron_identity(a.matrix(), m);
    let hwk = block_mul(h, &wk);

    let mut m0 = DMatrix::zeros(2 * nm, 2 * nm);
    m0.view_mut((0, 0), (nm, nm)).copy_from(&wk);
    m0.view_mut((nm, 0), (nm, nm)).copy_from(&hwk);
    m0.view_mut((nm, nm), (nm, nm)).copy_from(&ak);

    let mut m1 = DMatrix::zeros(2 * nm, 2 * nm);
    m1.view_mut((0, nm), (nm, nm))
        .copy_from(&-DMatrix::<f64>::identity(nm, nm));
    m1.view_mut((nm, nm), (nm, nm)).copy_from(&-h.to_dense());

    let (xi_x, xi_y) = xi.xi.as_slice().split_at(nm);
    let mut wx = wk;
    let mut hwx = hwk;
    let mut ay = ak;
    scale_columns(&mut wx, xi_x);
    scale_columns(&mut hwx, xi_x);
    scale_columns(&mut ay, xi_y);
    let mut mg0 = DMatrix::zeros(2 * nm, 2 * nm);
    mg0.view_mut((0, 0), (nm, nm)).copy_from(&wx);
    mg0.view_mut((nm, 0), (nm, nm)).copy_from(&hwx);
    mg0.view_mut((nm, nm), (nm, nm)).copy_from(&ay);

    let mg = &mg0 + &m1 * alpha;
    Ok(SystemMatrices {
        w_bar: w.matrix().clone(),
        a_bar: a.matrix().clone(),
        hessian: h.clone(),
        xi: xi.clone(),
        m0,
        m1,
        mg0,
        mg,
        alpha,
        m,
    })
}

/// Relative zero tolerance used when none is given.
pub const DEFAULT_ZERO_TOL_REL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport {
    pub eigenvalues: Vec<Complex64>,
    pub zero_tol: f64,
    pub zero_count: usize,
    pub max_nonzero_real: f64,
    pub lambda_under: f64,
    pub lambda_max: f64,
    pub m: usize,
    pub stable: bool,
}

impl SpectralReport {
    fn nonzero(&self) -> impl Iterator<Item = &Complex64> {
        self.eigenvalues.iter().filter(|l| l.norm() > self.zero_tol)
    }

    /// Spectral radius of the forward-Euler map `I + eta M_g` restricted to
    /// the non-zero eigenvalues.
    pub fn euler_radius(&self, eta: f64) -> f64 {
        self.nonzero()
            .map(|l| (Complex64::new(1.0, 0.0) + l * eta).norm())
            .fold(0.0, f64::max)
    }

    pub fn euler_stable(&self, eta: f64) -> bool {
        self.zero_count == self.m && self.euler_radius(eta) < 1.0
    }

    pub fn eigen_ratio(&self) -> f64 {
        self.lambda_max / self.lambda_under
    }
}

impl fmt::Display for SpectralReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "zero_count: {} (m = {})", self.zero_count, self.m)?;
        writeln!(f, "max_nonzero_real: {:.6e}", self.max_nonzero_real)?;
        writeln!(f, "lambda_under: {:.6e}", self.lambda_under)?;
        writeln!(f, "lambda_max: {:.6e}", self.lambda_max)?;
        write!(f, "stable: {}", self.stable)
    }
}

/// `(lambda_under, lambda_max)` of `M^0`: the smallest `|Re|` among its
/// non-zero eigenvalues and the largest modulus. `M^0` is block
/// triangular, so its spectrum is that of the two Laplacians.
pub fn laplacian_extremes(
    w_bar: &DMatrix<f64>,
    a_bar: &DMatrix<f64>,
) -> Result<(f64, f64), SpectralError> {
    let mut ev = general_eigenvalues(w_bar)?;
    ev.extend(general_eigenvalues(a_bar)?);
    let scale = ev.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let tol = DEFAULT_ZERO_TOL_REL * scale;
    let under = ev
        .iter()
        .filter(|l| l.norm() > tol)
        .map(|l| l.re.abs())
        .fold(f64::INFINITY, f64::min);
    Ok((under, scale))
}

pub fn spectral_report(
    mats: &SystemMatrices,
    zero_tol: Option<f64>,
) -> Result<SpectralReport, SpectralError> {
    let eigenvalues = general_eigenvalues(&mats.mg)?;
    let scale = eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let zero_tol = zero_tol.unwrap_or(DEFAULT_ZERO_TOL_REL * scale);
    let zero_count = eigenvalues.iter().filter(|l| l.norm() <= zero_tol).count();
    let max_nonzero_real = eigenvalues
        .iter()
        .filter(|l| l.norm() > zero_tol)
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let (lambda_under, lambda_max) = laplacian_extremes(&mats.w_bar, &mats.a_bar)?;
    Ok(SpectralReport {
        stable: zero_count == mats.m && max_nonzero_real < 0.0,
        eigenvalues,
        zero_tol,
        zero_count,
        max_nonzero_real,
        lambda_under,
        lambda_max,
        m: mats.m,
    })
}

/// First-order motion of the zero eigenvalues of `M_g(alpha)` at `alpha = 0`.
#[derive(Debug, Clone)]
pub struct EigenDerivativeReport {
    /// `V^T M^1 V` with the all-ones zero eigenvectors, as a `2m x 2m` matrix.
    pub reduced: DMatrix<f64>,
    pub reduced_eigenvalues: Vec<Complex64>,
    /// Largest entry of the reduced matrix's lower-left block (zero when the
    /// matrix is block upper-triangular).
    pub lower_left_max: f64,
    /// Largest entry of the upper-right block.
    pub upper_right_max: f64,
    /// Eigenvalues of `-sum_i hess f_i`.
    pub neg_hessian_sum_eigenvalues: Vec<Complex64>,
    /// Predicted derivatives: `m` zeros plus `eig(-G S^{-1})`, where
    /// `G = sum_i H_i Ξ_i^{-1}` and `S = sum_i Ξ_i^{-1}` over the x-channel
    /// gains. Uses the properly normalized left/right zero eigenvectors.
    pub predicted: Vec<Complex64>,
    pub finite_difference: Vec<Complex64>,
    pub step: f64,
    pub max_rel_error: f64,
}

impl EigenDerivativeReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

fn inverse_sums(mats: &SystemMatrices) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = mats.m;
    let mut g = DMatrix::zeros(m, m);
    let mut s = DMatrix::zeros(m, m);
    for (i, hb) in mats.hessian.blocks().iter().enumerate() {
        let inv = DVector::from_fn(m, |k, _| 1.0 / mats.xi.xi[i * m + k]);
        let mut hx = hb.clone();
        scale_columns(&mut hx, inv.as_slice());
        g += hx;
        for k in 0..m {
            s[(k, k)] += inv[k];
        }
    }
    (g, s)
}

fn closest_to_zero(mut ev: Vec<Complex64>, count: usize) -> Vec<Complex64> {
    ev.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    ev.truncate(count);
    ev
}

pub fn eigen_derivative_check(
    mats: &SystemMatrices,
    step: f64,
) -> Result<EigenDerivativeReport, SpectralError> {
    let m = mats.m;
    let n = mats.n();
    let nm = n * m;
    let mut v = DMatrix::zeros(2 * nm, 2 * m);
    for i in 0..n {
        for k in 0..m {
            v[(i * m + k, k)] = 1.0;
            v[(nm + i * m + k, m + k)] = 1.0;
        }
    }
    let reduced = v.transpose() * &mats.m1 * &v;
    let lower_left_max = reduced.view((m, 0), (m, m)).amax();
    let upper_right_max = reduced.view((0, m), (m, m)).amax();
    let reduced_eigenvalues = general_eigenvalues(&reduced)?;
    let neg_hessian_sum_eigenvalues = general_eigenvalues(&-mats.hessian.block_sum())?;

    let (g, s) = inverse_sums(mats);
    let s_inv = DMatrix::from_diagonal(&s.diagonal().map(|v| 1.0 / v));
    let mut predicted = vec![Complex64::new(0.0, 0.0); m];
    predicted.extend(general_eigenvalues(&-(g * s_inv))?);

    let at = |a: f64| -> Result<Vec<Complex64>, SpectralError> {
        let mg = &mats.mg0 + &mats.m1 * a;
        Ok(closest_to_zero(general_eigenvalues(&mg)?, 2 * m))
    };
    let mut plus: Vec<Complex64> = at(step)?.into_iter().map(|l| l / step).collect();
    let mut minus: Vec<Complex64> = at(-step)?.into_iter().map(|l| l / -step).collect();
    crate::linalg::sort_by_real_desc(&mut plus);
    crate::linalg::sort_by_real_desc(&mut minus);
    let finite_difference: Vec<Complex64> = plus
        .iter()
        .zip(&minus)
        .map(|(p, q)| (p + q) * 0.5)
        .collect();

    let scale = predicted.iter().map(|l| l.norm()).fold(1.0, f64::max);
    let max_rel_error = matching_distance(&finite_difference, &predicted)? / scale;
    Ok(EigenDerivativeReport {
        reduced,
        reduced_eigenvalues,
        lower_left_max,
        upper_right_max,
        neg_hessian_sum_eigenvalues,
        predicted,
        finite_difference,
        step,
        max_rel_error,
    })
}

/// Optimal matching distance `min_pi max_i |a_i - b_pi(i)|`, computed by
/// bisection over candidate thresholds with a Hopcroft-Karp perfect
/// matching test.
pub fn matching_distance(a: &[Complex64], b: &[Complex64]) -> Result<f64, SpectralError> {
    if a.len() != b.len() {
        return Err(SpectralError::Cardinality(a.len(), b.len()));
    }
    let n = a.len();
    if n == 0 {
        return Ok(0.0);
    }
    let dist: Vec<f64> = a
        .iter()
        .flat_map(|x| b.iter().map(move |y| (x - y).norm()))
        .collect();
    let mut cand = dist.clone();
    cand.sort_by(f64::total_cmp);
    cand.dedup();
    // The answer is at least the largest row/column minimum.
    let row_floor = (0..n)
        .map(|i| dist[i * n..(i + 1) * n].iter().copied().fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    let col_floor = (0..n)
        .map(|j| (0..n).map(|i| dist[i * n + j]).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    let floor = row_floor.max(col_floor);
    let mut lo = cand.partition_point(|&d| d < floor);
    let mut hi = cand.len() - 1;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if has_perfect_matching(n, &dist, cand[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(cand[lo])
}

/// Hopcroft-Karp on the bipartite graph `{(i, j) : dist[i n + j] <= thr}`.
fn has_perfect_matching(n: usize, dist: &[f64], thr: f64) -> bool {
    const NONE: usize = usize::MAX;
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist[i * n + j] <= thr).collect())
        .collect();
    if adj.iter().any(Vec::is_empty) {
        return false;
    }
    let mut match_l = vec![NONE; n];
    let mut match_r = vec![NONE; n];
    let mut layer = vec![0usize; n];
    let mut matched = 0;
    loop {
        // BFS layering from free left vertices.
        let mut queue = std::collections::VecDeque::new();
        for u in 0..n {
            if match_l[u] == NONE {
                layer[u] = 0;
                queue.push_back(u);
            } else {
                layer[u] = usize::MAX;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                let w = match_r[v];
                if w == NONE {
                    found = true;
                } else if layer[w] == usize::MAX {
                    layer[w] = layer[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        if !found {
            return matched == n;
        }
        let mut next = vec![0usize; n];
        for u in 0..n {
            if match_l[u] == NONE && augment(u, &adj, &mut match_l, &mut match_r, &mut layer, &mut next) {
                matched += 1;
            }
        }
        if matched == n {
            return true;
        }
    }
}

fn augment(
    u: usize,
    adj: &[Vec<usize>],
    match_l: &mut [usize],
    match_r: &mut [usize],
    layer: &mut [usize],
    next: &mut [usize],
) -> bool {
    while next[u] < adj[u].len() {
        let v = adj[u][next[u]];
        next[u] += 1;
        let w = match_r[v];
        if w == usize::MAX
            || (layer[w] == layer[u] + 1 && augment(w, adj, match_l, match_r, layer, next))
        {
            match_l[u] = v;
            match_r[v] = u;
            return true;
        }
    }
    layer[u] = usize::MAX;
    false
}

/// Inputs echoed alongside the three admissible step-size estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSizeBounds {
    pub alpha_bar_matching: f64,
    pub alpha_bar_spectral: f64,
    /// `log10` of the spectral-norm bound; stays finite when the bound
    /// itself underflows.
    pub alpha_bar_spectral_log10: f64,
    pub alpha_bar_tight: f64,
    /// Which closed form the matching bound used: `"gamma<1"` or `"gamma>=1"`.
    pub matching_form: &'static str,
    pub kappa: f64,
    pub upper: f64,
    pub gamma: f64,
    pub lambda_under: f64,
    pub lambda_max: f64,
    pub n: usize,
    pub m: usize,
    pub notes: Vec<String>,
}

impl fmt::Display for StepSizeBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kappa: {}", self.kappa)?;
        writeln!(f, "upper: {}", self.upper)?;
        writeln!(f, "gamma: {}", self.gamma)?;
        writeln!(f, "lambda_under: {:.6e}", self.lambda_under)?;
        writeln!(f, "lambda_max: {:.6e}", self.lambda_max)?;
        writeln!(f, "n: {}  m: {}", self.n, self.m)?;
        writeln!(f, "alpha_bar_tight: {:.6e}  (lambda_2 taken as lambda_under)", self.alpha_bar_tight)?;
        writeln!(
            f,
            "alpha_bar_matching: {:.6e}  ({})",
            self.alpha_bar_matching, self.matching_form
        )?;
        write!(
            f,
            "alpha_bar_spectral: {:.6e}  (log10 {:.3})",
            self.alpha_bar_spectral, self.alpha_bar_spectral_log10
        )?;
        for note in &self.notes {
            write!(f, "\nnote: {note}")?;
        }
        Ok(())
    }
}

fn positive(name: &'static str, value: f64) -> Result<f64, SpectralError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(SpectralError::NonPositive { name, value })
    }
}

pub fn alpha_bar_tight(kappa: f64, upper: f64, gamma: f64, lambda_under: f64) -> f64 {
    (kappa * lambda_under / gamma).min(lambda_under / (upper * gamma))
}

/// `ln` of the matching-distance expression at step size `alpha`.
fn ln_matching_expr(alpha: f64, upper: f64, gamma: f64, nm: f64) -> f64 {
    let e = 1.0 - 1.0 / nm;
    if gamma < 1.0 {
        let norm_m0 = 2.0 * upper * (1.0 + gamma);
        let norm_m = (2.0 * upper + gamma * (2.0 * upper + alpha)).max(2.0 * upper + alpha);
        4f64.ln() + e * (norm_m0 + norm_m).ln() + alpha.ln() / nm
    } else {
        4f64.ln()
            + e * (4.0 * upper + gamma * (4.0 * upper + alpha)).ln()
            + (alpha * gamma).ln() / nm
    }
}

const MATCH_GRID: usize = 1024;
const MATCH_LO: f64 = 1e-6;
const MATCH_HI: f64 = 1e3;

/// Minimizes `|expr(alpha) - kappa lambda_under|` on a log grid, then refines
/// with golden-section search around the best grid point. The expression is
/// increasing, so the objective has one monotone segment on each side of
/// the root. If the root lies below the default grid the grid is extended
/// downward.
fn solve_matching(target: f64, upper: f64, gamma: f64, nm: f64) -> f64 {
    let ln_target = target.ln();
    let obj = |la: f64| (ln_matching_expr(la.exp(), upper, gamma, nm) - ln_target).abs();
    let mut lo = MATCH_LO.ln();
    let hi = MATCH_HI.ln();
    while ln_matching_expr(lo.exp(), upper, gamma, nm) > ln_target && lo > -700.0 {
        lo -= 9.0 * 10f64.ln();
    }
    let step = (hi - lo) / (MATCH_GRID - 1) as f64;
    let grid = |k: usize| lo + step * k as f64;
    let best = (0..MATCH_GRID)
        .min_by(|&a, &b| obj(grid(a)).total_cmp(&obj(grid(b))))
        .unwrap_or(0);
    let mut a = grid(best.saturating_sub(1));
    let mut b = grid((best + 1).min(MATCH_GRID - 1));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    for _ in 0..200 {
        if obj(c) < obj(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - phi * (b - a);
        d = a + phi * (b - a);
        if (b - a).abs() < 1e-15 * (1.0 + a.abs()) {
            break;
        }
    }
    (0.5 * (a + b)).exp()
}

pub fn step_size_bounds(
    kappa: f64,
    upper: f64,
    gamma: f64,
    lambda_under: f64,
    lambda_max: f64,
    n: usize,
    m: usize,
) -> Result<StepSizeBounds, SpectralError> {
    positive("kappa", kappa)?;
    positive("upper sector slope", upper)?;
    positive("gamma", gamma)?;
    positive("lambda_under", lambda_under)?;
    positive("lambda_max", lambda_max)?;
    positive("n", n as f64)?;
    positive("m", m as f64)?;
    if kappa > upper {
        return Err(SpectralError::SectorOrder { kappa, upper });
    }
    let nm = (n * m) as f64;
    let target = kappa * lambda_under;
    let ln_spec = nm * target.ln()
        - nm * 4f64.ln()
        - (nm - 1.0) * upper.ln()
        - (nm - 1.0) * (2.0 * lambda_max + target).ln()
        - gamma.max(1.0).ln();
    Ok(StepSizeBounds {
        alpha_bar_matching: solve_matching(target, upper, gamma, nm),
        alpha_bar_spectral: ln_spec.exp(),
        alpha_bar_spectral_log10: ln_spec / 10f64.ln(),
        alpha_bar_tight: alpha_bar_tight(kappa, upper, gamma, lambda_under),
        matching_form: if gamma < 1.0 { "gamma<1" } else { "gamma>=1" },
        kappa,
        upper,
        gamma,
        lambda_under,
        lambda_max,
        n,
        m,
        notes: Vec::new(),
    })
}

/// Bounds for an assembled system; flags `W != A`, where the tight bound's
/// derivation does not apply.
pub fn bounds_for_system(
    mats: &SystemMatrices,
    kappa: f64,
    upper: f64,
) -> Result<StepSizeBounds, SpectralError> {
    let (lambda_under, lambda_max) = laplacian_extremes(&mats.w_bar, &mats.a_bar)?;
    let mut b = step_size_bounds(
        kappa,
        upper,
        mats.hessian.gamma(),
        lambda_under,
        lambda_max,
        mats.n(),
        mats.m,
    )?;
    if !mats.w_equals_a() {
        b.notes
            .push("W != A: alpha_bar_tight assumes a shared adjacency; value reported as-is".into());
    }
    Ok(b)
}

/// A constant link-gain regime for the stability sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct XiRegime {
    pub name: String,
    pub xi: LinkGainSnapshot,
}

/// `kappa I`, `I`, `upper I` and one random diagonal with entries in
/// `[kappa, upper]`.
pub fn standard_regimes(kappa: f64, upper: f64, len: usize, seed: u64) -> Vec<XiRegime> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let random = DVector::from_fn(len, |_, _| {
        if upper > kappa {
            rng.gen_range(kappa..=upper)
        } else {
            kappa
        }
    });
    vec![
        XiRegime { name: "kappa".into(), xi: LinkGainSnapshot::uniform(len, kappa) },
        XiRegime { name: "identity".into(), xi: LinkGainSnapshot::uniform(len, 1.0) },
        XiRegime { name: "upper".into(), xi: LinkGainSnapshot::uniform(len, upper) },
        XiRegime { name: "random".into(), xi: LinkGainSnapshot { xi: random } },
    ]
}

/// Graphs and Hessian shared by every sweep cell. With `eta` set, a cell is
/// stable only if the forward-Euler map with that step is also stable.
#[derive(Debug, Clone)]
pub struct SweepFixture {
    pub w: Laplacian,
    pub a: Laplacian,
    pub hessian: HessianAggregate,
    pub m: usize,
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub alpha: f64,
    pub regime: String,
    pub zero_count: usize,
    pub max_nonzero_real: f64,
    pub continuous_stable: bool,
    pub euler_radius: Option<f64>,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frontier {
    pub regime: String,
    /// Largest grid alpha such that every grid alpha up to it is stable.
    pub last_stable: Option<f64>,
    /// Smallest grid alpha marked unstable (ignoring `alpha = 0`).
    pub first_unstable: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
    pub frontiers: Vec<Frontier>,
}

impl SweepTable {
    pub fn write_csv(&self, mut out: impl Write) -> Result<(), SpectralError> {
        writeln!(
            out,
            "alpha,xi_regime,zero_count,max_nonzero_real,continuous_stable,euler_radius,stable"
        )?;
        for c in &self.cells {
            let radius = c.euler_radius.map_or(String::new(), |r| format!("{r:.12e}"));
            writeln!(
                out,
                "{:.12e},{},{},{:.12e},{},{},{}",
                c.alpha, c.regime, c.zero_count, c.max_nonzero_real, c.continuous_stable, radius, c.stable
            )?;
        }
        Ok(())
    }

    pub fn frontier(&self, regime: &str) -> Option<&Frontier> {
        self.frontiers.iter().find(|f| f.regime == regime)
    }
}

pub fn sweep_cell(
    fixture: &SweepFixture,
    regime: &XiRegime,
    alpha: f64,
) -> Result<SweepCell, SpectralError> {
    let mats = assemble(&fixture.w, &fixture.a, &fixture.hessian, &regime.xi, alpha, fixture.m)?;
    let rep = spectral_report(&mats, None)?;
    let euler_radius = fixture.eta.map(|eta| rep.euler_radius(eta));
    let stable = rep.stable && euler_radius.is_none_or(|r| r < 1.0);
    Ok(SweepCell {
        alpha,
        regime: regime.name.clone(),
        zero_count: rep.zero_count,
        max_nonzero_real: rep.max_nonzero_real,
        continuous_stable: rep.stable,
        euler_radius,
        stable,
    })
}

/// Evaluates every `(regime, alpha)` cell on up to `jobs` threads; results
/// are ordered by regime, then by the grid order.
pub fn stability_sweep(
    fixture: &SweepFixture,
    alpha_grid: &[f64],
    regimes: &[XiRegime],
    jobs: usize,
) -> Result<SweepTable, SpectralError> {
    let tasks: Vec<(usize, f64)> = (0..regimes.len())
        .flat_map(|r| alpha_grid.iter().map(move |&a| (r, a)))
        .collect();
    let jobs = jobs.clamp(1, tasks.len().max(1));
    let chunk = tasks.len().div_ceil(jobs).max(1);
    let results: Vec<Result<SweepCell, SpectralError>> = std::thread::scope(|s| {
        let handles: Vec<_> = tasks
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|&(r, a)| sweep_cell(fixture, &regimes[r], a))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let cells = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let frontiers = regimes
        .iter()
        .map(|r| {
            let mut row: Vec<&SweepCell> = cells
                .iter()
                .filter(|c| c.regime == r.name && c.alpha > 0.0)
                .collect();
            row.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
            let first = row.iter().position(|c| !c.stable);
            let last_stable = match first {
                Some(0) => None,
                Some(k) => Some(row[k - 1].alpha),
                None => row.last().map(|c| c.alpha),
            };
            Frontier {
                regime: r.name.clone(),
                last_stable,
                first_unstable: first.map(|k| row[k].alpha),
            }
        })
        .collect();
    Ok(SweepTable { cells, frontiers })
}

/// Refines a stability frontier between a stable `lo` and an unstable `hi`
/// by bisection in `log alpha`.
pub fn bisect_frontier(
    fixture: &SweepFixture,
    regime: &XiRegime,
    mut lo: f64,
    mut hi: f64,
    iterations: usize,
) -> Result<f64, SpectralError> {
    for _ in 0..iterations {
        let mid = (lo * hi).sqrt();
        if sweep_cell(fixture, regime, mid)?.stable {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|k| (a + (b - a) * k as f64 / (points - 1) as f64).exp())
        .collect()
}
