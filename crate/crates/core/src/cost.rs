//! Local agent costs: value, gradient and Hessian block per agent, plus the
//! network-level aggregates used by the dynamics and the step-size bounds.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::linalg::sym_min_eigenvalue;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("smoothing parameter mu must be positive, got {0}")]
    Mu(f64),
    #[error("margin weight C must be positive, got {0}")]
    MarginWeight(f64),
    #[error("bias regularizer must be non-negative, got {0}")]
    BiasRegularizer(f64),
    #[error("labels must be -1 or +1, found {0}")]
    Label(f64),
    #[error("curvature matrix is not symmetric")]
    NotSymmetric,
    #[error("curvature matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("cost model needs at least one agent")]
    NoAgents,
    #[error("agents disagree on decision dimension")]
    MixedDimensions,
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Smoothed hinge `L(z, mu) = softplus(mu z) / mu` with its first two
/// derivatives in `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HingeEval {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedHinge {
    mu: f64,
}

impl SmoothedHinge {
    pub fn new(mu: f64) -> Result<Self, CostError> {
        if mu > 0.0 && mu.is_finite() {
            Ok(Self { mu })
        } else {
            Err(CostError::Mu(mu))
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn eval(&self, z: f64) -> HingeEval {
        let t = self.mu * z;
        let s = logistic(t);
        HingeEval {
            value: (t.max(0.0) + (-t.abs()).exp().ln_1p()) / self.mu,
            d1: s,
            d2: self.mu * s * (1.0 - s),
        }
    }
}

pub fn smoothed_hinge(z: f64, mu: f64) -> Result<HingeEval, CostError> {
    Ok(SmoothedHinge::new(mu)?.eval(z))
}

/// Overflow-free logistic function.
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// A strictly convex, twice differentiable local cost `f_i : R^m -> R`.
pub trait LocalCost: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> DVector<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;

    fn eval(&self, x: &[f64]) -> LocalEval {
        LocalEval {
            value: self.value(x),
            gradient: self.gradient(x),
            hessian: self.hessian(x),
        }
    }

    /// Dimension-checked evaluation.
    fn try_eval(&self, x: &[f64]) -> Result<LocalEval, CostError> {
        if x.len() != self.dim() {
            return Err(CostError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.eval(x))
    }
}

/// `f(x) = 1/2 (x - b)^T Q (x - b)` with `Q` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    q: DMatrix<f64>,
    center: DVector<f64>,
}

impl QuadraticCost {
    pub fn new(q: DMatrix<f64>, center: DVector<f64>) -> Result<Self, CostError> {
        if q.nrows() != q.ncols() {
            return Err(CostError::Dimension {
                expected: q.nrows(),
                got: q.ncols(),
            });
        }
        if q.nrows() != center.len() {
            return Err(CostError::Dimension {
                expected: q.nrows(),
                got: center.len(),
            });
        }
        if q != q.transpose() {
            return Err(CostError::NotSymmetric);
        }
        if Cholesky::new(q.clone()).is_none() {
            return Err(CostError::NotPositiveDefinite);
        }
        Ok(Self { q, center })
    }

    pub fn scalar(curvature: f64, center: f64) -> Result<Self, CostError> {
        Self::new(
            DMatrix::from_element(1, 1, curvature),
            DVector::from_element(1, center),
        )
    }

    pub fn curvature(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }
}

impl LocalCost for QuadraticCost {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.center;
        0.5 * d.dot(&(&self.q * &d))
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        &self.q * (DVector::from_column_slice(x) - &self.center)
    }

    fn hessian(&self, _x: &[f64]) -> DMatrix<f64> {
        self.q.clone()
    }
}

/// Local smoothed-hinge SVM cost over mapped features:
/// `f(w, nu) = w^T w + C sum_j L(1 - l_j (w^T chi_j - nu), mu) + eps_nu nu^2`.
/// The decision variable is `[w; nu]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmHingeCost {
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
    feature_dim: usize,
    hinge: SmoothedHinge,
    c: f64,
    eps_nu: f64,
}

impl SvmHingeCost {
    pub fn new(
        feature_dim: usize,
        features: Vec<Vec<f64>>,
        labels: Vec<f64>,
        mu: f64,
        c: f64,
        eps_nu: f64,
    ) -> Result<Self, CostError> {
        if features.len() != labels.len() {
            return Err(CostError::Dimension {
                expected: features.len(),
                got: labels.len(),
            });
        }
        if let Some(bad) = features.iter().find(|f| f.len() != feature_dim) {
            return Err(CostError::Dimension {
                expected: feature_dim,
                got: bad.len(),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l != 1.0 && l != -1.0) {
            return Err(CostError::Label(l));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(CostError::MarginWeight(c));
        }
        if !(eps_nu >= 0.0 && eps_nu.is_finite()) {
            return Err(CostError::BiasRegularizer(eps_nu));
        }
        Ok(Self {
            features,
            labels,
            feature_dim,
            hinge: SmoothedHinge::new(mu)?,
            c,
            eps_nu,
        })
    }

    /// Reads `feature..., label` rows (no header) from a CSV file.
    pub fn from_csv(path: &Path, mu: f64, c: f64, eps_nu: f64) -> Result<Self, CostError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CostError::Dataset(format!("row {}: {e}", row + 1)))?;
            let Some((label, feats)) = vals.split_last() else {
                return Err(CostError::Dataset(format!("row {} is empty", row + 1)));
            };
            features.push(feats.to_vec());
            labels.push(*label);
        }
        let dim = features.first().map_or(0, Vec::len);
        Self::new(dim, features, labels, mu, c, eps_nu)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Margin argument `z_j` and its gradient direction `a_j = dz_j/dx`
    /// are formed on the fly.
    fn margin(&self, x: &[f64], j: usize) -> f64 {
        let (w, nu) = x.split_at(self.feature_dim);
        let score: f64 = w.iter().zip(&self.features[j]).map(|(a, b)| a * b).sum::<f64>() - nu[0];
        1.0 - self.labels[j] * score
    }

    fn regularizer_diag(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::repeat(2.0)
            .take(self.feature_dim)
            .chain(std::iter::once(2.0 * self.eps_nu))
    }
}

impl LocalCost for SvmHingeCost {
    fn dim(&self) -> usize {
        self.feature_dim + 1
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (w, nu) = x.split_at(self.feature_dim);
        let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() + self.eps_nu * nu[0] * nu[0];
        let loss: f64 = (0..self.len()).map(|j| self.hinge.eval(self.margin(x, j)).value).sum();
        reg + self.c * loss
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let d = self.feature_dim;
        let mut g = DVector::from_iterator(
            d + 1,
            x.iter().zip(self.regularizer_diag()).map(|(v, r)| r * v),
        );
        for j in 0..self.len() {
            let h = self.hinge.eval(self.margin(x, j));
            let l = self.labels[j];
            let coef = self.c * h.d1;
            for (k, chi) in self.features[j].iter().enumerate() {
                g[k] -= coef * l * chi;
            }
            g[d] += coef * l;
        }
        g
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.feature_dim;
        let mut h = DMatrix::from_diagonal(&DVector::from_iterator(d + 1, self.regularizer_diag()));
        let mut a = vec![0.0; d + 1];
        for j in 0..self.len() {
            let curv = self.c * self.hinge.eval(self.margin(x, j)).d2;
            if curv == 0.0 {
                continue;
            }
            let l = self.labels[j];
            for (k, chi) in self.features[j].iter().enumerate() {
                a[k] = -l * chi;
            }
            a[d] = l;
            add_outer(&mut h, curv, &a);
        }
        h
    }

    fn eval(&self, x: &[f64]) -> LocalEval {
        let d = self.feature_dim;
        let (w, nu) = x.split_at(d);
        let mut value: f64 = w.iter().map(|v| v * v).sum::<f64>() + self.eps_nu * nu[0] * nu[0];
        let mut gradient = DVector::from_iterator(
            d + 1,
            x.iter().zip(self.regularizer_diag()).map(|(v, r)| r * v),
        );
        let mut hessian =
            DMatrix::from_diagonal(&DVector::from_iterator(d + 1, self.regularizer_diag()));
        let mut a = vec![0.0; d + 1];
        for j in 0..self.len() {
            let hv = self.hinge.eval(self.margin(x, j));
            let l = self.labels[j];
            for (k, chi) in self.features[j].iter().enumerate() {
                a[k] = -l * chi;
            }
            a[d] = l;
            value += self.c * hv.value;
            for r in 0..=d {
                gradient[r] += self.c * hv.d1 * a[r];
            }
            add_outer(&mut hessian, self.c * hv.d2, &a);
        }
        LocalEval {
            value,
            gradient,
            hessian,
        }
    }
}

/// `h += s a a^T`, written so the result is exactly symmetric.
fn add_outer(h: &mut DMatrix<f64>, s: f64, a: &[f64]) {
    for r in 0..a.len() {
        let sr = s * a[r];
        for c in r..a.len() {
            let v = sr * a[c];
            h[(r, c)] += v;
            if c != r {
                h[(c, r)] += v;
            }
        }
    }
}

/// The network cost `F(x) = sum_i f_i(x_i)` over stacked agent states.
#[derive(Debug, Clone)]
pub struct CostModel {
    m: usize,
    agents: Vec<Arc<dyn LocalCost>>,
}

impl CostModel {
    pub fn new(agents: Vec<Arc<dyn LocalCost>>) -> Result<Self, CostError> {
        let m = agents.first().ok_or(CostError::NoAgents)?.dim();
        if agents.iter().any(|a| a.dim() != m) {
            return Err(CostError::MixedDimensions);
        }
        Ok(Self { m, agents })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn agent(&self, i: usize) -> &dyn LocalCost {
        self.agents[i].as_ref()
    }

    fn check_len(&self, x: &DVector<f64>) -> Result<(), CostError> {
        let expected = self.n() * self.m;
        if x.len() != expected {
            return Err(CostError::Dimension {
                expected,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn block<'a>(&self, x: &'a DVector<f64>, i: usize) -> &'a [f64] {
        &x.as_slice()[i * self.m..(i + 1) * self.m]
    }

    pub fn global_cost(&self, x: &DVector<f64>) -> Result<f64, CostError> {
        self.check_len(x)?;
        Ok((0..self.n()).map(|i| self.agents[i].value(self.block(x, i))).sum())
    }

    /// `sum_i grad f_i(x_i)`, an `m`-vector.
    pub fn sum_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, CostError> {
        self.check_len(x)?;
        let mut s = DVector::zeros(self.m);
        for i in 0..self.n() {
            s += self.agents[i].gradient(self.block(x, i));
        }
        Ok(s)
    }

    /// Stacked per-agent gradients, an `nm`-vector.
    pub fn stacked_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, CostError> {
        self.check_len(x)?;
        let mut g = DVector::zeros(x.len());
        for i in 0..self.n() {
            g.rows_mut(i * self.m, self.m)
                .copy_from(&self.agents[i].gradient(self.block(x, i)));
        }
        Ok(g)
    }

    pub fn aggregate_hessian(&self, x: &DVector<f64>) -> Result<HessianAggregate, CostError> {
        self.check_len(x)?;
        let blocks = (0..self.n())
            .map(|i| self.agents[i].hessian(self.block(x, i)))
            .collect();
        Ok(HessianAggregate::from_blocks(blocks))
    }
}

/// Block-diagonal network Hessian `blockdiag(hess f_i(x_i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianAggregate {
    blocks: Vec<DMatrix<f64>>,
}

impl HessianAggregate {
    pub fn from_blocks(blocks: Vec<DMatrix<f64>>) -> Self {
        Self { blocks }
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn n(&self) -> usize {
        self.blocks.len()
    }

    pub fn m(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.nrows())
    }

    /// Max absolute row sum of the full block-diagonal matrix, computed
    /// blockwise.
    pub fn gamma(&self) -> f64 {
        self.blocks
            .iter()
            .map(crate::linalg::inf_norm)
            .fold(0.0, f64::max)
    }

    /// `sum_i hess f_i`.
    pub fn block_sum(&self) -> DMatrix<f64> {
        let m = self.m();
        self.blocks.iter().fold(DMatrix::zeros(m, m), |acc, b| acc + b)
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let m = self.m();
        let mut out = DVector::zeros(v.len());
        for (i, b) in self.blocks.iter().enumerate() {
            out.rows_mut(i * m, m).copy_from(&(b * v.rows(i * m, m)));
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = self.m();
        let nm = self.n() * m;
        let mut h = DMatrix::zeros(nm, nm);
        for (i, b) in self.blocks.iter().enumerate() {
            h.view_mut((i * m, i * m), (m, m)).copy_from(b);
        }
        h
    }

    /// Smallest eigenvalue over all blocks; positive means every local
    /// Hessian is positive definite.
    pub fn min_eigenvalue(&self) -> f64 {
        self.blocks
            .iter()
            .map(sym_min_eigenvalue)
            .fold(f64::INFINITY, f64::min)
    }
}
