//! Weight-balanced network topologies, their Laplacians, and switching schedules.
//!
//! Weights follow the convention `w[(i, j)]` = weight on the link `j -> i`.
//! The Laplacian keeps the link weights off the diagonal and puts minus the
//! row sum on the diagonal, so its spectrum lives in the closed left
//! half-plane.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when validating weight balance of generated graphs.
pub const BALANCE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("hop radius {k} out of range for n = {n} (need 1 <= k <= {max})")]
    HopOutOfRange { n: usize, k: usize, max: usize },
    #[error("total weight {0} must lie strictly inside (0, 1)")]
    TotalWeight(f64),
    #[error("weight matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("invalid weight {value} at ({i}, {j})")]
    BadWeight { i: usize, j: usize, value: f64 },
    #[error("nonzero self-loop weight at node {0}")]
    SelfLoop(usize),
    #[error("row {row} sums to {sum}, must be < 1")]
    RowSum { row: usize, sum: f64 },
    #[error("graph is not weight-balanced (max imbalance {0:e})")]
    Unbalanced(f64),
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("switch period must be positive and finite, got {0}")]
    SwitchPeriod(f64),
    #[error("edge list parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Non-negative weighted digraph with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    weights: DMatrix<f64>,
}

impl WeightedGraph {
    /// Wraps a weight matrix after structural checks (square, finite,
    /// non-negative, zero diagonal). Use [`WeightedGraph::validate`] for the
    /// network assumptions.
    pub fn new(weights: DMatrix<f64>) -> Result<Self, GraphError> {
        if weights.nrows() != weights.ncols() {
            return Err(GraphError::NotSquare {
                rows: weights.nrows(),
                cols: weights.ncols(),
            });
        }
        let n = weights.nrows();
        for i in 0..n {
            for j in 0..n {
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(GraphError::BadWeight { i, j, value: w });
                }
            }
            if weights[(i, i)] != 0.0 {
                return Err(GraphError::SelfLoop(i));
            }
        }
        Ok(Self { weights })
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.weights.row_iter().map(|r| r.sum()).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.weights == self.weights.transpose()
    }

    /// Checks the network assumptions: row sums below one, weight balance,
    /// and strong connectivity.
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.n() < 2 {
            return Err(GraphError::TooFewNodes(self.n()));
        }
        for (row, sum) in self.row_sums().into_iter().enumerate() {
            if sum >= 1.0 {
                return Err(GraphError::RowSum { row, sum });
            }
        }
        let balance = check_weight_balanced(self, BALANCE_TOL);
        if !balance.balanced {
            return Err(GraphError::Unbalanced(balance.max_imbalance));
        }
        if !self.is_strongly_connected() {
            return Err(GraphError::NotStronglyConnected);
        }
        Ok(())
    }

    /// Structural irreducibility test: every node reaches node 0 and is
    /// reached from it.
    pub fn is_strongly_connected(&self) -> bool {
        let n = self.n();
        if n == 0 {
            return false;
        }
        // Link j -> i exists when w[(i, j)] > 0.
        let forward = self.reach_from(0, |from, to| self.weights[(to, from)] > 0.0);
        let backward = self.reach_from(0, |from, to| self.weights[(from, to)] > 0.0);
        forward.iter().all(|&v| v) && backward.iter().all(|&v| v)
    }

    fn reach_from(&self, start: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<bool> {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if !seen[v] && edge(u, v) {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Relabels nodes: node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        assert_eq!(perm.len(), n, "permutation length must match node count");
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                w[(perm[i], perm[j])] = self.weights[(i, j)];
            }
        }
        Self { weights: w }
    }

    /// Removes the link between `i` and `j` in both directions.
    pub fn without_bidirectional_link(&self, i: usize, j: usize) -> Self {
        let mut w = self.weights.clone();
        w[(i, j)] = 0.0;
        w[(j, i)] = 0.0;
        Self { weights: w }
    }

    /// Plain-text edge list: `n <count>` header, then one `i j w_ij` line per
    /// nonzero link (0-indexed).
    pub fn to_edge_list(&self) -> String {
        let n = self.n();
        let mut out = format!("n {n}\n");
        for i in 0..n {
            for j in 0..n {
                let w = self.weights[(i, j)];
                if w != 0.0 {
                    let _ = writeln!(out, "{i} {j} {w}");
                }
            }
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or(GraphError::Parse {
            line: 1,
            msg: "missing `n <count>` header".into(),
        })?;
        let n: usize = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["n", count] => count.parse().map_err(|_| GraphError::Parse {
                line: hline,
                msg: format!("bad node count `{count}`"),
            })?,
            _ => {
                return Err(GraphError::Parse {
                    line: hline,
                    msg: "expected `n <count>`".into(),
                })
            }
        };
        let mut w = DMatrix::zeros(n, n);
        for (line, text) in lines {
            let parts: Vec<&str> = text.split_whitespace().collect();
            let [i, j, wij] = parts.as_slice() else {
                return Err(GraphError::Parse {
                    line,
                    msg: "expected `i j w_ij`".into(),
                });
            };
            let bad = |what: &str| GraphError::Parse {
                line,
                msg: format!("bad {what}"),
            };
            let i: usize = i.parse().map_err(|_| bad("row index"))?;
            let j: usize = j.parse().map_err(|_| bad("column index"))?;
            let wij: f64 = wij.parse().map_err(|_| bad("weight"))?;
            if i >= n || j >= n {
                return Err(bad("index (out of range)"));
            }
            w[(i, j)] = wij;
        }
        Self::new(w)
    }
}

fn check_ring_args(n: usize, k: usize, total_weight: f64) -> Result<(), GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    let max = (n - 1) / 2;
    if k < 1 || k > max {
        return Err(GraphError::HopOutOfRange { n, k, max });
    }
    if !(total_weight > 0.0 && total_weight < 1.0) {
        return Err(GraphError::TotalWeight(total_weight));
    }
    Ok(())
}

/// Undirected k-hop ring: node `i` links to its `k` nearest neighbours on
/// each side, every link carrying `total_weight / (2k)`.
pub fn make_khop_ring(n: usize, k: usize, total_weight: f64) -> Result<WeightedGraph, GraphError> {
    check_ring_args(n, k, total_weight)?;
    let w = total_weight / (2 * k) as f64;
    let mut weights = DMatrix::zeros(n, n);
    for i in 0..n {
        for d in 1..=k {
            weights[(i, (i + d) % n)] = w;
            weights[(i, (i + n - d) % n)] = w;
        }
    }
    let g = WeightedGraph::new(weights)?;
    g.validate()?;
    Ok(g)
}

/// Directed circulant: node `i` receives from `i+1, ..., i+k` with weight
/// `total_weight / k`. Strongly connected and weight-balanced but not
/// symmetric; convergence over such graphs is not guaranteed.
pub fn make_directed_circulant(
    n: usize,
    k: usize,
    total_weight: f64,
) -> Result<WeightedGraph, GraphError> {
    check_ring_args(n, k, total_weight)?;
    let w = total_weight / k as f64;
    let mut weights = DMatrix::zeros(n, n);
    for i in 0..n {
        for d in 1..=k {
            weights[(i, (i + d) % n)] = w;
        }
    }
    let g = WeightedGraph::new(weights)?;
    g.validate()?;
    Ok(g)
}

/// Graph Laplacian in the `W - diag(W 1)` convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian(DMatrix<f64>);

impl Laplacian {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    /// Wraps an arbitrary matrix (mutation fixtures and tests).
    pub fn from_matrix(m: DMatrix<f64>) -> Self {
        Self(m)
    }
}

pub fn laplacian(g: &WeightedGraph) -> Laplacian {
    let mut l = g.weights.clone();
    for (i, sum) in g.row_sums().into_iter().enumerate() {
        l[(i, i)] = -sum;
    }
    Laplacian(l)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceCheck {
    pub balanced: bool,
    pub max_imbalance: f64,
}

/// Compares in- and out-weight sums at every node.
pub fn check_weight_balanced(g: &WeightedGraph, tol: f64) -> BalanceCheck {
    let w = &g.weights;
    let max_imbalance = (0..g.n())
        .map(|i| (w.column(i).sum() - w.row(i).sum()).abs())
        .fold(0.0, f64::max);
    BalanceCheck {
        balanced: max_imbalance <= tol,
        max_imbalance,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SwitchMode {
    #[default]
    Fixed,
    Permute,
}

/// Piecewise-constant topology signal: in `Permute` mode the base graph's
/// node labels are reshuffled at every multiple of `switch_period`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSchedule {
    base: WeightedGraph,
    switch_period: f64,
    seed: u64,
    mode: SwitchMode,
}

impl SwitchingSchedule {
    pub fn new(
        base: WeightedGraph,
        switch_period: f64,
        seed: u64,
        mode: SwitchMode,
    ) -> Result<Self, GraphError> {
        if !(switch_period > 0.0 && switch_period.is_finite()) {
            return Err(GraphError::SwitchPeriod(switch_period));
        }
        base.validate()?;
        Ok(Self {
            base,
            switch_period,
            seed,
            mode,
        })
    }

    pub fn fixed(base: WeightedGraph) -> Result<Self, GraphError> {
        Self::new(base, 1.0, 0, SwitchMode::Fixed)
    }

    pub fn base(&self) -> &WeightedGraph {
        &self.base
    }

    pub fn switch_period(&self) -> f64 {
        self.switch_period
    }

    pub fn mode(&self) -> SwitchMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn interval_index(&self, t: f64) -> u64 {
        (t / self.switch_period).floor().max(0.0) as u64
    }

    pub fn graph_at(&self, t: f64) -> WeightedGraph {
        self.graph_for_interval(self.interval_index(t))
    }

    /// Active graph during the `interval`-th switching interval. The
    /// permutation for each interval is drawn from its own ChaCha stream,
    /// so any interval can be produced without replaying earlier ones.
    pub fn graph_for_interval(&self, interval: u64) -> WeightedGraph {
        match self.mode {
            SwitchMode::Fixed => self.base.clone(),
            SwitchMode::Permute => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(interval);
                let mut perm: Vec<usize> = (0..self.base.n()).collect();
                perm.shuffle(&mut rng);
                self.base.permuted(&perm)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_rejects_bad_arguments() {
        assert!(matches!(
            make_khop_ring(2, 1, 0.5),
            Err(GraphError::HopOutOfRange { .. })
        ));
        assert!(matches!(
            make_khop_ring(5, 3, 0.5),
            Err(GraphError::HopOutOfRange { .. })
        ));
        assert!(matches!(make_khop_ring(5, 1, 1.0), Err(GraphError::TotalWeight(_))));
        assert!(matches!(make_khop_ring(5, 1, 0.0), Err(GraphError::TotalWeight(_))));
    }

    #[test]
    fn five_ring_one_hop() {
        let g = make_khop_ring(5, 1, 0.8).unwrap();
        for i in 0..5 {
            assert_eq!(g.weight(i, (i + 1) % 5), 0.4);
            assert_eq!(g.weight(i, (i + 4) % 5), 0.4);
            assert_eq!(g.weight(i, (i + 2) % 5), 0.0);
        }
        for s in g.row_sums() {
            assert!((s - 0.8).abs() < 1e-15);
        }
    }

    #[test]
    fn five_ring_two_hop_is_complete() {
        let g = make_khop_ring(5, 2, 0.8).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j { 0.0 } else { 0.2 };
                assert_eq!(g.weight(i, j), expect);
            }
        }
    }

    #[test]
    fn two_node_laplacian() {
        let g = WeightedGraph::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0])).unwrap();
        let l = laplacian(&g);
        assert_eq!(l.matrix(), &DMatrix::from_row_slice(2, 2, &[-0.5, 0.5, 0.5, -0.5]));
    }

    #[test]
    fn balance_examples() {
        let sym = make_khop_ring(6, 2, 0.9).unwrap();
        let b = check_weight_balanced(&sym, 1e-12);
        assert!(b.balanced);
        assert_eq!(b.max_imbalance, 0.0);

        let mut w = DMatrix::zeros(3, 3);
        w[(0, 1)] = 0.3;
        w[(1, 2)] = 0.3;
        w[(2, 0)] = 0.3;
        let cycle = WeightedGraph::new(w).unwrap();
        let b = check_weight_balanced(&cycle, 1e-12);
        assert!(b.balanced);
        assert_eq!(b.max_imbalance, 0.0);

        let mut w = DMatrix::zeros(2, 2);
        w[(1, 0)] = 0.3;
        let one_way = WeightedGraph::new(w).unwrap();
        let b = check_weight_balanced(&one_way, 1e-12);
        assert!(!b.balanced);
        assert_eq!(b.max_imbalance, 0.3);
        assert!(!one_way.is_strongly_connected());
    }

    #[test]
    fn structural_validation() {
        let w = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.2, 0.0]);
        assert_eq!(WeightedGraph::new(w), Err(GraphError::SelfLoop(0)));
        let w = DMatrix::from_row_slice(2, 2, &[0.0, -0.2, 0.2, 0.0]);
        assert!(matches!(WeightedGraph::new(w), Err(GraphError::BadWeight { .. })));
        let heavy = WeightedGraph::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!(matches!(heavy.validate(), Err(GraphError::RowSum { .. })));
    }

    #[test]
    fn directed_circulant_is_balanced_not_symmetric() {
        let g = make_directed_circulant(6, 2, 0.6).unwrap();
        assert!(!g.is_symmetric());
        assert!(check_weight_balanced(&g, 1e-12).balanced);
        assert!(g.is_strongly_connected());
    }

    #[test]
    fn schedule_is_piecewise_constant_and_deterministic() {
        let base = make_khop_ring(7, 1, 0.6).unwrap();
        let s = SwitchingSchedule::new(base.clone(), 0.1, 42, SwitchMode::Permute).unwrap();
        assert_eq!(s.graph_at(0.31), s.graph_at(0.31 + 0.05));
        assert_eq!(s.graph_at(2.0), s.graph_at(2.0));
        let fixed = SwitchingSchedule::new(base.clone(), 0.1, 42, SwitchMode::Fixed).unwrap();
        assert_eq!(fixed.graph_at(123.4), base);
        // Some interval must actually relabel a 7-ring.
        assert!((0..20).any(|k| s.graph_for_interval(k) != base));
    }

    #[test]
    fn edge_list_round_trip() {
        let g = make_khop_ring(6, 2, 0.7).unwrap();
        let text = g.to_edge_list();
        assert!(text.starts_with("n 6\n"));
        assert_eq!(WeightedGraph::from_edge_list(&text).unwrap(), g);
        assert!(WeightedGraph::from_edge_list("n 2\n0 5 0.1\n").is_err());
        assert!(WeightedGraph::from_edge_list("nodes 2\n").is_err());
    }

    #[test]
    fn bidirectional_link_removal_keeps_balance() {
        let g = make_khop_ring(8, 2, 0.8).unwrap();
        let h = g.without_bidirectional_link(0, 1);
        assert!(check_weight_balanced(&h, 1e-12).balanced);
        assert!(h.is_strongly_connected());
    }
}
