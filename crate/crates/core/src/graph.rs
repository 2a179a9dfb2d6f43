//! Sparse undirected graphs, the normalized propagation operator, and
//! edge-homophily measurements.
//!
//! A [`Graph`] is stored as compressed neighbor lists: `offsets[u]..offsets[u + 1]`
//! indexes the sorted neighbors of `u`. Construction symmetrizes, drops
//! self-loops and merges duplicate edges, so every stored graph is simple.
//!
//! Propagation applies `P = I - L = D^{-1/2} A D^{-1/2}`, or the self-loop variant
//! `D̂^{-1/2} Â D̂^{-1/2}` with `Â = A + I`, `D̂ = D + I`. Degree-zero nodes make
//! `D^{-1/2}` undefined; [`IsolatedNodePolicy`] picks how they are handled.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SignalMatrix;
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Graph {
    /// Builds a simple undirected graph from arbitrary (possibly directed,
    /// duplicated or looping) pairs. The node count is `max index + 1`, raised
    /// to `n_hint` when that is larger.
    pub fn from_edges(n_hint: Option<usize>, edges: &[(usize, usize)]) -> Self {
        let max_index = edges.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0);
        let n = max_index.max(n_hint.unwrap_or(0));

        let mut degree = vec![0usize; n];
        for &(u, v) in edges {
            if u != v {
                degree[u] += 1;
                degree[v] += 1;
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut raw = vec![0usize; *offsets.last().unwrap()];
        for &(u, v) in edges {
            if u != v {
                raw[fill[u]] = v;
                fill[u] += 1;
                raw[fill[v]] = u;
                fill[v] += 1;
            }
        }

        // sort + dedup each list, then compact
        let mut compact_offsets = Vec::with_capacity(n + 1);
        compact_offsets.push(0);
        let mut neighbors = Vec::with_capacity(raw.len());
        for u in 0..n {
            let list = &mut raw[offsets[u]..offsets[u + 1]];
            list.sort_unstable();
            let mut prev = None;
            for &v in list.iter() {
                if prev != Some(v) {
                    neighbors.push(v);
                    prev = Some(v);
                }
            }
            compact_offsets.push(neighbors.len());
        }
        neighbors.shrink_to_fit();
        Graph {
            n,
            offsets: compact_offsets,
            neighbors,
        }
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.n
    }

    /// Number of undirected edges.
    #[inline]
    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }

    #[inline]
    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|u| self.degree(u)).collect()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && v < self.n && self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Number of connected components (isolated nodes count as components).
    pub fn num_components(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut stack = Vec::new();
        let mut count = 0;
        for s in 0..self.n {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            stack.push(s);
            while let Some(u) = stack.pop() {
                for &v in self.neighbors(u) {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.n > 0 && self.num_components() == 1
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsolatedNodePolicy {
    /// Rows and columns of `P` for degree-zero nodes are zero.
    #[default]
    Zero,
    /// Degree-zero nodes carry a unit self-loop, so `P[u, u] = 1`.
    SelfLoop,
}

impl std::str::FromStr for IsolatedNodePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "zero" => Ok(Self::Zero),
            "self_loop" => Ok(Self::SelfLoop),
            other => Err(Error::Config(format!("unknown isolated-node policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub self_loops: bool,
    pub isolated_node_policy: IsolatedNodePolicy,
}

/// `P` in factored form: `(Px)_u = diag_u x_u + s_u Σ_{v ~ u} s_v x_v`.
#[derive(Debug, Clone)]
pub struct Propagator<'g> {
    graph: &'g Graph,
    inv_sqrt: Vec<f64>,
    diag: Vec<f64>,
}

impl<'g> Propagator<'g> {
    pub fn new(graph: &'g Graph, cfg: PropagationConfig) -> Self {
        let n = graph.num_nodes();
        let mut inv_sqrt = vec![0.0; n];
        let mut diag = vec![0.0; n];
        for u in 0..n {
            let d = graph.degree(u);
            if cfg.self_loops {
                let dh = (d + 1) as f64;
                inv_sqrt[u] = 1.0 / dh.sqrt();
                diag[u] = 1.0 / dh;
            } else if d > 0 {
                inv_sqrt[u] = 1.0 / (d as f64).sqrt();
            } else if cfg.isolated_node_policy == IsolatedNodePolicy::SelfLoop {
                diag[u] = 1.0;
            }
        }
        Self { graph, inv_sqrt, diag }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    /// `out = P x` for a single column. `scratch` must have length `n`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        for ((s, &xi), &w) in scratch.iter_mut().zip(x).zip(&self.inv_sqrt) {
            *s = w * xi;
        }
        let g = self.graph;
        for u in 0..g.n {
            let acc: f64 = g.neighbors(u).iter().map(|&v| scratch[v]).sum();
            out[u] = self.diag[u] * x[u] + self.inv_sqrt[u] * acc;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        let mut scratch = vec![0.0; x.len()];
        self.apply_into(x, &mut out, &mut scratch);
        out
    }
}

/// Returns `P x`; `x` is left untouched.
pub fn propagate(g: &Graph, cfg: PropagationConfig, x: &SignalMatrix) -> Result<SignalMatrix> {
    if x.rows() != g.num_nodes() {
        return Err(Error::Dimension {
            what: "signal rows vs graph nodes",
            expected: g.num_nodes(),
            actual: x.rows(),
        });
    }
    let prop = Propagator::new(g, cfg);
    let mut out = SignalMatrix::zeros(x.rows(), x.cols());
    let mut scratch = vec![0.0; x.rows()];
    for j in 0..x.cols() {
        prop.apply_into(x.col(j), out.col_mut(j), &mut scratch);
    }
    Ok(out)
}

fn check_labels(g: &Graph, labels: &[usize]) -> Result<()> {
    if labels.len() != g.num_nodes() {
        return Err(Error::Dimension {
            what: "labels vs graph nodes",
            expected: g.num_nodes(),
            actual: labels.len(),
        });
    }
    Ok(())
}

/// Count of edges whose endpoints share a label.
pub(crate) fn same_label_edges(g: &Graph, labels: &[usize]) -> usize {
    g.edges().filter(|&(u, v)| labels[u] == labels[v]).count()
}

/// Fraction of edges whose two endpoints carry the same label.
pub fn homophily_ratio(g: &Graph, labels: &[usize]) -> Result<f64> {
    check_labels(g, labels)?;
    let m = g.num_edges();
    if m == 0 {
        return Err(Error::NoEdges);
    }
    Ok(same_label_edges(g, labels) as f64 / m as f64)
}

/// Ratio used when the training set induces no edges (θ = π/4).
pub const FALLBACK_HOMOPHILY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomophilyEstimate {
    pub ratio: f64,
    /// Number of train-train edges the estimate is based on.
    pub edges_used: usize,
    /// Set when no train-train edge exists and [`FALLBACK_HOMOPHILY`] was returned.
    pub fallback: bool,
}

/// Estimates the homophily ratio from edges with both endpoints in the train set.
pub fn estimate_homophily(g: &Graph, split: &LabeledSplit) -> Result<HomophilyEstimate> {
    check_labels(g, &split.labels)?;
    if split.train.is_empty() {
        return Err(Error::Split("train set is empty".into()));
    }
    let mut in_train = vec![false; g.num_nodes()];
    for &u in &split.train {
        in_train[u] = true;
    }
    let (mut total, mut same) = (0usize, 0usize);
    for (u, v) in g.edges() {
        if in_train[u] && in_train[v] {
            total += 1;
            if split.labels[u] == split.labels[v] {
                same += 1;
            }
        }
    }
    Ok(if total == 0 {
        HomophilyEstimate {
            ratio: FALLBACK_HOMOPHILY,
            edges_used: 0,
            fallback: true,
        }
    } else {
        HomophilyEstimate {
            ratio: same as f64 / total as f64,
            edges_used: total,
            fallback: false,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Train,
    Val,
    Test,
}

/// Node labels plus disjoint train/validation/test index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSplit {
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl LabeledSplit {
    /// Validates and canonicalizes (sorts) the index sets. The class count is
    /// `max label + 1`; every class below it must occur.
    pub fn new(labels: Vec<usize>, mut train: Vec<usize>, mut val: Vec<usize>, mut test: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("labels".into()));
        }
        let n = labels.len();
        let num_classes = labels.iter().max().unwrap() + 1;
        let mut present = vec![false; num_classes];
        for &y in &labels {
            present[y] = true;
        }
        if let Some(c) = present.iter().position(|p| !p) {
            return Err(Error::Split(format!(
                "class {c} never appears in labels (classes must be 0..{num_classes})"
            )));
        }
        let mut owner = vec![None::<&str>; n];
        for (name, set) in [("train", &mut train), ("val", &mut val), ("test", &mut test)] {
            set.sort_unstable();
            for &u in set.iter() {
                if u >= n {
                    return Err(Error::Split(format!("{name} index {u} out of range for {n} nodes")));
                }
                if let Some(prev) = owner[u] {
                    return Err(Error::Split(format!("node {u} appears in both {prev} and {name}")));
                }
                owner[u] = Some(name);
            }
        }
        Ok(Self {
            labels,
            num_classes,
            train,
            val,
            test,
        })
    }

    /// Every node in the train set, nothing held out.
    pub fn all_train(labels: Vec<usize>) -> Result<Self> {
        let train = (0..labels.len()).collect();
        Self::new(labels, train, Vec::new(), Vec::new())
    }

    /// Uniform random split with the given train and validation fractions; the
    /// rest goes to test. Uses the `"split"` sub-seed.
    pub fn random(labels: Vec<usize>, train_frac: f64, val_frac: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_frac) || !(0.0..=1.0).contains(&val_frac) || train_frac + val_frac > 1.0 + 1e-12
        {
            return Err(Error::Split(format!(
                "fractions train={train_frac} val={val_frac} must lie in [0,1] and sum to at most 1"
            )));
        }
        let n = labels.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(seed, "split"));
        let n_train = (train_frac * n as f64).round() as usize;
        let n_val = ((val_frac * n as f64).round() as usize).min(n - n_train);
        let train = order[..n_train].to_vec();
        let val = order[n_train..n_train + n_val].to_vec();
        let test = order[n_train + n_val..].to_vec();
        Self::new(labels, train, val, test)
    }

    pub fn subset(&self, which: Subset) -> &[usize] {
        match which {
            Subset::Train => &self.train,
            Subset::Val => &self.val,
            Subset::Test => &self.test,
        }
    }
}
