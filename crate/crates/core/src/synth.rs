//! Synthetic datasets for homophily sweeps: a fixed planted-partition graph,
//! random one-hot features, and labels reassigned node by node until the
//! homophily ratio reaches a target.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{homophily_ratio, same_label_edges, Graph, LabeledSplit};
use crate::io::{format_edge_list, format_labels, format_matrix, write_json, write_text, SplitFile};
use crate::matrix::SignalMatrix;
use crate::seed::rng_for;

/// Homophily targets of the standard sweep, lowest first.
pub const SWEEP_TARGETS: [f64; 8] = [0.13, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.81];

/// How far a target may sit above the base ratio and still count as "the base".
pub const REACH_TOLERANCE: f64 = 0.02;

pub const DEFAULT_FEATURE_DIM: usize = 100;

/// One 1 per row in a uniformly random column.
pub fn random_onehot_features(n: usize, d: usize, seed: u64) -> Result<SignalMatrix> {
    if d == 0 {
        return Err(Error::Config("feature dimension must be at least 1".into()));
    }
    let mut rng = rng_for(seed, "features");
    let mut x = SignalMatrix::zeros(n, d);
    for i in 0..n {
        x.set(i, rng.random_range(0..d), 1.0);
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub nodes: usize,
    pub edges: usize,
    pub classes: usize,
    pub homophily: f64,
    pub seed: u64,
}

impl PlantedSpec {
    /// Same size as the usual citation benchmark (2708 nodes, 5429 edges), with
    /// eight balanced classes so that low-homophily targets stay reachable.
    pub fn cora_like(seed: u64) -> Self {
        Self {
            nodes: 2708,
            edges: 5429,
            classes: 8,
            homophily: 0.81,
            seed,
        }
    }
}

/// Connected planted-partition graph with exactly `round(homophily * edges)`
/// same-class edges. Labels are uniform over classes. A random attachment tree
/// guarantees connectivity; remaining edges join random node pairs.
pub fn planted_partition(spec: &PlantedSpec) -> Result<(Graph, Vec<usize>)> {
    let PlantedSpec {
        nodes: n,
        edges: m,
        classes: c,
        homophily,
        seed,
    } = *spec;
    if c < 2 || n < 2 * c {
        return Err(Error::Config(format!(
            "need at least 2 classes and 2 nodes per class, got n={n} C={c}"
        )));
    }
    if !(0.0..=1.0).contains(&homophily) {
        return Err(Error::Config(format!("homophily {homophily} outside [0, 1]")));
    }
    let max_edges = n * (n - 1) / 2;
    if m < n - 1 || m > max_edges / 2 {
        return Err(Error::Config(format!(
            "edge count {m} must be in [{}, {}]",
            n - 1,
            max_edges / 2
        )));
    }
    let mut rng = rng_for(seed, "graph");

    // balanced labels, then shuffled
    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    labels.shuffle(&mut rng);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (u, &y) in labels.iter().enumerate() {
        by_class[y].push(u);
    }

    let same_total = (homophily * m as f64).round() as usize;
    let mut same_flags: Vec<bool> = (0..m).map(|i| i < same_total).collect();
    same_flags.shuffle(&mut rng);

    let mut edges = std::collections::HashSet::with_capacity(m);
    let key = |u: usize, v: usize| (u.min(v), u.max(v));

    // attachment tree over a random node order; a node may only attach to
    // earlier nodes, falling back to the opposite edge type when none fit
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut placed_by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    let mut placed: Vec<usize> = Vec::with_capacity(n);
    let mut flag_idx = 0;
    let mut deferred: Vec<bool> = Vec::new();
    for &u in &order {
        if !placed.is_empty() {
            let want_same = same_flags[flag_idx];
            flag_idx += 1;
            let same_pool = &placed_by_class[labels[u]];
            let other_count = placed.len() - same_pool.len();
            let use_same = if want_same {
                !same_pool.is_empty()
            } else {
                other_count == 0
            };
            if use_same != want_same {
                deferred.push(want_same);
            }
            let v = if use_same {
                *same_pool.choose(&mut rng).expect("nonempty pool")
            } else {
                loop {
                    let v = *placed.choose(&mut rng).expect("nonempty placed");
                    if labels[v] != labels[u] {
                        break v;
                    }
                }
            };
            edges.insert(key(u, v));
            if use_same != want_same {
                // swap the flag for a later edge so the same-class total is kept
                if let Some(pos) = same_flags[flag_idx..].iter().position(|&f| f == use_same) {
                    same_flags.swap(flag_idx + pos, flag_idx - 1);
                }
            }
        }
        placed.push(u);
        placed_by_class[labels[u]].push(u);
    }

    for &want_same in &same_flags[flag_idx..] {
        loop {
            let u = rng.random_range(0..n);
            let v = if want_same {
                *by_class[labels[u]].choose(&mut rng).expect("class nonempty")
            } else {
                rng.random_range(0..n)
            };
            if u == v || (labels[u] == labels[v]) != want_same {
                continue;
            }
            if edges.insert(key(u, v)) {
                break;
            }
        }
    }

    let mut edge_list: Vec<(usize, usize)> = edges.into_iter().collect();
    edge_list.sort_unstable();
    Ok((Graph::from_edges(Some(n), &edge_list), labels))
}

/// Uniformly random-looking simple `k`-regular graph by stub pairing. Each
/// stub is paired with a random remaining stub, rejecting pairs that would form
/// a self-loop or a repeated edge; if a stub cannot be paired the whole
/// construction restarts.
pub fn random_regular_graph(n: usize, k: usize, seed: u64) -> Result<Graph> {
    if k >= n || !(n * k).is_multiple_of(2) {
        return Err(Error::Config(format!("no simple {k}-regular graph on {n} nodes")));
    }
    let mut rng = rng_for(seed, "regular");
    const ATTEMPTS: usize = 64;
    'restart: loop {
        let mut stubs: Vec<usize> = (0..n).flat_map(|u| std::iter::repeat_n(u, k)).collect();
        stubs.shuffle(&mut rng);
        let mut adj: Vec<Vec<usize>> = vec![Vec::with_capacity(k); n];
        let mut edges = Vec::with_capacity(n * k / 2);
        while let Some(u) = stubs.pop() {
            let mut paired = false;
            for _ in 0..ATTEMPTS {
                if stubs.is_empty() {
                    break;
                }
                let i = rng.random_range(0..stubs.len());
                let v = stubs[i];
                if v != u && !adj[u].contains(&v) {
                    stubs.swap_remove(i);
                    adj[u].push(v);
                    adj[v].push(u);
                    edges.push((u, v));
                    paired = true;
                    break;
                }
            }
            if !paired {
                continue 'restart;
            }
        }
        return Ok(Graph::from_edges(Some(n), &edges));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub base_graph: Graph,
    pub base_labels: Vec<usize>,
    pub target_h: f64,
    pub feature_dim: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(base_graph: Graph, base_labels: Vec<usize>, target_h: f64, seed: u64) -> Self {
        Self {
            base_graph,
            base_labels,
            target_h,
            feature_dim: DEFAULT_FEATURE_DIM,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.target_h) {
            return Err(Error::Config(format!(
                "target homophily {} outside [0, 1]",
                self.target_h
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature dimension must be at least 1".into()));
        }
        if self.base_graph.num_edges() == 0 {
            return Err(Error::NoEdges);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reassignment {
    pub labels: Vec<usize>,
    pub achieved_h: f64,
    pub base_h: f64,
    /// Nodes visited along the permutation before stopping.
    pub steps: usize,
}

/// Running state of the reassignment walk: labels plus the same-class edge count.
struct Walk<'a> {
    graph: &'a Graph,
    labels: Vec<usize>,
    same: usize,
}

impl<'a> Walk<'a> {
    fn new(graph: &'a Graph, labels: Vec<usize>) -> Self {
        let same = same_label_edges(graph, &labels);
        Self { graph, labels, same }
    }

    fn ratio(&self) -> f64 {
        self.same as f64 / self.graph.num_edges() as f64
    }

    /// Relabels `u` and updates the count from its neighborhood only.
    fn relabel(&mut self, u: usize, class: usize) {
        let old = self.labels[u];
        if old == class {
            return;
        }
        for &v in self.graph.neighbors(u) {
            let y = self.labels[v];
            if y == old {
                self.same -= 1;
            } else if y == class {
                self.same += 1;
            }
        }
        self.labels[u] = class;
    }
}

/// Walks a random node permutation, giving each node a class drawn uniformly
/// over all classes. Stops the first time the ratio falls to or below the
/// target, keeping whichever of the states just before and after the crossing
/// is closer. A full pass without crossing falls back to the lowest state seen
/// if it lies within [`REACH_TOLERANCE`]. Targets at most that far above the
/// base ratio return the base labels unchanged.
pub fn reassign_to_target(spec: &SynthSpec) -> Result<Reassignment> {
    spec.validate()?;
    let g = &spec.base_graph;
    let base_h = homophily_ratio(g, &spec.base_labels)?;
    let target = spec.target_h;
    if target >= base_h {
        if target - base_h <= REACH_TOLERANCE {
            return Ok(Reassignment {
                labels: spec.base_labels.clone(),
                achieved_h: base_h,
                base_h,
                steps: 0,
            });
        }
        return Err(Error::Unreachable {
            target,
            closest: base_h,
        });
    }

    let classes = spec.base_labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = rng_for(spec.seed, "reassign");
    let mut order: Vec<usize> = (0..g.num_nodes()).collect();
    order.shuffle(&mut rng);

    let mut walk = Walk::new(g, spec.base_labels.clone());
    let mut draws = Vec::with_capacity(order.len());
    let (mut closest, mut closest_step) = (base_h, 0);
    for (step, &u) in order.iter().enumerate() {
        let before = (walk.labels[u], walk.ratio());
        let class = rng.random_range(0..classes);
        draws.push(class);
        walk.relabel(u, class);
        let h = walk.ratio();
        if h <= target {
            let (labels, achieved_h, steps) = if (before.1 - target).abs() < (h - target).abs() {
                walk.relabel(u, before.0);
                (walk.labels, before.1, step)
            } else {
                (walk.labels, h, step + 1)
            };
            return Ok(Reassignment {
                labels,
                achieved_h,
                base_h,
                steps,
            });
        }
        if h < closest {
            (closest, closest_step) = (h, step + 1);
        }
    }
    if closest - target > REACH_TOLERANCE {
        return Err(Error::Unreachable { target, closest });
    }
    let mut labels = spec.base_labels.clone();
    for (&u, &class) in order.iter().zip(&draws).take(closest_step) {
        labels[u] = class;
    }
    Ok(Reassignment {
        labels,
        achieved_h: closest,
        base_h,
        steps: closest_step,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub nodes: usize,
    pub edges: usize,
    pub classes: usize,
    pub feature_dim: usize,
    pub base_h: f64,
    pub target_h: f64,
    pub achieved_h: f64,
    pub reassignment_steps: usize,
    pub seed: u64,
    pub files: SynthFiles,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthFiles {
    pub graph: String,
    pub labels: String,
    pub features: String,
    pub split: String,
}

impl Default for SynthFiles {
    fn default() -> Self {
        Self {
            graph: "edges.txt".into(),
            labels: "labels.txt".into(),
            features: "features.txt".into(),
            split: "split.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub graph: Graph,
    pub features: SignalMatrix,
    pub split: LabeledSplit,
    pub reassignment: Reassignment,
    pub target_h: f64,
    pub seed: u64,
}

pub const TRAIN_FRACTION: f64 = 0.6;
pub const VAL_FRACTION: f64 = 0.2;

/// Reassigns labels, draws features and a 60/20/20 split, all from `spec.seed`.
pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    let reassignment = reassign_to_target(spec)?;
    let features = random_onehot_features(spec.base_graph.num_nodes(), spec.feature_dim, spec.seed)?;
    let split = LabeledSplit::random(reassignment.labels.clone(), TRAIN_FRACTION, VAL_FRACTION, spec.seed)?;
    Ok(SynthDataset {
        graph: spec.base_graph.clone(),
        features,
        split,
        reassignment,
        target_h: spec.target_h,
        seed: spec.seed,
    })
}

impl SynthDataset {
    pub fn manifest(&self) -> SynthManifest {
        SynthManifest {
            nodes: self.graph.num_nodes(),
            edges: self.graph.num_edges(),
            classes: self.split.num_classes,
            feature_dim: self.features.cols(),
            base_h: self.reassignment.base_h,
            target_h: self.target_h,
            achieved_h: self.reassignment.achieved_h,
            reassignment_steps: self.reassignment.steps,
            seed: self.seed,
            files: SynthFiles::default(),
        }
    }

    /// Writes the edge list, labels, features, split and `manifest.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<SynthManifest> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = self.manifest();
        let files = &manifest.files;
        write_text(dir.join(&files.graph), &format_edge_list(&self.graph))?;
        write_text(dir.join(&files.labels), &format_labels(&self.split.labels))?;
        write_text(dir.join(&files.features), &format_matrix(&self.features))?;
        write_json(dir.join(&files.split), &SplitFile::from(&self.split))?;
        write_json(dir.join("manifest.json"), &manifest)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{load_graph, load_labels, load_matrix, load_split};

    #[test]
    fn onehot_rows() {
        let x = random_onehot_features(50, 7, 1).unwrap();
        for i in 0..50 {
            let row = x.row(i);
            assert_eq!(row.iter().sum::<f64>(), 1.0);
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
        }
        assert_eq!(x.as_slice().iter().sum::<f64>(), 50.0);
        assert_eq!(x, random_onehot_features(50, 7, 1).unwrap());
        assert_ne!(x, random_onehot_features(50, 7, 2).unwrap());
        assert!(random_onehot_features(5, 0, 1).is_err());
    }

    #[test]
    fn planted_partition_hits_counts() {
        let spec = PlantedSpec {
            nodes: 300,
            edges: 900,
            classes: 4,
            homophily: 0.7,
            seed: 5,
        };
        let (g, labels) = planted_partition(&spec).unwrap();
        assert_eq!(g.num_nodes(), 300);
        assert_eq!(g.num_edges(), 900);
        assert!(g.is_connected());
        assert_eq!(same_label_edges(&g, &labels), 630);
        assert_eq!(planted_partition(&spec).unwrap().0, g);
    }

    #[test]
    fn regular_graph_degrees() {
        let g = random_regular_graph(50, 6, 3).unwrap();
        assert_eq!(g.num_edges(), 150);
        assert!(g.degrees().iter().all(|&d| d == 6));
        assert!(random_regular_graph(5, 3, 0).is_err());
        assert!(random_regular_graph(4, 4, 0).is_err());
    }

    fn small_base() -> (Graph, Vec<usize>) {
        planted_partition(&PlantedSpec {
            nodes: 200,
            edges: 600,
            classes: 5,
            homophily: 0.8,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn incremental_count_matches_recount() {
        let (g, labels) = small_base();
        let mut walk = Walk::new(&g, labels);
        let mut rng = rng_for(0, "test");
        for u in 0..g.num_nodes() {
            walk.relabel(u, rng.random_range(0..5));
            assert_eq!(walk.same, same_label_edges(&g, &walk.labels));
        }
    }

    #[test]
    fn base_target_is_identity() {
        let (g, labels) = small_base();
        let h = homophily_ratio(&g, &labels).unwrap();
        let out = reassign_to_target(&SynthSpec::new(g, labels.clone(), h, 1)).unwrap();
        assert_eq!(out.steps, 0);
        assert_eq!(out.labels, labels);
    }

    #[test]
    fn reaches_targets_on_the_way_down() {
        let (g, labels) = small_base();
        for target in [0.7, 0.5, 0.35] {
            let out = reassign_to_target(&SynthSpec::new(g.clone(), labels.clone(), target, 4)).unwrap();
            assert!(
                (out.achieved_h - target).abs() <= 0.02,
                "{target} -> {}",
                out.achieved_h
            );
            assert_eq!(homophily_ratio(&g, &out.labels).unwrap(), out.achieved_h);
        }
    }

    #[test]
    fn near_miss_within_tolerance_keeps_lowest_state() {
        let (g, labels) = small_base();
        let floor = match reassign_to_target(&SynthSpec::new(g.clone(), labels.clone(), 0.0, 4)) {
            Err(Error::Unreachable { closest, .. }) => closest,
            other => panic!("unexpected {other:?}"),
        };
        let out = reassign_to_target(&SynthSpec::new(g.clone(), labels, floor - 0.01, 4)).unwrap();
        assert_eq!(out.achieved_h, floor);
        assert_eq!(homophily_ratio(&g, &out.labels).unwrap(), floor);
    }

    #[test]
    fn unreachable_reports_closest() {
        let (g, labels) = small_base();
        match reassign_to_target(&SynthSpec::new(g.clone(), labels.clone(), 0.01, 4)) {
            Err(Error::Unreachable { closest, .. }) => assert!(closest > 0.01 && closest < 0.5),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            reassign_to_target(&SynthSpec::new(g, labels, 0.95, 4)),
            Err(Error::Unreachable { .. })
        ));
    }

    #[test]
    fn dataset_round_trips_through_files() {
        let (g, labels) = small_base();
        let mut spec = SynthSpec::new(g, labels, 0.5, 8);
        spec.feature_dim = 10;
        let ds = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = ds.write(dir.path()).unwrap();
        assert_eq!(manifest.achieved_h, ds.reassignment.achieved_h);
        let g2 = load_graph(dir.path().join("edges.txt"), Some(200)).unwrap();
        assert_eq!(g2, ds.graph);
        let y = load_labels(dir.path().join("labels.txt")).unwrap();
        assert_eq!(y, ds.split.labels);
        assert_eq!(load_matrix(dir.path().join("features.txt")).unwrap(), ds.features);
        assert_eq!(load_split(dir.path().join("split.json"), y).unwrap(), ds.split);
        assert_eq!(ds.split.train.len(), 120);
    }
}
