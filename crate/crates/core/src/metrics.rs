//! Spectral diagnostics: signal frequency, its closed-form expectation on
//! random regular graphs, consecutive-basis angles and per-hop spectrum profiles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{average_angles, column_angle_degrees, AngleReport, BasisSet};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::norm;

/// Degree-normalized Dirichlet energy
/// `f(x) = Σ_{(u,v) ∈ E} (x_u - x_v)^2 / (2 Σ_u x_u^2 d_u)`, which lies in `[0, 1]`.
pub fn signal_frequency(g: &Graph, x: &[f64]) -> Result<f64> {
    if x.len() != g.num_nodes() {
        return Err(Error::Dimension {
            what: "signal length vs graph nodes",
            expected: g.num_nodes(),
            actual: x.len(),
        });
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroSignal);
    }
    let mut energy = 0.0;
    let mut weight = 0.0;
    for u in 0..g.num_nodes() {
        let nbrs = g.neighbors(u);
        weight += x[u] * x[u] * nbrs.len() as f64;
        for &v in nbrs.iter().filter(|&&v| v > u) {
            let diff = x[u] - x[v];
            energy += diff * diff;
        }
    }
    if weight == 0.0 {
        return Err(Error::ZeroDegreeWeight);
    }
    Ok(energy / (2.0 * weight))
}

fn check_regular_args(n: usize, dot: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 nodes, got {n}")));
    }
    if dot.is_nan() || dot.abs() > 1.0 {
        return Err(Error::Config(format!("|phi . x| = {} exceeds 1", dot.abs())));
    }
    Ok(())
}

/// `(n + 1 - 2 (φ·x)^2) / (4 (n - 1))`, the published expectation of `f(x)` for a
/// unit signal `x` over random regular graphs, with `φ` the normalized all-ones
/// vector. Decreasing in `|φ·x|`.
///
/// This form does not match the exact expectation except at `(φ·x)^2 = 1/2`; see
/// [`expected_frequency_regular_exact`].
pub fn expected_frequency_regular(n: usize, dot: f64) -> Result<f64> {
    check_regular_args(n, dot)?;
    let n = n as f64;
    Ok((n + 1.0 - 2.0 * dot * dot) / (4.0 * (n - 1.0)))
}

/// Exact expectation of `f(x)` for a unit signal over uniformly random
/// `k`-regular graphs on `n` nodes: every pair is an edge with probability
/// `k / (n - 1)`, and `Σ_{u<v} (x_u - x_v)^2 = n - (Σ x)^2 = n (1 - (φ·x)^2)`, so
/// `E[f] = n (1 - (φ·x)^2) / (2 (n - 1))`, independent of `k`.
pub fn expected_frequency_regular_exact(n: usize, dot: f64) -> Result<f64> {
    check_regular_args(n, dot)?;
    let n = n as f64;
    Ok(n * (1.0 - dot * dot) / (2.0 * (n - 1.0)))
}

/// Mean angle (degrees) between hop `k` and hop `k + 1`, averaged over feature
/// columns. Columns where either slice has zero norm are skipped and counted.
pub fn consecutive_angles(basis: &BasisSet) -> Result<AngleReport> {
    if basis.num_hops() < 2 {
        return Err(Error::Config("angles need at least two hops".into()));
    }
    let pairs = basis.num_hops() - 1;
    let per_column: Vec<Vec<Option<f64>>> = (0..basis.dim())
        .map(|j| {
            (0..pairs)
                .map(|k| column_angle_degrees(basis.hops[k].col(j), basis.hops[k + 1].col(j)))
                .collect()
        })
        .collect();
    average_angles(basis.kind, per_column, pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub hop: usize,
    pub frequency: f64,
    pub weight: f64,
}

/// Mean frequency of each hop paired with its learned weight. Serializes as a
/// JSON array of `{hop, frequency, weight}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpectrumProfile {
    pub points: Vec<SpectrumPoint>,
}

impl SpectrumProfile {
    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.frequency)
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.weight)
    }
}

/// Per-hop mean of [`signal_frequency`] over the basis columns. Zero columns
/// (flagged at construction) are skipped.
pub fn spectrum_profile(g: &Graph, basis: &BasisSet, weights: &[f64]) -> Result<SpectrumProfile> {
    if weights.len() != basis.num_hops() {
        return Err(Error::Dimension {
            what: "weights vs basis hops",
            expected: basis.num_hops(),
            actual: weights.len(),
        });
    }
    let points = basis
        .hops
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(hop, (slice, &weight))| {
            let freqs = (0..slice.cols())
                .into_par_iter()
                .map(|j| {
                    let col = slice.col(j);
                    if norm(col) == 0.0 {
                        Ok(None)
                    } else {
                        signal_frequency(g, col).map(Some)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let used: Vec<f64> = freqs.into_iter().flatten().collect();
            if used.is_empty() {
                return Err(Error::ZeroSignal);
            }
            Ok(SpectrumPoint {
                hop,
                frequency: used.iter().sum::<f64>() / used.len() as f64,
                weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectrumProfile { points })
}

/// Mean frequency of the one-hot indicator signals of each class.
pub fn label_signal_frequency(g: &Graph, labels: &[usize]) -> Result<f64> {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    let mut used = 0usize;
    for c in 0..classes {
        let x: Vec<f64> = labels.iter().map(|&y| f64::from(u8::from(y == c))).collect();
        match signal_frequency(g, &x) {
            Ok(f) => {
                total += f;
                used += 1;
            }
            Err(Error::ZeroSignal | Error::ZeroDegreeWeight) => {}
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::ZeroSignal);
    }
    Ok(total / used as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisFlags, BasisKind};
    use crate::graph::PropagationConfig;
    use crate::matrix::SignalMatrix;

    #[test]
    fn constant_on_regular_graph_is_zero() {
        let cycle = Graph::from_edges(None, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]);
        assert_eq!(signal_frequency(&cycle, &[1.0; 5]).unwrap(), 0.0);
    }

    #[test]
    fn alternating_edge_is_one() {
        let g = Graph::from_edges(None, &[(0, 1)]);
        assert_eq!(signal_frequency(&g, &[1.0, -1.0]).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_signals_rejected() {
        let g = Graph::from_edges(Some(3), &[(0, 1)]);
        assert!(matches!(signal_frequency(&g, &[0.0; 3]), Err(Error::ZeroSignal)));
        assert!(matches!(
            signal_frequency(&g, &[0.0, 0.0, 2.0]),
            Err(Error::ZeroDegreeWeight)
        ));
        assert!(matches!(signal_frequency(&g, &[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn closed_form_values() {
        assert!((expected_frequency_regular(7, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert!((expected_frequency_regular(5, 0.0).unwrap() - 0.375).abs() < 1e-15);
        assert!(expected_frequency_regular(1, 0.0).is_err());
        assert!(expected_frequency_regular(5, 1.5).is_err());
        // the two forms coincide at (φ·x)^2 = 1/2
        let d = 0.5f64.sqrt();
        let a = expected_frequency_regular(50, d).unwrap();
        let b = expected_frequency_regular_exact(50, d).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert_eq!(expected_frequency_regular_exact(50, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_decreases_with_alignment() {
        // θ is the angle to φ; increasing θ must increase both forms
        let mut prev = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for i in 0..20 {
            let theta = (i as f64 / 20.0) * std::f64::consts::FRAC_PI_2;
            let cur = (
                expected_frequency_regular(40, theta.cos()).unwrap(),
                expected_frequency_regular_exact(40, theta.cos()).unwrap(),
            );
            assert!(cur.0 > prev.0 && cur.1 > prev.1);
            prev = cur;
        }
    }

    #[test]
    fn profile_of_fixed_point_basis_is_zero() {
        // on a regular graph D^{1/2} 1 is a constant vector
        let cycle = Graph::from_edges(None, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)]);
        let x = SignalMatrix::from_vec(vec![2f64.sqrt(); 6]);
        let basis = BasisSet {
            kind: BasisKind::Homophily,
            hops: vec![x.clone(), x.clone(), x],
            theta: None,
            tau: None,
            h_used: None,
            propagation: PropagationConfig::default(),
            flags: BasisFlags::default(),
        };
        let profile = spectrum_profile(&cycle, &basis, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(profile.points.len(), 3);
        assert!(profile.frequencies().all(|f| f == 0.0));
        assert_eq!(profile.weights().collect::<Vec<_>>(), vec![0.1, 0.2, 0.3]);
        assert!(spectrum_profile(&cycle, &basis, &[0.1]).is_err());

        let json = serde_json::to_value(&profile).unwrap();
        assert_eq!(json[1]["hop"], 1);
        assert_eq!(json[2]["weight"], 0.3);
    }

    #[test]
    fn label_frequency_tracks_cut() {
        let cycle = Graph::from_edges(None, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        // one cut pair per class out of volume 4: f = 2 / (2 * 4)
        assert!((label_signal_frequency(&cycle, &[0, 0, 1, 1]).unwrap() - 0.25).abs() < 1e-15);
        assert!((label_signal_frequency(&cycle, &[0, 1, 0, 1]).unwrap() - 0.5).abs() < 1e-15);
    }
}
