//! Polynomial signal bases built column by column from a feature matrix.
//!
//! Four kinds are supported:
//!
//! - **homophily**: `x, Px, ..., P^K x`, the monomial basis. Consecutive vectors
//!   converge in direction as `k` grows.
//! - **orthonormal**: the Krylov vectors `v_0..v_K` produced by the three-term
//!   recurrence `v_k = P v_{k-1} - (·)v_{k-1} - (·)v_{k-2}`, normalized.
//! - **heterophily**: unit vectors `u_0..u_K` with every pairwise dot product equal
//!   to `cos θ`, `θ = (1 - ĥ)π/2`. Each `u_k` is the normalized mean of the previous
//!   vectors pushed along the fresh Krylov direction `v_k` by the factor `t_k`.
//! - **unibasis**: `τ · normalize(P^k x) + (1 - τ) · u_k`.
//!
//! Every column is processed independently (and in parallel); there is no
//! cross-column reduction, so results do not depend on scheduling.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, PropagationConfig, Propagator};
use crate::io;
use crate::matrix::{axpy, dot, norm, scale, SignalMatrix};

/// Radicands in `[-RADICAND_SLACK, 0)` are treated as rounding noise and clamped.
pub const RADICAND_SLACK: f64 = 1e-9;

/// Smallest accepted `cos θ`; the scaling factors divide by it.
pub const MIN_COS_THETA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Homophily,
    Orthonormal,
    Heterophily,
    Unibasis,
}

impl BasisKind {
    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Homophily => "homophily",
            BasisKind::Orthonormal => "orthonormal",
            BasisKind::Heterophily => "heterophily",
            BasisKind::Unibasis => "unibasis",
        }
    }
}

impl std::str::FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homophily" | "hom" => Ok(BasisKind::Homophily),
            "orthonormal" | "ort" => Ok(BasisKind::Orthonormal),
            "heterophily" | "het" => Ok(BasisKind::Heterophily),
            "unibasis" | "uni" => Ok(BasisKind::Unibasis),
            other => Err(Error::Config(format!("unknown basis kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub hops: usize,
    pub h_hat: f64,
    pub tau: f64,
    pub theta_cap: f64,
    pub breakdown_tol: f64,
    #[serde(default)]
    pub propagation: PropagationConfig,
    #[serde(default)]
    pub reorthogonalization: Reorthogonalization,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            hops: 10,
            h_hat: 0.5,
            tau: 0.5,
            theta_cap: FRAC_PI_2 - 1e-3,
            breakdown_tol: 1e-10,
            propagation: PropagationConfig::default(),
            reorthogonalization: Reorthogonalization::None,
        }
    }
}

impl BasisConfig {
    pub fn new(hops: usize, h_hat: f64, tau: f64) -> Self {
        Self {
            hops,
            h_hat,
            tau,
            ..Self::default()
        }
    }

    /// `min((1 - ĥ)π/2, theta_cap)`. A perfectly homophilous estimate gives θ = 0.
    pub fn theta(&self) -> f64 {
        ((1.0 - self.h_hat) * FRAC_PI_2).min(self.theta_cap)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.h_hat) {
            return Err(Error::Config(format!("h_hat {} outside [0, 1]", self.h_hat)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.breakdown_tol.is_nan() || self.breakdown_tol < 0.0 {
            return Err(Error::Config("breakdown_tol must be non-negative".into()));
        }
        if self.theta().cos() < MIN_COS_THETA {
            return Err(Error::Config(format!(
                "cos(theta) = {} is not positive; lower theta_cap below pi/2",
                self.theta().cos()
            )));
        }
        Ok(())
    }
}

/// Where a column's Krylov sequence ran out of fresh directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown {
    pub column: usize,
    pub hop: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisFlags {
    /// Input columns with zero norm; every hop is zero for them.
    pub zero_columns: Vec<usize>,
    pub breakdowns: Vec<Breakdown>,
}

impl BasisFlags {
    pub fn is_clean(&self) -> bool {
        self.zero_columns.is_empty() && self.breakdowns.is_empty()
    }
}

/// `K + 1` slices, each `n x d`, plus the parameters that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    pub kind: BasisKind,
    pub hops: Vec<SignalMatrix>,
    pub theta: Option<f64>,
    pub tau: Option<f64>,
    pub h_used: Option<f64>,
    pub propagation: PropagationConfig,
    pub flags: BasisFlags,
}

impl BasisSet {
    pub fn num_hops(&self) -> usize {
        self.hops.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.hops.first().map_or(0, SignalMatrix::rows)
    }

    pub fn dim(&self) -> usize {
        self.hops.first().map_or(0, SignalMatrix::cols)
    }

    pub fn is_finite(&self) -> bool {
        self.hops.iter().all(SignalMatrix::is_finite)
    }

    /// Copy with every column of every slice scaled to unit norm (zero columns stay zero).
    pub fn unit_normalized(&self) -> BasisSet {
        let mut out = self.clone();
        for hop in &mut out.hops {
            for j in 0..hop.cols() {
                normalize_in_place(hop.col_mut(j));
            }
        }
        out
    }

    /// One text matrix per hop (`hop_0000.txt`, ...) followed by `manifest.json`,
    /// which is written last through a rename so its presence marks completion.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::with_capacity(self.hops.len());
        for (k, hop) in self.hops.iter().enumerate() {
            let name = hop_file_name(k);
            io::write_text(dir.join(&name), &io::format_matrix(hop))?;
            files.push(name);
        }
        let manifest = BasisManifest {
            kind: self.kind,
            hops: self.hops.len().saturating_sub(1),
            nodes: self.num_nodes(),
            dim: self.dim(),
            theta: self.theta,
            tau: self.tau,
            h_used: self.h_used,
            propagation: self.propagation,
            flags: self.flags.clone(),
            files,
        };
        io::write_json_atomic(dir.join(MANIFEST_FILE), &manifest)
    }

    pub fn import(dir: impl AsRef<Path>) -> Result<BasisSet> {
        let dir = dir.as_ref();
        let manifest: BasisManifest = io::read_json(dir.join(MANIFEST_FILE))?;
        let hops = manifest
            .files
            .iter()
            .map(|f| io::load_matrix(dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        for hop in &hops {
            if hop.rows() != manifest.nodes || hop.cols() != manifest.dim {
                return Err(Error::Format {
                    path: dir.to_path_buf(),
                    message: format!(
                        "hop file is {}x{}, manifest says {}x{}",
                        hop.rows(),
                        hop.cols(),
                        manifest.nodes,
                        manifest.dim
                    ),
                });
            }
        }
        Ok(BasisSet {
            kind: manifest.kind,
            hops,
            theta: manifest.theta,
            tau: manifest.tau,
            h_used: manifest.h_used,
            propagation: manifest.propagation,
            flags: manifest.flags,
        })
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn hop_file_name(k: usize) -> String {
    format!("hop_{k:04}.txt")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisManifest {
    pub kind: BasisKind,
    #[serde(rename = "K")]
    pub hops: usize,
    pub nodes: usize,
    pub dim: usize,
    pub theta: Option<f64>,
    pub tau: Option<f64>,
    pub h_used: Option<f64>,
    pub propagation: PropagationConfig,
    pub flags: BasisFlags,
    pub files: Vec<String>,
}

fn normalize_in_place(x: &mut [f64]) -> f64 {
    let nrm = norm(x);
    if nrm > 0.0 {
        scale(1.0 / nrm, x);
    }
    nrm
}

/// Orthonormal Krylov vectors from the three-term recurrence.
pub(crate) struct Krylov<'p> {
    prop: &'p Propagator<'p>,
    prev2: Vec<f64>,
    prev: Vec<f64>,
    next: Vec<f64>,
    scratch: Vec<f64>,
    tol: f64,
    broken: bool,
    guard: Option<OrthoGuard>,
}

impl<'p> Krylov<'p> {
    /// `v0` must be unit-norm.
    fn new(prop: &'p Propagator<'p>, v0: Vec<f64>, cfg: &BasisConfig) -> Self {
        let n = v0.len();
        let guard = match cfg.reorthogonalization {
            Reorthogonalization::None => None,
            mode => Some(OrthoGuard::new(mode, &v0)),
        };
        Self {
            prop,
            prev2: vec![0.0; n],
            prev: v0,
            next: vec![0.0; n],
            scratch: vec![0.0; n],
            tol: cfg.breakdown_tol,
            broken: false,
            guard,
        }
    }

    fn current(&self) -> &[f64] {
        &self.prev
    }

    fn mark_broken(&mut self) -> bool {
        self.prev.fill(0.0);
        self.broken = true;
        true
    }

    /// Advances one hop; returns `true` if the sequence broke down on this step.
    fn step(&mut self) -> bool {
        if self.broken {
            return false;
        }
        self.prop.apply_into(&self.prev, &mut self.next, &mut self.scratch);
        let (mut a, mut b) = (0.0, 0.0);
        for ((w, p1), p2) in self.next.iter().zip(&self.prev).zip(&self.prev2) {
            a += w * p1;
            b += w * p2;
        }
        let mut sq = 0.0;
        for ((w, p1), p2) in self.next.iter_mut().zip(&self.prev).zip(&self.prev2) {
            *w -= a * p1 + b * p2;
            sq += *w * *w;
        }
        std::mem::swap(&mut self.prev2, &mut self.prev);
        std::mem::swap(&mut self.prev, &mut self.next);
        let nrm = sq.sqrt();
        if nrm < self.tol || !nrm.is_finite() {
            return self.mark_broken();
        }
        scale(1.0 / nrm, &mut self.prev);
        if let Some(guard) = self.guard.as_mut() {
            if !guard.admit(&mut self.prev, a, nrm) {
                return self.mark_broken();
            }
        }
        false
    }
}

/// Extra orthogonalization against every earlier Krylov vector, which the
/// three-term recurrence alone loses in floating point after a few hundred hops.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reorthogonalization {
    /// Plain three-term recurrence, O(K(m + n)) per column.
    #[default]
    None,
    /// Reorthogonalize only when the estimated loss of orthogonality exceeds
    /// `sqrt(eps)` (Simon's omega recurrence), and on the step after.
    Partial,
    /// Reorthogonalize every step, O(K^2 n) per column.
    Full,
}

impl std::str::FromStr for Reorthogonalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "partial" => Ok(Self::Partial),
            "full" => Ok(Self::Full),
            other => Err(Error::Config(format!("unknown reorthogonalization {other:?}"))),
        }
    }
}

struct OrthoGuard {
    mode: Reorthogonalization,
    history: Vec<Vec<f64>>,
    alphas: Vec<f64>,
    /// `betas[j]` is the norm that produced `v_j`; `betas[0] = 0`.
    betas: Vec<f64>,
    omega_prev: Vec<f64>,
    omega_cur: Vec<f64>,
    force_next: bool,
    eps1: f64,
}

impl OrthoGuard {
    fn new(mode: Reorthogonalization, v0: &[f64]) -> Self {
        Self {
            mode,
            history: vec![v0.to_vec()],
            alphas: Vec::new(),
            betas: vec![0.0],
            omega_prev: Vec::new(),
            omega_cur: vec![1.0],
            force_next: false,
            eps1: f64::EPSILON * (v0.len() as f64).sqrt(),
        }
    }

    /// Takes the freshly normalized `v_{k+1}` with its recurrence coefficients
    /// and reorthogonalizes it if needed. Returns `false` if nothing is left.
    #[allow(clippy::needless_range_loop)]
    fn admit(&mut self, v: &mut [f64], alpha: f64, beta: f64) -> bool {
        let k = self.history.len() - 1;
        self.alphas.push(alpha);
        self.betas.push(beta);

        let mut omega = vec![0.0; k + 2];
        for j in 0..k {
            let mut w = self.betas[j + 1] * self.omega_cur[j + 1] + (self.alphas[j] - alpha) * self.omega_cur[j];
            if j > 0 {
                w += self.betas[j] * self.omega_cur[j - 1];
            }
            w -= self.betas[k] * self.omega_prev[j];
            w /= beta;
            omega[j] = w + self.eps1.copysign(w);
        }
        omega[k] = self.eps1;
        omega[k + 1] = 1.0;

        let lost = omega[..k].iter().any(|w| w.abs() > f64::EPSILON.sqrt());
        let needed = match self.mode {
            Reorthogonalization::None => false,
            Reorthogonalization::Full => true,
            Reorthogonalization::Partial => lost || self.force_next,
        };
        if needed {
            self.force_next = !self.force_next && self.mode == Reorthogonalization::Partial;
            // a second sweep only when the first removed a sizeable part
            // ("twice is enough")
            let mut nrm = 1.0;
            for _ in 0..2 {
                for prev in &self.history {
                    let c = dot(v, prev);
                    axpy(-c, prev, v);
                }
                let after = norm(v);
                let settled = after > 0.5 * nrm;
                nrm = after;
                if settled {
                    break;
                }
            }
            if nrm < REORTH_FLOOR {
                return false;
            }
            scale(1.0 / nrm, v);
            omega[..=k].fill(self.eps1);
        }
        self.history.push(v.to_vec());
        self.omega_prev = std::mem::replace(&mut self.omega_cur, omega);
        true
    }
}

/// Below this norm a reorthogonalized vector is treated as a breakdown.
const REORTH_FLOOR: f64 = 1e-8;

/// Equal-angle vectors `u_k` driven by a Krylov sequence.
pub(crate) struct Heterophily<'p> {
    krylov: Krylov<'p>,
    u: Vec<f64>,
    sum: Vec<f64>,
    cos_theta: f64,
    k: usize,
    column: usize,
}

impl<'p> Heterophily<'p> {
    fn new(prop: &'p Propagator<'p>, u0: Vec<f64>, cfg: &BasisConfig, column: usize) -> Self {
        Self {
            krylov: Krylov::new(prop, u0.clone(), cfg),
            sum: u0.clone(),
            u: u0,
            cos_theta: cfg.theta().cos(),
            k: 0,
            column,
        }
    }

    fn current(&self) -> &[f64] {
        &self.u
    }

    fn step(&mut self) -> Result<bool> {
        let broke = self.krylov.step();
        self.k += 1;
        let k = self.k as f64;
        let c = self.cos_theta;
        let sum_dot_prev = dot(&self.sum, &self.u);
        let v = self.krylov.current();

        // θ = 0 makes the radicand exactly zero in exact arithmetic; roundoff
        // would otherwise leak in through the square root
        let t = if self.krylov.broken || c == 1.0 {
            0.0
        } else {
            let ratio = sum_dot_prev / (k * c);
            let radicand = ratio * ratio - ((k - 1.0) * c + 1.0) / k;
            if radicand < -RADICAND_SLACK || radicand.is_nan() {
                return Err(Error::NegativeRadicand {
                    hop: self.k,
                    column: self.column,
                    radicand,
                });
            }
            radicand.max(0.0).sqrt()
        };

        let mut sq = 0.0;
        for ((ui, si), vi) in self.u.iter_mut().zip(&self.sum).zip(v) {
            *ui = si / k + t * vi;
            sq += *ui * *ui;
        }
        let inv = 1.0 / sq.sqrt();
        for (ui, si) in self.u.iter_mut().zip(self.sum.iter_mut()) {
            *ui *= inv;
            *si += *ui;
        }
        Ok(broke)
    }
}

struct Monomial<'p> {
    prop: &'p Propagator<'p>,
    cur: Vec<f64>,
    next: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'p> Monomial<'p> {
    fn new(prop: &'p Propagator<'p>, x: Vec<f64>) -> Self {
        let n = x.len();
        Self {
            prop,
            cur: x,
            next: vec![0.0; n],
            scratch: vec![0.0; n],
        }
    }

    fn step(&mut self) {
        self.prop.apply_into(&self.cur, &mut self.next, &mut self.scratch);
        std::mem::swap(&mut self.cur, &mut self.next);
    }
}

/// Per-column hop generator for every basis kind.
enum Column<'p> {
    Zero(Vec<f64>),
    Homophily(Monomial<'p>),
    Orthonormal(Krylov<'p>),
    Heterophily(Heterophily<'p>),
    Unibasis {
        mono: Monomial<'p>,
        het: Heterophily<'p>,
        tau: f64,
        mixed: Vec<f64>,
    },
}

impl<'p> Column<'p> {
    fn new(prop: &'p Propagator<'p>, kind: BasisKind, x: &[f64], cfg: &BasisConfig, column: usize) -> Self {
        let nrm = norm(x);
        if nrm == 0.0 {
            return Column::Zero(vec![0.0; x.len()]);
        }
        let unit = || x.iter().map(|v| v / nrm).collect::<Vec<_>>();
        match kind {
            BasisKind::Homophily => Column::Homophily(Monomial::new(prop, x.to_vec())),
            BasisKind::Orthonormal => Column::Orthonormal(Krylov::new(prop, unit(), cfg)),
            BasisKind::Heterophily => Column::Heterophily(Heterophily::new(prop, unit(), cfg, column)),
            BasisKind::Unibasis => {
                let mut col = Column::Unibasis {
                    mono: Monomial::new(prop, x.to_vec()),
                    het: Heterophily::new(prop, unit(), cfg, column),
                    tau: cfg.tau,
                    mixed: vec![0.0; x.len()],
                };
                col.remix();
                col
            }
        }
    }

    fn remix(&mut self) {
        if let Column::Unibasis { mono, het, tau, mixed } = self {
            let nrm = norm(&mono.cur);
            let inv = if nrm > 0.0 { 1.0 / nrm } else { 0.0 };
            let (a, b) = (*tau, 1.0 - *tau);
            for ((m, p), u) in mixed.iter_mut().zip(&mono.cur).zip(&het.u) {
                *m = a * (p * inv) + b * u;
            }
        }
    }

    fn current(&self) -> &[f64] {
        match self {
            Column::Zero(z) => z,
            Column::Homophily(m) => &m.cur,
            Column::Orthonormal(k) => k.current(),
            Column::Heterophily(h) => h.current(),
            Column::Unibasis { mixed, .. } => mixed,
        }
    }

    fn krylov(&self) -> Option<&[f64]> {
        match self {
            Column::Orthonormal(k) => Some(k.current()),
            Column::Heterophily(h) => Some(h.krylov.current()),
            Column::Unibasis { het, .. } => Some(het.krylov.current()),
            _ => None,
        }
    }

    /// Advances one hop; returns whether a breakdown occurred on this step.
    fn step(&mut self) -> Result<bool> {
        let broke = match self {
            Column::Zero(_) => false,
            Column::Homophily(m) => {
                m.step();
                false
            }
            Column::Orthonormal(k) => k.step(),
            Column::Heterophily(h) => h.step()?,
            Column::Unibasis { mono, het, .. } => {
                mono.step();
                het.step()?
            }
        };
        self.remix();
        Ok(broke)
    }
}

struct ColumnOutput {
    hops: Vec<Vec<f64>>,
    krylov: Option<Vec<Vec<f64>>>,
    zero: bool,
    breakdown: Option<usize>,
}

fn run_column(
    prop: &Propagator<'_>,
    kind: BasisKind,
    x: &[f64],
    cfg: &BasisConfig,
    column: usize,
    keep_krylov: bool,
) -> Result<ColumnOutput> {
    let mut col = Column::new(prop, kind, x, cfg, column);
    let zero = matches!(col, Column::Zero(_));
    let mut hops = Vec::with_capacity(cfg.hops + 1);
    let mut krylov = keep_krylov.then(|| Vec::with_capacity(cfg.hops + 1));
    let mut breakdown = None;
    let record = |col: &Column<'_>, hops: &mut Vec<Vec<f64>>, krylov: &mut Option<Vec<Vec<f64>>>| {
        hops.push(col.current().to_vec());
        if let Some(kr) = krylov.as_mut() {
            kr.push(col.krylov().map_or_else(|| vec![0.0; x.len()], <[f64]>::to_vec));
        }
    };
    record(&col, &mut hops, &mut krylov);
    for k in 1..=cfg.hops {
        if col.step()? && breakdown.is_none() {
            breakdown = Some(k);
        }
        record(&col, &mut hops, &mut krylov);
    }
    Ok(ColumnOutput {
        hops,
        krylov,
        zero,
        breakdown,
    })
}

fn check_rows(g: &Graph, x: &SignalMatrix) -> Result<()> {
    if x.rows() != g.num_nodes() {
        return Err(Error::Dimension {
            what: "feature rows vs graph nodes",
            expected: g.num_nodes(),
            actual: x.rows(),
        });
    }
    Ok(())
}

fn build(
    g: &Graph,
    x: &SignalMatrix,
    kind: BasisKind,
    cfg: &BasisConfig,
    keep_krylov: bool,
) -> Result<(BasisSet, Option<BasisSet>)> {
    check_rows(g, x)?;
    if matches!(kind, BasisKind::Heterophily | BasisKind::Unibasis) {
        cfg.validate()?;
    }
    let prop = Propagator::new(g, cfg.propagation);
    let outputs = (0..x.cols())
        .into_par_iter()
        .map(|j| run_column(&prop, kind, x.col(j), cfg, j, keep_krylov))
        .collect::<Result<Vec<_>>>()?;

    let n = x.rows();
    let assemble = |pick: &dyn Fn(&ColumnOutput) -> &Vec<Vec<f64>>| -> Vec<SignalMatrix> {
        (0..=cfg.hops)
            .map(|k| {
                let mut m = SignalMatrix::zeros(n, x.cols());
                for (j, out) in outputs.iter().enumerate() {
                    m.col_mut(j).copy_from_slice(&pick(out)[k]);
                }
                m
            })
            .collect()
    };

    let mut flags = BasisFlags::default();
    for (j, out) in outputs.iter().enumerate() {
        if out.zero {
            flags.zero_columns.push(j);
        }
        if let Some(hop) = out.breakdown {
            flags.breakdowns.push(Breakdown { column: j, hop });
        }
    }
    let uses_theta = matches!(kind, BasisKind::Heterophily | BasisKind::Unibasis);
    let basis = BasisSet {
        kind,
        hops: assemble(&|o| &o.hops),
        theta: uses_theta.then(|| cfg.theta()),
        tau: (kind == BasisKind::Unibasis).then_some(cfg.tau),
        h_used: uses_theta.then_some(cfg.h_hat),
        propagation: cfg.propagation,
        flags: flags.clone(),
    };
    let krylov = keep_krylov.then(|| BasisSet {
        kind: BasisKind::Orthonormal,
        hops: assemble(&|o| o.krylov.as_ref().expect("krylov kept")),
        theta: None,
        tau: None,
        h_used: None,
        propagation: cfg.propagation,
        flags,
    });
    Ok((basis, krylov))
}

/// Any kind of basis from one configuration.
pub fn build_basis(g: &Graph, x: &SignalMatrix, kind: BasisKind, cfg: &BasisConfig) -> Result<BasisSet> {
    build(g, x, kind, cfg, false).map(|(b, _)| b)
}

/// Raw monomial basis `P^k x`, `k = 0..=hops`, computed by repeated propagation.
pub fn homophily_basis(g: &Graph, x: &SignalMatrix, hops: usize, propagation: PropagationConfig) -> Result<BasisSet> {
    let cfg = BasisConfig {
        hops,
        propagation,
        ..BasisConfig::default()
    };
    build_basis(g, x, BasisKind::Homophily, &cfg)
}

/// Krylov vectors `v_0..v_K`; after a breakdown the remaining slices are zero.
pub fn orthonormal_basis(g: &Graph, x: &SignalMatrix, cfg: &BasisConfig) -> Result<BasisSet> {
    build_basis(g, x, BasisKind::Orthonormal, cfg)
}

/// Equal-angle basis `u_0..u_K` with pairwise dot products `cos θ`.
pub fn heterophily_basis(g: &Graph, x: &SignalMatrix, cfg: &BasisConfig) -> Result<BasisSet> {
    build_basis(g, x, BasisKind::Heterophily, cfg)
}

/// Heterophily basis together with the Krylov vectors that generated it.
pub fn heterophily_with_krylov(g: &Graph, x: &SignalMatrix, cfg: &BasisConfig) -> Result<(BasisSet, BasisSet)> {
    build(g, x, BasisKind::Heterophily, cfg, true).map(|(b, k)| (b, k.expect("krylov kept")))
}

/// `τ · normalize(P^k x) + (1 - τ) · u_k` per column.
pub fn uni_basis(g: &Graph, x: &SignalMatrix, cfg: &BasisConfig) -> Result<BasisSet> {
    build_basis(g, x, BasisKind::Unibasis, cfg)
}

/// Consecutive-angle diagnostic: one mean angle per hop pair, in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    pub kind: BasisKind,
    pub degrees: Vec<f64>,
    /// Columns left out of each average because one of the two slices had zero norm.
    pub skipped_columns: Vec<usize>,
}

/// Angle between two columns in degrees, `None` when either has zero norm.
pub fn column_angle_degrees(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees())
}

pub(crate) fn average_angles(kind: BasisKind, per_column: Vec<Vec<Option<f64>>>, pairs: usize) -> Result<AngleReport> {
    let mut degrees = Vec::with_capacity(pairs);
    let mut skipped_columns = Vec::with_capacity(pairs);
    for k in 0..pairs {
        let (mut sum, mut used, mut skipped) = (0.0, 0usize, 0usize);
        for col in &per_column {
            match col[k] {
                Some(a) => {
                    sum += a;
                    used += 1;
                }
                None => skipped += 1,
            }
        }
        if used == 0 {
            return Err(Error::ZeroSignal);
        }
        degrees.push(sum / used as f64);
        skipped_columns.push(skipped);
    }
    Ok(AngleReport {
        kind,
        degrees,
        skipped_columns,
    })
}

/// Builds the requested basis hop by hop without storing it and records the
/// consecutive angles. Memory is O(n) per column regardless of `cfg.hops`.
pub fn streaming_consecutive_angles(
    g: &Graph,
    x: &SignalMatrix,
    kind: BasisKind,
    cfg: &BasisConfig,
) -> Result<AngleReport> {
    check_rows(g, x)?;
    if cfg.hops == 0 {
        return Err(Error::Config("angles need at least two hops".into()));
    }
    if matches!(kind, BasisKind::Heterophily | BasisKind::Unibasis) {
        cfg.validate()?;
    }
    let prop = Propagator::new(g, cfg.propagation);
    let per_column = (0..x.cols())
        .into_par_iter()
        .map(|j| -> Result<Vec<Option<f64>>> {
            let mut col = Column::new(&prop, kind, x.col(j), cfg, j);
            let mut prev = col.current().to_vec();
            let mut angles = Vec::with_capacity(cfg.hops);
            for _ in 0..cfg.hops {
                col.step()?;
                angles.push(column_angle_degrees(&prev, col.current()));
                prev.copy_from_slice(col.current());
            }
            Ok(angles)
        })
        .collect::<Result<Vec<_>>>()?;
    average_angles(kind, per_column, cfg.hops)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring_with_chords(n: usize) -> Graph {
        let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        edges.extend((0..n).step_by(3).map(|i| (i, (i + 5) % n)));
        Graph::from_edges(None, &edges)
    }

    fn features(n: usize, d: usize) -> SignalMatrix {
        let mut m = SignalMatrix::zeros(n, d);
        for j in 0..d {
            for i in 0..n {
                m.set(i, j, ((i * 7 + j * 13) % 11) as f64 - 4.5 + 0.1 * j as f64);
            }
        }
        m
    }

    #[test]
    fn theta_follows_estimate_and_cap() {
        let cfg = BasisConfig::new(3, 0.22, 0.5);
        assert!((cfg.theta().to_degrees() - 70.2).abs() < 1e-9);
        assert_eq!(BasisConfig::new(3, 1.0, 0.5).theta(), 0.0);
        let capped = BasisConfig::new(3, 0.0, 0.5);
        assert_eq!(capped.theta(), FRAC_PI_2 - 1e-3);
        let bad = BasisConfig {
            theta_cap: FRAC_PI_2,
            ..capped
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_hops_returns_input() {
        let g = ring_with_chords(12);
        let x = features(12, 2);
        let b = homophily_basis(&g, &x, 0, PropagationConfig::default()).unwrap();
        assert_eq!(b.num_hops(), 1);
        assert_eq!(b.hops[0], x);
    }

    #[test]
    fn perron_vector_is_every_homophily_slice() {
        let g = ring_with_chords(15);
        let x: Vec<f64> = g.degrees().iter().map(|&d| (d as f64).sqrt()).collect();
        let x = SignalMatrix::from_vec(x);
        let b = homophily_basis(&g, &x, 6, PropagationConfig::default()).unwrap();
        for hop in &b.hops {
            assert!(hop.max_abs_diff(&x).unwrap() < 1e-12);
        }
    }

    #[test]
    fn first_scaling_factor_is_tan_theta() {
        // u1 = (u0 + t1 v1)/||.|| with v1 ⟂ u0, so the component along v1 over the
        // component along u0 equals t1.
        let g = ring_with_chords(20);
        let x = features(20, 1);
        let cfg = BasisConfig::new(1, 0.3, 0.0);
        let (u, v) = heterophily_with_krylov(&g, &x, &cfg).unwrap();
        let along_u0 = dot(u.hops[1].col(0), u.hops[0].col(0));
        let along_v1 = dot(u.hops[1].col(0), v.hops[1].col(0));
        assert!((along_v1 / along_u0 - cfg.theta().tan()).abs() < 1e-10);
    }

    #[test]
    fn full_homophily_collapses_to_u0() {
        let g = ring_with_chords(16);
        let x = features(16, 3);
        let b = heterophily_basis(&g, &x, &BasisConfig::new(5, 1.0, 0.0)).unwrap();
        for hop in &b.hops[1..] {
            assert!(hop.max_abs_diff(&b.hops[0]).unwrap() < 1e-12);
        }
    }

    #[test]
    fn pairwise_dots_equal_cos_theta() {
        let g = ring_with_chords(30);
        let x = features(30, 3);
        let cfg = BasisConfig::new(8, 0.35, 0.0);
        let b = heterophily_basis(&g, &x, &cfg).unwrap();
        let c = cfg.theta().cos();
        for j in 0..3 {
            for a in 0..=8 {
                assert!((norm(b.hops[a].col(j)) - 1.0).abs() < 1e-12);
                for bb in 0..a {
                    assert!((dot(b.hops[a].col(j), b.hops[bb].col(j)) - c).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn three_path_second_krylov_vector() {
        // x = e0 on 0-1-2: P e0 = e1 (degrees 1, 2, 1 give weight 1/sqrt(2)),
        // already orthogonal to e0, so v1 = e1.
        let g = Graph::from_edges(None, &[(0, 1), (1, 2)]);
        let x = SignalMatrix::from_vec(vec![1.0, 0.0, 0.0]);
        let b = orthonormal_basis(&g, &x, &BasisConfig::new(1, 0.5, 0.5)).unwrap();
        let v1 = b.hops[1].col(0);
        assert!((v1[0]).abs() < 1e-15 && (v1[1] - 1.0).abs() < 1e-15 && v1[2].abs() < 1e-15);
        assert!(dot(v1, b.hops[0].col(0)).abs() < 1e-15);
    }

    #[test]
    fn krylov_breakdown_zero_fills_and_flags() {
        // 3-path has only 3 dimensions; the even/odd symmetry of e1 gives
        // Krylov dimension 2, so v2 breaks down.
        let g = Graph::from_edges(None, &[(0, 1), (1, 2)]);
        let x = SignalMatrix::from_vec(vec![0.0, 1.0, 0.0]);
        let cfg = BasisConfig::new(4, 0.5, 0.5);
        let b = orthonormal_basis(&g, &x, &cfg).unwrap();
        assert_eq!(b.flags.breakdowns, vec![Breakdown { column: 0, hop: 2 }]);
        for hop in &b.hops[2..] {
            assert!(hop.col(0).iter().all(|&v| v == 0.0));
        }
        let h = heterophily_basis(&g, &x, &cfg).unwrap();
        assert!(h.is_finite());
        assert_eq!(h.flags.breakdowns.len(), 1);
        for hop in &h.hops {
            assert!((norm(hop.col(0)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_column_is_flagged_and_zero() {
        let g = ring_with_chords(10);
        let mut x = features(10, 3);
        x.col_mut(1).fill(0.0);
        let b = uni_basis(&g, &x, &BasisConfig::new(3, 0.4, 0.5)).unwrap();
        assert_eq!(b.flags.zero_columns, vec![1]);
        for hop in &b.hops {
            assert!(hop.col(1).iter().all(|&v| v == 0.0));
        }
    }

    fn max_offdiag_dot(b: &BasisSet, j: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..b.num_hops() {
            for c in 0..a {
                worst = worst.max(dot(b.hops[a].col(j), b.hops[c].col(j)).abs());
            }
        }
        worst
    }

    #[test]
    fn reorthogonalization_keeps_long_sequences_orthogonal() {
        let g = ring_with_chords(240);
        let x = features(240, 1);
        let mut cfg = BasisConfig::new(200, 0.3, 0.0);
        let plain = orthonormal_basis(&g, &x, &cfg).unwrap();
        assert!(max_offdiag_dot(&plain, 0) > 1e-6, "plain recurrence stayed orthogonal");

        cfg.reorthogonalization = Reorthogonalization::Partial;
        let (u, v) = heterophily_with_krylov(&g, &x, &cfg).unwrap();
        assert!(max_offdiag_dot(&v, 0) < 1e-6);
        let c = cfg.theta().cos();
        for a in 0..u.num_hops() {
            for bb in 0..a {
                assert!((dot(u.hops[a].col(0), u.hops[bb].col(0)) - c).abs() < 1e-6);
            }
        }

        cfg.reorthogonalization = Reorthogonalization::Full;
        let full = orthonormal_basis(&g, &x, &cfg).unwrap();
        assert!(max_offdiag_dot(&full, 0) < 1e-12);
        assert_eq!(
            "partial".parse::<Reorthogonalization>().unwrap(),
            Reorthogonalization::Partial
        );
    }

    #[test]
    fn tau_extremes_recover_parent_bases() {
        let g = ring_with_chords(18);
        let x = features(18, 2);
        let hom = homophily_basis(&g, &x, 4, PropagationConfig::default())
            .unwrap()
            .unit_normalized();
        let het = heterophily_basis(&g, &x, &BasisConfig::new(4, 0.3, 0.0)).unwrap();
        let one = uni_basis(&g, &x, &BasisConfig::new(4, 0.3, 1.0)).unwrap();
        let zero = uni_basis(&g, &x, &BasisConfig::new(4, 0.3, 0.0)).unwrap();
        assert_eq!(one.kind, BasisKind::Unibasis);
        for k in 0..=4 {
            assert!(one.hops[k].max_abs_diff(&hom.hops[k]).unwrap() < 1e-15);
            assert_eq!(zero.hops[k], het.hops[k]);
        }
    }

    #[test]
    fn radicand_error_names_hop_and_column() {
        // A forged state whose running sum is far below its nominal value drives
        // the radicand negative.
        let g = ring_with_chords(10);
        let prop = Propagator::new(&g, PropagationConfig::default());
        let cfg = BasisConfig::new(2, 0.5, 0.0);
        let mut u0 = vec![0.0; 10];
        u0[0] = 1.0;
        let mut het = Heterophily::new(&prop, u0, &cfg, 7);
        het.step().unwrap();
        het.sum.iter_mut().for_each(|s| *s *= 0.1);
        match het.step() {
            Err(Error::NegativeRadicand { hop, column, .. }) => assert_eq!((hop, column), (2, 7)),
            other => panic!("expected radicand error, got {other:?}"),
        }
    }

    #[test]
    fn streaming_angles_match_stored_basis() {
        let g = ring_with_chords(24);
        let x = features(24, 3);
        let cfg = BasisConfig::new(6, 0.25, 0.6);
        for kind in [
            BasisKind::Homophily,
            BasisKind::Orthonormal,
            BasisKind::Heterophily,
            BasisKind::Unibasis,
        ] {
            let stored = crate::metrics::consecutive_angles(&build_basis(&g, &x, kind, &cfg).unwrap()).unwrap();
            let streamed = streaming_consecutive_angles(&g, &x, kind, &cfg).unwrap();
            assert_eq!(stored, streamed);
        }
    }

    #[test]
    fn export_import_round_trip() {
        let g = ring_with_chords(9);
        let x = features(9, 2);
        let b = uni_basis(&g, &x, &BasisConfig::new(3, 0.4, 0.7)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        b.export(dir.path()).unwrap();
        assert!(dir.path().join("hop_0003.txt").exists());
        assert!(!dir.path().join("manifest.json.tmp").exists());
        assert_eq!(BasisSet::import(dir.path()).unwrap(), b);
    }
}
