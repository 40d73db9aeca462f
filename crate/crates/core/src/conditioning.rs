//! Conditioning parameters `kappa`, `gamma` and the stiffness ratio
//! `sigma = kappa / gamma`, continuous and discrete.
//!
//! For a perturbation `eta` of the boundary data the response is
//! `y(t) = G(t) eta` and
//!
//! ```text
//! kappa(eta) = max_t |y(t)| / |eta|
//! gamma(eta) = (1 / (T |eta|)) * integral_0^T |y(t)| dt
//! ```
//!
//! Both are evaluated on one sample grid per path (every interval split
//! into `k` equal parts, `k` doubled until the trapezoid integral settles),
//! so `gamma <= kappa` holds exactly and the matrix-norm bounds dominate
//! every sampled direction.

use std::ops::Range;

use num_complex::Complex64;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::Mesh;
use crate::linalg::{eigenvalues, eigenvector, rank, Mat, Norm, Vector};
use crate::problem::{BoundaryCondition, ProblemKind};
use crate::variational::FundamentalPath;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_RANDOM_DIRECTIONS: usize = 32;
pub const DEFAULT_STIFF_THRESHOLD: f64 = 1e3;
pub const DEFAULT_KAPPA_THRESHOLD: f64 = 1e8;
/// `1e3` times the unit roundoff.
pub const GAMMA_MACHINE_PRECISION: f64 = 1e3 * f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditioningOptions {
    pub norm: Norm,
    pub threshold: f64,
    pub kappa_threshold: f64,
    pub random_directions: usize,
    pub seed: u64,
    /// Relative change of the integral between grid levels that stops
    /// refinement.
    pub quad_tol: f64,
    /// Largest number of samples per mesh interval.
    pub max_subdivision: usize,
    pub hill_climb: bool,
}

impl Default for ConditioningOptions {
    fn default() -> Self {
        Self {
            norm: Norm::Inf,
            threshold: DEFAULT_STIFF_THRESHOLD,
            kappa_threshold: DEFAULT_KAPPA_THRESHOLD,
            random_directions: DEFAULT_RANDOM_DIRECTIONS,
            seed: DEFAULT_SEED,
            quad_tol: 1e-8,
            max_subdivision: 64,
            hill_climb: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionSource {
    Canonical,
    Random,
    Eigenvector,
    User,
    /// Attains the operator norm of `G` where it peaks.
    NormAttaining,
    Refined,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DirectionSet {
    pub directions: Vec<(Vector, DirectionSource)>,
}

impl DirectionSet {
    /// `+-e_i`, `random` seeded unit vectors, then `eigen` and `user`
    /// directions, each normalized in `norm`. Zero vectors are dropped.
    pub fn build(m: usize, norm: Norm, random: usize, seed: u64, eigen: &[Vector], user: &[Vector]) -> Self {
        let mut set = DirectionSet::default();
        for i in 0..m {
            for sign in [1.0, -1.0] {
                let mut e = Vector::zeros(m);
                e[i] = sign;
                set.push(e, DirectionSource::Canonical, norm);
            }
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for _ in 0..random {
            let v = Vector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
            set.push(v, DirectionSource::Random, norm);
        }
        for v in eigen {
            set.push(v.clone(), DirectionSource::Eigenvector, norm);
        }
        for v in user {
            set.push(v.clone(), DirectionSource::User, norm);
        }
        set
    }

    pub fn push(&mut self, v: Vector, source: DirectionSource, norm: Norm) {
        let n = norm.vector(v.as_slice());
        if n > 0.0 && n.is_finite() {
            self.directions.push((v / n, source));
        }
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// Real directions spanned by the eigenvector of the dominant eigenvalue
/// (largest modulus) of `j`: the vector itself, or its real and imaginary
/// parts for a complex pair.
pub fn dominant_eigen_directions(j: &Mat) -> Vec<Vector> {
    let ev = eigenvalues(j);
    let Some(lambda) = ev
        .iter()
        .copied()
        .filter(|z| z.is_finite())
        .reduce(|a, b| if b.norm() > a.norm() { b } else { a })
    else {
        return Vec::new();
    };
    let v = eigenvector(j, lambda);
    // rotate so the largest entry is real
    let pivot = v
        .iter()
        .copied()
        .reduce(|a, b| if b.norm() > a.norm() { b } else { a })
        .unwrap_or(Complex64::new(1.0, 0.0));
    let phase = if pivot.norm() > 0.0 { pivot.conj() / pivot.norm() } else { Complex64::new(1.0, 0.0) };
    let re = Vector::from_iterator(v.len(), v.iter().map(|z| (z * phase).re));
    let im = Vector::from_iterator(v.len(), v.iter().map(|z| (z * phase).im));
    let mut out = vec![re];
    if lambda.im != 0.0 && im.amax() > 1e-12 {
        out.push(im);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionResult {
    pub eta: Vec<f64>,
    pub kappa: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub source: DirectionSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Flags {
    pub stiff: bool,
    pub ill_conditioned: bool,
    pub oscillatory_variant_used: bool,
    /// Only meaningful for discrete parameters.
    pub machine_precision_reached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningReport {
    /// Interval length.
    #[serde(rename = "T")]
    pub t_end: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub eta_star: Vec<f64>,
    /// `kappa` and `gamma` at `eta_star`.
    pub kappa_star: f64,
    pub gamma_star: f64,
    pub kappa_bound: f64,
    pub gamma_bound: f64,
    /// `T / sigma`.
    pub transient_time: f64,
    pub flags: Flags,
    pub norm: Norm,
    /// Samples per mesh interval on the final grid.
    pub subdivision: usize,
    pub per_direction: Vec<DirectionResult>,
}

/// Sample grid: every interval split into `k` parts.
struct Grid<'a> {
    path: &'a FundamentalPath,
    k: usize,
}

impl Grid<'_> {
    /// Calls `visit(G(t), weight)` where weights give the composite
    /// trapezoid rule on the grid.
    fn for_each(&self, mut visit: impl FnMut(&Mat, f64)) {
        let mesh = self.path.mesh();
        let nodes = mesh.nodes();
        let m = self.path.dim();
        let mut g = Mat::zeros(m, m);
        let n = nodes.len() - 1;
        for i in 0..n {
            let h = (nodes[i + 1] - nodes[i]) / self.k as f64;
            for j in 0..self.k {
                self.path.operator_in(i, j as f64 / self.k as f64, &mut g);
                let left = if j == 0 && i > 0 { (nodes[i] - nodes[i - 1]) / self.k as f64 } else if j == 0 { 0.0 } else { h };
                visit(&g, 0.5 * (left + h));
            }
        }
        self.path.operator_in(n - 1, 1.0, &mut g);
        visit(&g, 0.5 * (nodes[n] - nodes[n - 1]) / self.k as f64);
    }

    /// `(max |G eta|, integral |G eta|)` for each unit `eta`. With `odd`
    /// only the samples that are new relative to level `k / 2` are visited,
    /// each weighted by its sub-step, and no final node.
    fn pass(&self, dirs: &[Vector], norm: Norm, odd: bool) -> Vec<(f64, f64)> {
        let n = self.path.mesh().intervals();
        let chunks: Vec<Range<usize>> = (0..n).step_by(CHUNK).map(|a| a..(a + CHUNK).min(n)).collect();
        let partial = map_chunks(&chunks, |r| self.chunk(r, dirs, norm, odd));
        let mut out = vec![(0.0_f64, 0.0); dirs.len()];
        for p in partial {
            for (o, q) in out.iter_mut().zip(p) {
                o.0 = o.0.max(q.0);
                o.1 += q.1;
            }
        }
        if !odd {
            let nodes = self.path.mesh().nodes();
            let m = self.path.dim();
            let (mut g, mut y) = (Mat::zeros(m, m), Vector::zeros(m));
            self.path.operator_in(n - 1, 1.0, &mut g);
            let w = 0.5 * (nodes[n] - nodes[n - 1]) / self.k as f64;
            for (o, eta) in out.iter_mut().zip(dirs) {
                g.mul_to(eta, &mut y);
                let v = norm.vector(y.as_slice());
                o.0 = o.0.max(v);
                o.1 += w * v;
            }
        }
        out
    }

    fn chunk(&self, range: Range<usize>, dirs: &[Vector], norm: Norm, odd: bool) -> Vec<(f64, f64)> {
        let nodes = self.path.mesh().nodes();
        let m = self.path.dim();
        let k = self.k as f64;
        let (mut g, mut y) = (Mat::zeros(m, m), Vector::zeros(m));
        let mut acc = vec![(0.0_f64, 0.0); dirs.len()];
        let (first, stride) = if odd { (1, 2) } else { (0, 1) };
        for i in range {
            let h = (nodes[i + 1] - nodes[i]) / k;
            for j in (first..self.k).step_by(stride) {
                self.path.operator_in(i, j as f64 / k, &mut g);
                let w = match (j, i) {
                    (0, 0) => 0.5 * h,
                    (0, _) => 0.5 * (h + (nodes[i] - nodes[i - 1]) / k),
                    _ => h,
                };
                for (a, eta) in acc.iter_mut().zip(dirs) {
                    g.mul_to(eta, &mut y);
                    let v = norm.vector(y.as_slice());
                    a.0 = a.0.max(v);
                    a.1 += w * v;
                }
            }
        }
        acc
    }

    /// Unit direction with `|G(t) eta| = |G(t)|` at the sample where `|G|`
    /// peaks: a sign vector of the largest row for the max norm, the top
    /// right singular vector for the 2-norm.
    fn norm_attaining(&self, norm: Norm) -> Option<Vector> {
        let mut peak: Option<(f64, Mat)> = None;
        self.for_each(|g, _| {
            let v = norm.matrix(g);
            if peak.as_ref().is_none_or(|p| v > p.0) {
                peak = Some((v, g.clone()));
            }
        });
        let (_, g) = peak?;
        let eta = match norm {
            Norm::Inf => {
                let r = (0..g.nrows())
                    .max_by(|&a, &b| g.row(a).abs().sum().total_cmp(&g.row(b).abs().sum()))?;
                Vector::from_iterator(g.ncols(), g.row(r).iter().map(|&x| if x < 0.0 { -1.0 } else { 1.0 }))
            }
            Norm::Two => {
                let svd = g.svd(false, true);
                let vt = svd.v_t?;
                let i = svd.singular_values.imax();
                let v = vt.row(i).transpose();
                let n = v.norm();
                if !(n > 0.0) {
                    return None;
                }
                v / n
            }
        };
        Some(eta)
    }

    fn bounds(&self, norm: Norm) -> (f64, f64) {
        let (mut kmax, mut integral) = (0.0_f64, 0.0);
        self.for_each(|g, w| {
            let v = norm.matrix(g);
            kmax = kmax.max(v);
            integral += w * v;
        });
        (kmax, integral)
    }
}

fn ratio(kappa: f64, gamma: f64) -> f64 {
    if gamma > 0.0 {
        kappa / gamma
    } else if kappa > 0.0 {
        f64::INFINITY
    } else {
        1.0
    }
}

/// Intervals per work unit. Partial results are combined in chunk order,
/// so sums do not depend on the thread count.
const CHUNK: usize = 256;

fn map_chunks<F>(chunks: &[Range<usize>], f: F) -> Vec<Vec<(f64, f64)>>
where
    F: Fn(Range<usize>) -> Vec<(f64, f64)> + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        chunks.par_iter().map(|r| f(r.clone())).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        chunks.iter().map(|r| f(r.clone())).collect()
    }
}

/// Picks the subdivision `k` at which every direction's integral has
/// settled to `quad_tol`, returning the per-direction values at that level.
fn settle(path: &FundamentalPath, dirs: &[Vector], opts: &ConditioningOptions) -> (usize, Vec<(f64, f64)>) {
    let mut k = 1;
    let mut prev = Grid { path, k }.pass(dirs, opts.norm, false);
    while k < opts.max_subdivision {
        k *= 2;
        let fresh = Grid { path, k }.pass(dirs, opts.norm, true);
        let next: Vec<(f64, f64)> = prev.iter().zip(&fresh).map(|(a, b)| (a.0.max(b.0), 0.5 * a.1 + b.1)).collect();
        // (I_2k - I_k) / 3 estimates the error of the finer level
        let settled = prev.iter().zip(&next).all(|(a, b)| {
            let err = (b.1 - a.1).abs() / 3.0;
            err <= opts.quad_tol * b.1.abs() || b.1 == 0.0
        });
        prev = next;
        if settled {
            break;
        }
    }
    (k, prev)
}

/// `(kappa(T, eta), gamma(T, eta))` for one direction.
pub fn kappa_gamma_continuous(path: &FundamentalPath, eta: &Vector, opts: &ConditioningOptions) -> Result<(f64, f64)> {
    let n = opts.norm.vector(eta.as_slice());
    if !(n > 0.0) {
        return Err(Error::domain("perturbation direction must be nonzero"));
    }
    let unit = eta / n;
    let (_, vals) = settle(path, std::slice::from_ref(&unit), opts);
    let (kappa, integral) = vals[0];
    Ok((kappa, (integral / path.t_end()).min(kappa)))
}

/// Alternative averaged parameter `1 / (|lambda| T)` for oscillating
/// scalar modes; `1` when `lambda = 0`.
pub fn gamma_oscillatory(lambda: Complex64, t_end: f64) -> f64 {
    if lambda.norm() == 0.0 {
        1.0
    } else {
        1.0 / (lambda.norm() * t_end)
    }
}

/// Flags from the raw report values.
pub fn classify(report: &ConditioningReport, threshold: f64, kappa_threshold: f64) -> Flags {
    Flags {
        stiff: report.sigma >= threshold,
        ill_conditioned: report.kappa > kappa_threshold || !report.kappa.is_finite(),
        ..report.flags
    }
}

/// Margin absorbing rounding in `|G eta| <= |G| |eta|`.
fn bound_margin(m: usize) -> f64 {
    1.0 + 64.0 * m as f64 * f64::EPSILON
}

/// Matrix-norm bounds `max |G(t)|` and `(1/T) integral |G(t)| dt`.
pub fn sigma_upper_bounds(path: &FundamentalPath, opts: &ConditioningOptions) -> (f64, f64) {
    let m = path.dim();
    let (k, _) = settle(path, &[Vector::from_element(m, 1.0) / opts.norm.vector(&vec![1.0; m])], opts);
    let (kmax, integral) = Grid { path, k }.bounds(opts.norm);
    let margin = bound_margin(m);
    (kmax * margin, integral / path.t_end() * margin)
}

fn argmax(ds: &[DirectionResult], key: impl Fn(&DirectionResult) -> f64) -> usize {
    let mut best = 0;
    for (i, d) in ds.iter().enumerate() {
        if key(d) > key(&ds[best]) {
            best = i;
        }
    }
    best
}

/// Coordinate search from `start`: all moves of one coordinate by `+-step`
/// are scored together, the best is kept when `objective` grows, and the
/// step halves when none helps. Returns the improved direction, if any.
fn climb(
    grid: &Grid<'_>,
    start: DirectionResult,
    objective: impl Fn(&DirectionResult) -> f64,
    norm: Norm,
) -> Option<DirectionResult> {
    if !objective(&start).is_finite() {
        return None;
    }
    let t_end = grid.path.t_end();
    let mut current = start;
    let mut step = 0.1;
    let mut improved_any = false;
    for _ in 0..20 {
        let eta = Vector::from_column_slice(&current.eta);
        let mut cands = Vec::with_capacity(2 * eta.len());
        for c in 0..eta.len() {
            for sign in [1.0, -1.0] {
                let mut cand = eta.clone();
                cand[c] += sign * step;
                let n = norm.vector(cand.as_slice());
                if n > 0.0 {
                    cands.push(cand / n);
                }
            }
        }
        let vals = grid.pass(&cands, norm, false);
        let mut improved = false;
        for (cand, (kappa, integral)) in cands.iter().zip(vals) {
            let gamma = (integral / t_end).min(kappa);
            let next = DirectionResult {
                eta: cand.as_slice().to_vec(),
                kappa,
                gamma,
                sigma: ratio(kappa, gamma),
                source: DirectionSource::Refined,
            };
            if objective(&next) > objective(&current) * (1.0 + 1e-12) {
                current = next;
                improved = true;
            }
        }
        improved_any |= improved;
        if !improved {
            step *= 0.5;
        }
    }
    improved_any.then_some(current)
}

/// Maximizes `sigma` over `directions`, then refines the maximizers of
/// `sigma` and of `gamma` by coordinate search.
pub fn maximize_sigma(path: &FundamentalPath, directions: &DirectionSet, opts: &ConditioningOptions) -> Result<ConditioningReport> {
    if directions.is_empty() {
        return Err(Error::domain("empty direction set"));
    }
    let t_end = path.t_end();
    let dirs: Vec<Vector> = directions.directions.iter().map(|d| d.0.clone()).collect();
    let (k, vals) = settle(path, &dirs, opts);
    let grid = Grid { path, k };
    let mut per_direction: Vec<DirectionResult> = directions
        .directions
        .iter()
        .zip(&vals)
        .map(|((eta, source), &(kappa, integral))| {
            let gamma = (integral / t_end).min(kappa);
            DirectionResult {
                eta: eta.as_slice().to_vec(),
                kappa,
                gamma,
                sigma: ratio(kappa, gamma),
                source: *source,
            }
        })
        .collect();

    // max over eta of max_t |G eta| is max_t |G|, attained at one direction
    if let Some(eta) = grid.norm_attaining(opts.norm) {
        let (kappa, integral) = grid.pass(std::slice::from_ref(&eta), opts.norm, false)[0];
        let gamma = (integral / t_end).min(kappa);
        per_direction.push(DirectionResult {
            eta: eta.as_slice().to_vec(),
            kappa,
            gamma,
            sigma: ratio(kappa, gamma),
            source: DirectionSource::NormAttaining,
        });
    }

    if opts.hill_climb {
        let by_sigma = argmax(&per_direction, |d| d.sigma);
        let by_gamma = argmax(&per_direction, |d| d.gamma);
        let starts = [(by_sigma, true), (by_gamma, false)];
        for (from, sigma_objective) in starts {
            let start = per_direction[from].clone();
            let objective = |d: &DirectionResult| if sigma_objective { d.sigma } else { d.gamma };
            if let Some(found) = climb(&grid, start, objective, opts.norm) {
                per_direction.push(found);
            }
        }
    }
    let best = argmax(&per_direction, |d| d.sigma);

    let kappa = per_direction.iter().map(|d| d.kappa).fold(0.0, f64::max);
    let gamma = per_direction.iter().map(|d| d.gamma).fold(0.0, f64::max);
    let star = &per_direction[best];
    let (kb, gb) = grid.bounds(opts.norm);
    let margin = bound_margin(path.dim());
    let mut report = ConditioningReport {
        t_end,
        kappa,
        gamma,
        sigma: star.sigma,
        eta_star: star.eta.clone(),
        kappa_star: star.kappa,
        gamma_star: star.gamma,
        kappa_bound: kb * margin,
        gamma_bound: gb / t_end * margin,
        transient_time: t_end / star.sigma,
        flags: Flags::default(),
        norm: opts.norm,
        subdivision: k,
        per_direction,
    };
    report.flags = classify(&report, opts.threshold, opts.kappa_threshold);
    Ok(report)
}

/// Replaces `gamma` by the oscillatory form `1 / (|lambda| T)` for a scalar
/// mode with eigenvalue `lambda`.
pub fn apply_oscillatory(report: &mut ConditioningReport, lambda: Complex64, opts: &ConditioningOptions) {
    let gamma = gamma_oscillatory(lambda, report.t_end).min(report.kappa_star);
    report.gamma = gamma;
    report.gamma_star = gamma;
    report.sigma = ratio(report.kappa_star, gamma);
    report.transient_time = report.t_end / report.sigma;
    for d in &mut report.per_direction {
        d.gamma = gamma.min(d.kappa);
        d.sigma = ratio(d.kappa, d.gamma);
    }
    report.flags.oscillatory_variant_used = true;
    report.flags = classify(report, opts.threshold, opts.kappa_threshold);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscreteParams {
    pub kappa: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub machine_precision_reached: bool,
}

/// `kappa_d = max_n |y_n| / |eta|`,
/// `gamma_d = (1 / (T |eta|)) sum h_i max(|y_i|, |y_{i-1}|)`.
pub fn kappa_gamma_discrete(states: &[Vector], mesh: &Mesh, eta: &Vector, norm: Norm) -> Result<DiscreteParams> {
    if states.len() != mesh.nodes().len() {
        return Err(Error::Shape(format!(
            "{} states for {} mesh nodes",
            states.len(),
            mesh.nodes().len()
        )));
    }
    let en = norm.vector(eta.as_slice());
    if !(en > 0.0) {
        return Err(Error::domain("perturbation direction must be nonzero"));
    }
    let norms: Vec<f64> = states.iter().map(|y| norm.vector(y.as_slice()) / en).collect();
    let kappa = norms.iter().copied().fold(0.0, f64::max);
    let sum: f64 = mesh
        .steps()
        .iter()
        .enumerate()
        .map(|(i, h)| h * norms[i].max(norms[i + 1]))
        .sum();
    let gamma = (sum / mesh.t_end()).min(kappa);
    Ok(DiscreteParams {
        kappa,
        gamma,
        sigma: ratio(kappa, gamma),
        machine_precision_reached: gamma < GAMMA_MACHINE_PRECISION,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteReport {
    pub kappa: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub eta_star: Vec<f64>,
    pub kappa_star: f64,
    pub gamma_star: f64,
    pub machine_precision_reached: bool,
    pub per_direction: Vec<DirectionResult>,
}

/// Discrete parameters maximized over `directions`, given the discrete
/// solution operators `G_n` (so `y_n = G_n eta`).
pub fn maximize_discrete(operators: &[Mat], mesh: &Mesh, directions: &DirectionSet, norm: Norm) -> Result<DiscreteReport> {
    if directions.is_empty() {
        return Err(Error::domain("empty direction set"));
    }
    let mut per_direction = Vec::with_capacity(directions.len());
    for (eta, source) in &directions.directions {
        let states: Vec<Vector> = operators.iter().map(|g| g * eta).collect();
        let d = kappa_gamma_discrete(&states, mesh, eta, norm)?;
        per_direction.push(DirectionResult {
            eta: eta.as_slice().to_vec(),
            kappa: d.kappa,
            gamma: d.gamma,
            sigma: d.sigma,
            source: *source,
        });
    }
    let mut best = 0;
    for (i, d) in per_direction.iter().enumerate() {
        if d.sigma > per_direction[best].sigma {
            best = i;
        }
    }
    let kappa = per_direction.iter().map(|d| d.kappa).fold(0.0, f64::max);
    let gamma = per_direction.iter().map(|d| d.gamma).fold(0.0, f64::max);
    let star = per_direction[best].clone();
    Ok(DiscreteReport {
        kappa,
        gamma,
        sigma: star.sigma,
        eta_star: star.eta,
        kappa_star: star.kappa,
        gamma_star: star.gamma,
        machine_precision_reached: gamma < GAMMA_MACHINE_PRECISION,
        per_direction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// `kappa_d ~ kappa_c`.
    pub wr1: bool,
    /// `gamma_d ~ gamma_c`.
    pub wr2: bool,
    pub tol_factor: f64,
}

impl Verdict {
    pub fn pass(&self) -> bool {
        self.wr1 && self.wr2
    }

    pub fn failed(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.wr1 {
            out.push("wr1");
        }
        if !self.wr2 {
            out.push("wr2");
        }
        out
    }
}

fn within_factor(a: f64, b: f64, factor: f64) -> bool {
    a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0 && (a / b).ln().abs() <= factor.ln()
}

/// `|log(kappa_d / kappa_c)| <= log(tol_factor)` and the same for gamma.
pub fn well_represented(kappa_c: f64, gamma_c: f64, kappa_d: f64, gamma_d: f64, tol_factor: f64) -> Verdict {
    Verdict {
        wr1: within_factor(kappa_d, kappa_c, tol_factor),
        wr2: within_factor(gamma_d, gamma_c, tol_factor),
        tol_factor,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matching {
    Matched,
    Mismatched,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyReport {
    /// Decaying modes: `Re < 0` (continuous) or inside the unit disk.
    pub decaying: usize,
    pub growing: usize,
    pub marginal: usize,
    pub rank_b0: usize,
    pub rank_b1: usize,
    pub verdict: Matching,
    /// The matrix is a Jacobian frozen at `t = 0`, not a constant `A`.
    pub frozen: bool,
    pub discrete: bool,
    pub warning: Option<String>,
}

fn dichotomy_verdict(
    decaying: usize,
    growing: usize,
    marginal: usize,
    bc: &BoundaryCondition,
    kind: ProblemKind,
    frozen: bool,
    discrete: bool,
) -> DichotomyReport {
    let (rank_b0, rank_b1) = (rank(&bc.b0), rank(&bc.b1));
    let verdict = if marginal > 0 {
        Matching::Indeterminate
    } else if decaying == rank_b0 && growing == rank_b1 {
        Matching::Matched
    } else {
        Matching::Mismatched
    };
    let warning = match (verdict, kind) {
        (Matching::Mismatched, ProblemKind::Ivp) => Some(format!(
            "ill-conditioned IVP: {growing} growing mode(s) but no final conditions"
        )),
        (Matching::Mismatched, ProblemKind::Bvp) => Some(format!(
            "{decaying} decaying / {growing} growing mode(s) vs {rank_b0} initial / {rank_b1} final condition(s)"
        )),
        _ => None,
    };
    DichotomyReport {
        decaying,
        growing,
        marginal,
        rank_b0,
        rank_b1,
        verdict,
        frozen,
        discrete,
        warning,
    }
}

/// Continuous matching rule: eigenvalues of `a` with negative (positive)
/// real part against the initial (final) conditions.
pub fn check_dichotomy(a: &Mat, bc: &BoundaryCondition, kind: ProblemKind, frozen: bool) -> DichotomyReport {
    let band = 1e-10 * Norm::Two.matrix(a).max(f64::MIN_POSITIVE);
    let ev = eigenvalues(a);
    let decaying = ev.iter().filter(|z| z.re < -band).count();
    let growing = ev.iter().filter(|z| z.re > band).count();
    let marginal = ev.len() - decaying - growing;
    dichotomy_verdict(decaying, growing, marginal, bc, kind, frozen, false)
}

/// Discrete matching rule on the total amplification `R_{N-1}...R_0`.
pub fn check_dichotomy_discrete(total: &Mat, bc: &BoundaryCondition, kind: ProblemKind) -> DichotomyReport {
    let ev = eigenvalues(total);
    let decaying = ev.iter().filter(|z| z.norm() < 1.0 - 1e-10).count();
    let growing = ev.iter().filter(|z| z.norm() > 1.0 + 1e-10).count();
    let marginal = ev.len() - decaying - growing;
    dichotomy_verdict(decaying, growing, marginal, bc, kind, false, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{integrate_adaptive, Mesh};
    use crate::problem::{FnField, Problem};
    use crate::variational::propagate_fundamental;
    use std::sync::Arc;

    fn lti(a: Mat, t_end: f64) -> FundamentalPath {
        let m = a.nrows();
        let a2 = a.clone();
        let field = FnField::new(
            m,
            move |_, y, out| out.copy_from_slice((&a * Vector::from_column_slice(y)).as_slice()),
            move |_, _| a2.clone(),
        );
        let p = Problem::ivp("lti", Arc::new(field), t_end, Vector::from_element(m, 1.0)).unwrap();
        let (tr, _) = integrate_adaptive(&p, 1e-10, 1e-12).unwrap();
        propagate_fundamental(&p, &tr, 1e-11).unwrap()
    }

    #[test]
    fn scalar_closed_form() {
        let path = lti(Mat::from_element(1, 1, -2.0), 10.0);
        let (k, g) = kappa_gamma_continuous(&path, &Vector::from_element(1, 1.0), &Default::default()).unwrap();
        assert!((k - 1.0).abs() < 1e-12);
        let exact = (1.0 - (-20.0f64).exp()) / 20.0;
        assert!((g / exact - 1.0).abs() < 1e-6, "{g} vs {exact}");
    }

    #[test]
    fn zero_eta_is_rejected() {
        let path = lti(Mat::from_element(1, 1, -1.0), 1.0);
        assert!(kappa_gamma_continuous(&path, &Vector::zeros(1), &Default::default()).is_err());
    }

    #[test]
    fn oscillatory_examples() {
        let s = 1.0 / gamma_oscillatory(Complex64::new(0.0, 2.0 * std::f64::consts::PI), 10.0);
        assert!((s - 20.0 * std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(gamma_oscillatory(Complex64::new(-2.0, 0.0), 10.0), 0.05);
        let s = 1.0 / gamma_oscillatory(Complex64::new(0.0, 1.0), 2.0 * std::f64::consts::PI);
        assert!((s - 2.0 * std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(gamma_oscillatory(Complex64::new(0.0, 0.0), 3.0), 1.0);
    }

    #[test]
    fn diagonal_ratio_and_bounds() {
        let path = lti(Mat::from_diagonal(&Vector::from_vec(vec![-100.0, -1.0])), 1.0);
        let opts = ConditioningOptions::default();
        let dirs = DirectionSet::build(2, opts.norm, 8, 42, &[], &[]);
        let r = maximize_sigma(&path, &dirs, &opts).unwrap();
        assert!((r.sigma / 100.0 - 1.0).abs() < 0.1, "sigma {}", r.sigma);
        assert!(r.sigma >= 1.0);
        assert!(r.kappa <= r.kappa_bound && r.gamma <= r.gamma_bound);
        for d in &r.per_direction {
            assert!(d.gamma <= d.kappa);
        }
        let (kb, _) = sigma_upper_bounds(&path, &opts);
        assert!((kb - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classification_thresholds() {
        let path = lti(Mat::from_element(1, 1, -2.0), 10.0);
        let opts = ConditioningOptions::default();
        let dirs = DirectionSet::build(1, opts.norm, 0, 42, &[], &[]);
        let r = maximize_sigma(&path, &dirs, &opts).unwrap();
        assert!((r.sigma - 20.0).abs() < 1e-4);
        assert!(!r.flags.stiff && !r.flags.ill_conditioned);
        assert!(classify(&r, 10.0, 1e8).stiff);
    }

    #[test]
    fn discrete_examples() {
        let mesh = Mesh::uniform(1.0, 1).unwrap();
        let states = [Vector::from_element(1, 1.0), Vector::from_element(1, 0.5)];
        let d = kappa_gamma_discrete(&states, &mesh, &Vector::from_element(1, 1.0), Norm::Inf).unwrap();
        assert_eq!((d.kappa, d.gamma, d.sigma), (1.0, 1.0, 1.0));

        let mesh = Mesh::uniform(1.0, 100).unwrap();
        let mu: f64 = 1.0 / (1.0 + 1e4);
        let states: Vec<Vector> = (0..=100).map(|n| Vector::from_element(1, mu.powi(n))).collect();
        let d = kappa_gamma_discrete(&states, &mesh, &Vector::from_element(1, 1.0), Norm::Inf).unwrap();
        assert!((d.gamma - 0.01 * (1.0 - mu.powi(100)) / (1.0 - mu)).abs() < 1e-15);
        assert!(!d.machine_precision_reached);
    }

    #[test]
    fn verdicts() {
        let v = well_represented(1.0, 1e-3, 9f64.powi(100), 1e90, 2.0);
        assert!(!v.wr1 && !v.pass());
        assert_eq!(v.failed(), vec!["wr1", "wr2"]);
        let v = well_represented(1.0, 0.05, 1.0, 0.051, 2.0);
        assert!(v.pass());
        assert!(!well_represented(1.0, 0.05, f64::INFINITY, 0.05, 2.0).wr1);
    }

    #[test]
    fn dichotomy_examples() {
        let sep = BoundaryCondition::new(
            Mat::from_diagonal(&Vector::from_vec(vec![1.0, 0.0])),
            Mat::from_diagonal(&Vector::from_vec(vec![0.0, 1.0])),
        )
        .unwrap();
        let a = Mat::from_diagonal(&Vector::from_vec(vec![-1.0, 2.0]));
        assert_eq!(check_dichotomy(&a, &sep, ProblemKind::Bvp, false).verdict, Matching::Matched);
        let ivp = BoundaryCondition::initial(2);
        let b = Mat::from_diagonal(&Vector::from_vec(vec![-1.0, -2.0]));
        assert_eq!(check_dichotomy(&b, &ivp, ProblemKind::Ivp, false).verdict, Matching::Matched);
        let r = check_dichotomy(&a, &ivp, ProblemKind::Ivp, false);
        assert_eq!(r.verdict, Matching::Mismatched);
        assert!(r.warning.unwrap().contains("ill-conditioned"));
        let z = Mat::zeros(2, 2);
        assert_eq!(check_dichotomy(&z, &ivp, ProblemKind::Ivp, false).verdict, Matching::Indeterminate);
        let total = Mat::from_diagonal(&Vector::from_vec(vec![0.5, 3.0]));
        assert_eq!(check_dichotomy_discrete(&total, &sep, ProblemKind::Bvp).verdict, Matching::Matched);
    }

    #[test]
    fn directions_are_unit_and_deterministic() {
        let a = DirectionSet::build(3, Norm::Inf, 32, 42, &[], &[Vector::from_vec(vec![0.0, 1e-3, -1e-3])]);
        let b = DirectionSet::build(3, Norm::Inf, 32, 42, &[], &[Vector::from_vec(vec![0.0, 1e-3, -1e-3])]);
        assert_eq!(a, b);
        assert_eq!(a.len(), 6 + 32 + 1);
        for (v, _) in &a.directions {
            assert!((Norm::Inf.vector(v.as_slice()) - 1.0).abs() < 1e-15);
        }
        let c = DirectionSet::build(3, Norm::Inf, 32, 7, &[], &[]);
        assert_ne!(a.directions[6].0, c.directions[6].0);
    }

    #[test]
    fn eigen_directions_of_lambert_matrix() {
        let j = Mat::from_row_slice(2, 2, &[-2.0, 1.0, -1.999, 0.999]);
        let d = dominant_eigen_directions(&j);
        assert_eq!(d.len(), 1);
        assert!((d[0][0] - d[0][1]).abs() < 1e-9 * d[0].amax());
        let rot = Mat::from_row_slice(2, 2, &[0.0, -3.0, 3.0, 0.0]);
        assert_eq!(dominant_eigen_directions(&rot).len(), 2);
    }
}
