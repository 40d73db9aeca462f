//! Mesh selection for BVPs driven by matching the discrete conditioning
//! parameters to continuous estimates.
//!
//! Each round solves on the current mesh, estimates the continuous
//! parameters by extrapolating the current mesh and its bisection, and
//! stops once the discrete values are within `tol_factor`. Otherwise
//! intervals carrying a large share of `gamma_d` are split and pairs of
//! small contributors merged.

use serde::{Deserialize, Serialize};

use crate::analysis::{direction_set, nominal_solution, AnalysisOptions};
use crate::bvp::{discrete_operator, solve_bvp_from};
use crate::conditioning::{maximize_discrete, well_represented, DirectionSet, DiscreteReport, Verdict};
use crate::error::{Error, Result};
use crate::integrate::{Mesh, Trajectory};
use crate::linalg::{Mat, Vector};
use crate::problem::{Problem, ProblemKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshRound {
    pub round: usize,
    pub intervals: usize,
    pub kappa_d: f64,
    pub gamma_d: f64,
    pub sigma_d: f64,
    pub kappa_est: f64,
    pub gamma_est: f64,
    pub verdict: Verdict,
    /// False when every strategy worsened the match and the uniform
    /// bisection was kept anyway.
    pub monotone: bool,
}

impl MeshRound {
    /// Largest log-ratio between discrete values and their estimates.
    pub fn mismatch(&self) -> f64 {
        let lr = |d: f64, c: f64| (d / c).ln().abs();
        lr(self.kappa_d, self.kappa_est).max(lr(self.gamma_d, self.gamma_est))
    }
}

#[derive(Debug, Clone)]
pub struct MeshSelection {
    pub mesh: Mesh,
    pub history: Vec<MeshRound>,
    pub converged: bool,
    /// Rounds discarded because they worsened the match.
    pub rollbacks: usize,
}

struct Evaluation {
    mesh: Mesh,
    solution: Trajectory,
    operators: Vec<Mat>,
    discrete: DiscreteReport,
    round: MeshRound,
}

fn solve_on(problem: &Problem, mesh: &Mesh, guide: &Trajectory, opts: &AnalysisOptions) -> Result<Trajectory> {
    let guess = mesh
        .nodes()
        .iter()
        .map(|&t| guide.at(t.min(guide.mesh().t_end())))
        .collect::<Result<Vec<Vector>>>()?;
    solve_bvp_from(problem, mesh, guess, opts.bvp.newton_tol, opts.bvp.max_iters)
}

/// Maximum number of solvability refinements of one mesh.
const MAX_RESCUES: usize = 16;

fn solve_pair(
    problem: &Problem,
    mesh: &Mesh,
    guide: &Trajectory,
    reference: &Trajectory,
    opts: &AnalysisOptions,
) -> Result<(Trajectory, Trajectory)> {
    let coarse = solve_on(problem, mesh, guide, opts).or_else(|_| solve_on(problem, mesh, reference, opts))?;
    let fine = mesh.bisected();
    let fine_sol = solve_on(problem, &fine, &coarse, opts).or_else(|_| solve_on(problem, &fine, reference, opts))?;
    Ok((coarse, fine_sol))
}

/// Solves on `mesh` and on its bisection, splitting the intervals where
/// `reference` varies most whenever the collocation equations have no
/// nearby solution. The refined mesh never exceeds `cap` intervals.
fn solve_or_refine(
    problem: &Problem,
    mesh: &Mesh,
    guide: &Trajectory,
    reference: &Trajectory,
    cap: usize,
    opts: &AnalysisOptions,
) -> Result<(Mesh, Trajectory, Trajectory)> {
    let mut mesh = mesh.clone();
    let mut rescues = 0;
    loop {
        match solve_pair(problem, &mesh, guide, reference, opts) {
            Ok((coarse, fine)) => return Ok((mesh, coarse, fine)),
            Err(e @ (Error::NewtonStagnation { .. } | Error::Singular(_))) => {
                let room = cap.saturating_sub(mesh.intervals());
                if rescues == MAX_RESCUES || room == 0 || mesh.intervals() * 4 > opts.bvp.max_intervals {
                    return Err(e);
                }
                rescues += 1;
                let ys = mesh
                    .nodes()
                    .iter()
                    .map(|&t| reference.at(t))
                    .collect::<Result<Vec<Vector>>>()?;
                let var: Vec<f64> = ys.windows(2).map(|w| (&w[1] - &w[0]).amax()).collect();
                let mut order: Vec<usize> = (0..var.len()).collect();
                order.sort_by(|&a, &b| var[b].total_cmp(&var[a]));
                let med = median(&var);
                let mut split = vec![false; var.len()];
                for &i in order.iter().take(room) {
                    split[i] = var[i] >= med;
                }
                let nodes = mesh.nodes();
                let mut out = vec![nodes[0]];
                for i in 0..var.len() {
                    if split[i] {
                        out.push(0.5 * (nodes[i] + nodes[i + 1]));
                    }
                    out.push(nodes[i + 1]);
                }
                mesh = Mesh::new(out)?;
            }
            Err(e) => return Err(e),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    problem: &Problem,
    mesh: &Mesh,
    guide: &Trajectory,
    reference: &Trajectory,
    dirs: &DirectionSet,
    tol_factor: f64,
    round: usize,
    cap: usize,
    opts: &AnalysisOptions,
) -> Result<Evaluation> {
    let norm = opts.conditioning.norm;
    let (mesh, solution, fine_sol) = solve_or_refine(problem, mesh, guide, reference, cap, opts)?;
    let mesh = &mesh;
    let operators = discrete_operator(problem, &solution, mesh)?;
    let discrete = maximize_discrete(&operators, mesh, dirs, norm)?;

    let fine = mesh.bisected();
    let fine_ops = discrete_operator(problem, &fine_sol, &fine)?;
    let fd = maximize_discrete(&fine_ops, &fine, dirs, norm)?;
    // both the nodal max and the trapezoidal average converge at second order
    let kappa_est = fd.kappa + (fd.kappa - discrete.kappa) / 3.0;
    let (ic, ifine) = (mean_response(&operators, mesh, dirs, norm), mean_response(&fine_ops, &fine, dirs, norm));
    let extrapolated = ifine + (ifine - ic) / 3.0;
    let gamma_est = if extrapolated > 0.0 { extrapolated } else { ifine };

    let verdict = well_represented(kappa_est, gamma_est, discrete.kappa, discrete.gamma, tol_factor);
    let round = MeshRound {
        round,
        intervals: mesh.intervals(),
        kappa_d: discrete.kappa,
        gamma_d: discrete.gamma,
        sigma_d: discrete.sigma,
        kappa_est,
        gamma_est,
        verdict,
        monotone: true,
    };
    Ok(Evaluation {
        mesh: mesh.clone(),
        solution,
        operators,
        discrete,
        round,
    })
}

/// Largest trapezoidal average `(1/T) integral |G eta| / |eta|` over the
/// directions.
fn mean_response(ops: &[Mat], mesh: &Mesh, dirs: &DirectionSet, norm: crate::linalg::Norm) -> f64 {
    let steps = mesh.steps();
    dirs.directions
        .iter()
        .map(|(eta, _)| {
            let en = norm.vector(eta.as_slice());
            let size: Vec<f64> = ops.iter().map(|g| norm.vector((g * eta).as_slice()) / en).collect();
            let kappa = size.iter().copied().fold(0.0, f64::max);
            let sum: f64 = steps.iter().enumerate().map(|(i, h)| 0.5 * h * (size[i] + size[i + 1])).sum();
            (sum / mesh.t_end()).min(kappa)
        })
        .fold(0.0, f64::max)
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s[s.len() / 2]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Strategy {
    /// Split large contributors, merge pairs of small ones.
    Redistribute,
    /// Split only.
    Split,
    /// Bisect every interval.
    Uniform,
}

const STRATEGIES: [Strategy; 3] = [Strategy::Redistribute, Strategy::Split, Strategy::Uniform];

/// The directions attaining the largest sigma, kappa and gamma.
fn watched(d: &DiscreteReport) -> Vec<Vector> {
    let arg = |key: fn(&crate::conditioning::DirectionResult) -> f64| {
        let mut best = 0;
        for (i, r) in d.per_direction.iter().enumerate() {
            if key(r) > key(&d.per_direction[best]) {
                best = i;
            }
        }
        Vector::from_vec(d.per_direction[best].eta.clone())
    };
    vec![Vector::from_vec(d.eta_star.clone()), arg(|r| r.kappa), arg(|r| r.gamma)]
}

/// Next mesh from the responses `y_n = G_n eta` of the watched directions. With the share
/// `g_i = h_i max(|y_i|, |y_{i-1}|) / T` and the max-rule excess
/// `e_i = h_i | |y_i| - |y_{i-1}| | / T`, an interval is split when `g_i`
/// exceeds twice the mean and its variation exceeds the median, or when
/// `e_i` exceeds twice its mean. Neighbours both below half the mean
/// share are merged.
fn redistribute(mesh: &Mesh, ev: &Evaluation, norm: crate::linalg::Norm, strategy: Strategy) -> Result<Mesh> {
    if strategy == Strategy::Uniform {
        return Ok(mesh.bisected());
    }
    let steps = mesh.steps();
    let t_end = mesh.t_end();
    let n = steps.len();
    let mut g = vec![0.0; n];
    let mut excess = vec![0.0; n];
    let mut var = vec![0.0; n];
    for eta in watched(&ev.discrete) {
        let ys: Vec<Vector> = ev.operators.iter().map(|op| op * &eta).collect();
        let en = norm.vector(eta.as_slice());
        let size: Vec<f64> = ys.iter().map(|y| norm.vector(y.as_slice()) / en).collect();
        for i in 0..n {
            g[i] = f64::max(g[i], steps[i] * size[i].max(size[i + 1]) / t_end);
            excess[i] = f64::max(excess[i], steps[i] * (size[i] - size[i + 1]).abs() / t_end);
            var[i] = f64::max(var[i], norm.vector((&ys[i + 1] - &ys[i]).as_slice()) / en);
        }
    }
    let mean = g.iter().sum::<f64>() / n as f64;
    let mean_excess = excess.iter().sum::<f64>() / n as f64;
    let med = median(&var);

    let mut split: Vec<bool> = (0..n)
        .map(|i| (g[i] > 2.0 * mean && var[i] > med) || excess[i] > 2.0 * mean_excess)
        .collect();
    if strategy == Strategy::Split || !split.iter().any(|&s| s) {
        // widen to every above-average contributor
        for i in 0..n {
            split[i] |= g[i] >= mean || excess[i] >= mean_excess;
        }
    }
    let merge = strategy == Strategy::Redistribute;
    let nodes = mesh.nodes();
    let mut out = vec![nodes[0]];
    let mut i = 0;
    while i < n {
        let mergeable = merge && i + 1 < n && !split[i] && !split[i + 1] && g[i] < 0.5 * mean && g[i + 1] < 0.5 * mean;
        if mergeable {
            // a small last interval would otherwise be left unpaired
            let take = if i + 3 == n && !split[i + 2] && g[i + 2] < 0.5 * mean { 3 } else { 2 };
            out.push(nodes[i + take]);
            i += take;
            continue;
        }
        if split[i] {
            out.push(0.5 * (nodes[i] + nodes[i + 1]));
        }
        out.push(nodes[i + 1]);
        i += 1;
    }
    if out.len() < 3 {
        return Ok(mesh.bisected());
    }
    Mesh::new(out)
}

/// Refines `initial` until the discrete parameters of the collocation
/// scheme match their continuous estimates, for at most `max_rounds`
/// rounds. A round whose mismatch exceeds the previous one is discarded
/// and retried with a more conservative strategy; when every strategy
/// worsens the match the least bad one is kept and marked non-monotone.
pub fn select_mesh(
    problem: &Problem,
    initial: &Mesh,
    tol_factor: f64,
    max_rounds: usize,
    opts: &AnalysisOptions,
) -> Result<MeshSelection> {
    if problem.kind != ProblemKind::Bvp {
        return Err(Error::Structural("mesh selection needs a BVP".into()));
    }
    if !(tol_factor > 1.0) {
        return Err(Error::domain(format!("tol_factor must be > 1, got {tol_factor}")));
    }
    let mut out = MeshSelection {
        mesh: initial.clone(),
        history: Vec::new(),
        converged: false,
        rollbacks: 0,
    };
    if max_rounds == 0 {
        return Ok(out);
    }
    let reference = nominal_solution(problem, opts)?;
    let dirs = direction_set(problem, &reference, opts);
    let norm = opts.conditioning.norm;

    let first_cap = opts.bvp.max_intervals;
    let mut current = evaluate(problem, initial, &reference, &reference, &dirs, tol_factor, 1, first_cap, opts)?;
    out.mesh = current.mesh.clone();
    out.history.push(current.round.clone());
    while !current.round.verdict.pass() && out.history.len() < max_rounds {
        if out.mesh.intervals() * 4 > opts.bvp.max_intervals {
            break;
        }
        let mut fallback: Option<Evaluation> = None;
        for strategy in STRATEGIES {
            let next_mesh = redistribute(&out.mesh, &current, norm, strategy)?;
            let next = match evaluate(
                problem,
                &next_mesh,
                &current.solution,
                &reference,
                &dirs,
                tol_factor,
                out.history.len() + 1,
                2 * out.mesh.intervals(),
                opts,
            ) {
                Ok(next) => next,
                Err(Error::NewtonStagnation { .. } | Error::Singular(_)) => {
                    out.rollbacks += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if next.round.mismatch() <= current.round.mismatch() || next.round.verdict.pass() {
                fallback = Some(next);
                break;
            }
            out.rollbacks += 1;
            if fallback.as_ref().is_none_or(|f| next.round.mismatch() < f.round.mismatch()) {
                let mut next = next;
                next.round.monotone = false;
                fallback = Some(next);
            }
        }
        let Some(next) = fallback else { break };
        out.mesh = next.mesh.clone();
        out.history.push(next.round.clone());
        current = next;
    }
    out.converged = current.round.verdict.pass();
    Ok(out)
}
