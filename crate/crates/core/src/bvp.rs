//! Two-point BVPs by trapezoidal collocation, damped Newton, residual-driven
//! mesh refinement and parameter continuation.
//!
//! Unknowns are the nodal states `y_0..y_N`. For separated boundary
//! conditions the equations are ordered left-boundary rows, collocation
//! blocks, right-boundary rows, which keeps the Jacobian banded.

use nalgebra::{Dyn, LU};

use crate::error::{Error, Result};
use crate::integrate::{Method, MethodSpec, Mesh, Trajectory};
use crate::linalg::{BandedLu, Mat, Vector};
use crate::problem::{Problem, ProblemKind, Separation};
use crate::variational::FundamentalPath;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvpOptions {
    pub newton_tol: f64,
    pub max_iters: usize,
    /// Bound on the per-interval refinement indicator.
    pub mesh_tol: f64,
    pub initial_intervals: usize,
    pub max_intervals: usize,
}

impl Default for BvpOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_iters: 60,
            mesh_tol: 1e-4,
            initial_intervals: 64,
            max_intervals: 200_000,
        }
    }
}

/// Largest dense system used for non-separated boundary conditions.
const DENSE_LIMIT: usize = 4000;

struct Layout<'a> {
    problem: &'a Problem,
    sep: Option<Separation>,
}

enum Factored {
    Banded(BandedLu),
    Dense(LU<f64, Dyn, Dyn>),
}

impl Factored {
    fn solve(&self, b: &mut [f64]) -> Result<()> {
        match self {
            Factored::Banded(lu) => {
                lu.solve_in_place(b);
                Ok(())
            }
            Factored::Dense(lu) => {
                let x = lu
                    .solve(&Vector::from_column_slice(b))
                    .ok_or_else(|| Error::Singular("collocation matrix".into()))?;
                b.copy_from_slice(x.as_slice());
                Ok(())
            }
        }
    }
}

impl<'a> Layout<'a> {
    fn new(problem: &'a Problem) -> Self {
        Self {
            problem,
            sep: problem.boundary.separation(),
        }
    }

    fn m(&self) -> usize {
        self.problem.dim
    }

    /// First row of collocation block `i`.
    fn block_row(&self, i: usize) -> usize {
        match &self.sep {
            Some(s) => s.left.len() + i * self.m(),
            None => self.m() + i * self.m(),
        }
    }

    fn residual(&self, mesh: &Mesh, ys: &[Vector], fs: &[Vector], eta: &Vector) -> Vec<f64> {
        let m = self.m();
        let n = ys.len();
        let mut r = vec![0.0; m * n];
        let bc = &self.problem.boundary;
        let bres = &bc.b0 * &ys[0] + &bc.b1 * &ys[n - 1] - eta;
        match &self.sep {
            Some(s) => {
                for (k, &row) in s.left.iter().enumerate() {
                    r[k] = bres[row];
                }
                let base = self.block_row(n - 1);
                for (k, &row) in s.right.iter().enumerate() {
                    r[base + k] = bres[row];
                }
            }
            None => r[..m].copy_from_slice(bres.as_slice()),
        }
        let nodes = mesh.nodes();
        for i in 0..n - 1 {
            let h = nodes[i + 1] - nodes[i];
            let row = self.block_row(i);
            for c in 0..m {
                r[row + c] = ys[i + 1][c] - ys[i][c] - 0.5 * h * (fs[i][c] + fs[i + 1][c]);
            }
        }
        r
    }

    fn factor(&self, mesh: &Mesh, jacs: &[Mat]) -> Result<Factored> {
        let m = self.m();
        let n = jacs.len();
        let size = m * n;
        let bc = &self.problem.boundary;
        let nodes = mesh.nodes();
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(n * 2 * m * m + 2 * m * m);
        match &self.sep {
            Some(s) => {
                for (k, &row) in s.left.iter().enumerate() {
                    for c in 0..m {
                        entries.push((k, c, bc.b0[(row, c)]));
                    }
                }
                let base = self.block_row(n - 1);
                for (k, &row) in s.right.iter().enumerate() {
                    for c in 0..m {
                        entries.push((base + k, (n - 1) * m + c, bc.b1[(row, c)]));
                    }
                }
            }
            None => {
                for row in 0..m {
                    for c in 0..m {
                        entries.push((row, c, bc.b0[(row, c)]));
                        entries.push((row, (n - 1) * m + c, bc.b1[(row, c)]));
                    }
                }
            }
        }
        for i in 0..n - 1 {
            let h = nodes[i + 1] - nodes[i];
            let row = self.block_row(i);
            for a in 0..m {
                for c in 0..m {
                    let eye = if a == c { 1.0 } else { 0.0 };
                    entries.push((row + a, i * m + c, -eye - 0.5 * h * jacs[i][(a, c)]));
                    entries.push((row + a, (i + 1) * m + c, eye - 0.5 * h * jacs[i + 1][(a, c)]));
                }
            }
        }
        if self.sep.is_some() {
            return Ok(Factored::Banded(BandedLu::factor(size, &entries)?));
        }
        if size > DENSE_LIMIT {
            return Err(Error::Structural(format!(
                "non-separated boundary conditions need a dense system of size {size} (limit {DENSE_LIMIT})"
            )));
        }
        let mut dense = Mat::zeros(size, size);
        for (i, j, v) in entries {
            dense[(i, j)] += v;
        }
        let lu = dense.lu();
        if !lu.is_invertible() {
            return Err(Error::Singular("collocation matrix".into()));
        }
        Ok(Factored::Dense(lu))
    }
}

fn check_bvp(problem: &Problem) -> Result<()> {
    if problem.kind != ProblemKind::Bvp {
        return Err(Error::Structural("collocation needs a BVP".into()));
    }
    Ok(())
}

fn check_mesh(problem: &Problem, mesh: &Mesh) -> Result<()> {
    if (mesh.t_end() - problem.t_end).abs() > 1e-12 * problem.t_end {
        return Err(Error::domain(format!(
            "mesh ends at {} but the problem interval is [0, {}]",
            mesh.t_end(),
            problem.t_end
        )));
    }
    Ok(())
}

/// Linear interpolant between `u` and `v`, where `[u; v]` is the
/// least-squares solution of `B0 u + B1 v = eta`.
pub fn default_guess(problem: &Problem, mesh: &Mesh) -> Vec<Vector> {
    let m = problem.dim;
    let bc = &problem.boundary;
    let mut stacked = Mat::zeros(m, 2 * m);
    stacked.view_mut((0, 0), (m, m)).copy_from(&bc.b0);
    stacked.view_mut((0, m), (m, m)).copy_from(&bc.b1);
    let uv = stacked
        .pseudo_inverse(1e-12)
        .map(|p| p * &problem.eta)
        .unwrap_or_else(|_| Vector::zeros(2 * m));
    let u = uv.rows(0, m).into_owned();
    let v = uv.rows(m, m).into_owned();
    let t_end = mesh.t_end();
    mesh.nodes()
        .iter()
        .map(|&t| &u + (&v - &u) * (t / t_end))
        .collect()
}

/// Collocation solve on a fixed mesh from the default guess.
pub fn solve_bvp(problem: &Problem, mesh: &Mesh, newton_tol: f64, max_iters: usize) -> Result<Trajectory> {
    let guess = default_guess(problem, mesh);
    solve_bvp_from(problem, mesh, guess, newton_tol, max_iters)
}

/// Collocation solve on a fixed mesh from nodal guesses.
pub fn solve_bvp_from(
    problem: &Problem,
    mesh: &Mesh,
    guess: Vec<Vector>,
    newton_tol: f64,
    max_iters: usize,
) -> Result<Trajectory> {
    check_bvp(problem)?;
    check_mesh(problem, mesh)?;
    if guess.len() != mesh.nodes().len() {
        return Err(Error::Shape(format!(
            "guess has {} nodes, mesh has {}",
            guess.len(),
            mesh.nodes().len()
        )));
    }
    if !(newton_tol > 0.0) || max_iters == 0 {
        return Err(Error::domain("Newton tolerance and iteration limit must be positive"));
    }
    let layout = Layout::new(problem);
    let m = problem.dim;
    let nodes = mesh.nodes();
    let rhs_all = |ys: &[Vector]| -> Vec<Vector> {
        ys.iter().zip(nodes).map(|(y, &t)| problem.rhs(t, y)).collect()
    };
    let norm2 = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>().sqrt();
    let inf = |r: &[f64]| r.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let y_inf = |ys: &[Vector]| ys.iter().fold(0.0_f64, |a, y| a.max(y.amax()));

    let mut ys = guess;
    let mut fs = rhs_all(&ys);
    let mut r = layout.residual(mesh, &ys, &fs, &problem.eta);
    for _ in 0..=max_iters {
        if !r.iter().all(|x| x.is_finite()) {
            return Err(Error::NewtonStagnation { residual: f64::INFINITY });
        }
        if inf(&r) <= newton_tol * (1.0 + y_inf(&ys)) {
            let spec = MethodSpec {
                newton_tol,
                max_newton_iters: max_iters,
                ..MethodSpec::new(Method::Trapezoidal)
            };
            return Ok(Trajectory::from_states(mesh.clone(), &ys, &fs, spec));
        }
        let jacs: Vec<Mat> = ys
            .iter()
            .zip(nodes)
            .map(|(y, &t)| problem.jacobian(t, y.as_slice()))
            .collect();
        let lu = layout.factor(mesh, &jacs)?;
        let mut delta: Vec<f64> = r.iter().map(|x| -x).collect();
        lu.solve(&mut delta)?;
        let r0 = norm2(&r);
        let mut lambda = 1.0;
        loop {
            let trial: Vec<Vector> = ys
                .iter()
                .enumerate()
                .map(|(n, y)| y + Vector::from_column_slice(&delta[n * m..(n + 1) * m]) * lambda)
                .collect();
            let ft = rhs_all(&trial);
            let rt = layout.residual(mesh, &trial, &ft, &problem.eta);
            let rn = norm2(&rt);
            if rn.is_finite() && rn <= (1.0 - 1e-4 * lambda) * r0 {
                ys = trial;
                fs = ft;
                r = rt;
                break;
            }
            lambda *= 0.5;
            if lambda < 1e-4 {
                return Err(Error::NewtonStagnation { residual: inf(&r) });
            }
        }
    }
    Err(Error::NewtonStagnation { residual: inf(&r) })
}

/// Per-interval indicator `(h_i / 12) |f_i - f_{i-1}|`, componentwise
/// relative to the component's largest magnitude.
fn indicator(mesh: &Mesh, ys: &[&[f64]], fs: &[&[f64]]) -> Vec<f64> {
    let w = ys[0].len();
    let mut scale = vec![0.0_f64; w];
    for y in ys {
        for c in 0..w {
            scale[c] = scale[c].max(y[c].abs());
        }
    }
    let top = scale.iter().fold(0.0_f64, |a, &b| a.max(b));
    let floor = (top * 1e-8).max(1e-300);
    for s in &mut scale {
        *s = s.max(floor);
    }
    mesh.nodes()
        .windows(2)
        .enumerate()
        .map(|(i, t)| {
            let h = t[1] - t[0];
            (0..w)
                .map(|c| h / 12.0 * (fs[i + 1][c] - fs[i][c]).abs() / scale[c])
                .fold(0.0, f64::max)
        })
        .collect()
}

fn bisect_flagged(mesh: &Mesh, flags: &[bool]) -> Result<Mesh> {
    let nodes = mesh.nodes();
    let mut out = Vec::with_capacity(nodes.len() * 2);
    for i in 0..nodes.len() - 1 {
        out.push(nodes[i]);
        if flags[i] {
            let mid = 0.5 * (nodes[i] + nodes[i + 1]);
            if mid > nodes[i] && mid < nodes[i + 1] {
                out.push(mid);
            }
        }
    }
    out.push(mesh.t_end());
    Mesh::new(out)
}

/// Flags intervals over tolerance, or `None` when the mesh is adequate or
/// cannot grow further.
fn refine_flags(err: &[f64], tol: f64, intervals: usize, max_intervals: usize) -> Option<Vec<bool>> {
    let flags: Vec<bool> = err.iter().map(|&e| e > tol).collect();
    let count = flags.iter().filter(|&&f| f).count();
    if count == 0 || intervals + count > max_intervals {
        return None;
    }
    Some(flags)
}

fn resample(prev: &Trajectory, mesh: &Mesh) -> Vec<Vector> {
    let scale = prev.mesh().t_end() / mesh.t_end();
    mesh.nodes()
        .iter()
        .map(|&t| prev.at((t * scale).min(prev.mesh().t_end())).expect("inside interval"))
        .collect()
}

/// Solves on a mesh refined until the indicator is below `mesh_tol`
/// everywhere. `start` supplies the first mesh and guess.
pub fn solve_bvp_adaptive(problem: &Problem, opts: &BvpOptions, start: Option<&Trajectory>) -> Result<Trajectory> {
    check_bvp(problem)?;
    let (mut mesh, mut guess) = match start {
        Some(prev) if (prev.mesh().t_end() - problem.t_end).abs() <= 1e-12 * problem.t_end => {
            let mesh = prev.mesh().clone();
            let guess = prev.states();
            (mesh, guess)
        }
        Some(prev) => {
            let mesh = Mesh::uniform(problem.t_end, opts.initial_intervals)?;
            let guess = resample(prev, &mesh);
            (mesh, guess)
        }
        None => {
            let mesh = Mesh::uniform(problem.t_end, opts.initial_intervals)?;
            let guess = default_guess(problem, &mesh);
            (mesh, guess)
        }
    };
    loop {
        let sol = solve_bvp_from(problem, &mesh, guess, opts.newton_tol, opts.max_iters)?;
        let n = sol.len();
        let ys: Vec<&[f64]> = (0..n).map(|k| sol.dense.value(k)).collect();
        let fs: Vec<&[f64]> = (0..n).map(|k| sol.dense.slope(k)).collect();
        let err = indicator(&mesh, &ys, &fs);
        match refine_flags(&err, opts.mesh_tol, mesh.intervals(), opts.max_intervals) {
            None => return Ok(sol),
            Some(flags) => {
                mesh = bisect_flagged(&mesh, &flags)?;
                guess = resample(&sol, &mesh);
            }
        }
    }
}

/// Solutions along a parameter path.
#[derive(Debug)]
pub struct Continuation {
    /// One entry per requested value reached, in request order.
    pub solutions: Vec<(f64, Problem, Trajectory)>,
    /// Intermediate values inserted by bisection.
    pub inserted: usize,
    pub stall: Option<Error>,
}

/// Maximum bisection depth between two consecutive parameter values.
pub const MAX_BISECTION_DEPTH: usize = 8;

fn midpoint(a: f64, b: f64) -> f64 {
    if a > 0.0 && b > 0.0 && (a / b).max(b / a) > 4.0 {
        (a * b).sqrt()
    } else {
        0.5 * (a + b)
    }
}

/// Steps `param` through `values` in the given order, warm-starting each
/// solve from the previous solution and inserting bisected intermediate
/// values when a step fails.
pub fn continue_in_parameter(problem: &Problem, param: &str, values: &[f64], opts: &BvpOptions) -> Continuation {
    let mut out = Continuation {
        solutions: Vec::new(),
        inserted: 0,
        stall: None,
    };
    let mut last: Option<(f64, Trajectory)> = None;
    for &v in values {
        let reached = match &last {
            None => problem
                .with_param(param, v)
                .and_then(|p| solve_bvp_adaptive(&p, opts, None).map(|s| (p, s))),
            Some((from, prev)) => reach(problem, param, *from, v, prev, opts, 0, &mut out.inserted),
        };
        match reached {
            Ok((p, sol)) => {
                last = Some((v, sol.clone()));
                out.solutions.push((v, p, sol));
            }
            Err(e) => {
                out.stall = Some(Error::ContinuationStall {
                    param: param.to_string(),
                    reached: last.as_ref().map_or(f64::NAN, |l| l.0),
                    completed: out.solutions.len(),
                    reason: e.to_string(),
                });
                break;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn reach(
    problem: &Problem,
    param: &str,
    from: f64,
    to: f64,
    prev: &Trajectory,
    opts: &BvpOptions,
    depth: usize,
    inserted: &mut usize,
) -> Result<(Problem, Trajectory)> {
    let p = problem.with_param(param, to)?;
    match solve_bvp_adaptive(&p, opts, Some(prev)) {
        Ok(sol) => Ok((p, sol)),
        Err(e @ (Error::Domain(_) | Error::Shape(_) | Error::Structural(_) | Error::Spec(_))) => Err(e),
        Err(e) if depth >= MAX_BISECTION_DEPTH => Err(e),
        Err(_) => {
            let mid = midpoint(from, to);
            *inserted += 1;
            let (_, mid_sol) = reach(problem, param, from, mid, prev, opts, depth + 1, inserted)?;
            reach(problem, param, mid, to, &mid_sol, opts, depth + 1, inserted)
        }
    }
}

fn operator_on(layout: &Layout, problem: &Problem, nominal: &Trajectory, mesh: &Mesh) -> Result<(Vec<Mat>, Vec<Mat>)> {
    let m = problem.dim;
    let t_nom = nominal.mesh().t_end();
    let nodes = mesh.nodes();
    let n = nodes.len();
    let jacs: Vec<Mat> = nodes
        .iter()
        .map(|&t| {
            let y = nominal.at(t.min(t_nom)).expect("inside interval");
            problem.jacobian(t, y.as_slice())
        })
        .collect();
    let lu = layout.factor(mesh, &jacs).map_err(|e| match e {
        Error::Singular(_) => Error::UnsolvableBvp {
            condition: f64::INFINITY,
        },
        other => other,
    })?;
    let mut values = vec![Mat::zeros(m, m); n];
    for j in 0..m {
        let mut e = Vector::zeros(m);
        e[j] = 1.0;
        let zeros = vec![Vector::zeros(m); n];
        // residual at u = 0 is -(boundary data), so the Newton step is the solution
        let r = layout.residual(mesh, &zeros, &zeros, &e);
        let mut u: Vec<f64> = r.iter().map(|x| -x).collect();
        lu.solve(&mut u)?;
        if !u.iter().all(|x| x.is_finite()) {
            return Err(Error::UnsolvableBvp {
                condition: f64::INFINITY,
            });
        }
        for k in 0..n {
            for c in 0..m {
                values[k][(c, j)] = u[k * m + c];
            }
        }
    }
    let slopes: Vec<Mat> = jacs.iter().zip(&values).map(|(j, g)| j * g).collect();
    Ok((values, slopes))
}

/// Discrete solution operators `G_n` of the collocation scheme on `mesh`,
/// linearized about `nominal`: the scheme's response at node `n` to
/// boundary data `eta` is `G_n eta`.
pub fn discrete_operator(problem: &Problem, nominal: &Trajectory, mesh: &Mesh) -> Result<Vec<Mat>> {
    check_bvp(problem)?;
    check_mesh(problem, mesh)?;
    operator_on(&Layout::new(problem), problem, nominal, mesh).map(|(v, _)| v)
}

/// Solution operator `G(t) = Phi(t) Q^{-1}` of the problem linearized
/// about `nominal`, from the `m` linear BVPs `u' = J u`,
/// `B0 u(0) + B1 u(T) = e_j`, refined with the same indicator.
pub fn fundamental_by_collocation(problem: &Problem, nominal: &Trajectory, opts: &BvpOptions) -> Result<FundamentalPath> {
    let layout = Layout::new(problem);
    let mut mesh = nominal.mesh().clone();
    loop {
        let (values, slopes) = operator_on(&layout, problem, nominal, &mesh)?;
        let flat: Vec<Vec<f64>> = values.iter().map(|g| g.as_slice().to_vec()).collect();
        let dflat: Vec<Vec<f64>> = slopes.iter().map(|g| g.as_slice().to_vec()).collect();
        let ys: Vec<&[f64]> = flat.iter().map(|v| v.as_slice()).collect();
        let fs: Vec<&[f64]> = dflat.iter().map(|v| v.as_slice()).collect();
        let err = indicator(&mesh, &ys, &fs);
        match refine_flags(&err, opts.mesh_tol, mesh.intervals(), opts.max_intervals) {
            None => return FundamentalPath::from_operator(mesh, &values, &slopes, true),
            Some(flags) => mesh = bisect_flagged(&mesh, &flags)?,
        }
    }
}
