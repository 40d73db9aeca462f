//! One-step integrators: fixed-mesh Euler/trapezoidal drivers and an
//! adaptive L-stable SDIRK pair, with per-step amplification maps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::problem::{Problem, ProblemKind};

/// Anything with a right-hand side and a Jacobian: problems, and the
/// variational systems built on top of them.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], out: &mut [f64]);
    fn jacobian(&self, t: f64, y: &[f64]) -> Mat;
}

impl OdeSystem for Problem {
    fn dim(&self) -> usize {
        self.dim
    }
    fn rhs(&self, t: f64, y: &[f64], out: &mut [f64]) {
        self.rhs_into(t, y, out)
    }
    fn jacobian(&self, t: f64, y: &[f64]) -> Mat {
        Problem::jacobian(self, t, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExplicitEuler,
    ImplicitEuler,
    Trapezoidal,
    AdaptiveStiff,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::ExplicitEuler,
        Method::ImplicitEuler,
        Method::Trapezoidal,
        Method::AdaptiveStiff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ExplicitEuler => "explicit-euler",
            Method::ImplicitEuler => "implicit-euler",
            Method::Trapezoidal => "trapezoidal",
            Method::AdaptiveStiff => "adaptive-stiff",
        }
    }

    /// Amplification factor on `y' = lambda y` with step `h`.
    pub fn amplification(self, z: num_complex::Complex64) -> num_complex::Complex64 {
        let one = num_complex::Complex64::new(1.0, 0.0);
        match self {
            Method::ExplicitEuler => one + z,
            Method::ImplicitEuler => one / (one - z),
            Method::Trapezoidal => (one + z / 2.0) / (one - z / 2.0),
            Method::AdaptiveStiff => sdirk::stability(z),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::domain(format!(
                    "unknown method '{s}' (expected one of: {})",
                    Method::ALL.map(Method::name).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    pub newton_tol: f64,
    pub max_newton_iters: usize,
}

impl MethodSpec {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            newton_tol: 1e-12,
            max_newton_iters: 50,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.newton_tol > 0.0) || self.max_newton_iters == 0 {
            return Err(Error::domain("Newton tolerance and iteration limit must be positive"));
        }
        Ok(())
    }
}

impl From<Method> for MethodSpec {
    fn from(m: Method) -> Self {
        MethodSpec::new(m)
    }
}

/// Partition `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Mesh {
    nodes: Vec<f64>,
}

impl Mesh {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::domain("a mesh needs at least two nodes"));
        }
        if nodes[0] != 0.0 {
            return Err(Error::domain(format!("mesh must start at 0, got {}", nodes[0])));
        }
        for w in nodes.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::domain(format!(
                    "mesh nodes must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { nodes })
    }

    pub fn uniform(t_end: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("a mesh needs N >= 1 intervals"));
        }
        let mut nodes: Vec<f64> = (0..=n).map(|i| t_end * i as f64 / n as f64).collect();
        nodes[n] = t_end;
        Mesh::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn t_end(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn steps(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Index `i` of the interval `[t_i, t_{i+1}]` holding `t` (clamped).
    pub fn locate(&self, t: f64) -> usize {
        let k = self.nodes.partition_point(|&x| x <= t);
        k.saturating_sub(1).min(self.intervals() - 1)
    }

    /// Every interval halved.
    pub fn bisected(&self) -> Mesh {
        let mut nodes = Vec::with_capacity(2 * self.nodes.len() - 1);
        for w in self.nodes.windows(2) {
            nodes.push(w[0]);
            nodes.push(0.5 * (w[0] + w[1]));
        }
        nodes.push(self.t_end());
        Mesh { nodes }
    }
}

impl TryFrom<Vec<f64>> for Mesh {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Mesh::new(v)
    }
}

impl From<Mesh> for Vec<f64> {
    fn from(m: Mesh) -> Self {
        m.nodes
    }
}

/// Piecewise cubic Hermite table over a node set, one row of `width`
/// values and slopes per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Hermite {
    mesh: Mesh,
    width: usize,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl Hermite {
    pub fn new(mesh: Mesh, width: usize, values: Vec<f64>, slopes: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * mesh.nodes.len());
        assert_eq!(slopes.len(), values.len());
        Self {
            mesh,
            width,
            values,
            slopes,
        }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn value(&self, n: usize) -> &[f64] {
        &self.values[n * self.width..(n + 1) * self.width]
    }

    pub fn slope(&self, n: usize) -> &[f64] {
        &self.slopes[n * self.width..(n + 1) * self.width]
    }

    fn check(&self, t: f64) -> Result<f64> {
        let t_end = self.mesh.t_end();
        let slack = 4.0 * f64::EPSILON * t_end;
        if t < -slack || t > t_end + slack || t.is_nan() {
            return Err(Error::OutOfRange { t, t_end });
        }
        Ok(t.clamp(0.0, t_end))
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let t = self.check(t)?;
        let i = self.mesh.locate(t);
        let (t0, t1) = (self.mesh.nodes[i], self.mesh.nodes[i + 1]);
        self.eval_in(i, (t - t0) / (t1 - t0), out);
        Ok(())
    }

    /// Evaluates on interval `i` at local coordinate `s` in `[0, 1]`.
    pub fn eval_in(&self, i: usize, s: f64, out: &mut [f64]) {
        let h = self.mesh.nodes[i + 1] - self.mesh.nodes[i];
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = (s3 - 2.0 * s2 + s) * h;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = (s3 - s2) * h;
        let (y0, y1) = (self.value(i), self.value(i + 1));
        let (f0, f1) = (self.slope(i), self.slope(i + 1));
        if s == 0.0 {
            out.copy_from_slice(y0);
            return;
        }
        if s == 1.0 {
            out.copy_from_slice(y1);
            return;
        }
        for k in 0..self.width {
            out[k] = h00 * y0[k] + h10 * f0[k] + h01 * y1[k] + h11 * f1[k];
        }
    }
}

/// Numerical solution with dense output.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dense: Hermite,
    pub method: MethodSpec,
    pub accepted: usize,
    pub rejected: usize,
}

impl Trajectory {
    pub fn from_states(
        mesh: Mesh,
        states: &[Vector],
        slopes: &[Vector],
        method: MethodSpec,
    ) -> Self {
        let m = states.first().map_or(0, |s| s.len());
        let values = states.iter().flat_map(|s| s.iter().copied()).collect();
        let slopes = slopes.iter().flat_map(|s| s.iter().copied()).collect();
        let accepted = mesh.intervals();
        Self {
            dense: Hermite::new(mesh, m, values, slopes),
            method,
            accepted,
            rejected: 0,
        }
    }

    pub fn mesh(&self) -> &Mesh {
        self.dense.mesh()
    }

    pub fn dim(&self) -> usize {
        self.dense.width()
    }

    pub fn len(&self) -> usize {
        self.mesh().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn state(&self, n: usize) -> Vector {
        Vector::from_column_slice(self.dense.value(n))
    }

    pub fn states(&self) -> Vec<Vector> {
        (0..self.len()).map(|n| self.state(n)).collect()
    }

    pub fn slope(&self, n: usize) -> Vector {
        Vector::from_column_slice(self.dense.slope(n))
    }

    pub fn final_state(&self) -> Vector {
        self.state(self.len() - 1)
    }

    pub fn at(&self, t: f64) -> Result<Vector> {
        let mut out = Vector::zeros(self.dim());
        self.dense.eval_into(t, out.as_mut_slice())?;
        Ok(out)
    }
}

/// Linearized one-step maps `y_{n+1} = R_n y_n`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepMap {
    pub maps: Vec<Mat>,
}

impl StepMap {
    /// `R_{N-1} ... R_0`.
    pub fn product(&self) -> Option<Mat> {
        let first = self.maps.first()?;
        let mut p = Mat::identity(first.nrows(), first.ncols());
        for r in &self.maps {
            p = r * p;
        }
        Some(p)
    }

    /// States of the linear recursion seeded by `eta`.
    pub fn propagate(&self, eta: &Vector) -> Vec<Vector> {
        let mut out = Vec::with_capacity(self.maps.len() + 1);
        out.push(eta.clone());
        for r in &self.maps {
            let next = r * out.last().expect("nonempty");
            out.push(next);
        }
        out
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Solves `z = base + c f(t, z)` by damped Newton starting from `z`.
fn newton_implicit<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    base: &[f64],
    c: f64,
    z: &mut Vector,
    spec: &MethodSpec,
) -> std::result::Result<(), String> {
    let m = sys.dim();
    let mut fz = vec![0.0; m];
    let residual = |z: &Vector, fz: &mut [f64]| -> Vector {
        sys.rhs(t, z.as_slice(), fz);
        Vector::from_fn(m, |i, _| z[i] - base[i] - c * fz[i])
    };
    let mut g = residual(z, &mut fz);
    let mut gnorm = inf_norm(g.as_slice());
    for _ in 0..spec.max_newton_iters {
        let jac = sys.jacobian(t, z.as_slice());
        let lhs = Mat::identity(m, m) - jac * c;
        let delta = lhs
            .lu()
            .solve(&(-&g))
            .ok_or_else(|| "singular Newton matrix".to_string())?;
        let mut lambda = 1.0;
        loop {
            let trial = &*z + &delta * lambda;
            let gt = residual(&trial, &mut fz);
            let gt_norm = inf_norm(gt.as_slice());
            if gt_norm.is_finite() && (gt_norm <= (1.0 - 1e-4 * lambda) * gnorm || gt_norm == 0.0 || lambda < 1e-4)
            {
                *z = trial;
                g = gt;
                gnorm = gt_norm;
                break;
            }
            if lambda < 1e-4 {
                return Err("Newton line search failed".into());
            }
            lambda *= 0.5;
        }
        let scale = 1.0 + inf_norm(z.as_slice());
        if lambda * inf_norm(delta.as_slice()) <= spec.newton_tol * scale
            || gnorm <= 4.0 * f64::EPSILON * scale
        {
            return Ok(());
        }
    }
    Err(format!(
        "Newton did not converge in {} iterations (residual {gnorm:e})",
        spec.max_newton_iters
    ))
}

/// One step of `method` from `(t, y)` with step `h`: the new state and the
/// linearized amplification `R = d y_next / d y`.
pub fn step(spec: &MethodSpec, problem: &Problem, t: f64, y: &Vector, h: f64) -> Result<(Vector, Mat)> {
    spec.check()?;
    step_system(spec, problem, t, y, h).map_err(|reason| Error::StepFailure {
        index: 0,
        t,
        reason,
        partial: None,
    })
}

fn step_system<S: OdeSystem + ?Sized>(
    spec: &MethodSpec,
    sys: &S,
    t: f64,
    y: &Vector,
    h: f64,
) -> std::result::Result<(Vector, Mat), String> {
    if !(h > 0.0) {
        return Err(format!("step size must be positive, got {h}"));
    }
    let m = sys.dim();
    let eye = Mat::identity(m, m);
    let mut f0 = vec![0.0; m];
    sys.rhs(t, y.as_slice(), &mut f0);
    let f0 = Vector::from_vec(f0);
    match spec.method {
        Method::ExplicitEuler => {
            let next = y + &f0 * h;
            let r = &eye + sys.jacobian(t, y.as_slice()) * h;
            Ok((next, r))
        }
        Method::ImplicitEuler => {
            let mut z = y + &f0 * h;
            newton_implicit(sys, t + h, y.as_slice(), h, &mut z, spec)?;
            let lhs = &eye - sys.jacobian(t + h, z.as_slice()) * h;
            let r = lhs.lu().try_inverse().ok_or("singular amplification map")?;
            Ok((z, r))
        }
        Method::Trapezoidal => {
            let base = y + &f0 * (0.5 * h);
            let mut z = y + &f0 * h;
            newton_implicit(sys, t + h, base.as_slice(), 0.5 * h, &mut z, spec)?;
            let lhs = &eye - sys.jacobian(t + h, z.as_slice()) * (0.5 * h);
            let rhs = &eye + sys.jacobian(t, y.as_slice()) * (0.5 * h);
            let r = lhs.lu().solve(&rhs).ok_or("singular amplification map")?;
            Ok((z, r))
        }
        Method::AdaptiveStiff => {
            let tol = Tolerances {
                rtol: spec.newton_tol.max(1e-14),
                atol: spec.newton_tol.max(1e-14),
            };
            let out = sdirk::step(sys, t, y, &f0, h, &tol, true)?;
            Ok((out.y, out.r.expect("requested")))
        }
    }
}

/// Applies `method` on every interval of `mesh`.
pub fn integrate_fixed(spec: &MethodSpec, problem: &Problem, mesh: &Mesh) -> Result<(Trajectory, StepMap)> {
    spec.check()?;
    if problem.kind != ProblemKind::Ivp {
        return Err(Error::Structural("fixed-mesh integration needs an IVP".into()));
    }
    if (mesh.t_end() - problem.t_end).abs() > 1e-12 * problem.t_end {
        return Err(Error::domain(format!(
            "mesh ends at {} but the problem interval is [0, {}]",
            mesh.t_end(),
            problem.t_end
        )));
    }
    let mut states = vec![problem.eta.clone()];
    let mut slopes = vec![problem.rhs(0.0, &problem.eta)];
    let mut maps = Vec::with_capacity(mesh.intervals());
    for (n, w) in mesh.nodes().windows(2).enumerate() {
        let y = states.last().expect("nonempty");
        let outcome = step_system(spec, problem, w[0], y, w[1] - w[0]).and_then(|(next, r)| {
            if next.iter().all(|x| x.is_finite()) {
                Ok((next, r))
            } else {
                Err("state is no longer finite".to_string())
            }
        });
        match outcome {
            Ok((next, r)) => {
                slopes.push(problem.rhs(w[1], &next));
                states.push(next);
                maps.push(r);
            }
            Err(reason) => {
                let partial = Mesh::new(mesh.nodes()[..=n].to_vec())
                    .ok()
                    .map(|pm| Box::new(Trajectory::from_states(pm, &states, &slopes, *spec)));
                return Err(Error::StepFailure {
                    index: n,
                    t: w[0],
                    reason,
                    partial,
                });
            }
        }
    }
    Ok((
        Trajectory::from_states(mesh.clone(), &states, &slopes, *spec),
        StepMap { maps },
    ))
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

/// Safety cap on accepted plus rejected steps of one adaptive run.
const MAX_ADAPTIVE_STEPS: usize = 5_000_000;

/// Error-controlled integration over `[0, T]` with the adaptive SDIRK pair.
pub fn integrate_adaptive(problem: &Problem, rtol: f64, atol: f64) -> Result<(Trajectory, StepMap)> {
    if problem.kind != ProblemKind::Ivp {
        return Err(Error::Structural("adaptive integration needs an IVP".into()));
    }
    let (traj, maps) = adaptive_system(problem, &problem.eta, problem.t_end, rtol, atol, true)?;
    Ok((traj, maps.expect("requested")))
}

pub(crate) fn adaptive_system<S: OdeSystem + ?Sized>(
    sys: &S,
    y0: &Vector,
    t_end: f64,
    rtol: f64,
    atol: f64,
    want_maps: bool,
) -> Result<(Trajectory, Option<StepMap>)> {
    if !(rtol > 0.0) || !(atol > 0.0) {
        return Err(Error::domain("rtol and atol must be positive"));
    }
    let tol = Tolerances { rtol, atol };
    let m = sys.dim();
    let h_min = 1e-14 * t_end;
    let mut t = 0.0;
    let mut y = y0.clone();
    let mut f = Vector::zeros(m);
    sys.rhs(t, y.as_slice(), f.as_mut_slice());
    let mut nodes = vec![0.0];
    let mut states = vec![y.clone()];
    let mut slopes = vec![f.clone()];
    let mut maps = Vec::new();
    let (mut accepted, mut rejected) = (0usize, 0usize);

    let mut h = initial_step(&y, &f, t_end, &tol);
    while t < t_end {
        if accepted + rejected >= MAX_ADAPTIVE_STEPS {
            return Err(Error::StepFailure {
                index: accepted,
                t,
                reason: format!("step budget of {MAX_ADAPTIVE_STEPS} exhausted"),
                partial: None,
            });
        }
        if h < h_min {
            return Err(Error::StiffnessPathology { t });
        }
        let last = t + h >= t_end * (1.0 - 1e-13);
        let h_try = if last { t_end - t } else { h };
        match sdirk::step(sys, t, &y, &f, h_try, &tol, want_maps) {
            Err(_) => {
                rejected += 1;
                h = 0.5 * h_try;
            }
            Ok(out) => {
                let err = out.error;
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.25)).clamp(0.2, 5.0)
                };
                if err <= 1.0 && out.y.iter().all(|v| v.is_finite()) {
                    t = if last { t_end } else { t + h_try };
                    y = out.y;
                    sys.rhs(t, y.as_slice(), f.as_mut_slice());
                    nodes.push(t);
                    states.push(y.clone());
                    slopes.push(f.clone());
                    if let Some(r) = out.r {
                        maps.push(r);
                    }
                    accepted += 1;
                    h = h_try * factor;
                } else {
                    rejected += 1;
                    h = h_try * factor.min(0.9);
                }
            }
        }
    }
    let mesh = Mesh::new(nodes)?;
    let mut traj = Trajectory::from_states(mesh, &states, &slopes, MethodSpec::new(Method::AdaptiveStiff));
    traj.accepted = accepted;
    traj.rejected = rejected;
    Ok((traj, want_maps.then_some(StepMap { maps })))
}

fn initial_step(y: &Vector, f: &Vector, t_end: f64, tol: &Tolerances) -> f64 {
    let mut d0 = 0.0_f64;
    let mut d1 = 0.0_f64;
    for i in 0..y.len() {
        let sc = tol.atol + tol.rtol * y[i].abs();
        d0 = d0.max(y[i].abs() / sc);
        d1 = d1.max(f[i].abs() / sc);
    }
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6 * t_end
    } else {
        0.01 * d0 / d1
    };
    h.clamp(1e-10 * t_end, t_end)
}

mod sdirk {
    //! Five-stage, order-4, L-stable, stiffly accurate SDIRK with an
    //! embedded order-3 solution.

    use super::{inf_norm, OdeSystem, Tolerances};
    use crate::linalg::{Mat, Vector};
    use num_complex::Complex64;

    pub(super) const GAMMA: f64 = 0.25;
    pub(super) const C: [f64; 5] = [0.25, 0.75, 11.0 / 20.0, 0.5, 1.0];
    pub(super) const A: [[f64; 5]; 5] = [
        [0.25, 0.0, 0.0, 0.0, 0.0],
        [0.5, 0.25, 0.0, 0.0, 0.0],
        [17.0 / 50.0, -1.0 / 25.0, 0.25, 0.0, 0.0],
        [371.0 / 1360.0, -137.0 / 2720.0, 15.0 / 544.0, 0.25, 0.0],
        [25.0 / 24.0, -49.0 / 48.0, 125.0 / 16.0, -85.0 / 12.0, 0.25],
    ];
    pub(super) const B: [f64; 5] = A[4];
    pub(super) const BHAT: [f64; 5] = [59.0 / 48.0, -17.0 / 96.0, 225.0 / 32.0, -85.0 / 12.0, 0.0];

    const MAX_NEWTON: usize = 10;

    pub(super) struct StepOutput {
        pub y: Vector,
        /// Scaled local error estimate; accept when <= 1.
        pub error: f64,
        pub r: Option<Mat>,
    }

    /// `R(z) = 1 + z b^T (I - z A)^{-1} 1`.
    pub(super) fn stability(z: Complex64) -> Complex64 {
        let mut k = [Complex64::new(0.0, 0.0); 5];
        for i in 0..5 {
            let mut s = Complex64::new(1.0, 0.0);
            for j in 0..i {
                s += z * A[i][j] * k[j];
            }
            k[i] = s / (Complex64::new(1.0, 0.0) - z * GAMMA);
        }
        // stiffly accurate: the last stage is the new state
        k[4]
    }

    pub(super) fn step<S: OdeSystem + ?Sized>(
        sys: &S,
        t: f64,
        y: &Vector,
        f0: &Vector,
        h: f64,
        tol: &Tolerances,
        want_r: bool,
    ) -> Result<StepOutput, String> {
        let m = sys.dim();
        let eye = Mat::identity(m, m);
        let scale: Vec<f64> = y.iter().map(|v| tol.atol + tol.rtol * v.abs()).collect();
        let mut z: Vec<Vector> = Vec::with_capacity(5);
        let mut k: Vec<Vector> = Vec::with_capacity(5);
        let mut fz = vec![0.0; m];
        for i in 0..5 {
            let ti = t + C[i] * h;
            let mut base = y.clone();
            for j in 0..i {
                base.axpy(h * A[i][j], &k[j], 1.0);
            }
            let guess = if i == 0 { f0 } else { &k[i - 1] };
            let mut zi = &base + guess * (h * GAMMA);
            let mut prev = f64::INFINITY;
            let mut converged = false;
            for it in 0..MAX_NEWTON {
                sys.rhs(ti, zi.as_slice(), &mut fz);
                let g = Vector::from_fn(m, |r, _| zi[r] - base[r] - h * GAMMA * fz[r]);
                let jac = sys.jacobian(ti, zi.as_slice());
                let lhs = &eye - jac * (h * GAMMA);
                let delta = lhs.lu().solve(&(-g)).ok_or("singular stage matrix")?;
                zi += &delta;
                let dn = delta
                    .iter()
                    .zip(&scale)
                    .fold(0.0_f64, |acc, (d, s)| acc.max(d.abs() / s));
                if !dn.is_finite() {
                    return Err("stage iteration produced non-finite values".into());
                }
                if dn <= 1e-3 || inf_norm(delta.as_slice()) <= 1e-15 * (1.0 + inf_norm(zi.as_slice())) {
                    converged = true;
                    break;
                }
                if it >= 2 && dn > prev {
                    break;
                }
                prev = dn;
            }
            if !converged {
                return Err("stage Newton iteration did not converge".into());
            }
            let ki = (&zi - &base) / (h * GAMMA);
            z.push(zi);
            k.push(ki);
        }
        let y_new = z[4].clone();

        let mut est = Vector::zeros(m);
        for j in 0..5 {
            est.axpy(h * (B[j] - BHAT[j]), &k[j], 1.0);
        }
        // filter stiff components of the estimate
        let filter = &eye - sys.jacobian(t, y.as_slice()) * (h * GAMMA);
        let est = filter.lu().solve(&est).unwrap_or(est);
        let mut error = 0.0_f64;
        for i in 0..m {
            let sc = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
            error = error.max(est[i].abs() / sc);
        }
        if error.is_nan() {
            error = f64::INFINITY;
        }

        let r = if want_r {
            let mut dz: Vec<Mat> = Vec::with_capacity(5);
            let mut jz: Vec<Mat> = Vec::with_capacity(5);
            for i in 0..5 {
                let ji = sys.jacobian(t + C[i] * h, z[i].as_slice());
                let mut rhs = eye.clone();
                for j in 0..i {
                    rhs += (&jz[j] * &dz[j]) * (h * A[i][j]);
                }
                let lhs = &eye - &ji * (h * GAMMA);
                let di = lhs.lu().solve(&rhs).ok_or("singular stage matrix")?;
                dz.push(di);
                jz.push(ji);
            }
            Some(dz.pop().expect("five stages"))
        } else {
            None
        };
        Ok(StepOutput { y: y_new, error, r })
    }
}
