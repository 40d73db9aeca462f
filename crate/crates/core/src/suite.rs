//! Built-in benchmark problems and parameter sweeps.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::{analyze_with_nominal, fundamental_path, nominal_solution, AnalysisOptions};
use crate::bvp::continue_in_parameter;
use crate::conditioning::ConditioningReport;
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::problem::{BoundaryCondition, FnField, LinearTV, Problem, ProblemKind};
use crate::variational::{kreiss_matrices, KreissVariant};

/// Names accepted by [`builtin`] and [`load_case`].
pub const CASES: [&str; 12] = [
    "scalar",
    "diag2",
    "lambert",
    "vdp",
    "robertson",
    "kreiss",
    "modified-kreiss",
    "turning-point",
    "boundary-layer",
    "troesch",
    "smooth",
    "linear-bvp",
];

fn defaults(name: &str) -> Option<Vec<(&'static str, f64)>> {
    Some(match name {
        "scalar" => vec![("lambda", -2.0), ("lambda_im", 0.0), ("T", 10.0)],
        "diag2" => vec![("l1", -100.0), ("l2", -1.0), ("T", 1.0)],
        "lambert" => vec![("T", 1000.0)],
        "vdp" => vec![("mu", 10.0)],
        "robertson" => vec![("T", 100.0)],
        "kreiss" | "modified-kreiss" => vec![("eps", 1e-3)],
        "turning-point" => vec![("eps", 1e-4)],
        "boundary-layer" => vec![("eps", 1e-2)],
        "troesch" => vec![("mu", 5.0)],
        "smooth" => vec![],
        "linear-bvp" => vec![("a", 1.0), ("T", 1.0)],
        _ => return None,
    })
}

fn unknown(name: &str) -> Error {
    Error::UnknownCase {
        name: name.to_string(),
        available: CASES.iter().map(|s| s.to_string()).collect(),
    }
}

fn merged(name: &str, given: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
    let defs = defaults(name).ok_or_else(|| unknown(name))?;
    let mut params: BTreeMap<String, f64> = defs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    for (k, v) in given {
        if !params.contains_key(k) {
            let known: Vec<&str> = defs.iter().map(|d| d.0).collect();
            return Err(Error::domain(format!(
                "'{name}' has no parameter '{k}' (parameters: {})",
                if known.is_empty() { "none".to_string() } else { known.join(", ") }
            )));
        }
        if !v.is_finite() {
            return Err(Error::domain(format!("parameter {k} = {v} is not finite")));
        }
        params.insert(k.clone(), *v);
    }
    Ok(params)
}

fn v(xs: &[f64]) -> Vector {
    Vector::from_vec(xs.to_vec())
}

fn m2(a: f64, b: f64, c: f64, d: f64) -> Mat {
    Mat::from_row_slice(2, 2, &[a, b, c, d])
}

fn positive(name: &str, value: f64) -> Result<f64> {
    if value > 0.0 {
        Ok(value)
    } else {
        Err(Error::domain(format!("{name} must be > 0, got {value}")))
    }
}

fn linear_field(a: Mat) -> FnField {
    let dim = a.nrows();
    let rhs_a = a.clone();
    FnField::new(
        dim,
        move |_, y, out| {
            for i in 0..dim {
                out[i] = (0..dim).map(|j| rhs_a[(i, j)] * y[j]).sum();
            }
        },
        move |_, _| a.clone(),
    )
}

fn two_point_dirichlet() -> BoundaryCondition {
    BoundaryCondition::new(m2(1.0, 0.0, 0.0, 0.0), m2(0.0, 0.0, 1.0, 0.0)).expect("2x2 blocks")
}

/// Builds a built-in problem; missing parameters take their defaults.
pub fn builtin(name: &str, given: &BTreeMap<String, f64>) -> Result<Problem> {
    let params = merged(name, given)?;
    let p = |k: &str| params[k];
    let problem = match name {
        "scalar" => {
            let (re, im, t_end) = (p("lambda"), p("lambda_im"), p("T"));
            if im == 0.0 {
                let a = Mat::from_element(1, 1, re);
                Problem::ivp(name, Arc::new(linear_field(a.clone())), t_end, v(&[1.0]))?
                    .with_linear(LinearTV::constant(a))
            } else {
                // complex scalar as a real 2x2 rotation-dilation
                let a = m2(re, -im, im, re);
                Problem::ivp(name, Arc::new(linear_field(a.clone())), t_end, v(&[1.0, 0.0]))?
                    .with_linear(LinearTV::constant(a))
            }
        }
        "diag2" => {
            let a = m2(p("l1"), 0.0, 0.0, p("l2"));
            Problem::ivp(name, Arc::new(linear_field(a.clone())), p("T"), v(&[1.0, 1.0]))?
                .with_linear(LinearTV::constant(a))
        }
        "lambert" => {
            let a = m2(-2.0, 1.0, -1.999, 0.999);
            let field = FnField::new(
                2,
                |t, y, out| {
                    let (s, c) = t.sin_cos();
                    out[0] = -2.0 * y[0] + y[1] + 2.0 * s;
                    out[1] = -1.999 * y[0] + 0.999 * y[1] + 0.999 * (s - c);
                },
                |_, _| m2(-2.0, 1.0, -1.999, 0.999),
            );
            Problem::ivp(name, Arc::new(field), p("T"), v(&[2.0, 3.0]))?.with_linear(LinearTV::constant(a))
        }
        "vdp" => {
            let mu = p("mu");
            if mu < 0.0 {
                return Err(Error::domain(format!("mu must be >= 0, got {mu}")));
            }
            let t_end = if mu == 0.0 { 2.0 * PI } else { 2.0 * mu };
            let field = FnField::new(
                2,
                move |_, y, out| {
                    out[0] = y[1];
                    out[1] = -y[0] + mu * y[1] * (1.0 - y[0] * y[0]);
                },
                move |_, y| m2(0.0, 1.0, -1.0 - 2.0 * mu * y[0] * y[1], mu * (1.0 - y[0] * y[0])),
            );
            Problem::ivp(name, Arc::new(field), t_end, v(&[2.0, 0.0]))?
        }
        "robertson" => {
            let field = FnField::new(
                3,
                |_, y, out| {
                    let a = 0.04 * y[0];
                    let b = 1e4 * y[1] * y[2];
                    let c = 3e7 * y[1] * y[1];
                    out[0] = -a + b;
                    out[1] = a - b - c;
                    out[2] = c;
                },
                |_, y| {
                    Mat::from_row_slice(
                        3,
                        3,
                        &[
                            -0.04,
                            1e4 * y[2],
                            1e4 * y[1],
                            0.04,
                            -1e4 * y[2] - 6e7 * y[1],
                            -1e4 * y[1],
                            0.0,
                            6e7 * y[1],
                            0.0,
                        ],
                    )
                },
            );
            Problem::ivp(name, Arc::new(field), p("T"), v(&[1.0, 0.0, 0.0]))?
                .with_directions(vec![v(&[0.0, 1.0, -1.0])])
        }
        "kreiss" | "modified-kreiss" => {
            let eps = positive("eps", p("eps"))?;
            let variant = if name == "kreiss" {
                KreissVariant::Kreiss
            } else {
                KreissVariant::Modified
            };
            kreiss_matrices(0.0, eps, variant)?;
            let a = move |t: f64| kreiss_matrices(t, eps, variant).expect("eps validated");
            let field = FnField::new(
                2,
                move |t, y, out| {
                    let m = a(t);
                    out[0] = m[(0, 0)] * y[0] + m[(0, 1)] * y[1];
                    out[1] = m[(1, 0)] * y[0] + m[(1, 1)] * y[1];
                },
                move |t, _| a(t),
            );
            Problem::ivp(name, Arc::new(field), 4.0 * PI, v(&[-eps, 1.0]))?
                .with_linear(LinearTV::new(a, false))
                .with_directions(vec![v(&[-eps, 1.0])])
        }
        "turning-point" => {
            // posed on [-1, 1]; t here is shifted by +1
            let eps = positive("eps", p("eps"))?;
            let pi2 = PI * PI;
            let field = FnField::new(
                2,
                move |t, y, out| {
                    let x = t - 1.0;
                    let (s, c) = (PI * x).sin_cos();
                    out[0] = y[1];
                    out[1] = (-x * y[1] - eps * pi2 * c - PI * x * s) / eps;
                },
                move |t, _| m2(0.0, 1.0, 0.0, -(t - 1.0) / eps),
            );
            let a = move |t: f64| m2(0.0, 1.0, 0.0, -(t - 1.0) / eps);
            Problem::bvp(name, Arc::new(field), 2.0, two_point_dirichlet(), v(&[-2.0, 0.0]))?
                .with_linear(LinearTV::new(a, false))
                .with_homotopy("eps", 1e-2)
        }
        "boundary-layer" => {
            let eps = positive("eps", p("eps"))?;
            let field = FnField::new(
                2,
                move |t, y, out| {
                    let e = y[0].exp();
                    out[0] = y[1];
                    out[1] = (0.5 * PI * (0.5 * PI * t).sin() * e * e - e * y[1]) / eps;
                },
                move |t, y| {
                    let e = y[0].exp();
                    m2(0.0, 1.0, (PI * (0.5 * PI * t).sin() * e * e - e * y[1]) / eps, -e / eps)
                },
            );
            Problem::bvp(name, Arc::new(field), 1.0, two_point_dirichlet(), v(&[0.0, 0.0]))?
                .with_homotopy("eps", 1.0)
        }
        "troesch" => {
            let mu = positive("mu", p("mu"))?;
            let field = FnField::new(
                2,
                move |_, y, out| {
                    out[0] = y[1];
                    out[1] = mu * (mu * y[0]).sinh();
                },
                move |_, y| m2(0.0, 1.0, mu * mu * (mu * y[0]).cosh(), 0.0),
            );
            Problem::bvp(name, Arc::new(field), 1.0, two_point_dirichlet(), v(&[0.0, 1.0]))?
                .with_homotopy("mu", 1.0)
        }
        "smooth" => {
            let field = FnField::new(
                2,
                |t, y, out| {
                    out[0] = y[1];
                    out[1] = -PI * PI * (PI * t).sin();
                },
                |_, _| m2(0.0, 1.0, 0.0, 0.0),
            );
            Problem::bvp(name, Arc::new(field), 1.0, two_point_dirichlet(), v(&[0.0, 0.0]))?
                .with_linear(LinearTV::constant(m2(0.0, 1.0, 0.0, 0.0)))
        }
        "linear-bvp" => {
            // y'' = a^2 y, y(0) = 1, y(T) = 0
            let a2 = p("a") * p("a");
            let a = m2(0.0, 1.0, a2, 0.0);
            Problem::bvp(name, Arc::new(linear_field(a.clone())), p("T"), two_point_dirichlet(), v(&[1.0, 0.0]))?
                .with_linear(LinearTV::constant(a))
        }
        _ => return Err(unknown(name)),
    };
    let owned = name.to_string();
    problem
        .with_params(params)
        .with_factory(Arc::new(move |ps| builtin(&owned, ps)))
        .validated()
}

/// Exponent of `sigma ~ (1/param)^exponent` expected along a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub exponent: f64,
    pub tolerance: f64,
}

#[derive(Clone)]
pub struct BenchmarkCase {
    pub name: String,
    pub description: String,
    pub kind: ProblemKind,
    pub sweep_param: String,
    pub grid: Vec<f64>,
    pub perturbations: Vec<Vector>,
    pub expected_scaling: Option<Scaling>,
    /// A single published value: (parameter, sigma).
    pub reference_sigma: Option<(f64, f64)>,
    /// Initial point that leaves a mode inactive.
    pub mode_silencing: Option<Vector>,
    pub problem: Problem,
}

impl std::fmt::Debug for BenchmarkCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BenchmarkCase")
            .field("name", &self.name)
            .field("sweep_param", &self.sweep_param)
            .field("grid", &self.grid)
            .finish_non_exhaustive()
    }
}

impl BenchmarkCase {
    /// The case's problem at one sweep value.
    pub fn at(&self, value: f64) -> Result<Problem> {
        self.problem.with_param(&self.sweep_param, value)
    }
}

fn decades(from: i32, to: i32) -> Vec<f64> {
    (to..=from).rev().map(|k| 10f64.powi(k)).collect()
}

pub fn load_case(name: &str) -> Result<BenchmarkCase> {
    let problem = builtin(name, &BTreeMap::new())?;
    let scaling = |exponent, tolerance| Some(Scaling { exponent, tolerance });
    let (description, param, grid, expected): (&str, &str, Vec<f64>, Option<Scaling>) = match name {
        "scalar" => ("y' = lambda y", "lambda", vec![-0.2, -2.0, -20.0], None),
        "diag2" => ("y' = diag(l1, l2) y", "l1", vec![-10.0, -100.0, -1000.0], None),
        "lambert" => ("linear 2x2 system with eigenvalues -1 and -0.001", "T", vec![1.0, 10.0, 100.0, 1000.0], None),
        "vdp" => ("Van der Pol oscillator on [0, 2 mu]", "mu", vec![1.0, 10.0, 100.0, 500.0, 1000.0], None),
        "robertson" => ("Robertson chemical kinetics", "T", decades(4, 0).into_iter().rev().collect(), None),
        "kreiss" => ("rotating diagonal system on [0, 4 pi]", "eps", decades(-1, -6), scaling(1.0, 0.15)),
        "modified-kreiss" => ("non-normal similarity of the Kreiss system", "eps", decades(-1, -6), scaling(1.0, 0.15)),
        "turning-point" => ("eps y'' + t y' = f(t) with an interior layer", "eps", decades(-2, -8), scaling(0.5, 0.1)),
        "boundary-layer" => ("nonlinear problem with a layer at t = 0", "eps", decades(0, -6), scaling(1.0, 0.15)),
        "troesch" => ("y'' = mu sinh(mu y)", "mu", vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0], None),
        "smooth" => ("y'' = -pi^2 sin(pi t)", "", vec![], None),
        "linear-bvp" => ("y'' = a^2 y", "a", vec![1.0, 2.0, 5.0, 10.0], None),
        _ => return Err(unknown(name)),
    };
    let mut perturbations = problem.directions.clone();
    if problem.kind == ProblemKind::Bvp {
        perturbations.extend((0..problem.dim).map(|i| {
            let mut e = Vector::zeros(problem.dim);
            e[i] = 1.0;
            e
        }));
    }
    Ok(BenchmarkCase {
        name: name.to_string(),
        description: description.to_string(),
        kind: problem.kind,
        sweep_param: param.to_string(),
        grid,
        perturbations,
        expected_scaling: expected,
        reference_sigma: (name == "troesch").then_some((50.0, 1.74e12)),
        mode_silencing: (name == "lambert").then(|| v(&[2.0, 3.0])),
        problem,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub eta_star: Vec<f64>,
    /// `ok` or the failure message.
    pub status: String,
}

impl SweepRow {
    fn failed(param: f64, dim: usize, e: &Error) -> Self {
        SweepRow {
            param,
            kappa: f64::NAN,
            gamma: f64::NAN,
            sigma: f64::NAN,
            eta_star: vec![f64::NAN; dim],
            status: e.to_string(),
        }
    }

    fn from_report(param: f64, r: &ConditioningReport) -> Self {
        SweepRow {
            param,
            kappa: r.kappa_star,
            gamma: r.gamma_star,
            sigma: r.sigma,
            eta_star: r.eta_star.clone(),
            status: "ok".into(),
        }
    }

    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub case: String,
    pub param: String,
    pub dim: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Least-squares slope of `log sigma` against `log(1/param)` over
    /// the successful rows.
    pub fn scaling_slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.ok() && r.param > 0.0 && r.sigma > 0.0)
            .map(|r| (-r.param.ln(), r.sigma.ln()))
            .collect();
        least_squares_slope(&pts)
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.sigma).collect()
    }
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn with_case_directions(mut opts: AnalysisOptions, case: &BenchmarkCase) -> AnalysisOptions {
    opts.extra_directions.extend(case.perturbations.iter().cloned());
    opts
}

fn analyze_point(problem: &Problem, opts: &AnalysisOptions) -> Result<ConditioningReport> {
    let nominal = nominal_solution(problem, opts)?;
    let path = fundamental_path(problem, &nominal, opts)?;
    Ok(analyze_with_nominal(problem, nominal, path, opts)?.report)
}

#[cfg(feature = "parallel")]
pub(crate) fn map_points<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_points<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Analyzes every grid point. IVP points run independently; BVP points
/// are reached by continuation along the grid and then analyzed
/// independently. Rows keep grid order and failures stay in-row.
pub fn run_sweep(case: &BenchmarkCase, grid: Option<&[f64]>, opts: &AnalysisOptions) -> SweepTable {
    let grid: Vec<f64> = grid.map_or_else(|| case.grid.clone(), |g| g.to_vec());
    let opts = with_case_directions(opts.clone(), case);
    let dim = case.problem.dim;
    let rows = match case.kind {
        ProblemKind::Ivp => map_points(grid.len(), |i| {
            let value = grid[i];
            case.at(value)
                .and_then(|p| analyze_point(&p, &opts))
                .map_or_else(|e| SweepRow::failed(value, dim, &e), |r| SweepRow::from_report(value, &r))
        }),
        ProblemKind::Bvp => {
            let cont = continue_in_parameter(&case.problem, &case.sweep_param, &grid, &opts.bvp);
            let reached = &cont.solutions;
            let mut rows = map_points(reached.len(), |i| {
                let (value, problem, nominal) = &reached[i];
                fundamental_path(problem, nominal, &opts)
                    .and_then(|path| analyze_with_nominal(problem, nominal.clone(), path, &opts))
                    .map_or_else(
                        |e| SweepRow::failed(*value, dim, &e),
                        |a| SweepRow::from_report(*value, &a.report),
                    )
            });
            if let Some(stall) = &cont.stall {
                rows.extend(grid[reached.len()..].iter().map(|&g| SweepRow::failed(g, dim, stall)));
            }
            rows
        }
    };
    SweepTable {
        case: case.name.clone(),
        param: case.sweep_param.clone(),
        dim,
        rows,
    }
}
