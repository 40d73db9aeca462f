//! End-to-end analyses: nominal solution, solution operator, direction
//! search, and the discrete comparison.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bvp::{continue_in_parameter, discrete_operator, fundamental_by_collocation, solve_bvp, solve_bvp_adaptive, BvpOptions};
use crate::conditioning::{
    apply_oscillatory, check_dichotomy, check_dichotomy_discrete, dominant_eigen_directions, maximize_discrete,
    maximize_sigma, well_represented, ConditioningOptions, ConditioningReport, DichotomyReport, DirectionSet,
    DiscreteReport, Verdict,
};
use crate::error::{Error, Result};
use crate::integrate::{integrate_adaptive, integrate_fixed, Method, MethodSpec, Mesh, Trajectory};
use crate::linalg::{Mat, Norm, Vector};
use crate::problem::{Problem, ProblemKind};
use crate::variational::{propagate_fundamental, FundamentalPath};

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub conditioning: ConditioningOptions,
    pub rtol: f64,
    pub atol: f64,
    /// Relative tolerance for the variational system.
    pub variational_rtol: f64,
    pub bvp: BvpOptions,
    /// Directions added to every search on top of the problem's own.
    pub extra_directions: Vec<Vector>,
    pub eigen_directions: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            conditioning: ConditioningOptions::default(),
            rtol: 1e-8,
            atol: 1e-10,
            variational_rtol: 1e-8,
            bvp: BvpOptions::default(),
            extra_directions: Vec::new(),
            eigen_directions: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub nominal: Trajectory,
    pub path: FundamentalPath,
    pub directions: DirectionSet,
    pub report: ConditioningReport,
    pub dichotomy: DichotomyReport,
}

/// Continuation ladder from `easy` to `target` with ratio at most 10
/// between neighbours; bisection fills in the rest.
fn ladder(easy: f64, target: f64) -> Vec<f64> {
    let mut out = vec![easy];
    if easy > 0.0 && target > 0.0 {
        let steps = (target / easy).log10().abs().ceil().max(1.0) as usize;
        let r = (target / easy).powf(1.0 / steps as f64);
        for k in 1..steps {
            out.push(easy * r.powi(k as i32));
        }
    }
    out.push(target);
    out
}

/// Reference solution: adaptive integration for IVPs, adaptive
/// collocation for BVPs, falling back to continuation from the
/// problem's easy instance when a direct solve fails.
pub fn nominal_solution(problem: &Problem, opts: &AnalysisOptions) -> Result<Trajectory> {
    match problem.kind {
        ProblemKind::Ivp => integrate_adaptive(problem, opts.rtol, opts.atol).map(|(t, _)| t),
        ProblemKind::Bvp => {
            let direct = solve_bvp_adaptive(problem, &opts.bvp, None);
            let Err(first) = direct else { return direct };
            let Some((param, easy)) = problem.homotopy.clone() else {
                return Err(first);
            };
            let Some(target) = problem.param(&param) else {
                return Err(first);
            };
            if target == easy {
                return Err(first);
            }
            let cont = continue_in_parameter(problem, &param, &ladder(easy, target), &opts.bvp);
            if let Some(stall) = cont.stall {
                return Err(stall);
            }
            cont.solutions.into_iter().last().map(|s| s.2).ok_or(first)
        }
    }
}

/// Solution operator `Phi(t) Q^{-1}` along `nominal`.
pub fn fundamental_path(problem: &Problem, nominal: &Trajectory, opts: &AnalysisOptions) -> Result<FundamentalPath> {
    match problem.kind {
        ProblemKind::Ivp => propagate_fundamental(problem, nominal, opts.variational_rtol),
        ProblemKind::Bvp => fundamental_by_collocation(problem, nominal, &opts.bvp),
    }
}

/// The coefficient matrix used for the eigen directions and the
/// dichotomy check, and whether it is only a frozen approximation.
fn frozen_matrix(problem: &Problem, nominal: &Trajectory) -> (Mat, bool) {
    match &problem.linear {
        Some(l) => (l.at(0.0), !l.constant),
        None => (problem.jacobian(0.0, nominal.state(0).as_slice()), true),
    }
}

pub fn direction_set(problem: &Problem, nominal: &Trajectory, opts: &AnalysisOptions) -> DirectionSet {
    let c = &opts.conditioning;
    let eigen = if opts.eigen_directions {
        dominant_eigen_directions(&frozen_matrix(problem, nominal).0)
    } else {
        Vec::new()
    };
    let mut user = problem.directions.clone();
    user.extend(opts.extra_directions.iter().filter(|d| d.len() == problem.dim).cloned());
    DirectionSet::build(problem.dim, c.norm, c.random_directions, c.seed, &eigen, &user)
}

/// The eigenvalue of a realified complex scalar problem `[[a, -b], [b, a]]`
/// with `b != 0`.
pub fn complex_scalar(problem: &Problem) -> Option<Complex64> {
    let l = problem.linear.as_ref().filter(|l| l.constant)?;
    let a = l.at(0.0);
    (a.nrows() == 2 && a[(0, 0)] == a[(1, 1)] && a[(0, 1)] == -a[(1, 0)] && a[(1, 0)] != 0.0)
        .then(|| Complex64::new(a[(0, 0)], a[(1, 0)]))
}

pub fn analyze(problem: &Problem, opts: &AnalysisOptions) -> Result<Analysis> {
    let nominal = nominal_solution(problem, opts)?;
    let path = fundamental_path(problem, &nominal, opts)?;
    analyze_with_nominal(problem, nominal, path, opts)
}

pub fn analyze_with_nominal(
    problem: &Problem,
    nominal: Trajectory,
    path: FundamentalPath,
    opts: &AnalysisOptions,
) -> Result<Analysis> {
    let lambda = complex_scalar(problem);
    let mut copts = opts.conditioning;
    if lambda.is_some() {
        // the modulus of a complex scalar is the 2-norm of its realification
        copts.norm = Norm::Two;
    }
    let directions = direction_set(problem, &nominal, &AnalysisOptions { conditioning: copts, ..opts.clone() });
    let mut report = maximize_sigma(&path, &directions, &copts)?;
    if let Some(lambda) = lambda {
        apply_oscillatory(&mut report, lambda, &copts);
    }
    let (a, frozen) = frozen_matrix(problem, &nominal);
    let dichotomy = check_dichotomy(&a, &problem.boundary, problem.kind, frozen);
    Ok(Analysis {
        nominal,
        path,
        directions,
        report,
        dichotomy,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteCheck {
    pub method: Method,
    pub intervals: usize,
    pub continuous: ConditioningReport,
    pub discrete: DiscreteReport,
    pub verdict: Verdict,
    pub dichotomy: DichotomyReport,
}

/// Discrete solution operators `G_n` of `method` on `mesh`, with the
/// nominal discrete solution.
pub fn discrete_operators(problem: &Problem, method: Method, mesh: &Mesh, opts: &AnalysisOptions) -> Result<(Trajectory, Vec<Mat>)> {
    match problem.kind {
        ProblemKind::Ivp => {
            let (traj, maps) = integrate_fixed(&MethodSpec::new(method), problem, mesh)?;
            let mut ops = Vec::with_capacity(maps.maps.len() + 1);
            let mut g = Mat::identity(problem.dim, problem.dim);
            ops.push(g.clone());
            for r in &maps.maps {
                g = r * g;
                ops.push(g.clone());
            }
            Ok((traj, ops))
        }
        ProblemKind::Bvp => {
            if method != Method::Trapezoidal {
                return Err(Error::domain(format!(
                    "BVPs are discretized by trapezoidal collocation, not {method}"
                )));
            }
            let sol = match solve_bvp(problem, mesh, opts.bvp.newton_tol, opts.bvp.max_iters) {
                Ok(s) => s,
                Err(_) => {
                    let reference = nominal_solution(problem, opts)?;
                    let guess = mesh.nodes().iter().map(|&t| reference.at(t)).collect::<Result<Vec<_>>>()?;
                    crate::bvp::solve_bvp_from(problem, mesh, guess, opts.bvp.newton_tol, opts.bvp.max_iters)?
                }
            };
            let ops = discrete_operator(problem, &sol, mesh)?;
            Ok((sol, ops))
        }
    }
}

/// Compares the discrete parameters of `method` on `mesh` with the
/// continuous ones, both maximized over the same directions.
pub fn check_discrete(problem: &Problem, method: Method, mesh: &Mesh, tol_factor: f64, opts: &AnalysisOptions) -> Result<DiscreteCheck> {
    let analysis = analyze(problem, opts)?;
    let (_, ops) = discrete_operators(problem, method, mesh, opts)?;
    let discrete = maximize_discrete(&ops, mesh, &analysis.directions, analysis.report.norm)?;
    let c = &analysis.report;
    let verdict = well_represented(c.kappa, c.gamma, discrete.kappa, discrete.gamma, tol_factor);
    let dichotomy = match problem.kind {
        ProblemKind::Ivp => check_dichotomy_discrete(ops.last().expect("nonempty"), &problem.boundary, problem.kind),
        ProblemKind::Bvp => analysis.dichotomy.clone(),
    };
    Ok(DiscreteCheck {
        method,
        intervals: mesh.intervals(),
        continuous: analysis.report,
        discrete,
        verdict,
        dichotomy,
    })
}
