//! Linearization along a nominal solution and the fundamental matrix.
//!
//! Every path stores the solution operator `G(t) = Phi(t) Q^{-1}`, so that
//! the response to boundary data `eta` is `y(t) = G(t) eta`. For IVPs
//! `Q = I` and `G = Phi`.

use crate::error::{Error, Result};
use crate::integrate::{adaptive_system, Hermite, Mesh, OdeSystem, Trajectory};
use crate::linalg::{condition, inverse, Mat, Norm, Vector};
use crate::problem::{BoundaryCondition, Problem};

/// Fundamental-matrix samples with dense interpolation and the matrix `Q`.
#[derive(Debug, Clone)]
pub struct FundamentalPath {
    dim: usize,
    /// `G(t_n)` column-major, with slopes `J(t_n) G(t_n)`.
    operator: Hermite,
    pub q: Mat,
    pub q_inverse_norm: f64,
    /// 2-norm condition number of `Q`.
    pub q_condition: f64,
    /// `Q` known only through `G(0)`.
    pub via_collocation: bool,
}

impl FundamentalPath {
    /// Builds a path from operator samples `G_n` and their slopes.
    pub fn from_operator(mesh: Mesh, values: &[Mat], slopes: &[Mat], via_collocation: bool) -> Result<Self> {
        let m = values[0].nrows();
        let g0 = &values[0];
        let q = inverse(g0).map_err(|_| Error::UnsolvableBvp {
            condition: f64::INFINITY,
        })?;
        let flat = |ms: &[Mat]| ms.iter().flat_map(|x| x.iter().copied()).collect::<Vec<_>>();
        Ok(Self {
            dim: m,
            operator: Hermite::new(mesh, m * m, flat(values), flat(slopes)),
            q_inverse_norm: Norm::Inf.matrix(g0),
            q_condition: condition(&q),
            q,
            via_collocation,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mesh(&self) -> &Mesh {
        self.operator.mesh()
    }

    pub fn t_end(&self) -> f64 {
        self.mesh().t_end()
    }

    pub fn operator_at(&self, t: f64) -> Result<Mat> {
        let mut out = Mat::zeros(self.dim, self.dim);
        self.operator.eval_into(t, out.as_mut_slice())?;
        Ok(out)
    }

    /// `G` on interval `i` at local coordinate `s`.
    pub fn operator_in(&self, i: usize, s: f64, out: &mut Mat) {
        self.operator.eval_in(i, s, out.as_mut_slice());
    }

    pub fn operator_node(&self, n: usize) -> Mat {
        Mat::from_column_slice(self.dim, self.dim, self.operator.value(n))
    }

    /// `Phi(t) = G(t) Q`.
    pub fn phi_at(&self, t: f64) -> Result<Mat> {
        Ok(self.operator_at(t)? * &self.q)
    }

    pub fn phi_node(&self, n: usize) -> Mat {
        self.operator_node(n) * &self.q
    }

    /// Response `y(t) = G(t) eta`.
    pub fn response(&self, t: f64, eta: &Vector) -> Result<Vector> {
        Ok(self.operator_at(t)? * eta)
    }
}

/// `J(t) = df/dy` at `(t, ybar(t))` with `ybar` from dense output.
pub fn jacobian_along(problem: &Problem, trajectory: &Trajectory, t: f64) -> Result<Mat> {
    let y = trajectory.at(t)?;
    Ok(problem.jacobian(t, y.as_slice()))
}

/// `Phi' = J(t, ybar(t)) Phi` as one `m^2`-dimensional system.
struct Variational<'a> {
    problem: &'a Problem,
    nominal: &'a Trajectory,
}

impl Variational<'_> {
    fn jac(&self, t: f64) -> Mat {
        let mut y = vec![0.0; self.problem.dim];
        let t = t.clamp(0.0, self.nominal.mesh().t_end());
        self.nominal
            .dense
            .eval_into(t, &mut y)
            .expect("clamped into range");
        self.problem.jacobian(t, &y)
    }
}

impl OdeSystem for Variational<'_> {
    fn dim(&self) -> usize {
        self.problem.dim * self.problem.dim
    }

    fn rhs(&self, t: f64, y: &[f64], out: &mut [f64]) {
        let m = self.problem.dim;
        let j = self.jac(t);
        let phi = Mat::from_column_slice(m, m, y);
        out.copy_from_slice((j * phi).as_slice());
    }

    fn jacobian(&self, t: f64, _y: &[f64]) -> Mat {
        let m = self.problem.dim;
        let j = self.jac(t);
        let mut big = Mat::zeros(m * m, m * m);
        for c in 0..m {
            big.view_mut((c * m, c * m), (m, m)).copy_from(&j);
        }
        big
    }
}

/// Largest admissible 2-norm condition number of `Q`.
pub const Q_CONDITION_LIMIT: f64 = 1e14;

/// Integrates the variational equation along `trajectory` and assembles
/// `Q = B0 + B1 Phi(T)`.
pub fn propagate_fundamental(problem: &Problem, trajectory: &Trajectory, rtol: f64) -> Result<FundamentalPath> {
    let m = problem.dim;
    let t_end = trajectory.mesh().t_end();
    let sys = Variational {
        problem,
        nominal: trajectory,
    };
    let start = Vector::from_column_slice(Mat::identity(m, m).as_slice());
    let (phi, _) = adaptive_system(&sys, &start, t_end, rtol, rtol * 1e-3, false)?;
    let phi_end = Mat::from_column_slice(m, m, phi.final_state().as_slice());
    let bc: &BoundaryCondition = &problem.boundary;
    let q = &bc.b0 + &bc.b1 * &phi_end;
    let cond = condition(&q);
    if !(cond <= Q_CONDITION_LIMIT) {
        return Err(Error::UnsolvableBvp { condition: cond });
    }
    let q_inv = inverse(&q).map_err(|_| Error::UnsolvableBvp { condition: cond })?;
    let mut values = Vec::with_capacity(phi.len());
    let mut slopes = Vec::with_capacity(phi.len());
    for n in 0..phi.len() {
        values.push(Mat::from_column_slice(m, m, phi.dense.value(n)) * &q_inv);
        slopes.push(Mat::from_column_slice(m, m, phi.dense.slope(n)) * &q_inv);
    }
    let mut path = FundamentalPath::from_operator(phi.mesh().clone(), &values, &slopes, false)?;
    // keep the assembled Q rather than the round-tripped inverse
    path.q = q;
    path.q_condition = cond;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KreissVariant {
    Kreiss,
    Modified,
}

/// Rotation `[[cos t, sin t], [-sin t, cos t]]`.
pub fn rotation(t: f64) -> Mat {
    let (s, c) = t.sin_cos();
    Mat::from_row_slice(2, 2, &[c, s, -s, c])
}

/// Coefficient matrix `A(t)` of the Kreiss problem or its modified variant.
pub fn kreiss_matrices(t: f64, eps: f64, variant: KreissVariant) -> Result<Mat> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::domain(format!("eps must be > 0, got {eps}")));
    }
    let lambda = Mat::from_diagonal(&Vector::from_vec(vec![-1.0, -1.0 / eps]));
    match variant {
        KreissVariant::Kreiss => {
            let q = rotation(t);
            Ok(q.transpose() * lambda * q)
        }
        KreissVariant::Modified => {
            if eps == 1.0 {
                // Lambda = -I commutes through any similarity; Q_eps is singular here
                return Ok(-Mat::identity(2, 2));
            }
            let e = t.sin().exp();
            let p = Mat::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, 1.0]);
            let p_inv = Mat::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, 1.0]);
            let q = Mat::from_row_slice(2, 2, &[1.0, eps, e, e]);
            let det = e - eps * e;
            let q_inv = Mat::from_row_slice(2, 2, &[e / det, -eps / det, -e / det, 1.0 / det]);
            Ok(q_inv * p_inv * lambda * p * q)
        }
    }
}
