//! Problem model shared by every analysis: vector field, interval `[0, T]`,
//! boundary condition `B0 y(0) + B1 y(T) = eta`, and named parameters.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, Ast, Scope, Var};
use crate::linalg::{rank, Mat, Vector};

/// Right-hand side `f(t, y)` with an optional analytic Jacobian.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, y: &[f64], out: &mut [f64]);
    fn jacobian(&self, _t: f64, _y: &[f64]) -> Option<Mat> {
        None
    }
}

type RhsFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
type JacFn = dyn Fn(f64, &[f64]) -> Mat + Send + Sync;

/// Closure-backed field used by the built-in problems.
pub struct FnField {
    dim: usize,
    rhs: Box<RhsFn>,
    jac: Option<Box<JacFn>>,
}

impl FnField {
    pub fn new(
        dim: usize,
        rhs: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        jac: impl Fn(f64, &[f64]) -> Mat + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            rhs: Box::new(rhs),
            jac: Some(Box::new(jac)),
        }
    }

    pub fn without_jacobian(
        dim: usize,
        rhs: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            rhs: Box::new(rhs),
            jac: None,
        }
    }
}

impl VectorField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, t: f64, y: &[f64], out: &mut [f64]) {
        (self.rhs)(t, y, out)
    }
    fn jacobian(&self, t: f64, y: &[f64]) -> Option<Mat> {
        self.jac.as_ref().map(|j| j(t, y))
    }
}

/// Expression-backed field; ASTs are parsed once at construction.
#[derive(Debug, Clone)]
pub struct ExprField {
    scope: Scope,
    rhs: Vec<Ast>,
    jac: Vec<Ast>,
    params: Vec<f64>,
    t_offset: f64,
}

impl ExprField {
    /// `jacobian`, when given, is row-major `dim x dim` source text;
    /// otherwise entries are differentiated symbolically.
    pub fn new(
        rhs: &[String],
        jacobian: Option<&[Vec<String>]>,
        params: &BTreeMap<String, f64>,
        t_offset: f64,
    ) -> Result<Self> {
        let dim = rhs.len();
        let scope = Scope::new(dim, params.keys().cloned());
        let values: Vec<f64> = params.values().copied().collect();
        let rhs_ast = rhs
            .iter()
            .enumerate()
            .map(|(i, src)| {
                expr::parse(src, &scope).map_err(|e| Error::Parse {
                    context: format!("rhs[{i}]"),
                    source: e,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let jac = match jacobian {
            Some(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::Shape(format!("jacobian must be {dim}x{dim}")));
                }
                let mut out = Vec::with_capacity(dim * dim);
                for (i, row) in rows.iter().enumerate() {
                    for (j, src) in row.iter().enumerate() {
                        out.push(expr::parse(src, &scope).map_err(|e| Error::Parse {
                            context: format!("jacobian[{i}][{j}]"),
                            source: e,
                        })?);
                    }
                }
                out
            }
            None => rhs_ast
                .iter()
                .flat_map(|f| (0..dim).map(move |j| expr::differentiate(f, Var::State(j))))
                .collect(),
        };
        Ok(Self {
            scope,
            rhs: rhs_ast,
            jac,
            params: values,
            t_offset,
        })
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub fn jacobian_entry(&self, i: usize, j: usize) -> &Ast {
        &self.jac[i * self.scope.dim + j]
    }
}

impl VectorField for ExprField {
    fn dim(&self) -> usize {
        self.scope.dim
    }
    fn eval(&self, t: f64, y: &[f64], out: &mut [f64]) {
        let t = t + self.t_offset;
        for (o, f) in out.iter_mut().zip(&self.rhs) {
            *o = f.eval(t, y, &self.params);
        }
    }
    fn jacobian(&self, t: f64, y: &[f64]) -> Option<Mat> {
        let t = t + self.t_offset;
        let m = self.scope.dim;
        Some(Mat::from_fn(m, m, |i, j| self.jac[i * m + j].eval(t, y, &self.params)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Ivp,
    Bvp,
}

/// `B0 y(0) + B1 y(T) = eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCondition {
    pub b0: Mat,
    pub b1: Mat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankReport {
    pub stacked: usize,
    pub b0: usize,
    pub b1: usize,
}

/// Row split of a separated condition: rows acting only on `y(0)` and
/// rows acting only on `y(T)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Separation {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

impl BoundaryCondition {
    pub fn initial(m: usize) -> Self {
        Self {
            b0: Mat::identity(m, m),
            b1: Mat::zeros(m, m),
        }
    }

    pub fn new(b0: Mat, b1: Mat) -> Result<Self> {
        let bc = Self { b0, b1 };
        bc.check_shape()?;
        Ok(bc)
    }

    pub fn dim(&self) -> usize {
        self.b0.nrows()
    }

    fn check_shape(&self) -> Result<()> {
        let (r0, c0) = self.b0.shape();
        let (r1, c1) = self.b1.shape();
        if r0 != c0 || r1 != c1 {
            return Err(Error::Shape(format!(
                "boundary blocks must be square, got {r0}x{c0} and {r1}x{c1}"
            )));
        }
        if r0 != r1 {
            return Err(Error::Shape(format!(
                "boundary blocks differ in size: {r0} vs {r1}"
            )));
        }
        Ok(())
    }

    pub fn is_initial(&self) -> bool {
        self.b1.iter().all(|&x| x == 0.0) && self.b0 == Mat::identity(self.dim(), self.dim())
    }

    pub fn separation(&self) -> Option<Separation> {
        let m = self.dim();
        let mut sep = Separation {
            left: Vec::new(),
            right: Vec::new(),
        };
        for i in 0..m {
            let on0 = self.b0.row(i).iter().any(|&x| x != 0.0);
            let on1 = self.b1.row(i).iter().any(|&x| x != 0.0);
            match (on0, on1) {
                (true, false) => sep.left.push(i),
                (false, true) => sep.right.push(i),
                _ => return None,
            }
        }
        Some(sep)
    }
}

/// Ranks of `[B0; B1]` (as the `m x 2m` block row) and of each block.
pub fn validate_boundary(bc: &BoundaryCondition) -> Result<RankReport> {
    bc.check_shape()?;
    let m = bc.dim();
    let mut stacked = Mat::zeros(m, 2 * m);
    stacked.view_mut((0, 0), (m, m)).copy_from(&bc.b0);
    stacked.view_mut((0, m), (m, m)).copy_from(&bc.b1);
    let report = RankReport {
        stacked: rank(&stacked),
        b0: rank(&bc.b0),
        b1: rank(&bc.b1),
    };
    if report.stacked < m {
        return Err(Error::Structural(format!(
            "[B0 B1] has rank {} < {m}: the boundary condition is under-determined",
            report.stacked
        )));
    }
    Ok(report)
}

/// `y' = A(t) y` structure of a linear problem.
#[derive(Clone)]
pub struct LinearTV {
    a: Arc<dyn Fn(f64) -> Mat + Send + Sync>,
    pub constant: bool,
}

impl LinearTV {
    pub fn new(a: impl Fn(f64) -> Mat + Send + Sync + 'static, constant: bool) -> Self {
        Self {
            a: Arc::new(a),
            constant,
        }
    }

    pub fn constant(a: Mat) -> Self {
        Self::new(move |_| a.clone(), true)
    }

    pub fn at(&self, t: f64) -> Mat {
        (self.a)(t)
    }
}

impl fmt::Debug for LinearTV {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearTV")
            .field("constant", &self.constant)
            .finish_non_exhaustive()
    }
}

/// Rebuilds a problem from a full parameter map.
pub type Factory = Arc<dyn Fn(&BTreeMap<String, f64>) -> Result<Problem> + Send + Sync>;

#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub dim: usize,
    pub field: Arc<dyn VectorField>,
    pub t_end: f64,
    pub kind: ProblemKind,
    pub boundary: BoundaryCondition,
    pub params: BTreeMap<String, f64>,
    /// Initial value for IVPs, boundary data for BVPs.
    pub eta: Vector,
    pub linear: Option<LinearTV>,
    /// Perturbation directions always included in a direction search.
    pub directions: Vec<Vector>,
    pub factory: Option<Factory>,
    /// Parameter and an easy value of it from which a continuation can
    /// reach hard instances.
    pub homotopy: Option<(String, f64)>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("t_end", &self.t_end)
            .field("kind", &self.kind)
            .field("params", &self.params)
            .field("eta", &self.eta.as_slice())
            .finish_non_exhaustive()
    }
}

impl Problem {
    pub fn ivp(
        name: impl Into<String>,
        field: Arc<dyn VectorField>,
        t_end: f64,
        y0: Vector,
    ) -> Result<Self> {
        let dim = field.dim();
        Problem {
            name: name.into(),
            dim,
            field,
            t_end,
            kind: ProblemKind::Ivp,
            boundary: BoundaryCondition::initial(dim),
            params: BTreeMap::new(),
            eta: y0,
            linear: None,
            directions: Vec::new(),
            factory: None,
            homotopy: None,
        }
        .validated()
    }

    pub fn bvp(
        name: impl Into<String>,
        field: Arc<dyn VectorField>,
        t_end: f64,
        boundary: BoundaryCondition,
        eta: Vector,
    ) -> Result<Self> {
        let dim = field.dim();
        Problem {
            name: name.into(),
            dim,
            field,
            t_end,
            kind: ProblemKind::Bvp,
            boundary,
            params: BTreeMap::new(),
            eta,
            linear: None,
            directions: Vec::new(),
            factory: None,
            homotopy: None,
        }
        .validated()
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    pub fn with_linear(mut self, linear: LinearTV) -> Self {
        self.linear = Some(linear);
        self
    }

    pub fn with_directions(mut self, dirs: Vec<Vector>) -> Self {
        self.directions = dirs;
        self
    }

    pub fn with_factory(mut self, factory: Factory) -> Self {
        self.factory = Some(factory);
        self
    }

    pub fn with_homotopy(mut self, param: &str, easy: f64) -> Self {
        self.homotopy = Some((param.to_string(), easy));
        self
    }

    /// The same problem with one parameter changed.
    pub fn with_param(&self, name: &str, value: f64) -> Result<Problem> {
        let factory = self.factory.as_ref().ok_or_else(|| {
            Error::domain(format!("problem '{}' cannot be reparameterized", self.name))
        })?;
        if !self.params.contains_key(name) {
            return Err(Error::domain(format!(
                "problem '{}' has no parameter '{name}' (has: {})",
                self.name,
                self.params.keys().cloned().collect::<Vec<_>>().join(", ")
            )));
        }
        let mut params = self.params.clone();
        params.insert(name.to_string(), value);
        factory(&params)
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::domain(format!("interval length T = {} must be > 0", self.t_end)));
        }
        if self.dim == 0 {
            return Err(Error::domain("dimension must be >= 1"));
        }
        if self.eta.len() != self.dim {
            return Err(Error::Shape(format!(
                "eta has {} entries, expected {}",
                self.eta.len(),
                self.dim
            )));
        }
        if self.boundary.dim() != self.dim {
            return Err(Error::Shape(format!(
                "boundary blocks are {}x{}, expected {}x{}",
                self.boundary.dim(),
                self.boundary.dim(),
                self.dim,
                self.dim
            )));
        }
        validate_boundary(&self.boundary)?;
        if self.kind == ProblemKind::Ivp && !self.boundary.is_initial() {
            return Err(Error::Structural("an IVP must use B0 = I, B1 = 0".into()));
        }
        for d in &self.directions {
            if d.len() != self.dim || d.iter().all(|&x| x == 0.0) {
                return Err(Error::domain("perturbation directions must be nonzero with length dim"));
            }
        }
        let f = self.rhs(0.0, &self.eta);
        if f.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("right-hand side is not finite at (0, eta)"));
        }
        Ok(self)
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }

    pub fn rhs(&self, t: f64, y: &Vector) -> Vector {
        let mut out = Vector::zeros(self.dim);
        self.field.eval(t, y.as_slice(), out.as_mut_slice());
        out
    }

    pub fn rhs_into(&self, t: f64, y: &[f64], out: &mut [f64]) {
        self.field.eval(t, y, out);
    }

    /// Analytic Jacobian when the field provides one, else central
    /// differences with step `1e-7 (1 + |y_i|)`.
    pub fn jacobian(&self, t: f64, y: &[f64]) -> Mat {
        if let Some(j) = self.field.jacobian(t, y) {
            return j;
        }
        finite_difference_jacobian(self.field.as_ref(), t, y)
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.field.jacobian(0.0, self.eta.as_slice()).is_some()
    }
}

pub fn finite_difference_jacobian(field: &dyn VectorField, t: f64, y: &[f64]) -> Mat {
    let m = y.len();
    let mut jac = Mat::zeros(m, m);
    let mut yp = y.to_vec();
    let mut fp = vec![0.0; m];
    let mut fm = vec![0.0; m];
    for j in 0..m {
        let h = 1e-7 * (1.0 + y[j].abs());
        yp[j] = y[j] + h;
        field.eval(t, &yp, &mut fp);
        yp[j] = y[j] - h;
        field.eval(t, &yp, &mut fm);
        yp[j] = y[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Declarative problem description, read from and written to TOML.
///
/// ```toml
/// name = "robertson"
/// kind = "ivp"
/// dim = 3
/// interval = [0.0, 100.0]
/// rhs = ["-0.04*y1 + 1e4*y2*y3", "0.04*y1 - 1e4*y2*y3 - 3e7*y2^2", "3e7*y2^2"]
/// eta = [1.0, 0.0, 0.0]
/// ```
///
/// BVPs add `B0` and `B1` as row-major nested arrays. A `builtin` key
/// selects a built-in problem; `params` then override its parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ProblemKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rhs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jacobian: Option<Vec<Vec<String>>>,
    #[serde(rename = "B0", default, skip_serializing_if = "Option::is_none")]
    pub b0: Option<Vec<Vec<f64>>>,
    #[serde(rename = "B1", default, skip_serializing_if = "Option::is_none")]
    pub b1: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub directions: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

impl ProblemSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Spec(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Spec(e.to_string()))
    }

    pub fn builtin(name: &str) -> Self {
        Self {
            builtin: Some(name.to_string()),
            ..Default::default()
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], m: usize, what: &str) -> Result<Mat> {
    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Shape(format!("{what} must be {m}x{m}")));
    }
    Ok(Mat::from_fn(m, m, |i, j| rows[i][j]))
}

/// Builds and validates a problem from its declarative description.
pub fn build_problem(spec: &ProblemSpec) -> Result<Problem> {
    let problem = build_unparameterized(spec)?;
    let spec = spec.clone();
    Ok(problem.with_factory(Arc::new(move |params| {
        let mut s = spec.clone();
        s.params = params.clone();
        build_problem(&s)
    })))
}

fn build_unparameterized(spec: &ProblemSpec) -> Result<Problem> {
    if let Some(name) = &spec.builtin {
        let mut problem = crate::suite::builtin(name, &spec.params)?;
        if let Some([a, b]) = spec.interval {
            problem.t_end = b - a;
        }
        if let Some(eta) = &spec.eta {
            problem.eta = Vector::from_vec(eta.clone());
        }
        if !spec.directions.is_empty() {
            problem
                .directions
                .extend(spec.directions.iter().map(|d| Vector::from_vec(d.clone())));
        }
        if let Some(n) = &spec.name {
            problem.name = n.clone();
        }
        return problem.validated();
    }

    if spec.rhs.is_empty() {
        return Err(Error::Spec("either `builtin` or `rhs` is required".into()));
    }
    let m = spec.dim.unwrap_or(spec.rhs.len());
    if m != spec.rhs.len() {
        return Err(Error::Shape(format!(
            "dim = {m} but {} rhs expressions given",
            spec.rhs.len()
        )));
    }
    let [a, b] = spec.interval.ok_or_else(|| Error::Spec("`interval` is required".into()))?;
    let field = ExprField::new(&spec.rhs, spec.jacobian.as_deref(), &spec.params, a)?;
    let eta = Vector::from_vec(
        spec.eta
            .clone()
            .ok_or_else(|| Error::Spec("`eta` is required for user problems".into()))?,
    );
    let kind = spec.kind.unwrap_or(if spec.b1.is_some() {
        ProblemKind::Bvp
    } else {
        ProblemKind::Ivp
    });
    let name = spec.name.clone().unwrap_or_else(|| "user".into());
    let problem = match kind {
        ProblemKind::Ivp => {
            if spec.b0.is_some() || spec.b1.is_some() {
                let bc = BoundaryCondition::new(
                    matrix_from_rows(spec.b0.as_deref().unwrap_or(&[]), m, "B0")?,
                    matrix_from_rows(spec.b1.as_deref().unwrap_or(&[]), m, "B1")?,
                )?;
                if !bc.is_initial() {
                    return Err(Error::Structural("an IVP must use B0 = I, B1 = 0".into()));
                }
            }
            Problem::ivp(name, Arc::new(field), b - a, eta)?
        }
        ProblemKind::Bvp => {
            let b0 = spec.b0.as_deref().ok_or_else(|| Error::Spec("BVP needs `B0`".into()))?;
            let b1 = spec.b1.as_deref().ok_or_else(|| Error::Spec("BVP needs `B1`".into()))?;
            let bc = BoundaryCondition::new(matrix_from_rows(b0, m, "B0")?, matrix_from_rows(b1, m, "B1")?)?;
            Problem::bvp(name, Arc::new(field), b - a, bc, eta)?
        }
    };
    problem
        .with_params(spec.params.clone())
        .with_directions(spec.directions.iter().map(|d| Vector::from_vec(d.clone())).collect())
        .validated()
}
