//! Small dense kernels on top of nalgebra plus a banded LU for collocation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Vector norm used for every conditioning quantity; matrices use the
/// induced norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Inf,
    Two,
}

impl Norm {
    pub fn vector(self, v: &[f64]) -> f64 {
        match self {
            Norm::Inf => v.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
            Norm::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }

    pub fn matrix(self, m: &Mat) -> f64 {
        match self {
            Norm::Inf => m
                .row_iter()
                .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
                .fold(0.0, f64::max),
            Norm::Two => {
                if m.ncols() == 1 || m.nrows() == 1 {
                    m.norm()
                } else {
                    m.singular_values().max()
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Norm::Inf => "inf",
            Norm::Two => "2",
        }
    }
}

impl std::str::FromStr for Norm {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "inf" | "infinity" | "max" => Ok(Norm::Inf),
            "2" | "two" | "euclid" => Ok(Norm::Two),
            _ => Err(format!("unknown norm '{s}' (expected inf or 2)")),
        }
    }
}

pub fn rank(m: &Mat) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    let tol = smax * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

/// 2-norm condition number from singular values (inf when singular).
pub fn condition(m: &Mat) -> f64 {
    let sv = m.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

pub fn solve(a: &Mat, b: &Mat) -> Result<Mat> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular("dense LU".into()))
}

pub fn inverse(a: &Mat) -> Result<Mat> {
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("matrix inverse".into()))
}

pub fn eigenvalues(a: &Mat) -> Vec<Complex64> {
    a.clone().complex_eigenvalues().iter().copied().collect()
}

/// Unit eigenvector for eigenvalue `lambda`: the right singular vector of
/// `a - lambda I` with the smallest singular value.
pub fn eigenvector(a: &Mat, lambda: Complex64) -> Vec<Complex64> {
    let n = a.nrows();
    let shifted = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
        Complex64::new(a[(i, j)], 0.0) - if i == j { lambda } else { Complex64::new(0.0, 0.0) }
    });
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested v_t");
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    (0..n).map(|j| v_t[(imin, j)].conj()).collect()
}

/// Banded LU with partial pivoting (row interchanges limited to the lower
/// bandwidth, multipliers kept in place, LINPACK style).
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    /// Factors the `n x n` matrix given by `(row, col, value)` triplets;
    /// duplicate entries are summed.
    pub fn factor(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let (mut kl, mut ku) = (0, 0);
        for &(i, j, _) in entries {
            if i >= n || j >= n {
                return Err(Error::Shape(format!("entry ({i}, {j}) outside {n}x{n}")));
            }
            if i > j {
                kl = kl.max(i - j);
            } else {
                ku = ku.max(j - i);
            }
        }
        let width = 2 * kl + ku + 1;
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            pivots: vec![0; n],
        };
        for &(i, j, v) in entries {
            let k = lu.idx(i, j);
            lu.data[k] += v;
        }
        lu.decompose()?;
        Ok(lu)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j + self.kl - i < self.width);
        i * self.width + (j + self.kl - i)
    }

    fn decompose(&mut self) -> Result<()> {
        let n = self.n;
        let reach = self.kl + self.ku;
        let mut scale = 0.0_f64;
        for v in &self.data {
            scale = scale.max(v.abs());
        }
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let last_col = (k + reach).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || best <= scale * 1e-300 {
                return Err(Error::Singular(format!("banded LU: zero pivot in column {k}")));
            }
            self.pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.idx(k, j), self.idx(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            for i in k + 1..=last_row {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                self.data[ik] = l;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        let kj = self.data[self.idx(k, j)];
                        let ij = self.idx(i, j);
                        self.data[ij] -= l * kj;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let reach = self.kl + self.ku;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    b[i] -= self.data[self.idx(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + reach).min(n - 1) {
                s -= self.data[self.idx(k, j)] * b[j];
            }
            b[k] = s / self.data[self.idx(k, k)];
        }
    }
}
