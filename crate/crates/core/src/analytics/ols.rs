// SPDX-License-Identifier: MIT OR Apache-2.0

//! Ordinary least squares via Householder QR.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::special::t_two_sided_p;
use crate::error::{Error, Result};

/// Row-major design matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    names: Vec<String>,
    data: Vec<f64>,
}

impl Design {
    pub fn new(names: Vec<String>) -> Self {
        Self {
            names,
            data: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.names.len() {
            return Err(Error::ShapeMismatch {
                op: "design row",
                left: vec![row.len()],
                right: vec![self.names.len()],
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn cols(&self) -> usize {
        self.names.len()
    }

    pub fn rows(&self) -> usize {
        if self.names.is_empty() {
            0
        } else {
            self.data.len() / self.names.len()
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.cols();
        &self.data[i * p..(i + 1) * p]
    }

    fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows()).map(|i| self.data[i * self.cols() + j]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub coefficients: Vec<Coefficient>,
    pub r_squared: f64,
    pub n: usize,
    pub dof: usize,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl RegressionResult {
    pub fn get(&self, term: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.term == term)
    }
}

/// Compact Householder QR of an `n × p` matrix stored column-major.
struct Qr {
    n: usize,
    p: usize,
    /// Reflector vectors below the diagonal; R on and above it.
    a: Vec<f64>,
    diag: Vec<f64>,
}

impl Qr {
    fn factor(design: &Design) -> Result<Self> {
        let (n, p) = (design.rows(), design.cols());
        let mut a: Vec<f64> = (0..p).flat_map(|j| design.column(j)).collect();
        let scale = (0..p)
            .map(|j| libm::sqrt(a[j * n..(j + 1) * n].iter().map(|x| x * x).sum::<f64>()))
            .fold(0.0, f64::max);
        let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
        let mut diag = vec![0.0; p];
        for k in 0..p {
            let col = &mut a[k * n..(k + 1) * n];
            let alpha = libm::sqrt(col[k..].iter().map(|x| x * x).sum::<f64>());
            if alpha <= tol {
                return Err(Error::RankDeficient(k));
            }
            let r_kk = if col[k] > 0.0 { -alpha } else { alpha };
            col[k] -= r_kk;
            let vnorm2: f64 = col[k..].iter().map(|x| x * x).sum();
            let v: Vec<f64> = col[k..].to_vec();
            diag[k] = r_kk;
            for j in k + 1..p {
                let cj = &mut a[j * n + k..(j + 1) * n];
                let s: f64 = v.iter().zip(cj.iter()).map(|(v, c)| v * c).sum::<f64>() * 2.0 / vnorm2;
                for (c, v) in cj.iter_mut().zip(&v) {
                    *c -= s * v;
                }
            }
        }
        Ok(Self { n, p, a, diag })
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else {
            self.a[j * self.n + i]
        }
    }

    /// Least-squares solution of `A x ≈ b`.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, p) = (self.n, self.p);
        let mut qtb = b.to_vec();
        for k in 0..p {
            let v = &self.a[k * n + k..(k + 1) * n];
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            let s: f64 = v.iter().zip(&qtb[k..]).map(|(v, b)| v * b).sum::<f64>() * 2.0 / vnorm2;
            for (b, v) in qtb[k..].iter_mut().zip(v) {
                *b -= s * v;
            }
        }
        let mut x = vec![0.0; p];
        for i in (0..p).rev() {
            let s: f64 = (i + 1..p).map(|j| self.r(i, j) * x[j]).sum();
            x[i] = (qtb[i] - s) / self.diag[i];
        }
        x
    }

    /// Diagonal of `(AᵀA)⁻¹ = R⁻¹ R⁻ᵀ`.
    fn inverse_gram_diag(&self) -> Vec<f64> {
        let p = self.p;
        // columns of R⁻¹ by back substitution
        let mut rinv = vec![0.0; p * p];
        for c in 0..p {
            for i in (0..=c).rev() {
                let rhs = if i == c { 1.0 } else { 0.0 };
                let s: f64 = (i + 1..=c).map(|j| self.r(i, j) * rinv[j * p + c]).sum();
                rinv[i * p + c] = (rhs - s) / self.diag[i];
            }
        }
        (0..p)
            .map(|i| (0..p).map(|c| rinv[i * p + c] * rinv[i * p + c]).sum())
            .collect()
    }
}

/// `y - X β` in doubled precision (error-free transforms), so refinement
/// can converge to the correctly rounded solution.
fn residuals(design: &Design, y: &[f64], beta: &[f64]) -> Vec<f64> {
    y.iter()
        .enumerate()
        .map(|(i, &yi)| {
            let (mut s, mut c) = (yi, 0.0);
            for (&x, &b) in design.row(i).iter().zip(beta) {
                let p = -x * b;
                let p_err = libm::fma(-x, b, -p);
                let t = s + p;
                let z = t - s;
                c += (s - (t - z)) + (p - z) + p_err;
                s = t;
            }
            s + c
        })
        .collect()
}

/// Fits `y ≈ X β`. The design must include an intercept column if one is wanted.
pub fn ols(y: &[f64], design: &Design) -> Result<RegressionResult> {
    let (n, p) = (design.rows(), design.cols());
    if y.len() != n {
        return Err(Error::ShapeMismatch {
            op: "ols",
            left: vec![y.len()],
            right: vec![n],
        });
    }
    if n <= p {
        return Err(Error::InsufficientData { n, cols: p });
    }
    if y.iter().chain(&design.data).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ols input"));
    }
    let qr = Qr::factor(design)?;
    let mut beta = qr.solve(y);
    for _ in 0..2 {
        let r = residuals(design, y, &beta);
        let delta = qr.solve(&r);
        for (b, d) in beta.iter_mut().zip(delta) {
            *b += d;
        }
    }
    let resid = residuals(design, y, &beta);
    let dof = n - p;
    let ssr: f64 = resid.iter().map(|e| e * e).sum();
    let mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let r_squared = if sst > 0.0 {
        1.0 - ssr / sst
    } else if ssr == 0.0 {
        1.0
    } else {
        0.0
    };
    let sigma2 = ssr / dof as f64;
    let coefficients = qr
        .inverse_gram_diag()
        .into_iter()
        .zip(&beta)
        .zip(design.names())
        .map(|((g, &estimate), term)| {
            let std_error = libm::sqrt(sigma2 * g);
            let (t, p) = if std_error > 0.0 {
                let t = estimate / std_error;
                (t, t_two_sided_p(t, dof as f64))
            } else if estimate == 0.0 {
                (0.0, 1.0)
            } else {
                (f64::INFINITY.copysign(estimate), 0.0)
            };
            Coefficient {
                term: term.clone(),
                estimate,
                std_error,
                t,
                p,
            }
        })
        .collect();
    Ok(RegressionResult {
        coefficients,
        r_squared,
        n,
        dof,
        residuals: resid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn line(xs: &[f64]) -> Design {
        let mut d = Design::new(vec!["intercept".to_string(), "x".to_string()]);
        for &x in xs {
            d.push_row(&[1.0, x]).unwrap();
        }
        d
    }

    #[test]
    fn exact_fit() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let r = ols(&ys, &line(&xs)).unwrap();
        assert_eq!(r.get("x").unwrap().estimate, 2.0);
        assert_eq!(r.get("intercept").unwrap().estimate, 1.0);
        assert_eq!(r.r_squared, 1.0);
        assert_eq!(r.dof, 8);
    }

    #[test]
    fn rank_and_size_errors() {
        let xs = [3.0; 10];
        assert_eq!(ols(&[1.0; 10], &line(&xs)).unwrap_err(), Error::RankDeficient(1));
        assert_eq!(
            ols(&[1.0, 2.0], &line(&[0.0, 1.0])).unwrap_err(),
            Error::InsufficientData { n: 2, cols: 2 }
        );
    }

    #[test]
    fn textbook_slope_se() {
        // closed form: se(b) = sqrt(s² / Σ(x - x̄)²)
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let ys = [1.1, 1.9, 3.2, 3.9, 5.3, 5.8];
        let r = ols(&ys, &line(&xs)).unwrap();
        let xbar = 3.5;
        let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
        let s2 = r.residuals.iter().map(|e| e * e).sum::<f64>() / 4.0;
        let se = libm::sqrt(s2 / sxx);
        assert!((r.get("x").unwrap().std_error - se).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn residuals_orthogonal(rows in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -5.0f64..5.0), 8..40)) {
            let mut d = Design::new(vec!["intercept".into(), "a".into(), "b".into()]);
            let mut y = Vec::new();
            for &(a, b, v) in &rows {
                d.push_row(&[1.0, a, b]).unwrap();
                y.push(v);
            }
            if let Ok(r) = ols(&y, &d) {
                for j in 0..3 {
                    let dotp: f64 = (0..d.rows()).map(|i| d.row(i)[j] * r.residuals[i]).sum();
                    prop_assert!(dotp.abs() < 1e-8, "{}", dotp);
                }
                prop_assert!(r.coefficients.iter().all(|c| (0.0..=1.0).contains(&c.p)));
            }
        }
    }
}
