//! Asymptotic covariance of the EM estimates by the supplemented EM construction.
//!
//! For one gene with θ = (α, γ) and fitted times t̂:
//!
//! * `I_oc` is the Hessian in θ of the squared-residual loss at t̂, divided by 2σ̂²n;
//! * `J_M` is the Jacobian of one EM update θ ↦ M(θ) at θ̂;
//! * `V = (I − J_M)⁻¹ I_oc⁻¹`, and the 95% interval is θ̂ᵢ ± 1.96 √(vᵢᵢ / n).

use nalgebra::{DMatrix, Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{column, em_map, gene_loss, Curve, EmConfig, EmResult, FitStage, Rates};
use crate::synth::ExpressionDataset;

pub const Z95: f64 = 1.959963984540054;
pub const PARAM_NAMES: [&str; 2] = ["alpha", "gamma"];

/// Covariance summary of one gene. Matrices are stored row-major, axes in `axes` order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SemResult {
    pub gene: usize,
    pub stage: FitStage,
    pub axes: [String; 2],
    pub theta_hat: [f64; 2],
    pub i_oc: [[f64; 2]; 2],
    pub j_m: [[f64; 2]; 2],
    pub v_hat: [[f64; 2]; 2],
    /// `None` where the diagonal of `v_hat` is not positive.
    pub ci95: [Option<(f64, f64)>; 2],
    pub pd_flag: bool,
    pub sigma2_hat: f64,
    pub n: usize,
}

impl SemResult {
    pub fn covers(&self, truth: [f64; 2]) -> [bool; 2] {
        let mut out = [false; 2];
        for i in 0..2 {
            out[i] = self.ci95[i].is_some_and(|(lo, hi)| lo <= truth[i] && truth[i] <= hi);
        }
        out
    }

    pub fn half_widths(&self) -> [f64; 2] {
        self.ci95.map(|c| c.map_or(f64::NAN, |(lo, hi)| 0.5 * (hi - lo)))
    }
}

fn to_rows(m: &Matrix2<f64>) -> [[f64; 2]; 2] {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

/// Residual variance per coordinate. Each of the n cells contributes two coordinates and
/// consumes one degree of freedom through its fitted time; θ takes two more.
pub fn residual_variance(loss: f64, n: usize) -> f64 {
    loss / (n as f64 - 2.0).max(1.0)
}

fn second_difference<F: Fn(Vector2<f64>) -> f64>(f: &F, x: Vector2<f64>, h: Vector2<f64>, f0: f64) -> Matrix2<f64> {
    let e = |i: usize, s: f64| {
        let mut v = Vector2::zeros();
        v[i] = s * h[i];
        v
    };
    let mut m = Matrix2::zeros();
    for i in 0..2 {
        m[(i, i)] = (f(x + e(i, 1.0)) - 2.0 * f0 + f(x + e(i, -1.0))) / (h[i] * h[i]);
    }
    let pp = f(x + e(0, 1.0) + e(1, 1.0));
    let pm = f(x + e(0, 1.0) + e(1, -1.0));
    let mp = f(x + e(0, -1.0) + e(1, 1.0));
    let mm = f(x + e(0, -1.0) + e(1, -1.0));
    m[(0, 1)] = (pp - pm - mp + mm) / (4.0 * h[0] * h[1]);
    m[(1, 0)] = m[(0, 1)];
    m
}

/// Hessian by central differences with one Richardson step (h and h/2).
pub fn richardson_hessian<F: Fn(Vector2<f64>) -> f64>(f: F, x: Vector2<f64>) -> Result<Matrix2<f64>> {
    let h = x.map(|v| 1e-4 * (v.abs() + 1.0));
    let f0 = f(x);
    let coarse = second_difference(&f, x, h, f0);
    let fine = second_difference(&f, x, h * 0.5, f0);
    let hess = (fine * 4.0 - coarse) / 3.0;
    if hess.iter().all(|v| v.is_finite()) {
        Ok(hess)
    } else {
        Err(Error::Numerical("non-finite Hessian entry".into()))
    }
}

/// Complete-data information at θ̂ with the fitted times held fixed.
pub fn complete_info(
    u: &[f64],
    s: &[f64],
    rates: Rates,
    times: &[f64],
    stage: FitStage,
    cfg: &EmConfig,
    sigma2: f64,
) -> Result<Matrix2<f64>> {
    let n = u.len() as f64;
    let loss = |p: Vector2<f64>| gene_loss(u, s, times, &Curve::new(Rates::new(p[0], p[1]), stage, cfg.t_switch));
    let hess = richardson_hessian(loss, Vector2::new(rates.alpha, rates.gamma))?;
    Ok(hess / (2.0 * sigma2 * n))
}

/// Forward-difference Jacobian of the EM update at θ̂.
pub fn em_map_jacobian(u: &[f64], s: &[f64], rates: Rates, stage: FitStage, cfg: &EmConfig) -> Result<Matrix2<f64>> {
    let theta = Vector2::new(rates.alpha, rates.gamma);
    let m = |p: Vector2<f64>, col: Option<usize>| -> Result<Vector2<f64>> {
        let (r, _) = em_map(u, s, Rates::new(p[0], p[1]), stage, cfg).map_err(|e| {
            Error::Numerical(match col {
                Some(j) => format!("EM update failed when perturbing {}: {e}", PARAM_NAMES[j]),
                None => format!("EM update failed at the estimate: {e}"),
            })
        })?;
        Ok(Vector2::new(r.alpha, r.gamma))
    };
    let base = m(theta, None)?;
    let mut jac = Matrix2::zeros();
    for j in 0..2 {
        let h = 1e-3 * (theta[j].abs() + 1.0);
        let mut p = theta;
        p[j] += h;
        let col = (m(p, Some(j))? - base) / h;
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Assembles V̂ and the intervals from the two matrices.
pub fn assemble(
    gene: usize,
    stage: FitStage,
    rates: Rates,
    i_oc: Matrix2<f64>,
    j_m: Matrix2<f64>,
    sigma2_hat: f64,
    n: usize,
) -> Result<SemResult> {
    let i_inv = i_oc
        .try_inverse()
        .ok_or_else(|| Error::Numerical(format!("gene {gene}: singular complete-data information")))?;
    let a = Matrix2::identity() - j_m;
    if a.determinant().abs() < 1e-14 * a.norm().powi(2).max(1e-300) {
        return Err(Error::Numerical(format!("gene {gene}: I - J_M is singular")));
    }
    let a_inv = a
        .try_inverse()
        .ok_or_else(|| Error::Numerical(format!("gene {gene}: I - J_M is singular")))?;
    let v = a_inv * i_inv;
    let v = (v + v.transpose()) * 0.5;
    let eig = v.symmetric_eigenvalues();
    let pd_flag = eig.iter().all(|&l| l > 0.0);
    let theta = [rates.alpha, rates.gamma];
    let mut ci95 = [None, None];
    for i in 0..2 {
        let vii = v[(i, i)];
        if vii > 0.0 && vii.is_finite() {
            let w = Z95 * (vii / n as f64).sqrt();
            ci95[i] = Some((theta[i] - w, theta[i] + w));
        }
    }
    Ok(SemResult {
        gene,
        stage,
        axes: PARAM_NAMES.map(String::from),
        theta_hat: theta,
        i_oc: to_rows(&i_oc),
        j_m: to_rows(&j_m),
        v_hat: to_rows(&v),
        ci95,
        pd_flag,
        sigma2_hat,
        n,
    })
}

/// SEM for one gene from its EM fit.
pub fn sem_gene(
    gene: usize,
    u: &[f64],
    s: &[f64],
    rates: Rates,
    times: &[f64],
    stage: FitStage,
    cfg: &EmConfig,
) -> Result<SemResult> {
    let n = u.len();
    let loss = gene_loss(u, s, times, &Curve::new(rates, stage, cfg.t_switch));
    let sigma2 = residual_variance(loss, n);
    if !(sigma2 > 0.0) {
        return Err(Error::Numerical(format!("gene {gene}: zero residual variance")));
    }
    let i_oc = complete_info(u, s, rates, times, stage, cfg, sigma2)?;
    let j_m = em_map_jacobian(u, s, rates, stage, cfg)?;
    assemble(gene, stage, rates, i_oc, j_m, sigma2, n)
}

/// Variant for times observed as data: no missing information, so V̂ = I_oc⁻¹.
pub fn sem_known_times(
    gene: usize,
    u: &[f64],
    s: &[f64],
    rates: Rates,
    times: &[f64],
    stage: FitStage,
    cfg: &EmConfig,
    sigma2: f64,
) -> Result<SemResult> {
    let i_oc = complete_info(u, s, rates, times, stage, cfg, sigma2)?;
    assemble(gene, stage, rates, i_oc, Matrix2::zeros(), sigma2, u.len())
}

/// SEM for every gene of an EM result, in parallel over genes.
pub fn sem_covariance(ds: &ExpressionDataset, em: &EmResult, cfg: &EmConfig) -> Vec<Result<SemResult>> {
    let times: &DMatrix<f64> = em.time_matrix.matrix();
    (0..em.genes.len())
        .into_par_iter()
        .map(|g| {
            let fit = &em.genes[g];
            sem_gene(g, column(&ds.u, g), column(&ds.s, g), fit.rates, column(times, g), fit.stage, cfg)
        })
        .collect()
}

/// Spectral radius of a 2×2 matrix.
pub fn spectral_radius(m: &Matrix2<f64>) -> f64 {
    let tr = m.trace();
    let det = m.determinant();
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let r = disc.sqrt();
        (tr / 2.0 + r).abs().max((tr / 2.0 - r).abs())
    } else {
        det.abs().sqrt()
    }
}
