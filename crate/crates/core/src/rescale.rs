//! Gene-shared latent time from a matrix of gene-specific times.
//!
//! Two formulations, both solved by the Perron vector of a d × d gene matrix:
//!
//! * multiplicative (`Proposal::Multiplicative`): min ‖T diag(x) − t 1ᵀ‖² with ‖Tx‖ = d,
//!   solved by x* = d λ₁^{-1/2} W v₁ on H = W TᵀT W, W = diag(1/‖t_g‖);
//! * additive (`Proposal::Additive`): min ‖T − t βᵀ‖² with ‖β‖ = 1, solved by β* = v₁ of TᵀT.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::GeneKinetics;
use crate::error::{Error, Result};

/// n × d matrix of nonnegative gene-specific cell times.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneTimeMatrix(DMatrix<f64>);

impl Default for GeneTimeMatrix {
    fn default() -> Self {
        GeneTimeMatrix(DMatrix::zeros(0, 0))
    }
}

impl GeneTimeMatrix {
    pub fn new(t: DMatrix<f64>) -> Result<Self> {
        if let Some(bad) = t.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::Domain(format!("time matrix entry {bad} is not a finite nonnegative number")));
        }
        Ok(GeneTimeMatrix(t))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn n_cells(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_genes(&self) -> usize {
        self.0.ncols()
    }

    /// Genes whose time column is identically zero.
    pub fn zero_columns(&self) -> Vec<usize> {
        (0..self.n_genes())
            .filter(|&g| self.0.column(g).iter().all(|&x| x == 0.0))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Proposal {
    Multiplicative = 1,
    Additive = 2,
}

impl Proposal {
    pub fn from_number(p: u8) -> Result<Self> {
        match p {
            1 => Ok(Proposal::Multiplicative),
            2 => Ok(Proposal::Additive),
            _ => Err(Error::Config(format!("proposal must be 1 or 2, got {p}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Irreducibility {
    pub irreducible: bool,
    /// Connected gene components of the support graph of TᵀT (original gene indices).
    pub components: Vec<Vec<usize>>,
    pub skipped_genes: Vec<usize>,
}

/// Connectivity of the support graph of TᵀT over the nonzero columns.
///
/// Genes g and h are adjacent when some cell has positive time for both. TᵀT is symmetric,
/// so strong connectivity reduces to connectivity, found here by union–find over cells.
pub fn check_irreducible(t: &GeneTimeMatrix) -> Irreducibility {
    let m = t.matrix();
    let skipped = t.zero_columns();
    let d = m.ncols();
    let mut parent: Vec<usize> = (0..d).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for c in 0..m.nrows() {
        let mut first = None;
        for g in 0..d {
            if m[(c, g)] > 0.0 {
                match first {
                    None => first = Some(g),
                    Some(f) => {
                        let (a, b) = (find(&mut parent, f), find(&mut parent, g));
                        if a != b {
                            parent[b] = a;
                        }
                    }
                }
            }
        }
    }
    let mut roots: Vec<usize> = Vec::new();
    let mut components: Vec<Vec<usize>> = Vec::new();
    for g in 0..d {
        if skipped.contains(&g) {
            continue;
        }
        let r = find(&mut parent, g);
        match roots.iter().position(|&x| x == r) {
            Some(i) => components[i].push(g),
            None => {
                roots.push(r);
                components.push(vec![g]);
            }
        }
    }
    Irreducibility { irreducible: components.len() == 1, components, skipped_genes: skipped }
}

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: f64,
    pub vector: DVector<f64>,
    pub iters: usize,
    /// ‖Hv − λv‖ / ‖H‖_F.
    pub rel_residual: f64,
}

pub const POWER_MAX_ITERS: usize = 100_000;

/// Dominant eigenpair of a symmetric nonnegative matrix by power iteration.
///
/// Stops when the Rayleigh quotient changes by less than 1e-12 relative and the residual is
/// below 1e-11‖H‖_F. The returned vector has unit norm and a positive largest entry.
pub fn power_iteration(h: &DMatrix<f64>) -> Result<EigenPair> {
    let d = h.nrows();
    let norm_h = h.norm();
    if d == 0 || !(norm_h > 0.0) || !norm_h.is_finite() {
        return Err(Error::Numerical("matrix is empty, zero or non-finite".into()));
    }
    let mut v = DVector::from_element(d, 1.0 / (d as f64).sqrt());
    let mut w = h * &v;
    let mut lambda = v.dot(&w);
    let mut iters = 0;
    let mut rel_residual = f64::INFINITY;
    while iters < POWER_MAX_ITERS {
        iters += 1;
        let nw = w.norm();
        if !(nw > 0.0) {
            return Err(Error::Numerical("power iteration collapsed to zero".into()));
        }
        v = &w / nw;
        w = h * &v;
        let new_lambda = v.dot(&w);
        rel_residual = (&w - &v * new_lambda).norm() / norm_h;
        let settled = (new_lambda - lambda).abs() <= 1e-12 * new_lambda.abs();
        lambda = new_lambda;
        if settled && rel_residual <= 1e-11 {
            break;
        }
    }
    if rel_residual > 1e-10 {
        return Err(Error::Numerical(format!(
            "power iteration did not converge (residual {rel_residual:e} after {iters} iterations)"
        )));
    }
    let imax = v.iamax();
    if v[imax] < 0.0 {
        v.neg_mut();
    }
    Ok(EigenPair { value: lambda, vector: v, iters, rel_residual })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaleResult {
    pub proposal: Proposal,
    /// Positive rescaling rates for the genes in `kept_genes` (x*⁻¹ for the multiplicative form).
    pub beta_star: Vec<f64>,
    /// x* of the multiplicative form; empty for the additive form.
    pub x_star: Vec<f64>,
    pub t_star: Vec<f64>,
    pub objective: f64,
    pub top_eigenvalue: f64,
    pub kept_genes: Vec<usize>,
    pub skipped_genes: Vec<usize>,
    pub eigen_rel_residual: f64,
    pub power_iters: usize,
    /// How the global time scale was fixed.
    pub normalization: String,
}

fn kept_columns(t: &GeneTimeMatrix) -> Result<(DMatrix<f64>, Vec<usize>, Vec<usize>)> {
    let info = check_irreducible(t);
    if info.components.is_empty() {
        return Err(Error::Numerical("time matrix is zero".into()));
    }
    if !info.irreducible {
        return Err(Error::Reducible { components: info.components });
    }
    let kept: Vec<usize> = (0..t.n_genes()).filter(|g| !info.skipped_genes.contains(g)).collect();
    Ok((t.matrix().select_columns(&kept), kept, info.skipped_genes))
}

/// Perron vector check: strictly positive after the sign convention.
fn check_positive(v: &DVector<f64>) -> Result<()> {
    if let Some(x) = v.iter().find(|&&x| !(x > 0.0)) {
        return Err(Error::Numerical(format!("Perron vector has a non-positive entry {x:e}")));
    }
    Ok(())
}

/// ‖T diag(x) − t 1ᵀ‖² with t = Tx / d.
pub fn objective_multiplicative(t: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = t.ncols() as f64;
    let xv = DVector::from_column_slice(x);
    let tt = t * &xv / d;
    let mut acc = 0.0;
    for g in 0..t.ncols() {
        acc += (t.column(g) * x[g] - &tt).norm_squared();
    }
    acc
}

/// ‖T − t βᵀ‖² with the least-squares t = Tβ / ‖β‖².
pub fn objective_additive(t: &DMatrix<f64>, beta: &[f64]) -> f64 {
    let b = DVector::from_column_slice(beta);
    let tb = t * &b / b.norm_squared();
    (t - &tb * b.transpose()).norm_squared()
}

pub fn rescale_multiplicative(t: &GeneTimeMatrix) -> Result<RescaleResult> {
    let (tk, kept, skipped) = kept_columns(t)?;
    let d = tk.ncols();
    let w: Vec<f64> = (0..d).map(|g| 1.0 / tk.column(g).norm()).collect();
    let tw = DMatrix::from_fn(tk.nrows(), d, |c, g| tk[(c, g)] * w[g]);
    let h = tw.tr_mul(&tw);
    let eig = power_iteration(&h)?;
    check_positive(&eig.vector)?;
    let scale = d as f64 / eig.value.sqrt();
    let x: Vec<f64> = (0..d).map(|g| scale * w[g] * eig.vector[g]).collect();
    let twv = &tw * &eig.vector;
    let t_star = (&twv / twv.norm()).as_slice().to_vec();
    Ok(RescaleResult {
        proposal: Proposal::Multiplicative,
        beta_star: x.iter().map(|v| 1.0 / v).collect(),
        objective: objective_multiplicative(&tk, &x),
        x_star: x,
        t_star,
        top_eigenvalue: eig.value,
        kept_genes: kept,
        skipped_genes: skipped,
        eigen_rel_residual: eig.rel_residual,
        power_iters: eig.iters,
        normalization: "unit-norm t_star; x_star scaled so that |T x| = d".into(),
    })
}

pub fn rescale_additive(t: &GeneTimeMatrix) -> Result<RescaleResult> {
    let (tk, kept, skipped) = kept_columns(t)?;
    let h = tk.tr_mul(&tk);
    let eig = power_iteration(&h)?;
    check_positive(&eig.vector)?;
    let t_star = (&tk * &eig.vector).as_slice().to_vec();
    let beta = eig.vector.as_slice().to_vec();
    Ok(RescaleResult {
        proposal: Proposal::Additive,
        objective: objective_additive(&tk, &beta),
        beta_star: beta,
        x_star: Vec::new(),
        t_star,
        top_eigenvalue: eig.value,
        kept_genes: kept,
        skipped_genes: skipped,
        eigen_rel_residual: eig.rel_residual,
        power_iters: eig.iters,
        normalization: "unit-norm beta_star".into(),
    })
}

pub fn rescale(t: &GeneTimeMatrix, proposal: Proposal) -> Result<RescaleResult> {
    match proposal {
        Proposal::Multiplicative => rescale_multiplicative(t),
        Proposal::Additive => rescale_additive(t),
    }
}

/// Opt-in handling of reducible inputs: each connected gene component is rescaled on its
/// own, with its own time normalisation. The times of different components are therefore
/// not on a common scale.
pub fn rescale_by_component(t: &GeneTimeMatrix, proposal: Proposal) -> Result<Vec<RescaleResult>> {
    let info = check_irreducible(t);
    info.components
        .iter()
        .map(|genes| {
            let sub = GeneTimeMatrix(t.matrix().select_columns(genes));
            let mut r = rescale(&sub, proposal)?;
            r.kept_genes = r.kept_genes.iter().map(|&i| genes[i]).collect();
            r.skipped_genes = info.skipped_genes.clone();
            r.normalization = format!("{} (per component, not comparable across components)", r.normalization);
            Ok(r)
        })
        .collect()
}

/// (α, 1, γ; t_cg) ↦ (α β*, β*, γ β*; t_cg / β*) for every kept gene. Skipped genes are
/// returned unchanged.
pub fn apply_rescale(
    kinetics: &[GeneKinetics],
    times: &GeneTimeMatrix,
    result: &RescaleResult,
) -> Result<(Vec<GeneKinetics>, GeneTimeMatrix)> {
    if kinetics.len() != times.n_genes() {
        return Err(Error::Config("kinetics and time matrix disagree on gene count".into()));
    }
    let mut k = kinetics.to_vec();
    let mut t = times.matrix().clone();
    for (i, &g) in result.kept_genes.iter().enumerate() {
        let b = result.beta_star[i];
        k[g].alpha_on *= b;
        k[g].beta *= b;
        k[g].gamma *= b;
        k[g].t_switch /= b;
        t.column_mut(g).unscale_mut(b);
    }
    Ok((k, GeneTimeMatrix(t)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank_one(t: &[f64], b: &[f64]) -> GeneTimeMatrix {
        GeneTimeMatrix::new(DMatrix::from_fn(t.len(), b.len(), |c, g| t[c] * b[g])).unwrap()
    }

    #[test]
    fn rank_one_recovery() {
        let t = [0.3, 1.0, 2.2, 3.1, 0.7];
        let b = [0.5, 1.7, 2.0];
        let m = rank_one(&t, &b);
        for p in [Proposal::Multiplicative, Proposal::Additive] {
            let r = rescale(&m, p).unwrap();
            assert!(1.0 - crate::stats::cosine(&r.t_star, &t) < 1e-8);
            assert!(1.0 - crate::stats::cosine(&r.beta_star, &b) < 1e-8);
            assert!(r.objective.abs() < 1e-12 * m.matrix().norm_squared().max(1.0), "{p:?} {}", r.objective);
        }
    }

    #[test]
    fn block_diagonal_is_reducible() {
        let m = DMatrix::from_row_slice(4, 4, &[
            1.0, 2.0, 0.0, 0.0,
            2.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 3.0, 1.0,
            0.0, 0.0, 1.0, 3.0,
        ]);
        let t = GeneTimeMatrix::new(m).unwrap();
        let info = check_irreducible(&t);
        assert!(!info.irreducible);
        assert_eq!(info.components, vec![vec![0, 1], vec![2, 3]]);
        assert!(matches!(rescale_multiplicative(&t), Err(Error::Reducible { .. })));
        let parts = rescale_by_component(&t, Proposal::Additive).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[1].kept_genes, vec![2, 3]);
    }

    #[test]
    fn zero_columns_are_skipped() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 2.0, 2.0, 0.0, 4.0, 3.0, 0.0, 6.5]);
        let t = GeneTimeMatrix::new(m).unwrap();
        let r = rescale_additive(&t).unwrap();
        assert_eq!(r.skipped_genes, vec![1]);
        assert_eq!(r.kept_genes, vec![0, 2]);
        assert!(rescale_additive(&GeneTimeMatrix::new(DMatrix::zeros(2, 2)).unwrap()).is_err());
    }

    #[test]
    fn unit_beta_is_identity() {
        let m = rank_one(&[1.0, 2.0], &[1.0, 1.0]);
        let k = vec![GeneKinetics { alpha_on: 3.0, beta: 1.0, gamma: 2.0, t_switch: 4.0 }; 2];
        let r = RescaleResult {
            proposal: Proposal::Additive,
            beta_star: vec![1.0, 1.0],
            x_star: vec![],
            t_star: vec![],
            objective: 0.0,
            top_eigenvalue: 0.0,
            kept_genes: vec![0, 1],
            skipped_genes: vec![],
            eigen_rel_residual: 0.0,
            power_iters: 0,
            normalization: String::new(),
        };
        let (k2, t2) = apply_rescale(&k, &m, &r).unwrap();
        assert_eq!(k2, k);
        assert_eq!(t2, m);
    }

    #[test]
    fn negative_times_rejected() {
        assert!(GeneTimeMatrix::new(DMatrix::from_element(1, 1, -1.0)).is_err());
    }
}
