//! Extreme eigenvalues of the pencil `D⁻¹A` for SPD `A`, `D`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};

use super::operator::SpdOperator;
use super::vector;
use crate::error::{check_dim, Error, Result};

/// Largest dimension handled by the dense generalized eigensolver in
/// [`EigMode::Auto`].
pub const DENSE_EIG_LIMIT: usize = 2000;
pub const ITERATIVE_TOL: f64 = 1e-3;
pub const ITERATIVE_MAX_ITER: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigPair {
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl EigPair {
    pub fn new(lambda_min: f64, lambda_max: f64) -> Result<Self> {
        if !(lambda_min.is_finite() && lambda_max.is_finite() && lambda_min <= lambda_max) {
            return Err(Error::InvalidInput(format!("invalid eigenvalue pair ({lambda_min}, {lambda_max})")));
        }
        Ok(Self { lambda_min, lambda_max })
    }

    pub fn condition_number(&self) -> f64 {
        self.lambda_max / self.lambda_min
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EigMode {
    /// Cholesky-reduced symmetric eigensolve; needs `materialize` on both operators.
    Dense,
    /// Power and inverse iteration in the `D` inner product.
    Iterative,
    /// Dense up to [`DENSE_EIG_LIMIT`] when both operators materialize.
    Auto,
}

/// All eigenvalues of `D⁻¹A`, ascending, via `L⁻¹ A L⁻ᵀ` with `D = L Lᵀ`.
pub fn generalized_eigenvalues(a: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.shape() != d.shape() || a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            context: "generalized_eigenvalues",
            expected: a.nrows(),
            actual: d.nrows(),
        });
    }
    let dsym = (d + d.transpose()) * 0.5;
    let chol = nalgebra::Cholesky::new(dsym).ok_or_else(|| Error::NotSpd("metric has no Cholesky factor".into()))?;
    let l = chol.l();
    let linv_a = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&linv_a.transpose())
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let mut eigs: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(eigs)
}

/// `λ_min(D⁻¹A)` and `λ_max(D⁻¹A)`.
pub fn estimate_extreme_eigs(a: &dyn SpdOperator, d: &dyn SpdOperator, mode: EigMode) -> Result<EigPair> {
    check_dim("estimate_extreme_eigs", a.dim(), d.dim())?;
    match mode {
        EigMode::Dense => dense_pair(a, d),
        EigMode::Iterative => iterative_pair(a, d, ITERATIVE_TOL, ITERATIVE_MAX_ITER),
        EigMode::Auto => {
            if a.dim() <= DENSE_EIG_LIMIT {
                if let (Some(am), Some(dm)) = (a.materialize(), d.materialize()) {
                    return pair_from(&generalized_eigenvalues(&am.to_dense(), &dm.to_dense())?);
                }
            }
            iterative_pair(a, d, ITERATIVE_TOL, ITERATIVE_MAX_ITER)
        }
    }
}

fn dense_pair(a: &dyn SpdOperator, d: &dyn SpdOperator) -> Result<EigPair> {
    let (am, dm) = match (a.materialize(), d.materialize()) {
        (Some(am), Some(dm)) => (am, dm),
        _ => return Err(Error::Unsupported("dense eigensolve needs materializable operators".into())),
    };
    pair_from(&generalized_eigenvalues(&am.to_dense(), &dm.to_dense())?)
}

fn pair_from(eigs: &[f64]) -> Result<EigPair> {
    match (eigs.first(), eigs.last()) {
        (Some(&lo), Some(&hi)) => EigPair::new(lo, hi),
        _ => Err(Error::InvalidInput("empty operator".into())),
    }
}

/// Power iteration on `D⁻¹A` for the top of the spectrum and on `A⁻¹D` for the
/// bottom (falling back to the shifted operator `λ_max I − D⁻¹A` when `A`
/// has no inverse action). Both use Rayleigh quotients `⟨Ax,x⟩/⟨Dx,x⟩`.
pub fn iterative_pair(a: &dyn SpdOperator, d: &dyn SpdOperator, tol: f64, max_iter: usize) -> Result<EigPair> {
    let n = a.dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_e16);
    let start: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let rayleigh = |x: &[f64]| vector::dot(&a.apply(x), x) / vector::dot(&d.apply(x), x);
    let normalize = |x: &mut Vec<f64>| {
        let s = vector::dot(&d.apply(x), x).sqrt();
        x.iter_mut().for_each(|v| *v /= s);
    };

    // largest
    let mut x = start.clone();
    normalize(&mut x);
    let mut lmax = rayleigh(&x);
    let mut max_ok = false;
    for _ in 0..max_iter {
        x = d.inv_apply(&a.apply(&x))?;
        normalize(&mut x);
        let next = rayleigh(&x);
        let done = (next - lmax).abs() <= tol * next.abs();
        lmax = next;
        if done {
            max_ok = true;
            break;
        }
    }

    // smallest
    let mut y = start;
    normalize(&mut y);
    let mut lmin = rayleigh(&y);
    let mut min_ok = false;
    let use_inverse = a.inv_apply(&y).is_ok();
    for _ in 0..max_iter {
        y = if use_inverse {
            a.inv_apply(&d.apply(&y))?
        } else {
            let t = d.inv_apply(&a.apply(&y))?;
            y.iter().zip(&t).map(|(yi, ti)| lmax * yi - ti).collect()
        };
        normalize(&mut y);
        let next = rayleigh(&y);
        let done = (next - lmin).abs() <= tol * next.abs().max(tol * lmax.abs());
        lmin = next;
        if done {
            min_ok = true;
            break;
        }
    }

    if !(max_ok && min_ok) {
        return Err(Error::NotConverged {
            iterations: max_iter,
            lambda_min: lmin,
            lambda_max: lmax,
        });
    }
    EigPair::new(lmin.min(lmax), lmax)
}
