use std::sync::Arc;

use nalgebra::DMatrix;

use super::eig::{estimate_extreme_eigs, EigMode};
use super::operator::{inverse_norm_sq, DenseSpd, SharedOperator, SpdOperator};
use super::vector;
use crate::error::{check_dim, Error, Result};

/// Convexity and smoothness constants `μ_{f,M}`, `L_{f,M}` of `f` measured in
/// the metric `M`.
#[derive(Clone)]
pub struct ConvexityBounds {
    pub mu: f64,
    pub lip: f64,
    pub metric: Option<SharedOperator>,
}

impl ConvexityBounds {
    pub fn new(mu: f64, lip: f64, metric: Option<SharedOperator>) -> Result<Self> {
        if !(mu > 0.0 && mu <= lip && lip.is_finite()) {
            return Err(Error::InvalidInput(format!("bounds need 0 < mu <= L, got mu = {mu}, L = {lip}")));
        }
        Ok(Self { mu, lip, metric })
    }

    pub fn condition_number(&self) -> f64 {
        self.lip / self.mu
    }
}

impl std::fmt::Debug for ConvexityBounds {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConvexityBounds")
            .field("mu", &self.mu)
            .field("lip", &self.lip)
            .field("metric", &self.metric.as_ref().map(|m| m.dim()))
            .finish()
    }
}

/// Differentiable convex objective.
pub trait GradientOracle: Send + Sync {
    fn dim(&self) -> usize;

    /// Objective value, if the oracle can evaluate it.
    fn value(&self, _u: &[f64]) -> Option<f64> {
        None
    }

    fn grad(&self, u: &[f64]) -> Vec<f64>;

    /// `D_f(u, v)`. The default works from values; oracles with a closed form
    /// override it to avoid cancellation near `u = v`.
    fn bregman(&self, u: &[f64], v: &[f64]) -> Option<f64> {
        let fu = self.value(u)?;
        let fv = self.value(v)?;
        Some(fu - fv - vector::dot(&self.grad(v), &vector::sub(u, v)))
    }

    fn bounds(&self) -> Option<ConvexityBounds> {
        None
    }

    /// Bounds measured in `metric`. Oracles that know their curvature (the
    /// quadratic one) compute them; the default returns the stored bounds.
    fn bounds_in(&self, _metric: &dyn SpdOperator) -> Option<ConvexityBounds> {
        self.bounds()
    }
}

/// `f(x) = ½ xᵀ A x − cᵀ x` with SPD `A`.
#[derive(Clone, Debug)]
pub struct QuadraticOracle {
    hessian: DenseSpd,
    linear: Vec<f64>,
}

impl QuadraticOracle {
    pub fn new(hessian: DMatrix<f64>, linear: Vec<f64>) -> Result<Self> {
        check_dim("QuadraticOracle linear term", hessian.nrows(), linear.len())?;
        Ok(Self {
            hessian: DenseSpd::new(hessian)?,
            linear,
        })
    }

    pub fn pure(hessian: DMatrix<f64>) -> Result<Self> {
        let n = hessian.nrows();
        Self::new(hessian, vec![0.0; n])
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        self.hessian.matrix()
    }

    pub fn hessian_operator(&self) -> &DenseSpd {
        &self.hessian
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    /// `∇f*(ξ) = A⁻¹(ξ + c)`
    pub fn conj_grad(&self, xi: &[f64]) -> Vec<f64> {
        let shifted = vector::add(xi, &self.linear);
        self.hessian.inv_apply(&shifted).expect("dimension checked by caller")
    }
}

impl GradientOracle for QuadraticOracle {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn value(&self, u: &[f64]) -> Option<f64> {
        Some(0.5 * vector::dot(&self.hessian.apply(u), u) - vector::dot(&self.linear, u))
    }

    fn grad(&self, u: &[f64]) -> Vec<f64> {
        vector::sub(&self.hessian.apply(u), &self.linear)
    }

    fn bregman(&self, u: &[f64], v: &[f64]) -> Option<f64> {
        let d = vector::sub(u, v);
        Some(0.5 * vector::dot(&self.hessian.apply(&d), &d))
    }

    fn bounds(&self) -> Option<ConvexityBounds> {
        let id = super::operator::ScaledIdentity::identity(self.dim());
        self.bounds_in(&id)
    }

    fn bounds_in(&self, metric: &dyn SpdOperator) -> Option<ConvexityBounds> {
        let pair = estimate_extreme_eigs(&self.hessian, metric, EigMode::Dense).ok()?;
        ConvexityBounds::new(pair.lambda_min, pair.lambda_max, None).ok()
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Oracle assembled from closures.
pub struct FnOracle {
    dim: usize,
    value: Option<Box<ValueFn>>,
    grad: Box<GradFn>,
    bounds: Option<ConvexityBounds>,
}

impl FnOracle {
    pub fn new(dim: usize, grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self {
            dim,
            value: None,
            grad: Box::new(grad),
            bounds: None,
        }
    }

    pub fn with_value(mut self, value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.value = Some(Box::new(value));
        self
    }

    pub fn with_bounds(mut self, bounds: ConvexityBounds) -> Self {
        self.bounds = Some(bounds);
        self
    }
}

impl GradientOracle for FnOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, u: &[f64]) -> Option<f64> {
        self.value.as_ref().map(|f| f(u))
    }

    fn grad(&self, u: &[f64]) -> Vec<f64> {
        (self.grad)(u)
    }

    fn bounds(&self) -> Option<ConvexityBounds> {
        self.bounds.clone()
    }
}

/// `D_f(u, v) = f(u) − f(v) − ⟨∇f(v), u − v⟩`
pub fn bregman_divergence(f: &dyn GradientOracle, u: &[f64], v: &[f64]) -> Result<f64> {
    check_dim("bregman_divergence u", f.dim(), u.len())?;
    check_dim("bregman_divergence v", f.dim(), v.len())?;
    f.bregman(u, v)
        .ok_or_else(|| Error::Unsupported("Bregman divergence needs objective values".into()))
}

/// `e_M(ξ) = ξ − M ∇f*(ξ)`, one gradient step on the conjugate in the metric `M`.
pub fn e_map(m: &dyn SpdOperator, conj_grad: impl Fn(&[f64]) -> Vec<f64>, xi: &[f64]) -> Result<Vec<f64>> {
    check_dim("e_map", m.dim(), xi.len())?;
    let g = conj_grad(xi);
    check_dim("e_map conjugate gradient", m.dim(), g.len())?;
    Ok(vector::sub(xi, &m.apply(&g)))
}

/// Both sides of the contraction inequality
/// `‖∇f(u₁) − ∇f(u₂) − M(u₁ − u₂)‖²_{M⁻¹} ≤ L_e ‖∇f(u₁) − ∇f(u₂)‖²_{M⁻¹}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContractionDefect {
    pub lhs: f64,
    pub rhs_factor: f64,
    /// `L_e = 1 − (2μ − 1)/(μ L)`
    pub bound: f64,
}

impl ContractionDefect {
    pub fn ratio(&self) -> f64 {
        if self.rhs_factor == 0.0 {
            0.0
        } else {
            self.lhs / self.rhs_factor
        }
    }

    pub fn holds(&self, slack: f64) -> bool {
        self.lhs <= (self.bound + slack) * self.rhs_factor
    }
}

/// Contraction constant `1 − (2μ − 1)/(μ L)` of the map `e_M`.
pub fn contraction_constant(mu: f64, lip: f64) -> Result<f64> {
    if mu <= 0.5 {
        return Err(Error::ContractNotApplicable { mu });
    }
    Ok(1.0 - (2.0 * mu - 1.0) / (mu * lip))
}

/// Evaluates the contraction inequality at `(u1, u2)`. `f` must report bounds
/// in the metric `m` with `μ > ½`.
pub fn contraction_defect(f: &dyn GradientOracle, m: &dyn SpdOperator, u1: &[f64], u2: &[f64]) -> Result<ContractionDefect> {
    check_dim("contraction_defect u1", f.dim(), u1.len())?;
    check_dim("contraction_defect u2", f.dim(), u2.len())?;
    check_dim("contraction_defect metric", f.dim(), m.dim())?;
    let b = f
        .bounds_in(m)
        .ok_or_else(|| Error::Unsupported("contraction_defect needs convexity bounds".into()))?;
    let bound = contraction_constant(b.mu, b.lip)?;
    let dg = vector::sub(&f.grad(u1), &f.grad(u2));
    let du = vector::sub(u1, u2);
    let defect = vector::sub(&dg, &m.apply(&du));
    Ok(ContractionDefect {
        lhs: inverse_norm_sq(m, &defect)?,
        rhs_factor: inverse_norm_sq(m, &dg)?,
        bound,
    })
}

/// Worst relative error between `grad` and central differences of `value`
/// at `x`, with step `h = 1e-5 (1 + ‖x‖∞)`.
pub fn gradient_check(f: &dyn GradientOracle, x: &[f64]) -> Result<f64> {
    check_dim("gradient_check", f.dim(), x.len())?;
    if f.value(x).is_none() {
        return Err(Error::Unsupported("gradient check needs objective values".into()));
    }
    let h = 1e-5 * (1.0 + vector::norm_inf(x));
    let g = f.grad(x);
    let scale = vector::norm_inf(&g).max(1.0);
    let mut xp = x.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f.value(&xp).unwrap();
        xp[i] = x[i] - h;
        let fm = f.value(&xp).unwrap();
        xp[i] = x[i];
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / scale);
    }
    Ok(worst)
}

/// Shares a dense quadratic as a trait object.
pub fn shared_quadratic(hessian: DMatrix<f64>, linear: Vec<f64>) -> Result<Arc<QuadraticOracle>> {
    Ok(Arc::new(QuadraticOracle::new(hessian, linear)?))
}
