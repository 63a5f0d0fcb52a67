//! The transformed primal-dual iteration with variable preconditioners.
//!
//! One explicit step from `(u_k, p_k, I_Q,k)`:
//!
//! ```text
//! u_half  = u_k - I_V⁻¹ (∇f(u_k) + Bᵀ p_k)
//! I_Q,k+1 = (I_Q,k + αγ S̃_k) / (1 + αγ)
//! p_k+1   = p_k + α I_Q,k+1⁻¹ (B u_half - b)
//! u_k+1   = (1 - α) u_k + α u_half
//! ```
//!
//! The IMEX variant replaces the last line by the implicit relation
//! `u_k+1 = u_k - α I_V⁻¹ (Ã(u_k+1) + Bᵀ p_k+1)`; inexact Uzawa is the explicit
//! step with `α = 1`.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::eig::DENSE_EIG_LIMIT;
use crate::numerics::{
    bregman_divergence, dense_inverse_of, dense_of, generalized_eigenvalues, probe_spd, vector, weighted_norm_sq,
    ConvexCombination, DenseSpd, GradientOracle, SharedOperator, SparseMatrix, SparseSpd, SpdOperator,
};

/// Residual growth factor that marks a run as diverged.
pub const DIVERGENCE_FACTOR: f64 = 1e6;
/// Relative tolerance of the implicit-relation back-substitution check.
pub const IMPLICIT_TOLERANCE: f64 = 1e-10;
/// Iterations between positivity probes of `I_Q`.
pub const SPD_PROBE_INTERVAL: usize = 10;
/// Initial residual, relative to the data scale, treated as already converged.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

#[derive(Clone)]
pub struct PrimalDualState {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub iq: SharedOperator,
    pub k: usize,
}

impl std::fmt::Debug for PrimalDualState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PrimalDualState")
            .field("u", &self.u)
            .field("p", &self.p)
            .field("iq_dim", &self.iq.dim())
            .field("k", &self.k)
            .finish()
    }
}

impl PrimalDualState {
    pub fn new(u: Vec<f64>, p: Vec<f64>, iq: SharedOperator) -> Result<Self> {
        check_dim("PrimalDualState iq", p.len(), iq.dim())?;
        Ok(Self { u, p, iq, k: 0 })
    }
}

/// Source of the Schur-complement approximation `S̃_k` and of the dual
/// preconditioner update.
pub trait DualMetric: Send + Sync {
    fn stilde(&self, u: &[f64], iv: &dyn SpdOperator) -> Result<SharedOperator>;

    fn next_iq(&self, iq: &SharedOperator, stilde: &SharedOperator, alpha: f64, gamma: f64) -> Result<SharedOperator> {
        update_iq(iq, stilde, alpha, gamma)
    }
}

/// `S̃ = S = B I_V⁻¹ Bᵀ`, formed densely.
pub struct ExactSchur {
    b_dense: DMatrix<f64>,
}

impl ExactSchur {
    pub fn new(b: &SparseMatrix) -> Self {
        Self { b_dense: b.to_dense() }
    }

    pub fn schur(&self, iv: &dyn SpdOperator) -> Result<DMatrix<f64>> {
        let ivinv = dense_inverse_of(iv)?;
        let s = &self.b_dense * ivinv * self.b_dense.transpose();
        Ok((&s + s.transpose()) * 0.5)
    }
}

impl DualMetric for ExactSchur {
    fn stilde(&self, _u: &[f64], iv: &dyn SpdOperator) -> Result<SharedOperator> {
        Ok(Arc::new(DenseSpd::new(self.schur(iv)?)?))
    }
}

/// `S̃_k` from a closure of the iterate and `I_V,k`.
pub struct FnDualMetric<F>(pub F);

impl<F> DualMetric for FnDualMetric<F>
where
    F: Fn(&[f64], &dyn SpdOperator) -> Result<SharedOperator> + Send + Sync,
{
    fn stilde(&self, u: &[f64], iv: &dyn SpdOperator) -> Result<SharedOperator> {
        (self.0)(u, iv)
    }
}

/// Solver of the implicit primal relation of the IMEX scheme.
pub trait ImplicitSubstep: Send + Sync {
    /// Returns `u` with `u = u_k - α I_V⁻¹ (Ã(u) + bt_p)`, where `bt_p = Bᵀ p_k+1`.
    fn solve(&self, u_k: &[f64], bt_p: &[f64], alpha: f64, iv: &dyn SpdOperator) -> Result<Vec<f64>>;

    /// `Ã(u_next)` as treated by [`ImplicitSubstep::solve`]; used for back-substitution.
    fn implicit_gradient(&self, u_k: &[f64], u_next: &[f64]) -> Vec<f64>;
}

/// Implicit step for `f(u) = ½uᵀAu − cᵀu`: the linear solve
/// `(I_V + αA) u = I_V u_k + α(c − Bᵀp)`.
pub struct QuadraticImplicit {
    f: Arc<crate::numerics::QuadraticOracle>,
}

impl QuadraticImplicit {
    pub fn new(f: Arc<crate::numerics::QuadraticOracle>) -> Self {
        Self { f }
    }
}

impl ImplicitSubstep for QuadraticImplicit {
    fn solve(&self, u_k: &[f64], bt_p: &[f64], alpha: f64, iv: &dyn SpdOperator) -> Result<Vec<f64>> {
        let lhs = dense_of(iv) + self.f.hessian() * alpha;
        let mut rhs = iv.apply(u_k);
        for i in 0..rhs.len() {
            rhs[i] += alpha * (self.f.linear()[i] - bt_p[i]);
        }
        let lu = lhs.lu();
        let x = lu
            .solve(&nalgebra::DVector::from_vec(rhs))
            .ok_or_else(|| Error::Singular("implicit quadratic system".into()))?;
        Ok(x.as_slice().to_vec())
    }

    fn implicit_gradient(&self, _u_k: &[f64], u_next: &[f64]) -> Vec<f64> {
        self.f.grad(u_next)
    }
}

pub type IvFactory = Arc<dyn Fn(&[f64]) -> Result<SharedOperator> + Send + Sync>;
pub type DualProjection = Arc<dyn Fn(&mut [f64]) + Send + Sync>;

/// `min f(u) subject to Bu = b`, with the preconditioner sources.
#[derive(Clone)]
pub struct SaddleProblem {
    pub f: Arc<dyn GradientOracle>,
    pub b_mat: SparseMatrix,
    b_t: SparseMatrix,
    pub rhs: Vec<f64>,
    pub iv_factory: IvFactory,
    pub dual: Arc<dyn DualMetric>,
    pub implicit: Option<Arc<dyn ImplicitSubstep>>,
    pub dual_projection: Option<DualProjection>,
}

pub struct SaddleProblemBuilder {
    f: Arc<dyn GradientOracle>,
    b_mat: SparseMatrix,
    rhs: Vec<f64>,
    iv_factory: IvFactory,
    dual: Arc<dyn DualMetric>,
    implicit: Option<Arc<dyn ImplicitSubstep>>,
    dual_projection: Option<DualProjection>,
}

impl SaddleProblem {
    pub fn builder(
        f: Arc<dyn GradientOracle>,
        b_mat: SparseMatrix,
        rhs: Vec<f64>,
        iv_factory: IvFactory,
        dual: Arc<dyn DualMetric>,
    ) -> SaddleProblemBuilder {
        SaddleProblemBuilder { f, b_mat, rhs, iv_factory, dual, implicit: None, dual_projection: None }
    }

    pub fn n_primal(&self) -> usize {
        self.b_mat.n_cols()
    }

    pub fn n_dual(&self) -> usize {
        self.b_mat.n_rows()
    }

    pub fn b_transpose(&self) -> &SparseMatrix {
        &self.b_t
    }

    pub fn iv(&self, u: &[f64]) -> Result<SharedOperator> {
        let iv = (self.iv_factory)(u)?;
        check_dim("I_V", self.n_primal(), iv.dim())?;
        Ok(iv)
    }

    /// `(∇f(u) + Bᵀp, Bu − b)`
    pub fn residual(&self, u: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut ru = self.f.grad(u);
        vector::axpy(1.0, &self.b_t.matvec(p), &mut ru);
        let rp = vector::sub(&self.b_mat.matvec(u), &self.rhs);
        (ru, rp)
    }
}

impl SaddleProblemBuilder {
    pub fn implicit(mut self, substep: Arc<dyn ImplicitSubstep>) -> Self {
        self.implicit = Some(substep);
        self
    }

    /// Declares that `B` is rank deficient and that dual iterates are kept in
    /// a complement of its left nullspace by `projection`.
    pub fn singular_constraint(mut self, projection: DualProjection) -> Self {
        self.dual_projection = Some(projection);
        self
    }

    pub fn build(self) -> Result<SaddleProblem> {
        check_dim("SaddleProblem f", self.b_mat.n_cols(), self.f.dim())?;
        check_dim("SaddleProblem b", self.b_mat.n_rows(), self.rhs.len())?;
        if self.dual_projection.is_none() && self.b_mat.n_rows() <= DENSE_EIG_LIMIT && self.b_mat.n_cols() <= DENSE_EIG_LIMIT {
            let rank = self.b_mat.to_dense().rank(1e-10 * self.b_mat.max_abs().max(f64::MIN_POSITIVE));
            if rank < self.b_mat.n_rows() {
                return Err(Error::InvalidInput(format!(
                    "constraint operator has rank {rank} < {} rows",
                    self.b_mat.n_rows()
                )));
            }
        }
        Ok(SaddleProblem {
            b_t: self.b_mat.transpose(),
            f: self.f,
            b_mat: self.b_mat,
            rhs: self.rhs,
            iv_factory: self.iv_factory,
            dual: self.dual,
            implicit: self.implicit,
            dual_projection: self.dual_projection,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Explicit,
    Imex,
    Uzawa,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamMode {
    Practical,
    Theoretical,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TpdvParams {
    pub alpha: f64,
    pub gamma: f64,
    pub beta: Option<f64>,
    pub mode: Mode,
    pub param_mode: ParamMode,
}

impl TpdvParams {
    /// Fixed `α`, `γ`. Uzawa mode always uses `α = 1`.
    pub fn practical(mode: Mode, alpha: f64, gamma: f64) -> Result<Self> {
        let alpha = if mode == Mode::Uzawa { 1.0 } else { alpha };
        let params = Self { alpha, gamma, beta: None, mode, param_mode: ParamMode::Practical };
        params.validate()?;
        Ok(params)
    }

    /// Parameters recomputed every iteration from the current bounds.
    pub fn theoretical(mode: Mode) -> Self {
        Self { alpha: f64::NAN, gamma: f64::NAN, beta: None, mode, param_mode: ParamMode::Theoretical }
    }

    pub fn validate(&self) -> Result<()> {
        if self.param_mode == ParamMode::Practical {
            if !(self.alpha > 0.0 && self.alpha.is_finite()) {
                return Err(Error::InvalidInput(format!("alpha must be positive, got {}", self.alpha)));
            }
            if !(self.gamma > 0.0 && self.gamma.is_finite()) {
                return Err(Error::InvalidInput(format!("gamma must be positive, got {}", self.gamma)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoremParams {
    pub beta: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// Guaranteed contraction `1 − ½ min{αγ/(1+αγ), αβ}` of the Lyapunov function.
    pub rate: f64,
}

/// Step parameters of the linear-rate theorem, assuming `μ_{f,I_V} = 1`.
pub fn compute_theorem_params(l_f: f64, mu_s: f64, l_s: f64) -> Result<TheoremParams> {
    for (name, v) in [("L_f", l_f), ("mu_S", mu_s), ("L_S", l_s)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
        }
    }
    let beta = 1.0 / (2.0 * l_f);
    let gamma = beta * mu_s;
    let alpha = beta / (4.0 * (l_f + l_s)) * (mu_s / l_s).min(1.0);
    Ok(TheoremParams { beta, gamma, alpha, rate: rate_bound(alpha, beta, gamma) })
}

pub fn rate_bound(alpha: f64, beta: f64, gamma: f64) -> f64 {
    let ag = alpha * gamma;
    1.0 - 0.5 * (ag / (1.0 + ag)).min(alpha * beta)
}

/// `ω I_Q + (1 − ω) S̃` with `ω = 1/(1 + αγ)`.
pub fn update_iq(iq: &SharedOperator, stilde: &SharedOperator, alpha: f64, gamma: f64) -> Result<SharedOperator> {
    check_dim("update_iq", iq.dim(), stilde.dim())?;
    let ag = alpha * gamma;
    if !(ag >= 0.0) {
        return Err(Error::InvalidInput(format!("alpha*gamma = {ag} must be nonnegative")));
    }
    if ag == 0.0 || Arc::ptr_eq(iq, stilde) {
        return Ok(iq.clone());
    }
    let omega = 1.0 / (1.0 + ag);
    if let (Some(a), Some(s)) = (iq.materialize(), stilde.materialize()) {
        let combined = SparseMatrix::linear_combination(omega, &a, 1.0 - omega, &s)?;
        if combined.n_rows() <= DENSE_EIG_LIMIT {
            return Ok(Arc::new(DenseSpd::from_sparse(&combined)?));
        }
        return Ok(Arc::new(SparseSpd::new(combined)?));
    }
    Ok(Arc::new(ConvexCombination::new(omega, iq.clone(), stilde.clone())?))
}

/// `D_f(u, u*) + ½ ‖p − p*‖²_{I_Q}`
pub fn lyapunov(state: &PrimalDualState, ustar: &[f64], pstar: &[f64], f: &dyn GradientOracle) -> Result<f64> {
    let df = bregman_divergence(f, &state.u, ustar)?;
    let dp = vector::sub(&state.p, pstar);
    Ok(df + 0.5 * weighted_norm_sq(state.iq.as_ref(), &dp)?)
}

/// What one step used, besides the new state.
#[derive(Clone, Copy, Debug)]
pub struct StepInfo {
    pub alpha: f64,
    pub gamma: f64,
    pub vcycles: usize,
    /// Guaranteed Lyapunov contraction, in theoretical mode.
    pub rate: Option<f64>,
}

fn wrap(k: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Solver { iteration: k, source: Box::new(e) }
}

fn step_with(
    state: &PrimalDualState,
    prob: &SaddleProblem,
    alpha: f64,
    gamma: f64,
    iv: &SharedOperator,
    stilde: &SharedOperator,
    implicit: bool,
) -> Result<(PrimalDualState, usize)> {
    let err = wrap(state.k);
    let mut g = prob.f.grad(&state.u);
    vector::axpy(1.0, &prob.b_t.matvec(&state.p), &mut g);
    let d = iv.inv_apply(&g).map_err(&err)?;
    let u_half = vector::sub(&state.u, &d);
    let iq_next = prob.dual.next_iq(&state.iq, stilde, alpha, gamma).map_err(&err)?;
    let r = vector::sub(&prob.b_mat.matvec(&u_half), &prob.rhs);
    let dp = iq_next.inv_apply(&r).map_err(&err)?;
    let mut p_next = state.p.clone();
    vector::axpy(alpha, &dp, &mut p_next);
    if let Some(project) = &prob.dual_projection {
        project(&mut p_next);
    }
    let u_next = if implicit {
        let substep = prob
            .implicit
            .as_ref()
            .ok_or_else(|| err(Error::Unsupported("IMEX mode needs an implicit substep".into())))?;
        let bt_p = prob.b_t.matvec(&p_next);
        let u_next = substep.solve(&state.u, &bt_p, alpha, iv.as_ref()).map_err(&err)?;
        check_implicit(substep.as_ref(), &state.u, &u_next, &bt_p, alpha, iv.as_ref()).map_err(&err)?;
        u_next
    } else {
        state.u.iter().zip(&u_half).map(|(uk, uh)| (1.0 - alpha) * uk + alpha * uh).collect()
    };
    let vcycles = iq_next.inv_cost();
    Ok((PrimalDualState { u: u_next, p: p_next, iq: iq_next, k: state.k + 1 }, vcycles))
}

fn check_implicit(
    substep: &dyn ImplicitSubstep,
    u_k: &[f64],
    u_next: &[f64],
    bt_p: &[f64],
    alpha: f64,
    iv: &dyn SpdOperator,
) -> Result<()> {
    let mut g = substep.implicit_gradient(u_k, u_next);
    vector::axpy(1.0, bt_p, &mut g);
    let correction = iv.inv_apply(&g)?;
    let defect = u_next
        .iter()
        .zip(u_k)
        .zip(&correction)
        .map(|((un, uk), c)| (un - uk + alpha * c).abs())
        .fold(0.0, f64::max);
    let scale = vector::norm_inf(u_k).max(vector::norm_inf(u_next)).max(alpha * vector::norm_inf(&correction));
    if defect > IMPLICIT_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::ImplicitSolve { residual: defect / scale, tolerance: IMPLICIT_TOLERANCE });
    }
    Ok(())
}

/// One explicit step with fixed `α`, `γ` (Uzawa mode forces `α = 1`).
pub fn tpdv_step(state: &PrimalDualState, prob: &SaddleProblem, params: &TpdvParams) -> Result<PrimalDualState> {
    if params.mode == Mode::Imex {
        return Err(Error::InvalidInput("tpdv_step runs the explicit scheme".into()));
    }
    let alpha = if params.mode == Mode::Uzawa { 1.0 } else { params.alpha };
    let iv = prob.iv(&state.u).map_err(wrap(state.k))?;
    let stilde = prob.dual.stilde(&state.u, iv.as_ref()).map_err(wrap(state.k))?;
    Ok(step_with(state, prob, alpha, params.gamma, &iv, &stilde, false)?.0)
}

/// One IMEX step with fixed `α`, `γ`.
pub fn tpdv_imex_step(state: &PrimalDualState, prob: &SaddleProblem, params: &TpdvParams) -> Result<PrimalDualState> {
    if params.mode != Mode::Imex {
        return Err(Error::InvalidInput("tpdv_imex_step runs the IMEX scheme".into()));
    }
    let iv = prob.iv(&state.u).map_err(wrap(state.k))?;
    let stilde = prob.dual.stilde(&state.u, iv.as_ref()).map_err(wrap(state.k))?;
    Ok(step_with(state, prob, params.alpha, params.gamma, &iv, &stilde, true)?.0)
}

/// One step of the selected mode, with theoretical parameters when requested.
pub fn step(state: &PrimalDualState, prob: &SaddleProblem, params: &TpdvParams) -> Result<(PrimalDualState, StepInfo)> {
    let err = wrap(state.k);
    let iv = prob.iv(&state.u).map_err(&err)?;
    let stilde = prob.dual.stilde(&state.u, iv.as_ref()).map_err(&err)?;
    let (alpha, gamma, rate) = match params.param_mode {
        ParamMode::Practical => (params.alpha, params.gamma, None),
        ParamMode::Theoretical => {
            let t = theorem_params_at(state, prob, &iv, &stilde).map_err(&err)?;
            (t.alpha, t.gamma, Some(t.rate))
        }
    };
    let alpha = if params.mode == Mode::Uzawa { 1.0 } else { alpha };
    let (next, vcycles) = step_with(state, prob, alpha, gamma, &iv, &stilde, params.mode == Mode::Imex)?;
    Ok((next, StepInfo { alpha, gamma, vcycles, rate }))
}

/// Theorem parameters at the current iterate. `L_{S,I_Q,k+1}` is bounded by
/// `max(L_{S,I_Q,k}, L_{S,S̃})`, valid for every convex combination of the two.
pub fn theorem_params_at(
    state: &PrimalDualState,
    prob: &SaddleProblem,
    iv: &SharedOperator,
    stilde: &SharedOperator,
) -> Result<TheoremParams> {
    let bounds = prob
        .f
        .bounds_in(iv.as_ref())
        .ok_or_else(|| Error::Unsupported("theoretical parameters need convexity bounds of f".into()))?;
    if bounds.mu < 1.0 - 1e-8 {
        warn!("convexity constant {} in the I_V metric is below 1; rescale I_V", bounds.mu);
    }
    let s = ExactSchur::new(&prob.b_mat).schur(iv.as_ref())?;
    let st = dense_of(stilde.as_ref());
    let iq = dense_of(state.iq.as_ref());
    let s_vs_stilde = generalized_eigenvalues(&s, &st)?;
    let s_vs_iq = generalized_eigenvalues(&s, &iq)?;
    let mu_s = s_vs_stilde[0];
    let l_s = s_vs_stilde[s_vs_stilde.len() - 1].max(s_vs_iq[s_vs_iq.len() - 1]);
    compute_theorem_params(bounds.lip, mu_s, l_s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIter,
    Diverged,
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxIter => "max_iter",
            RunStatus::Diverged => "diverged",
        })
    }
}

/// Row `k` describes iterate `k` and the parameters of the step that produced
/// it (zero for the initial row).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecordRow {
    pub k: usize,
    pub residual_inf: f64,
    pub residual_u_inf: f64,
    pub residual_p_inf: f64,
    pub lyapunov: Option<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub vcycles: usize,
}

pub const RECORD_CSV_HEADER: &str = "k,residual_inf,residual_u_inf,residual_p_inf,lyapunov,alpha,gamma,vcycles";

#[derive(Clone, Debug)]
pub struct ConvergenceRecord {
    pub label: String,
    pub dofs: usize,
    pub rows: Vec<RecordRow>,
    pub status: RunStatus,
    pub seconds: f64,
}

impl ConvergenceRecord {
    pub fn iterations(&self) -> usize {
        self.rows.last().map_or(0, |r| r.k)
    }

    pub fn total_vcycles(&self) -> usize {
        self.rows.iter().map(|r| r.vcycles).sum()
    }

    pub fn initial_residual(&self) -> f64 {
        self.rows.first().map_or(f64::NAN, |r| r.residual_inf)
    }

    pub fn final_residual(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.residual_inf)
    }

    /// `(E_K / E_0)^{1/K}` when Lyapunov values were recorded.
    pub fn empirical_rate(&self) -> Option<f64> {
        let first = self.rows.first()?.lyapunov?;
        let last = self.rows.last()?;
        let e_k = last.lyapunov?;
        if last.k == 0 || first <= 0.0 {
            return None;
        }
        Some((e_k.max(0.0) / first).powf(1.0 / last.k as f64))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{RECORD_CSV_HEADER}")?;
        for r in &self.rows {
            let lyap = r.lyapunov.map(|v| format!("{v:e}")).unwrap_or_default();
            writeln!(
                out,
                "{},{:e},{:e},{:e},{},{:e},{:e},{}",
                r.k, r.residual_inf, r.residual_u_inf, r.residual_p_inf, lyap, r.alpha, r.gamma, r.vcycles
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is ascii")
    }
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub record: ConvergenceRecord,
    pub state: PrimalDualState,
    /// Guaranteed Lyapunov contraction of every step (theoretical mode only).
    pub rate_bounds: Vec<f64>,
}

pub type StepObserver<'a> = &'a mut dyn FnMut(&PrimalDualState, &PrimalDualState, &StepInfo) -> Result<()>;

#[derive(Clone, Copy, Debug)]
pub struct Reference<'a> {
    pub ustar: &'a [f64],
    pub pstar: &'a [f64],
}

pub struct SolveOptions<'a> {
    pub tol: f64,
    pub max_iter: usize,
    pub reference: Option<Reference<'a>>,
    pub label: String,
    pub observer: Option<StepObserver<'a>>,
}

impl<'a> SolveOptions<'a> {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self { tol, max_iter, reference: None, label: String::new(), observer: None }
    }

    pub fn reference(mut self, ustar: &'a [f64], pstar: &'a [f64]) -> Self {
        self.reference = Some(Reference { ustar, pstar });
        self
    }

    pub fn label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn observer(mut self, observer: StepObserver<'a>) -> Self {
        self.observer = Some(observer);
        self
    }
}

/// Iterates until `‖(∇f + Bᵀp, Bu − b)‖∞ ≤ tol · initial`, `max_iter`, or divergence.
pub fn solve(prob: &SaddleProblem, params: &TpdvParams, tol: f64, max_iter: usize, init: PrimalDualState) -> Result<SolveOutcome> {
    solve_with(prob, params, init, SolveOptions::new(tol, max_iter))
}

pub fn solve_with(prob: &SaddleProblem, params: &TpdvParams, init: PrimalDualState, mut opts: SolveOptions<'_>) -> Result<SolveOutcome> {
    params.validate()?;
    if !(opts.tol > 0.0 && opts.tol < 1.0) {
        return Err(Error::InvalidInput(format!("tolerance {} must lie in (0, 1)", opts.tol)));
    }
    check_dim("initial u", prob.n_primal(), init.u.len())?;
    check_dim("initial p", prob.n_dual(), init.p.len())?;
    check_dim("initial I_Q", prob.n_dual(), init.iq.dim())?;
    if params.param_mode == ParamMode::Theoretical {
        sample_unit_convexity(prob, &init.u)?;
    }
    let start = Instant::now();
    let measure = |s: &PrimalDualState| -> Result<(f64, f64, Option<f64>)> {
        let (ru, rp) = prob.residual(&s.u, &s.p);
        let lyap = match opts.reference {
            Some(r) => Some(lyapunov(s, r.ustar, r.pstar, prob.f.as_ref())?),
            None => None,
        };
        Ok((vector::norm_inf(&ru), vector::norm_inf(&rp), lyap))
    };
    let (ru0, rp0, lyap0) = measure(&init)?;
    let res0 = ru0.max(rp0);
    let mut rows = vec![RecordRow {
        k: init.k,
        residual_inf: res0,
        residual_u_inf: ru0,
        residual_p_inf: rp0,
        lyapunov: lyap0,
        alpha: 0.0,
        gamma: 0.0,
        vcycles: 0,
    }];
    let mut rate_bounds = Vec::new();
    let mut state = init;
    let scale = vector::norm_inf(&prob.rhs).max(vector::norm_inf(&prob.f.grad(&state.u))).max(1.0);
    let mut status = if res0 <= ROUNDOFF_FLOOR * scale { RunStatus::Converged } else { RunStatus::MaxIter };
    let mut iterations = 0;
    while status == RunStatus::MaxIter && iterations < opts.max_iter {
        let (next, info) = step(&state, prob, params)?;
        iterations += 1;
        if let Some(obs) = opts.observer.as_mut() {
            obs(&state, &next, &info)?;
        }
        if next.k % SPD_PROBE_INTERVAL == 0 {
            let probe = probe_spd(next.iq.as_ref(), 2, next.k as u64);
            if !(probe.min_rayleigh > 0.0) {
                return Err(Error::NotSpd(format!("dual preconditioner lost positivity at iteration {}", next.k)));
            }
        }
        let (ru, rp, lyap) = measure(&next)?;
        let res = ru.max(rp);
        rows.push(RecordRow {
            k: next.k,
            residual_inf: res,
            residual_u_inf: ru,
            residual_p_inf: rp,
            lyapunov: lyap,
            alpha: info.alpha,
            gamma: info.gamma,
            vcycles: info.vcycles,
        });
        if let Some(r) = info.rate {
            rate_bounds.push(r);
        }
        state = next;
        if !res.is_finite() || res > DIVERGENCE_FACTOR * res0 {
            status = RunStatus::Diverged;
        } else if res <= opts.tol * res0 {
            status = RunStatus::Converged;
        }
    }
    let record = ConvergenceRecord {
        label: std::mem::take(&mut opts.label),
        dofs: prob.n_primal() + prob.n_dual(),
        rows,
        status,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok(SolveOutcome { record, state, rate_bounds })
}

/// Warns when sampled Bregman ratios show `μ_{f,I_V} < 1`.
fn sample_unit_convexity(prob: &SaddleProblem, u0: &[f64]) -> Result<()> {
    if prob.f.value(u0).is_none() {
        return Ok(());
    }
    let iv = prob.iv(u0)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xb4e6);
    let mut worst = f64::INFINITY;
    for _ in 0..20 {
        let u: Vec<f64> = u0.iter().map(|x| x + rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = u0.iter().map(|x| x + rng.random_range(-1.0..1.0)).collect();
        let d = vector::sub(&u, &v);
        let denom = 0.5 * weighted_norm_sq(iv.as_ref(), &d)?;
        if denom > 0.0 {
            worst = worst.min(bregman_divergence(prob.f.as_ref(), &u, &v)? / denom);
        }
    }
    if worst < 1.0 - 1e-8 {
        warn!("sampled convexity ratio {worst:.4} in the I_V metric is below 1; theoretical rates may not hold");
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SandwichVerdict {
    Holds,
    Violated,
    HypothesesNotMet,
}

#[derive(Clone, Copy, Debug)]
pub struct SandwichRow {
    pub k: usize,
    /// `ρ(I − I_Q,k⁻¹ I*_Q,k)`
    pub radius_k: f64,
    /// Same at `k + 1`.
    pub radius_next: f64,
    /// `λ_min(½ S_k − 2δ ω/(1−ω) I*_Q,k)`
    pub hyp2_min_eig: f64,
    pub hypotheses_met: bool,
    /// Extreme eigenvalues of `S_k^{-1/2} S̃_k S_k^{-1/2}`.
    pub range: (f64, f64),
    pub verdict: SandwichVerdict,
}

#[derive(Clone, Debug)]
pub struct SandwichReport {
    pub delta: f64,
    pub rows: Vec<SandwichRow>,
}

impl SandwichReport {
    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| r.verdict == SandwichVerdict::Violated).count()
    }
}

fn materialized(op: &SharedOperator) -> Result<DMatrix<f64>> {
    op.materialize()
        .map(|m| m.to_dense())
        .ok_or_else(|| Error::Unsupported("sandwich verification needs materializable operators".into()))
}

fn spectral_radius_defect(iq: &DMatrix<f64>, iqstar: &DMatrix<f64>) -> Result<f64> {
    let eigs = generalized_eigenvalues(iqstar, iq)?;
    Ok(eigs.iter().map(|l| (1.0 - l).abs()).fold(0.0, f64::max))
}

/// Checks the spectral sandwich `(½ − δ) S_k ≼ S̃_k ≼ (3/2 + δ) S_k` along a
/// sequence. `iqstar_seq`, `iq_seq` have one more entry than the others.
pub fn verify_sandwich(
    iqstar_seq: &[SharedOperator],
    iq_seq: &[SharedOperator],
    stilde_seq: &[SharedOperator],
    s_seq: &[SharedOperator],
    omega_seq: &[f64],
    delta: f64,
) -> Result<SandwichReport> {
    let n = s_seq.len();
    check_dim("verify_sandwich stilde", n, stilde_seq.len())?;
    check_dim("verify_sandwich omega", n, omega_seq.len())?;
    check_dim("verify_sandwich iqstar", n + 1, iqstar_seq.len())?;
    check_dim("verify_sandwich iq", n + 1, iq_seq.len())?;
    let bound = delta / (1.0 + delta);
    let mut rows = Vec::with_capacity(n);
    let mut radius = spectral_radius_defect(&materialized(&iq_seq[0])?, &materialized(&iqstar_seq[0])?)?;
    for k in 0..n {
        let iqstar_k = materialized(&iqstar_seq[k])?;
        let radius_next = spectral_radius_defect(&materialized(&iq_seq[k + 1])?, &materialized(&iqstar_seq[k + 1])?)?;
        let s = materialized(&s_seq[k])?;
        let st = materialized(&stilde_seq[k])?;
        let omega = omega_seq[k];
        let c = 2.0 * delta * omega / (1.0 - omega);
        let h2 = &s * 0.5 - &iqstar_k * c;
        let h2 = (&h2 + h2.transpose()) * 0.5;
        let scale = s.amax().max(f64::MIN_POSITIVE);
        let hyp2_min_eig = SymmetricEigen::new(h2).eigenvalues.min();
        let slack = 1e-12;
        let hypotheses_met = radius <= bound + slack && radius_next <= bound + slack && hyp2_min_eig >= -slack * scale;
        let eigs = generalized_eigenvalues(&st, &s)?;
        let range = (eigs[0], eigs[eigs.len() - 1]);
        let verdict = if !hypotheses_met {
            SandwichVerdict::HypothesesNotMet
        } else if range.0 >= 0.5 - delta - 1e-10 && range.1 <= 1.5 + delta + 1e-10 {
            SandwichVerdict::Holds
        } else {
            SandwichVerdict::Violated
        };
        rows.push(SandwichRow { k, radius_k: radius, radius_next, hyp2_min_eig, hypotheses_met, range, verdict });
        radius = radius_next;
    }
    Ok(SandwichReport { delta, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{DiagonalOperator, QuadraticOracle, ScaledIdentity};
    use nalgebra::dmatrix;

    fn tiny_problem() -> (SaddleProblem, Arc<QuadraticOracle>) {
        let f = Arc::new(QuadraticOracle::pure(DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0])).unwrap());
        let b = SparseMatrix::from_dense(&dmatrix![1.0, 1.0]);
        let iv: IvFactory = Arc::new(|_u: &[f64]| Ok(Arc::new(ScaledIdentity::identity(2)) as SharedOperator));
        let prob = SaddleProblem::builder(f.clone(), b.clone(), vec![1.0], iv, Arc::new(ExactSchur::new(&b)))
            .implicit(Arc::new(QuadraticImplicit::new(f.clone())))
            .build()
            .unwrap();
        (prob, f)
    }

    fn op(d: Vec<f64>) -> SharedOperator {
        Arc::new(DiagonalOperator::new(d).unwrap())
    }

    #[test]
    fn theorem_params_examples() {
        let t = compute_theorem_params(1.0, 1.0, 1.0).unwrap();
        assert_eq!((t.beta, t.gamma, t.alpha), (0.5, 0.5, 1.0 / 16.0));
        let t = compute_theorem_params(2.0, 1.0, 2.0).unwrap();
        assert_eq!((t.beta, t.gamma, t.alpha), (0.25, 0.25, 1.0 / 128.0));
        let t4 = compute_theorem_params(4.0, 1.0, 2.0).unwrap();
        assert_eq!(t4.beta, t.beta / 2.0);
        assert!(compute_theorem_params(0.0, 1.0, 1.0).is_err());
        assert!(compute_theorem_params(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn update_iq_examples() {
        let iq = op(vec![1.0]);
        let st = op(vec![3.0]);
        assert!(Arc::ptr_eq(&update_iq(&iq, &st, 0.0, 5.0).unwrap(), &iq));
        assert!(Arc::ptr_eq(&update_iq(&iq, &iq, 0.7, 1.4).unwrap(), &iq));
        let mid = update_iq(&iq, &st, 1.0, 1.0).unwrap();
        assert_eq!(mid.apply(&[1.0]), vec![2.0]);
        assert!((mid.inv_apply(&[1.0]).unwrap()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_step_is_identity() {
        let (prob, _) = tiny_problem();
        let iq: SharedOperator = Arc::new(ScaledIdentity::identity(1));
        let s0 = PrimalDualState::new(vec![0.3, -0.2], vec![0.5], iq.clone()).unwrap();
        let params = TpdvParams { alpha: 0.0, gamma: 0.1, beta: None, mode: Mode::Explicit, param_mode: ParamMode::Practical };
        let s1 = tpdv_step(&s0, &prob, &params).unwrap();
        assert_eq!((s1.u, s1.p), (s0.u, s0.p));
        assert!(Arc::ptr_eq(&s1.iq, &iq));
    }

    #[test]
    fn uzawa_matches_explicit_with_unit_step() {
        let (prob, _) = tiny_problem();
        let iq: SharedOperator = Arc::new(ScaledIdentity::identity(1));
        let s0 = PrimalDualState::new(vec![0.1, 0.4], vec![-0.3], iq).unwrap();
        let uz = tpdv_step(&s0, &prob, &TpdvParams::practical(Mode::Uzawa, 0.2, 0.5).unwrap()).unwrap();
        let ex = tpdv_step(&s0, &prob, &TpdvParams::practical(Mode::Explicit, 1.0, 0.5).unwrap()).unwrap();
        assert_eq!((uz.u, uz.p), (ex.u, ex.p));
    }

    #[test]
    fn imex_step_is_linear_solve() {
        let (prob, _) = tiny_problem();
        let iq: SharedOperator = Arc::new(ScaledIdentity::identity(1));
        let s0 = PrimalDualState::new(vec![0.1, 0.4], vec![-0.3], iq).unwrap();
        let params = TpdvParams::practical(Mode::Imex, 0.5, 0.5).unwrap();
        let s1 = tpdv_imex_step(&s0, &prob, &params).unwrap();
        // (I + αA) u = u_k − α Bᵀ p_next
        for (i, a) in [1.0, 2.0].iter().enumerate() {
            let expected = (s0.u[i] - 0.5 * s1.p[0]) / (1.0 + 0.5 * a);
            assert!((s1.u[i] - expected).abs() < 1e-15);
        }
        assert!(tpdv_imex_step(&s0, &prob, &TpdvParams::practical(Mode::Explicit, 0.5, 0.5).unwrap()).is_err());
    }

    #[test]
    fn lyapunov_example() {
        let f = QuadraticOracle::pure(DMatrix::identity(2, 2)).unwrap();
        let s = PrimalDualState::new(vec![1.0, 0.0], vec![0.0, 1.0], Arc::new(ScaledIdentity::identity(2))).unwrap();
        assert_eq!(lyapunov(&s, &[0.0, 0.0], &[0.0, 0.0], &f).unwrap(), 1.0);
    }

    #[test]
    fn csv_layout() {
        let record = ConvergenceRecord {
            label: "x".into(),
            dofs: 3,
            rows: vec![RecordRow {
                k: 0,
                residual_inf: 1.0,
                residual_u_inf: 1.0,
                residual_p_inf: 0.5,
                lyapunov: None,
                alpha: 0.0,
                gamma: 0.0,
                vcycles: 0,
            }],
            status: RunStatus::Converged,
            seconds: 0.0,
        };
        assert_eq!(record.to_csv(), format!("{RECORD_CSV_HEADER}\n0,1e0,1e0,5e-1,,0e0,0e0,0\n"));
    }

    #[test]
    fn already_converged_start() {
        let (prob, f) = tiny_problem();
        // saddle of ½uᵀdiag(1,2)u s.t. u1 + u2 = 1: u = (2/3, 1/3), p = −2/3
        let ustar = vec![2.0 / 3.0, 1.0 / 3.0];
        let pstar = vec![-2.0 / 3.0];
        let iq: SharedOperator = Arc::new(ScaledIdentity::new(1, 1.5).unwrap());
        let init = PrimalDualState::new(ustar.clone(), pstar.clone(), iq).unwrap();
        let out = solve_with(
            &prob,
            &TpdvParams::practical(Mode::Explicit, 0.5, 0.5).unwrap(),
            init,
            SolveOptions::new(1e-6, 100).reference(&ustar, &pstar),
        )
        .unwrap();
        assert!(out.record.iterations() <= 1);
        assert_eq!(out.record.status, RunStatus::Converged);
        let _ = f;
    }

    #[test]
    fn rejects_rank_deficient_constraint() {
        let f = Arc::new(QuadraticOracle::pure(DMatrix::identity(2, 2)).unwrap());
        let b = SparseMatrix::from_dense(&dmatrix![1.0, 1.0; 2.0, 2.0]);
        let iv: IvFactory = Arc::new(|_u: &[f64]| Ok(Arc::new(ScaledIdentity::identity(2)) as SharedOperator));
        assert!(SaddleProblem::builder(f, b.clone(), vec![0.0, 0.0], iv, Arc::new(ExactSchur::new(&b))).build().is_err());
    }
}
