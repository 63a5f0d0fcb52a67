//! Classical Runge–Kutta integration of the continuous TPDv flow
//!
//! ```text
//! u'   = I_V⁻¹ (−∇f(u) − Bᵀp)
//! p'   = I_Q⁻¹ (Bu − b − B I_V⁻¹ (∇f(u) + Bᵀp))
//! I_Q' = γ (S̃ − I_Q)
//! ```
//!
//! with dense matrices, for checking the exponential decay of the Lyapunov
//! function on small problems.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{bregman_divergence, generalized_eigenvalues, vector, DenseSpd, GradientOracle};

pub type MatrixOfTime = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
pub enum FlowGamma {
    /// `γ(t) = β(t) μ_{S,S̃}(t)`
    Theorem,
    Given(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

#[derive(Clone)]
pub struct FlowProblem {
    pub f: Arc<dyn GradientOracle>,
    pub b: DMatrix<f64>,
    pub rhs: Vec<f64>,
    pub iv_of_t: MatrixOfTime,
    pub stilde_of_t: MatrixOfTime,
    pub gamma: FlowGamma,
    frozen: Option<Arc<Frozen>>,
}

/// Factorizations and rates of a problem whose metrics do not depend on `t`.
struct Frozen {
    iv: Cholesky<f64, Dyn>,
    stilde: DMatrix<f64>,
    rates: FlowRates,
    gamma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub iq: DMatrix<f64>,
    pub t: f64,
}

#[derive(Clone, Debug)]
pub struct FlowRhs {
    pub du: Vec<f64>,
    pub dp: Vec<f64>,
    pub diq: DMatrix<f64>,
}

/// Convexity data along the flow at one time.
#[derive(Clone, Copy, Debug)]
pub struct FlowRates {
    pub mu_f: f64,
    pub l_f: f64,
    /// `(μ_f − ½) / (μ_f L_f)`
    pub beta: f64,
    /// `λ_min(S̃⁻¹ S)`
    pub mu_s: f64,
    /// `β min{μ_f, μ_{S,S̃}}`
    pub mu_tilde: f64,
}

fn chol(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

fn solve(c: &Cholesky<f64, Dyn>, x: &[f64]) -> Vec<f64> {
    c.solve(&DVector::from_column_slice(x)).as_slice().to_vec()
}

fn matvec(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(x)).as_slice().to_vec()
}

fn matvec_t(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (m.transpose() * DVector::from_column_slice(x)).as_slice().to_vec()
}

impl FlowProblem {
    pub fn new(
        f: Arc<dyn GradientOracle>,
        b: DMatrix<f64>,
        rhs: Vec<f64>,
        iv_of_t: MatrixOfTime,
        stilde_of_t: MatrixOfTime,
        gamma: FlowGamma,
    ) -> Result<Self> {
        check_dim("FlowProblem B cols", f.dim(), b.ncols())?;
        check_dim("FlowProblem b", b.nrows(), rhs.len())?;
        Ok(Self { f, b, rhs, iv_of_t, stilde_of_t, gamma, frozen: None })
    }

    /// Declares `I_V` and `S̃` constant in time; their factorizations and the
    /// rates are then computed once, at `t = 0`.
    pub fn time_invariant(mut self) -> Result<Self> {
        self.frozen = None;
        let frozen = Frozen {
            iv: chol(&(self.iv_of_t)(0.0), "I_V")?,
            stilde: (self.stilde_of_t)(0.0),
            rates: self.rates(0.0)?,
            gamma: self.gamma_at(0.0)?,
        };
        self.frozen = Some(Arc::new(frozen));
        Ok(self)
    }

    /// `S(t) = B I_V(t)⁻¹ Bᵀ`
    pub fn schur(&self, t: f64) -> Result<DMatrix<f64>> {
        let c = chol(&(self.iv_of_t)(t), "I_V")?;
        let s = &self.b * c.solve(&self.b.transpose());
        Ok((&s + s.transpose()) * 0.5)
    }

    pub fn rates(&self, t: f64) -> Result<FlowRates> {
        if let Some(fz) = &self.frozen {
            return Ok(fz.rates);
        }
        let iv = DenseSpd::new((self.iv_of_t)(t))?;
        let bounds = self
            .f
            .bounds_in(&iv)
            .ok_or_else(|| Error::Unsupported("flow rates need convexity bounds of f".into()))?;
        let s_eigs = generalized_eigenvalues(&self.schur(t)?, &(self.stilde_of_t)(t))?;
        let (mu_f, l_f, mu_s) = (bounds.mu, bounds.lip, s_eigs[0]);
        let beta = (mu_f - 0.5) / (mu_f * l_f);
        Ok(FlowRates { mu_f, l_f, beta, mu_s, mu_tilde: beta * mu_f.min(mu_s) })
    }

    pub fn gamma_at(&self, t: f64) -> Result<f64> {
        if let Some(fz) = &self.frozen {
            return Ok(fz.gamma);
        }
        let g = match &self.gamma {
            FlowGamma::Theorem => {
                let r = self.rates(t)?;
                r.beta * r.mu_s
            }
            FlowGamma::Given(g) => g(t),
        };
        if !(g > 0.0) {
            return Err(Error::InvalidInput(format!("gamma({t}) = {g} must be positive")));
        }
        Ok(g)
    }
}

/// Time derivative of `(u, p, I_Q)`.
pub fn flow_rhs(state: &FlowState, prob: &FlowProblem) -> Result<FlowRhs> {
    check_dim("flow_rhs u", prob.b.ncols(), state.u.len())?;
    check_dim("flow_rhs p", prob.b.nrows(), state.p.len())?;
    check_dim("flow_rhs I_Q", prob.b.nrows(), state.iq.nrows())?;
    let iv_owned;
    let iv = match &prob.frozen {
        Some(fz) => &fz.iv,
        None => {
            iv_owned = chol(&(prob.iv_of_t)(state.t), "I_V")?;
            &iv_owned
        }
    };
    let iq = chol(&state.iq, "I_Q")?;
    let mut g = prob.f.grad(&state.u);
    vector::axpy(1.0, &matvec_t(&prob.b, &state.p), &mut g);
    let w = solve(iv, &g);
    let du = vector::scaled(-1.0, &w);
    let mut gp = vector::sub(&matvec(&prob.b, &state.u), &prob.rhs);
    vector::axpy(-1.0, &matvec(&prob.b, &w), &mut gp);
    let dp = solve(&iq, &gp);
    let gamma = prob.gamma_at(state.t)?;
    let diq = match &prob.frozen {
        Some(fz) => (&fz.stilde - &state.iq) * gamma,
        None => ((prob.stilde_of_t)(state.t) - &state.iq) * gamma,
    };
    Ok(FlowRhs { du, dp, diq })
}

fn advance(s: &FlowState, d: &FlowRhs, h: f64) -> FlowState {
    let mut u = s.u.clone();
    vector::axpy(h, &d.du, &mut u);
    let mut p = s.p.clone();
    vector::axpy(h, &d.dp, &mut p);
    FlowState { u, p, iq: &s.iq + &d.diq * h, t: s.t + h }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub samples: Vec<FlowState>,
    /// Why integration stopped early, if it did; `samples` ends at the last valid state.
    pub aborted: Option<String>,
}

/// RK4 with fixed step `dt` up to `t_end`; `I_Q` must stay SPD at every step.
pub fn integrate(prob: &FlowProblem, init: FlowState, t_end: f64, dt: f64) -> Result<Trajectory> {
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidInput(format!("need dt > 0 and t_end >= 0, got dt={dt}, t_end={t_end}")));
    }
    let steps = (t_end / dt).round() as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    samples.push(init);
    for _ in 0..steps {
        let s = samples.last().expect("nonempty");
        let next = match rk4_step(prob, s, dt) {
            Ok(n) => n,
            Err(e) => return Ok(Trajectory { samples, aborted: Some(e.to_string()) }),
        };
        let sym = (&next.iq - next.iq.transpose()).amax();
        if sym > 1e-12 * next.iq.amax() || Cholesky::new(next.iq.clone()).is_none() {
            let reason = Error::SpdLoss { time: next.t, reason: format!("symmetry defect {sym:e} or failed factorization") };
            return Ok(Trajectory { samples, aborted: Some(reason.to_string()) });
        }
        samples.push(next);
    }
    Ok(Trajectory { samples, aborted: None })
}

fn rk4_step(prob: &FlowProblem, s: &FlowState, h: f64) -> Result<FlowState> {
    let k1 = flow_rhs(s, prob)?;
    let k2 = flow_rhs(&advance(s, &k1, h / 2.0), prob)?;
    let k3 = flow_rhs(&advance(s, &k2, h / 2.0), prob)?;
    let k4 = flow_rhs(&advance(s, &k3, h), prob)?;
    let comb = |a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
        (0..a.len()).map(|i| (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]) / 6.0).collect()
    };
    let d = FlowRhs {
        du: comb(&k1.du, &k2.du, &k3.du, &k4.du),
        dp: comb(&k1.dp, &k2.dp, &k3.dp, &k4.dp),
        diq: (&k1.diq + &k2.diq * 2.0 + &k3.diq * 2.0 + &k4.diq) / 6.0,
    };
    let mut next = advance(s, &d, h);
    next.iq = (&next.iq + next.iq.transpose()) * 0.5;
    Ok(next)
}

/// `D_f(u, u*) + ½ ‖p − p*‖²_{I_Q}`
pub fn flow_lyapunov(state: &FlowState, ustar: &[f64], pstar: &[f64], f: &dyn GradientOracle) -> Result<f64> {
    let d = vector::sub(&state.p, pstar);
    Ok(bregman_divergence(f, &state.u, ustar)? + 0.5 * vector::dot(&matvec(&state.iq, &d), &d))
}

#[derive(Clone, Copy, Debug)]
pub struct DecayRow {
    pub t: f64,
    pub e: f64,
    pub bound: f64,
    pub margin: f64,
    pub mu_tilde: f64,
}

#[derive(Clone, Debug)]
pub struct DecayReport {
    pub rows: Vec<DecayRow>,
    /// `μ_f > ½` at every sample.
    pub hypothesis_met: bool,
    pub violations: usize,
}

pub const TRAJECTORY_CSV_HEADER: &str = "t,E,bound,margin";

impl DecayReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{TRAJECTORY_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(out, "{:e},{:e},{:e},{:e}", r.t, r.e, r.bound, r.margin)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is ascii")
    }
}

/// Compares `E(t)` with `exp(−∫₀ᵗ μ̃) E(0)`, the integral by the trapezoid
/// rule on the sample grid. A sample violates when `E > bound (1 + rel_tol)`;
/// nothing is flagged when `μ_f ≤ ½` somewhere.
pub fn check_decay(traj: &Trajectory, ustar: &[f64], pstar: &[f64], prob: &FlowProblem, rel_tol: f64) -> Result<DecayReport> {
    let mut rows = Vec::with_capacity(traj.samples.len());
    let mut hypothesis_met = true;
    let mut integral = 0.0;
    let mut e0 = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (i, s) in traj.samples.iter().enumerate() {
        let rates = prob.rates(s.t)?;
        hypothesis_met &= rates.mu_f > 0.5;
        let e = flow_lyapunov(s, ustar, pstar, prob.f.as_ref())?;
        if i == 0 {
            e0 = e;
        }
        if let Some((t_prev, mu_prev)) = prev {
            integral += 0.5 * (s.t - t_prev) * (mu_prev + rates.mu_tilde);
        }
        prev = Some((s.t, rates.mu_tilde));
        let bound = (-integral).exp() * e0;
        rows.push(DecayRow { t: s.t, e, bound, margin: bound - e, mu_tilde: rates.mu_tilde });
    }
    let violations = if hypothesis_met {
        rows.iter().filter(|r| r.e > r.bound * (1.0 + rel_tol)).count()
    } else {
        0
    };
    Ok(DecayReport { rows, hypothesis_met, violations })
}

/// Full states at the samples nearest to `times`: `t,u_0..,p_0..` per line.
pub fn write_state_dump<W: Write>(traj: &Trajectory, times: &[f64], mut out: W) -> Result<()> {
    for &t in times {
        let s = traj
            .samples
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .ok_or_else(|| Error::InvalidInput("empty trajectory".into()))?;
        let values: Vec<String> = s.u.iter().chain(&s.p).map(|v| format!("{v:e}")).collect();
        writeln!(out, "{:e},{}", s.t, values.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::QuadraticOracle;
    use nalgebra::dmatrix;

    fn scalar_problem(gamma: f64) -> FlowProblem {
        let f = Arc::new(QuadraticOracle::pure(DMatrix::identity(1, 1)).unwrap());
        let id: MatrixOfTime = Arc::new(|_| DMatrix::identity(1, 1));
        FlowProblem::new(f, dmatrix![1.0], vec![0.0], id.clone(), id, FlowGamma::Given(Arc::new(move |_| gamma))).unwrap()
    }

    #[test]
    fn equilibrium_is_static() {
        let prob = scalar_problem(0.5);
        let s = FlowState { u: vec![0.0], p: vec![0.0], iq: DMatrix::identity(1, 1), t: 0.0 };
        let d = flow_rhs(&s, &prob).unwrap();
        assert_eq!((d.du, d.dp, d.diq[(0, 0)]), (vec![0.0], vec![0.0], 0.0));
        let s2 = FlowState { iq: dmatrix![3.0], ..s };
        let d2 = flow_rhs(&s2, &prob).unwrap();
        assert_eq!(d2.diq[(0, 0)], 0.5 * (1.0 - 3.0));
    }

    #[test]
    fn zero_horizon_returns_init() {
        let prob = scalar_problem(0.5);
        let s = FlowState { u: vec![1.0], p: vec![0.5], iq: DMatrix::identity(1, 1), t: 0.0 };
        let traj = integrate(&prob, s.clone(), 0.0, 0.1).unwrap();
        assert_eq!(traj.samples, vec![s]);
    }

    #[test]
    fn decoupled_flow_decays() {
        let prob = scalar_problem(0.5);
        let s = FlowState { u: vec![1.0], p: vec![0.5], iq: DMatrix::identity(1, 1), t: 0.0 };
        let traj = integrate(&prob, s, 5.0, 0.01).unwrap();
        let e: Vec<f64> = traj.samples.iter().map(|s| flow_lyapunov(s, &[0.0], &[0.0], prob.f.as_ref()).unwrap()).collect();
        assert!(e.windows(2).all(|w| w[1] <= w[0]));
        assert!(e.last().unwrap() < &(1e-2 * e[0]));
    }

    #[test]
    fn iq_relaxes_exponentially() {
        let prob = scalar_problem(0.7);
        let s = FlowState { u: vec![0.0], p: vec![0.0], iq: dmatrix![4.0], t: 0.0 };
        let traj = integrate(&prob, s, 2.0, 1e-3).unwrap();
        let last = traj.samples.last().unwrap();
        let exact = 1.0 + 3.0 * (-0.7 * last.t).exp();
        assert!((last.iq[(0, 0)] - exact).abs() < 1e-6);
    }

    #[test]
    fn state_dump_picks_nearest() {
        let prob = scalar_problem(0.5);
        let s = FlowState { u: vec![1.0], p: vec![0.5], iq: DMatrix::identity(1, 1), t: 0.0 };
        let traj = integrate(&prob, s, 1.0, 0.5).unwrap();
        let mut buf = Vec::new();
        write_state_dump(&traj, &[0.0, 0.9], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("0e0,1e0,5e-1\n1e0,"));
    }
}
