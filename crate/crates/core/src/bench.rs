//! Problem catalog and experiment orchestration.
//!
//! Random quadratic saddle problems are drawn from a [`ChaCha8Rng`] seeded
//! with `seed + attempt`. The draws happen in this order, each from the
//! standard normal distribution and each matrix in row-major order:
//!
//! 1. an `n × n` matrix whose QR factor `Q` gives `A = Q Λ Qᵀ`, where
//!    `Λ = diag(κ^{i/(n−1) − 1/2})`;
//! 2. the linear term `c`;
//! 3. the `m × n` constraint matrix `B`;
//! 4. a feasible point `u_f`, giving `b = B u_f`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::darcy::{run_benchmark, BenchmarkParams, DarcyCoeffs, Variant};
use crate::error::{check_dim, Error, Result};
use crate::flowsim::{check_decay, integrate, DecayReport, FlowGamma, FlowProblem, FlowState, MatrixOfTime};
use crate::numerics::{vector, DenseSpd, QuadraticOracle, ScaledIdentity, SharedOperator, SparseMatrix};
use crate::tpdv::{
    solve_with, ConvergenceRecord, ExactSchur, IvFactory, ParamMode, PrimalDualState, QuadraticImplicit, RunStatus,
    SaddleProblem, SolveOptions, TpdvParams,
};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "TPDV_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "tpdv-output";
pub const MAX_GENERATION_ATTEMPTS: u64 = 10;
/// Bound on `‖(Au* − c + Bᵀp*, Bu* − b)‖∞` for generated problems.
pub const KKT_TOLERANCE: f64 = 1e-11;
/// Relative slack of the flow decay check.
pub const FLOW_DECAY_SLACK: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleMode {
    /// `I_V = I`.
    Raw,
    /// `I_V = λ_min(A) I`, so that `f` is 1-convex in the `I_V` metric.
    UnitMu,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSaddleSpec {
    pub n: usize,
    pub m: usize,
    pub cond_a: f64,
    pub seed: u64,
    pub scale_mode: ScaleMode,
}

impl QuadraticSaddleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config { field: "dim", message: format!("need at least 2 primal unknowns, got {}", self.n) });
        }
        if self.m == 0 || self.m >= self.n {
            return Err(Error::Config {
                field: "mdim",
                message: format!("need 1 <= m < n = {}, got {}", self.n, self.m),
            });
        }
        if !(self.cond_a >= 1.0 && self.cond_a.is_finite()) {
            return Err(Error::Config { field: "cond", message: format!("must be finite and >= 1, got {}", self.cond_a) });
        }
        Ok(())
    }
}

/// A quadratic saddle problem with its exact solution.
#[derive(Clone)]
pub struct QuadraticSaddle {
    pub problem: SaddleProblem,
    pub f: Arc<QuadraticOracle>,
    pub b_dense: DMatrix<f64>,
    pub ustar: Vec<f64>,
    pub pstar: Vec<f64>,
    /// `I_V = iv_scale · I`.
    pub iv_scale: f64,
    /// Seed of the accepted draw.
    pub seed: u64,
}

impl QuadraticSaddle {
    /// `S = B I_V⁻¹ Bᵀ`
    pub fn schur(&self) -> DMatrix<f64> {
        let s = &self.b_dense * self.b_dense.transpose() / self.iv_scale;
        (&s + s.transpose()) * 0.5
    }

    /// `u₀ = 0`, `p₀ = 0`, `I_Q₀ = S`.
    pub fn initial_state(&self) -> Result<PrimalDualState> {
        let iq: SharedOperator = Arc::new(DenseSpd::new(self.schur())?);
        PrimalDualState::new(vec![0.0; self.ustar.len()], vec![0.0; self.b_dense.nrows()], iq)
    }

    pub fn kkt_residual(&self, u: &[f64], p: &[f64]) -> f64 {
        let (ru, rp) = self.problem.residual(u, p);
        vector::norm_inf(&ru).max(vector::norm_inf(&rp))
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn full_row_rank(b: &DMatrix<f64>) -> bool {
    b.rank(1e-10 * b.amax().max(f64::MIN_POSITIVE)) == b.nrows()
}

/// Draws `f(u) = ½uᵀAu − cᵀu` and `Bu = b` from `spec`, redrawing with the
/// next seed when `B` is rank deficient.
pub fn make_quadratic_saddle(spec: &QuadraticSaddleSpec) -> Result<QuadraticSaddle> {
    spec.validate()?;
    let (n, m) = (spec.n, spec.m);
    for attempt in 0..MAX_GENERATION_ATTEMPTS {
        let seed = spec.seed.wrapping_add(attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = gaussian_matrix(&mut rng, n, n).qr().q();
        let lambda = DVector::from_fn(n, |i, _| spec.cond_a.powf(i as f64 / (n - 1) as f64 - 0.5));
        let a = &q * DMatrix::from_diagonal(&lambda) * q.transpose();
        let a = (&a + a.transpose()) * 0.5;
        let c = gaussian_vector(&mut rng, n);
        let b = gaussian_matrix(&mut rng, m, n);
        let u_feas = gaussian_vector(&mut rng, n);
        if !full_row_rank(&b) {
            log::debug!("seed {seed}: constraint matrix rank deficient, redrawing");
            continue;
        }
        let rhs = (&b * DVector::from_column_slice(&u_feas)).as_slice().to_vec();
        let mut out = quadratic_saddle_from_parts(a, c, b, rhs, spec.scale_mode)?;
        out.seed = seed;
        let eigs = out.f.hessian().symmetric_eigenvalues();
        let cond = eigs.max() / eigs.min();
        if (cond / spec.cond_a - 1.0).abs() > 0.05 {
            return Err(Error::InvalidInput(format!("generated condition number {cond} misses target {}", spec.cond_a)));
        }
        return Ok(out);
    }
    Err(Error::Singular(format!(
        "no full-rank constraint matrix in {MAX_GENERATION_ATTEMPTS} draws from seed {}",
        spec.seed
    )))
}

/// Builds the saddle problem for given dense data and solves its KKT system
/// `[A Bᵀ; B 0][u; p] = [c; b]`.
pub fn quadratic_saddle_from_parts(
    a: DMatrix<f64>,
    c: Vec<f64>,
    b: DMatrix<f64>,
    rhs: Vec<f64>,
    scale_mode: ScaleMode,
) -> Result<QuadraticSaddle> {
    let (m, n) = b.shape();
    check_dim("quadratic saddle A", n, a.nrows())?;
    check_dim("quadratic saddle c", n, c.len())?;
    check_dim("quadratic saddle b", m, rhs.len())?;
    if m == 0 || m >= n {
        return Err(Error::InvalidInput(format!("need 1 <= m < n, got m={m}, n={n}")));
    }
    if !full_row_rank(&b) {
        return Err(Error::Singular("constraint matrix is rank deficient".into()));
    }
    let f = Arc::new(QuadraticOracle::new(a.clone(), c.clone())?);
    let iv_scale = match scale_mode {
        ScaleMode::Raw => 1.0,
        ScaleMode::UnitMu => f.hessian().symmetric_eigenvalues().min(),
    };
    let (ustar, pstar) = solve_kkt(&a, &c, &b, &rhs)?;
    let b_sparse = SparseMatrix::from_dense(&b);
    let iv: SharedOperator = Arc::new(ScaledIdentity::new(n, iv_scale)?);
    let iv_factory: IvFactory = Arc::new(move |_| Ok(iv.clone()));
    let problem = SaddleProblem::builder(f.clone(), b_sparse.clone(), rhs, iv_factory, Arc::new(ExactSchur::new(&b_sparse)))
        .implicit(Arc::new(QuadraticImplicit::new(f.clone())))
        .build()?;
    let out = QuadraticSaddle { problem, f, b_dense: b, ustar, pstar, iv_scale, seed: 0 };
    let res = out.kkt_residual(&out.ustar, &out.pstar);
    if !(res <= KKT_TOLERANCE) {
        return Err(Error::Singular(format!("KKT residual {res:e} exceeds {KKT_TOLERANCE:e}")));
    }
    Ok(out)
}

fn solve_kkt(a: &DMatrix<f64>, c: &[f64], b: &DMatrix<f64>, rhs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (m, n) = b.shape();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(a);
    k.view_mut((0, n), (n, m)).copy_from(&b.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(b);
    let r = DVector::from_iterator(n + m, c.iter().chain(rhs).copied());
    let lu = k.clone().lu();
    let mut x = lu.solve(&r).ok_or_else(|| Error::Singular("KKT matrix".into()))?;
    let defect = &r - &k * &x;
    x += lu.solve(&defect).ok_or_else(|| Error::Singular("KKT matrix".into()))?;
    Ok((x.rows(0, n).as_slice().to_vec(), x.rows(n, m).as_slice().to_vec()))
}

/// The continuous flow of a quadratic saddle with `S̃ = S`, `γ` from the
/// decay theorem and `I_Q(0) = I`.
pub fn quadratic_flow_problem(q: &QuadraticSaddle) -> Result<(FlowProblem, FlowState)> {
    let n = q.ustar.len();
    let m = q.pstar.len();
    let iv = DMatrix::identity(n, n) * q.iv_scale;
    let s = q.schur();
    let iv_of_t: MatrixOfTime = Arc::new(move |_| iv.clone());
    let s_of_t: MatrixOfTime = Arc::new(move |_| s.clone());
    let prob = FlowProblem::new(q.f.clone(), q.b_dense.clone(), q.problem.rhs.clone(), iv_of_t, s_of_t, FlowGamma::Theorem)?
        .time_invariant()?;
    let init = FlowState { u: vec![0.0; n], p: vec![0.0; m], iq: DMatrix::identity(m, m), t: 0.0 };
    Ok((prob, init))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Quadratic,
    Darcy,
    Flow,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Quadratic => "quadratic",
            ProblemKind::Darcy => "darcy",
            ProblemKind::Flow => "flow",
        }
    }
}

/// One experiment. Unset optional fields take problem-dependent defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub algo: Variant,
    /// Theoretical for quadratic problems, practical for Darcy.
    pub param_mode: Option<ParamMode>,
    /// Darcy mesh subdivisions per side; `h = 2/n`.
    pub n: Vec<usize>,
    pub dim: usize,
    pub mdim: usize,
    pub cond: f64,
    pub scale_mode: ScaleMode,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub tol: f64,
    pub max_iter: Option<usize>,
    pub mg_cycles: usize,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub flow_tend: f64,
    pub flow_dt: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Quadratic,
            algo: Variant::Tpdv,
            param_mode: None,
            n: vec![64],
            dim: 10,
            mdim: 4,
            cond: 4.0,
            scale_mode: ScaleMode::UnitMu,
            alpha: None,
            gamma: None,
            tol: 1e-6,
            max_iter: None,
            mg_cycles: 1,
            output: None,
            seed: 0,
            flow_tend: 10.0,
            flow_dt: 1e-3,
        }
    }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config { field, message: format!("must be positive and finite, got {v}") })
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(a) = self.alpha {
            positive("alpha", a)?;
        }
        if let Some(g) = self.gamma {
            positive("gamma", g)?;
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Config { field: "tol", message: format!("must lie in (0, 1), got {}", self.tol) });
        }
        if self.max_iter == Some(0) {
            return Err(Error::Config { field: "max_iter", message: "must be at least 1".into() });
        }
        if self.mg_cycles == 0 {
            return Err(Error::Config { field: "mg_cycles", message: "must be at least 1".into() });
        }
        positive("flow_dt", self.flow_dt)?;
        if !(self.flow_tend >= 0.0 && self.flow_tend.is_finite()) {
            return Err(Error::Config { field: "flow_tend", message: format!("must be finite and >= 0, got {}", self.flow_tend) });
        }
        match self.problem {
            ProblemKind::Darcy => {
                if self.n.is_empty() || self.n.iter().any(|&n| n < 2) {
                    return Err(Error::Config { field: "n", message: format!("need mesh sizes >= 2, got {:?}", self.n) });
                }
                if self.param_mode == Some(ParamMode::Theoretical) {
                    return Err(Error::Config {
                        field: "param_mode",
                        message: "theoretical parameters need global convexity bounds, unavailable for Darcy".into(),
                    });
                }
            }
            ProblemKind::Quadratic | ProblemKind::Flow => self.quadratic_spec().validate()?,
        }
        Ok(())
    }

    pub fn quadratic_spec(&self) -> QuadraticSaddleSpec {
        QuadraticSaddleSpec { n: self.dim, m: self.mdim, cond_a: self.cond, seed: self.seed, scale_mode: self.scale_mode }
    }

    pub fn resolved_param_mode(&self) -> ParamMode {
        self.param_mode.unwrap_or(match self.problem {
            ProblemKind::Quadratic => ParamMode::Theoretical,
            _ => ParamMode::Practical,
        })
    }

    pub fn resolved_max_iter(&self) -> usize {
        self.max_iter.unwrap_or(match self.resolved_param_mode() {
            ParamMode::Theoretical => 200_000,
            ParamMode::Practical => 1000,
        })
    }

    pub fn tpdv_params(&self) -> Result<TpdvParams> {
        let mode = self.algo.mode();
        match self.resolved_param_mode() {
            ParamMode::Theoretical => Ok(TpdvParams::theoretical(mode)),
            ParamMode::Practical => {
                let (a, g) = self.algo.default_params();
                TpdvParams::practical(mode, self.alpha.unwrap_or(a), self.gamma.unwrap_or(g))
            }
        }
    }

    /// `output`, else the directory named by [`OUTPUT_DIR_ENV`], else [`DEFAULT_OUTPUT_DIR`].
    pub fn output_dir(&self) -> PathBuf {
        self.output
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    /// Converged only if every requested run converged.
    pub status: RunStatus,
    /// One summary line per run.
    pub lines: Vec<String>,
    pub records: Vec<ConvergenceRecord>,
    pub decay: Option<DecayReport>,
    pub artifacts: Vec<PathBuf>,
}

impl RunSummary {
    pub fn success(&self) -> bool {
        self.status == RunStatus::Converged
    }
}

fn write_artifact(dir: &Path, name: &str, contents: &str, artifacts: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    artifacts.push(path);
    Ok(())
}

fn combine(a: RunStatus, b: RunStatus) -> RunStatus {
    match (a, b) {
        (RunStatus::Diverged, _) | (_, RunStatus::Diverged) => RunStatus::Diverged,
        (RunStatus::MaxIter, _) | (_, RunStatus::MaxIter) => RunStatus::MaxIter,
        _ => RunStatus::Converged,
    }
}

fn record_line(r: &ConvergenceRecord) -> String {
    format!("{}: {}, {} iterations, final residual {:e}", r.label, r.status, r.iterations(), r.final_residual())
}

/// Executes `config` and writes its CSV files into [`RunConfig::output_dir`].
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let dir = config.output_dir();
    fs::create_dir_all(&dir)?;
    let mut artifacts = Vec::new();
    match config.problem {
        ProblemKind::Quadratic => {
            let q = make_quadratic_saddle(&config.quadratic_spec())?;
            let label = format!("quadratic {} seed={}", config.algo.name(), q.seed);
            let opts = SolveOptions::new(config.tol, config.resolved_max_iter()).reference(&q.ustar, &q.pstar).label(label);
            let out = solve_with(&q.problem, &config.tpdv_params()?, q.initial_state()?, opts)?;
            let name = format!("quadratic-{}-seed{}.csv", config.algo.name(), config.seed);
            write_artifact(&dir, &name, &out.record.to_csv(), &mut artifacts)?;
            Ok(RunSummary {
                status: out.record.status,
                lines: vec![record_line(&out.record)],
                records: vec![out.record],
                decay: None,
                artifacts,
            })
        }
        ProblemKind::Darcy => {
            let (alpha, gamma) = config.algo.default_params();
            let params = BenchmarkParams {
                alpha: config.alpha.unwrap_or(alpha),
                gamma: config.gamma.unwrap_or(gamma),
                mg_cycles: config.mg_cycles,
                tol: config.tol,
                max_iter: config.resolved_max_iter(),
                coeffs: DarcyCoeffs::default(),
            };
            let table = run_benchmark(config.algo, &config.n, &params)?;
            let mut status = RunStatus::Converged;
            let mut lines = Vec::new();
            let mut records = Vec::new();
            for (row, out) in table.rows.iter().zip(&table.outcomes) {
                let name = format!("darcy-{}-n{}.csv", config.algo.name(), row.n);
                write_artifact(&dir, &name, &out.record.to_csv(), &mut artifacts)?;
                status = combine(status, out.record.status);
                lines.push(record_line(&out.record));
                records.push(out.record.clone());
            }
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            let csv = String::from_utf8(buf).expect("csv is ascii");
            write_artifact(&dir, &format!("darcy-{}-benchmark.csv", config.algo.name()), &csv, &mut artifacts)?;
            Ok(RunSummary { status, lines, records, decay: None, artifacts })
        }
        ProblemKind::Flow => {
            let q = make_quadratic_saddle(&config.quadratic_spec())?;
            let (prob, init) = quadratic_flow_problem(&q)?;
            let traj = integrate(&prob, init, config.flow_tend, config.flow_dt)?;
            let report = check_decay(&traj, &q.ustar, &q.pstar, &prob, FLOW_DECAY_SLACK)?;
            write_artifact(&dir, &format!("flow-seed{}.csv", config.seed), &report.to_csv(), &mut artifacts)?;
            let ok = traj.aborted.is_none() && report.hypothesis_met && report.violations == 0;
            let status = if ok { RunStatus::Converged } else { RunStatus::Diverged };
            let last = report.rows.last().map_or(f64::NAN, |r| r.e);
            let mut line = format!(
                "flow seed={}: {}, {} samples, {} violations, final E {last:e}",
                q.seed,
                if ok { "decayed" } else { "failed" },
                report.rows.len(),
                report.violations
            );
            if let Some(reason) = &traj.aborted {
                line += &format!(", aborted: {reason}");
            }
            Ok(RunSummary { status, lines: vec![line], records: Vec::new(), decay: Some(report), artifacts })
        }
    }
}

/// Aligned table of runs sorted by dofs, with `ρ̂ = (E_K/E_0)^{1/K}` when
/// Lyapunov values were recorded.
pub fn report(records: &[ConvergenceRecord]) -> String {
    let mut sorted: Vec<&ConvergenceRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.dofs);
    let width = sorted.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
    let mut s = format!(
        "{:<width$} {:>9} {:>10} {:>8} {:>9} {:>10} {:>9}\n",
        "label", "dofs", "iterations", "vcycles", "seconds", "status", "rho_hat"
    );
    for r in sorted {
        let rho = r.empirical_rate().map(|v| format!("{v:.6}")).unwrap_or_default();
        s += &format!(
            "{:<width$} {:>9} {:>10} {:>8} {:>9.3} {:>10} {:>9}\n",
            r.label,
            r.dofs,
            r.iterations(),
            r.total_vcycles(),
            r.seconds,
            r.status.to_string(),
            rho
        );
    }
    s
}
