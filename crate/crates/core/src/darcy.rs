//! Darcy–Forchheimer flow on `(-1,1)²` with the mixed P0²–P1 pair.
//!
//! The velocity minimizes
//! `f(u) = Σ_T |T| ((μ/ρ) ½ u_Tᵀ K⁻¹ u_T + (β/ρ) |u_T|³ / 3) − (f, u)`
//! subject to `B u = g̃`, so `∇f(u) = M₀^{σ(u)} u − f_u` with
//! `σ(u) = (μ K⁻¹ + β |u| I) / ρ`.
//!
//! Preconditioners: `I_V,k = M₀^{σ_k}`, `I*_Q,0 = S_0`,
//! `I*_Q,k+1 = ω I*_Q,k + (1 − ω) S_k` with `S_k = B (M₀^{σ_k})⁻¹ Bᵀ`, and
//! `I_Q,k⁻¹` is `m` V-cycles on `I*_Q,k`.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::fem2d::{
    apply_zero_mean, assemble_rhs, assemble_variable_laplacian, build_structured_mesh, invert2, ElementWeight,
    FemOperators, Mesh, Point, RhsVectors, Tensor2,
};
use crate::multigrid::{build_hierarchy_from_prolongations, default_levels, mg_inverse, p1_prolongation};
use crate::numerics::{
    vector, ConvexityBounds, DiagonalOperator, GradientOracle, SharedOperator, SparseMatrix, SparseSpd, SpdOperator,
};
use crate::tpdv::{
    solve_with, DualMetric, ImplicitSubstep, IvFactory, Mode, PrimalDualState, RunStatus, SaddleProblem, SolveOptions,
    SolveOutcome, TpdvParams,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Permeability {
    /// `K = k I`
    Scalar(f64),
    /// Constant SPD tensor.
    Tensor(Tensor2),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DarcyCoeffs {
    pub mu: f64,
    pub rho: f64,
    pub beta_f: f64,
    pub k_perm: Permeability,
}

impl Default for DarcyCoeffs {
    fn default() -> Self {
        Self { mu: 1.0, rho: 1.0, beta_f: 30.0, k_perm: Permeability::Scalar(1.0) }
    }
}

impl DarcyCoeffs {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.rho > 0.0 && self.beta_f >= 0.0) {
            return Err(Error::InvalidInput("coefficients need mu > 0, rho > 0, beta >= 0".into()));
        }
        match self.k_perm {
            Permeability::Scalar(k) if !(k > 0.0 && k.is_finite()) => {
                Err(Error::InvalidInput(format!("permeability {k} must be positive")))
            }
            Permeability::Tensor(k) => {
                let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
                if k[0][0] > 0.0 && det > 0.0 && k[0][1] == k[1][0] {
                    Ok(())
                } else {
                    Err(Error::InvalidInput("permeability tensor is not SPD".into()))
                }
            }
            _ => Ok(()),
        }
    }

    pub fn kinv(&self) -> Tensor2 {
        match self.k_perm {
            Permeability::Scalar(k) => [[1.0 / k, 0.0], [0.0, 1.0 / k]],
            Permeability::Tensor(k) => invert2(&k).expect("validated SPD tensor"),
        }
    }

    /// `σ(w) w` for a single velocity vector.
    pub fn sigma_apply(&self, w: Point) -> Point {
        let ki = self.kinv();
        let mag = w[0].hypot(w[1]);
        [
            (self.mu * (ki[0][0] * w[0] + ki[0][1] * w[1]) + self.beta_f * mag * w[0]) / self.rho,
            (self.mu * (ki[1][0] * w[0] + ki[1][1] * w[1]) + self.beta_f * mag * w[1]) / self.rho,
        ]
    }
}

/// Per-element `σ_T = (μ K⁻¹ + β |u_T| I) / ρ`; scalar when `K` is scalar.
pub fn sigma_of_u(u: &[f64], coeffs: &DarcyCoeffs) -> ElementWeight {
    let n_t = u.len() / 2;
    let mags = (0..n_t).map(|t| u[2 * t].hypot(u[2 * t + 1]));
    match coeffs.k_perm {
        Permeability::Scalar(k) => {
            ElementWeight::Scalar(mags.map(|m| (coeffs.mu / k + coeffs.beta_f * m) / coeffs.rho).collect())
        }
        Permeability::Tensor(_) => {
            let ki = coeffs.kinv();
            ElementWeight::Tensor(
                mags.map(|m| {
                    let d = coeffs.beta_f * m;
                    [
                        [(coeffs.mu * ki[0][0] + d) / coeffs.rho, coeffs.mu * ki[0][1] / coeffs.rho],
                        [coeffs.mu * ki[1][0] / coeffs.rho, (coeffs.mu * ki[1][1] + d) / coeffs.rho],
                    ]
                })
                .collect(),
            )
        }
    }
}

/// Block-diagonal operator with 2×2 SPD blocks.
#[derive(Clone, Debug)]
pub struct BlockDiagonal2 {
    blocks: Vec<Tensor2>,
    inverses: Vec<Tensor2>,
}

impl BlockDiagonal2 {
    pub fn new(blocks: Vec<Tensor2>) -> Result<Self> {
        let inverses = blocks
            .iter()
            .map(|b| invert2(b).ok_or_else(|| Error::NotSpd("singular 2x2 block".into())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks, inverses })
    }
}

fn apply_blocks(blocks: &[Tensor2], x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (t, b) in blocks.iter().enumerate() {
        let (a, c) = (x[2 * t], x[2 * t + 1]);
        y[2 * t] = b[0][0] * a + b[0][1] * c;
        y[2 * t + 1] = b[1][0] * a + b[1][1] * c;
    }
    y
}

impl SpdOperator for BlockDiagonal2 {
    fn dim(&self) -> usize {
        2 * self.blocks.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        apply_blocks(&self.blocks, x)
    }

    fn inv_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("BlockDiagonal2::inv_apply", self.dim(), x.len())?;
        Ok(apply_blocks(&self.inverses, x))
    }

    fn materialize(&self) -> Option<SparseMatrix> {
        let mut triplets = Vec::with_capacity(4 * self.blocks.len());
        for (t, b) in self.blocks.iter().enumerate() {
            for i in 0..2 {
                for j in 0..2 {
                    triplets.push((2 * t + i, 2 * t + j, b[i][j]));
                }
            }
        }
        SparseMatrix::from_triplets(self.dim(), self.dim(), &triplets).ok()
    }
}

/// `M₀^σ` as an operator with its inverse.
pub fn weighted_mass_operator(mesh: &Mesh, sigma: &ElementWeight) -> Result<SharedOperator> {
    match sigma {
        ElementWeight::Scalar(s) => {
            let diag = mesh.areas().iter().zip(s).flat_map(|(a, s)| [s * a, s * a]).collect();
            Ok(Arc::new(DiagonalOperator::new(diag)?))
        }
        ElementWeight::Tensor(k) => {
            let blocks = mesh
                .areas()
                .iter()
                .zip(k)
                .map(|(a, b)| [[a * b[0][0], a * b[0][1]], [a * b[1][0], a * b[1][1]]])
                .collect();
            Ok(Arc::new(BlockDiagonal2::new(blocks)?))
        }
    }
}

/// `S = B (M₀^σ)⁻¹ Bᵀ`.
pub fn schur_complement(mesh: &Mesh, sigma: &ElementWeight) -> Result<SparseMatrix> {
    match sigma {
        ElementWeight::Scalar(s) => assemble_variable_laplacian(mesh, s),
        ElementWeight::Tensor(k) => {
            let grad = crate::fem2d::assemble_gradient(mesh);
            let mut triplets = Vec::with_capacity(4 * k.len());
            for (t, (b, a)) in k.iter().zip(mesh.areas()).enumerate() {
                let inv = invert2(b).ok_or_else(|| Error::NotSpd("singular coefficient block".into()))?;
                for i in 0..2 {
                    for j in 0..2 {
                        triplets.push((2 * t + i, 2 * t + j, a * inv[i][j]));
                    }
                }
            }
            let w = SparseMatrix::from_triplets(grad.n_rows(), grad.n_rows(), &triplets)?;
            grad.transpose().matmul(&w.matmul(&grad)?)
        }
    }
}

/// The convex energy whose minimizer under `Bu = g̃` is the discrete velocity.
pub struct DarcyEnergy {
    areas: Vec<f64>,
    coeffs: DarcyCoeffs,
    fu: Vec<f64>,
}

impl DarcyEnergy {
    pub fn new(mesh: &Mesh, coeffs: DarcyCoeffs, fu: Vec<f64>) -> Result<Self> {
        check_dim("DarcyEnergy load", 2 * mesh.n_triangles(), fu.len())?;
        Ok(Self { areas: mesh.areas().to_vec(), coeffs, fu })
    }
}

impl GradientOracle for DarcyEnergy {
    fn dim(&self) -> usize {
        self.fu.len()
    }

    fn value(&self, u: &[f64]) -> Option<f64> {
        let ki = self.coeffs.kinv();
        let (mr, br) = (self.coeffs.mu / self.coeffs.rho, self.coeffs.beta_f / self.coeffs.rho);
        let mut total = -vector::dot(&self.fu, u);
        for (t, a) in self.areas.iter().enumerate() {
            let (x, y) = (u[2 * t], u[2 * t + 1]);
            let quad = x * (ki[0][0] * x + ki[0][1] * y) + y * (ki[1][0] * x + ki[1][1] * y);
            total += a * (0.5 * mr * quad + br * x.hypot(y).powi(3) / 3.0);
        }
        Some(total)
    }

    fn grad(&self, u: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; u.len()];
        for (t, a) in self.areas.iter().enumerate() {
            let s = self.coeffs.sigma_apply([u[2 * t], u[2 * t + 1]]);
            g[2 * t] = a * s[0] - self.fu[2 * t];
            g[2 * t + 1] = a * s[1] - self.fu[2 * t + 1];
        }
        g
    }

    fn bounds(&self) -> Option<ConvexityBounds> {
        None
    }
}

/// Per-element closed form of the IMEX velocity update for scalar `K`:
/// `v = (σ/α) u_k − (μ/ρ) K⁻¹ u_k − ∇p + f`,
/// `η = σ/(2α) + ½ √((σ/α)² + 4 (β/ρ) |v|)`, `u = v / η`.
pub fn imex_velocity_update(
    u_k: &[f64],
    grad_p: &[f64],
    alpha: f64,
    sigma_k: &[f64],
    coeffs: &DarcyCoeffs,
    f_elem: &[f64],
) -> Result<Vec<f64>> {
    let Permeability::Scalar(k) = coeffs.k_perm else {
        return Err(Error::Unsupported("closed-form IMEX update needs a scalar permeability".into()));
    };
    check_dim("imex grad_p", u_k.len(), grad_p.len())?;
    check_dim("imex f", u_k.len(), f_elem.len())?;
    check_dim("imex sigma", u_k.len() / 2, sigma_k.len())?;
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput(format!("step {alpha} must be positive")));
    }
    let lin = coeffs.mu / (coeffs.rho * k);
    let br = coeffs.beta_f / coeffs.rho;
    let mut out = vec![0.0; u_k.len()];
    for (t, &s) in sigma_k.iter().enumerate() {
        let sa = s / alpha;
        let v = [
            sa * u_k[2 * t] - lin * u_k[2 * t] - grad_p[2 * t] + f_elem[2 * t],
            sa * u_k[2 * t + 1] - lin * u_k[2 * t + 1] - grad_p[2 * t + 1] + f_elem[2 * t + 1],
        ];
        let eta = s / (2.0 * alpha) + 0.5 * (sa * sa + 4.0 * br * v[0].hypot(v[1])).sqrt();
        out[2 * t] = v[0] / eta;
        out[2 * t + 1] = v[1] / eta;
    }
    Ok(out)
}

/// Largest relative defect of `(σ/α + (β/ρ)|u|)|u| = |v|` over the elements.
pub fn imex_element_residual(
    u_k: &[f64],
    u_next: &[f64],
    grad_p: &[f64],
    alpha: f64,
    sigma_k: &[f64],
    coeffs: &DarcyCoeffs,
    f_elem: &[f64],
) -> f64 {
    let k = match coeffs.k_perm {
        Permeability::Scalar(k) => k,
        Permeability::Tensor(_) => return f64::NAN,
    };
    let lin = coeffs.mu / (coeffs.rho * k);
    let br = coeffs.beta_f / coeffs.rho;
    let mut worst: f64 = 0.0;
    for (t, &s) in sigma_k.iter().enumerate() {
        let sa = s / alpha;
        let v0 = sa * u_k[2 * t] - lin * u_k[2 * t] - grad_p[2 * t] + f_elem[2 * t];
        let v1 = sa * u_k[2 * t + 1] - lin * u_k[2 * t + 1] - grad_p[2 * t + 1] + f_elem[2 * t + 1];
        let vmag = v0.hypot(v1);
        let umag = u_next[2 * t].hypot(u_next[2 * t + 1]);
        let defect = ((sa + br * umag) * umag - vmag).abs();
        if vmag > 0.0 {
            worst = worst.max(defect / vmag);
        } else {
            worst = worst.max(defect);
        }
    }
    worst
}

/// The IMEX substep: Darcy part explicit, Forchheimer part implicit.
pub struct DarcyImplicit {
    areas: Vec<f64>,
    coeffs: DarcyCoeffs,
    fu: Vec<f64>,
}

impl DarcyImplicit {
    fn f_elem(&self) -> Vec<f64> {
        per_element(&self.fu, &self.areas)
    }
}

fn per_element(v: &[f64], areas: &[f64]) -> Vec<f64> {
    v.iter().enumerate().map(|(i, x)| x / areas[i / 2]).collect()
}

impl ImplicitSubstep for DarcyImplicit {
    fn solve(&self, u_k: &[f64], bt_p: &[f64], alpha: f64, _iv: &dyn SpdOperator) -> Result<Vec<f64>> {
        let ElementWeight::Scalar(sigma) = sigma_of_u(u_k, &self.coeffs) else {
            return Err(Error::Unsupported("closed-form IMEX update needs a scalar permeability".into()));
        };
        imex_velocity_update(u_k, &per_element(bt_p, &self.areas), alpha, &sigma, &self.coeffs, &self.f_elem())
    }

    fn implicit_gradient(&self, u_k: &[f64], u_next: &[f64]) -> Vec<f64> {
        let ki = self.coeffs.kinv();
        let (mr, br) = (self.coeffs.mu / self.coeffs.rho, self.coeffs.beta_f / self.coeffs.rho);
        let mut g = vec![0.0; u_k.len()];
        for (t, a) in self.areas.iter().enumerate() {
            let (x, y) = (u_k[2 * t], u_k[2 * t + 1]);
            let m = u_next[2 * t].hypot(u_next[2 * t + 1]);
            g[2 * t] = a * (mr * (ki[0][0] * x + ki[0][1] * y) + br * m * u_next[2 * t]) - self.fu[2 * t];
            g[2 * t + 1] = a * (mr * (ki[1][0] * x + ki[1][1] * y) + br * m * u_next[2 * t + 1]) - self.fu[2 * t + 1];
        }
        g
    }
}

/// `I*_Q` tracking with the exact `S_k` and a multigrid inverse.
pub struct DarcyDual {
    mesh: Arc<Mesh>,
    coeffs: DarcyCoeffs,
    prolongations: Vec<SparseMatrix>,
    cycles: usize,
}

impl DarcyDual {
    pub fn new(mesh: Arc<Mesh>, coeffs: DarcyCoeffs, cycles: usize) -> Result<Self> {
        let levels = default_levels(&mesh);
        let mut prolongations = Vec::with_capacity(levels - 1);
        let mut n = mesh.subdivisions();
        for _ in 1..levels {
            n /= 2;
            prolongations.push(p1_prolongation(n)?);
        }
        Ok(Self { mesh, coeffs, prolongations, cycles })
    }

    pub fn schur(&self, u: &[f64]) -> Result<SparseMatrix> {
        schur_complement(&self.mesh, &sigma_of_u(u, &self.coeffs))
    }

    /// `MG(I*, m)` for a given `I*`.
    pub fn preconditioner(&self, iqstar: SparseMatrix) -> Result<SharedOperator> {
        let h = build_hierarchy_from_prolongations(iqstar, self.prolongations.clone())?;
        Ok(Arc::new(mg_inverse(Arc::new(h), self.cycles)?))
    }
}

impl DualMetric for DarcyDual {
    /// Returns the exact `S_k`; the operator that actually enters the dual
    /// update is the multigrid approximation built in `next_iq`.
    fn stilde(&self, u: &[f64], _iv: &dyn SpdOperator) -> Result<SharedOperator> {
        Ok(Arc::new(SparseSpd::new(self.schur(u)?)?))
    }

    fn next_iq(&self, iq: &SharedOperator, s: &SharedOperator, alpha: f64, gamma: f64) -> Result<SharedOperator> {
        let ag = alpha * gamma;
        if ag == 0.0 {
            return Ok(iq.clone());
        }
        let omega = 1.0 / (1.0 + ag);
        let (Some(prev), Some(s)) = (iq.materialize(), s.materialize()) else {
            return Err(Error::Unsupported("dual update needs materialized operators".into()));
        };
        self.preconditioner(SparseMatrix::linear_combination(omega, &prev, 1.0 - omega, &s)?)
    }
}

/// Manufactured solution `u = (sin πx cos πy + 2, cos πx sin πy)`, `p = x³ + y³`.
pub fn exact_velocity(x: Point) -> Point {
    [
        (PI * x[0]).sin() * (PI * x[1]).cos() + 2.0,
        (PI * x[0]).cos() * (PI * x[1]).sin(),
    ]
}

pub fn exact_pressure(x: Point) -> f64 {
    x[0].powi(3) + x[1].powi(3)
}

pub fn exact_divergence(x: Point) -> f64 {
    2.0 * PI * (PI * x[0]).cos() * (PI * x[1]).cos()
}

pub struct DarcyProblem {
    pub mesh: Arc<Mesh>,
    pub coeffs: DarcyCoeffs,
    pub fem: FemOperators,
    pub rhs: RhsVectors,
    pub mg_cycles: usize,
    pub manufactured: bool,
}

/// Assembles the manufactured problem on the `n × n` mesh. The pressure load
/// is shifted by a multiple of `∫φ_i` so that it sums to zero exactly.
pub fn make_manufactured_problem(n: usize, coeffs: DarcyCoeffs) -> Result<DarcyProblem> {
    if n < 2 {
        return Err(Error::InvalidInput("manufactured problem needs n >= 2".into()));
    }
    coeffs.validate()?;
    let mesh = build_structured_mesh(n)?;
    let kinv = vec![coeffs.kinv(); mesh.n_triangles()];
    let fem = FemOperators::assemble(&mesh, &kinv)?;
    let mut rhs = assemble_rhs(
        &mesh,
        |x| {
            let u = exact_velocity(x);
            let s = coeffs.sigma_apply(u);
            [s[0] + 3.0 * x[0] * x[0], s[1] + 3.0 * x[1] * x[1]]
        },
        exact_divergence,
        |x, n| {
            let u = exact_velocity(x);
            u[0] * n[0] + u[1] * n[1]
        },
    );
    let weights = mesh.lumped_vertex_weights();
    let shift = rhs.gp.iter().sum::<f64>() / weights.iter().sum::<f64>();
    for (g, w) in rhs.gp.iter_mut().zip(&weights) {
        *g -= shift * w;
    }
    Ok(DarcyProblem { mesh: Arc::new(mesh), coeffs, fem, rhs, mg_cycles: 1, manufactured: true })
}

impl DarcyProblem {
    pub fn with_mg_cycles(mut self, m: usize) -> Self {
        self.mg_cycles = m;
        self
    }

    pub fn dofs(&self) -> usize {
        self.mesh.mixed_dofs()
    }

    pub fn energy(&self) -> Result<DarcyEnergy> {
        DarcyEnergy::new(&self.mesh, self.coeffs, self.rhs.fu.clone())
    }

    pub fn dual_metric(&self) -> Result<DarcyDual> {
        DarcyDual::new(self.mesh.clone(), self.coeffs, self.mg_cycles)
    }

    pub fn saddle_problem(&self) -> Result<SaddleProblem> {
        let mesh = self.mesh.clone();
        let coeffs = self.coeffs;
        let iv: IvFactory = Arc::new(move |u: &[f64]| weighted_mass_operator(&mesh, &sigma_of_u(u, &coeffs)));
        let proj_mesh = self.mesh.clone();
        let projection = Arc::new(move |p: &mut [f64]| {
            let q = apply_zero_mean(p, &proj_mesh).expect("pressure vector matches the mesh");
            p.copy_from_slice(&q);
        });
        let implicit = DarcyImplicit { areas: self.mesh.areas().to_vec(), coeffs, fu: self.rhs.fu.clone() };
        SaddleProblem::builder(Arc::new(self.energy()?), self.fem.b_mat.clone(), self.rhs.gp.clone(), iv, Arc::new(self.dual_metric()?))
            .implicit(Arc::new(implicit))
            .singular_constraint(projection)
            .build()
    }

    /// `u_0 = 0`, `p_0 = 0`, `I_Q,0 = MG(S_0, m)`.
    pub fn initial_state(&self) -> Result<PrimalDualState> {
        let u0 = vec![0.0; 2 * self.mesh.n_triangles()];
        let dual = self.dual_metric()?;
        let iq = dual.preconditioner(dual.schur(&u0)?)?;
        PrimalDualState::new(u0, vec![0.0; self.mesh.n_vertices()], iq)
    }

    /// `P0² → per-element f` helper used by the IMEX formulas.
    pub fn load_per_element(&self) -> Vec<f64> {
        per_element(&self.rhs.fu, self.mesh.areas())
    }

    /// `‖u_h − u(centroid)‖_{L²}` for the manufactured solution.
    pub fn velocity_error(&self, u: &[f64]) -> f64 {
        let mut sum = 0.0;
        for t in 0..self.mesh.n_triangles() {
            let e = exact_velocity(self.mesh.centroid(t));
            let d = [u[2 * t] - e[0], u[2 * t + 1] - e[1]];
            sum += self.mesh.areas()[t] * (d[0] * d[0] + d[1] * d[1]);
        }
        sum.sqrt()
    }

    /// Max nodal error of the pressure against the zero-mean exact pressure.
    pub fn pressure_error(&self, p: &[f64]) -> Result<f64> {
        let exact: Vec<f64> = self.mesh.vertices().iter().map(|&x| exact_pressure(x)).collect();
        let exact = apply_zero_mean(&exact, &self.mesh)?;
        Ok(vector::norm_inf(&vector::sub(p, &exact)))
    }
}

/// `ru = f_u − M₀^{σ(u)} u − Bᵀp`, `rp = g̃ − B u`.
pub fn darcy_residual(state: &PrimalDualState, prob: &DarcyProblem) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim("darcy_residual u", 2 * prob.mesh.n_triangles(), state.u.len())?;
    check_dim("darcy_residual p", prob.mesh.n_vertices(), state.p.len())?;
    let energy = prob.energy()?;
    let mut ru = vector::scaled(-1.0, &energy.grad(&state.u));
    vector::axpy(-1.0, &prob.fem.b_mat.matvec_transpose(&state.p), &mut ru);
    let rp = vector::sub(&prob.rhs.gp, &prob.fem.b_mat.matvec(&state.u));
    Ok((ru, rp))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Tpdv,
    TpdvImex,
    Uzawa,
}

impl Variant {
    pub fn mode(self) -> Mode {
        match self {
            Variant::Tpdv => Mode::Explicit,
            Variant::TpdvImex => Mode::Imex,
            Variant::Uzawa => Mode::Uzawa,
        }
    }

    /// Step parameters used in the published experiments.
    pub fn default_params(self) -> (f64, f64) {
        match self {
            Variant::Tpdv | Variant::Uzawa => (0.7, 1.4),
            Variant::TpdvImex => (1.5, 0.9),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tpdv => "tpdv",
            Variant::TpdvImex => "tpdv-imex",
            Variant::Uzawa => "uzawa",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BenchmarkParams {
    pub alpha: f64,
    pub gamma: f64,
    pub mg_cycles: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub coeffs: DarcyCoeffs,
}

impl BenchmarkParams {
    pub fn for_variant(variant: Variant) -> Self {
        let (alpha, gamma) = variant.default_params();
        Self { alpha, gamma, mg_cycles: 1, tol: 1e-6, max_iter: 1000, coeffs: DarcyCoeffs::default() }
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkRow {
    pub h: f64,
    pub n: usize,
    pub dofs: usize,
    pub iterations: usize,
    pub vcycles: usize,
    pub seconds: f64,
    pub status: RunStatus,
}

#[derive(Clone, Debug)]
pub struct BenchmarkTable {
    pub variant: Variant,
    pub rows: Vec<BenchmarkRow>,
    pub outcomes: Vec<SolveOutcome>,
}

pub const BENCHMARK_CSV_HEADER: &str = "h,dofs,iterations,vcycles,seconds,status";

impl BenchmarkTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{BENCHMARK_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(out, "1/{},{},{},{},{:.3},{}", r.n / 2, r.dofs, r.iterations, r.vcycles, r.seconds, r.status)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{}\n{:>8} {:>9} {:>10} {:>8} {:>9} {:>10}\n",
            self.variant.name(),
            "h",
            "dofs",
            "iterations",
            "vcycles",
            "seconds",
            "status"
        );
        for r in &self.rows {
            s += &format!(
                "{:>8} {:>9} {:>10} {:>8} {:>9.3} {:>10}\n",
                format!("1/{}", r.n / 2),
                r.dofs,
                r.iterations,
                r.vcycles,
                r.seconds,
                r.status.to_string()
            );
        }
        s
    }
}

/// Solves the manufactured problem on each `n × n` mesh (`h = 2/n`).
pub fn run_benchmark(variant: Variant, n_list: &[usize], params: &BenchmarkParams) -> Result<BenchmarkTable> {
    let mut rows = Vec::with_capacity(n_list.len());
    let mut outcomes = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let outcome = run_single(variant, n, params, None)?;
        rows.push(BenchmarkRow {
            h: 2.0 / n as f64,
            n,
            dofs: outcome.record.dofs,
            iterations: outcome.record.iterations(),
            vcycles: outcome.record.total_vcycles(),
            seconds: outcome.record.seconds,
            status: outcome.record.status,
        });
        outcomes.push(outcome);
    }
    Ok(BenchmarkTable { variant, rows, outcomes })
}

/// One benchmark solve, optionally observed step by step.
pub fn run_single(
    variant: Variant,
    n: usize,
    params: &BenchmarkParams,
    observer: Option<crate::tpdv::StepObserver<'_>>,
) -> Result<SolveOutcome> {
    let problem = make_manufactured_problem(n, params.coeffs)?.with_mg_cycles(params.mg_cycles);
    let saddle = problem.saddle_problem()?;
    let tp = TpdvParams::practical(variant.mode(), params.alpha, params.gamma)?;
    let mut opts = SolveOptions::new(params.tol, params.max_iter).label(format!("{} h=1/{}", variant.name(), n / 2));
    if let Some(obs) = observer {
        opts = opts.observer(obs);
    }
    let mut out = solve_with(&saddle, &tp, problem.initial_state()?, opts)?;
    out.record.dofs = problem.dofs();
    Ok(out)
}
