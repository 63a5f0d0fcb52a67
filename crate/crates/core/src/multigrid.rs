//! Geometric multigrid for P1 Neumann Laplacians on nested structured meshes.
//!
//! Coarse operators are Galerkin products `Pᵀ A P` of the fine operator, so a
//! hierarchy only needs the fine matrix and the mesh. The constant vector
//! spans the nullspace on every level; it is projected out (Euclidean mean)
//! after every transfer, and the coarsest level is solved through the
//! rank-one regularization `A + c 11ᵀ`.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dim, Error, Result};
use crate::fem2d::{build_structured_mesh, refine, Mesh, VertexParent};
use crate::numerics::{vector, SparseMatrix, SpdOperator};

pub const JACOBI_DAMPING: f64 = 2.0 / 3.0;
pub const DEFAULT_SMOOTHING: usize = 2;

#[derive(Clone, Debug)]
pub struct MgLevel {
    pub matrix: SparseMatrix,
    /// Interpolation from the next coarser level; `None` on the coarsest.
    pub prolongation: Option<SparseMatrix>,
    pub smoother_diag: Vec<f64>,
}

#[derive(Clone, Debug, Copy, PartialEq, Eq)]
pub enum NullspaceMode {
    ProjectConstants,
}

#[derive(Clone)]
pub struct MgHierarchy {
    levels: Vec<MgLevel>,
    coarse_factor: Cholesky<f64, Dyn>,
    nullspace_mode: NullspaceMode,
    pre_smooth: usize,
    post_smooth: usize,
}

impl std::fmt::Debug for MgHierarchy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MgHierarchy")
            .field("sizes", &self.levels.iter().map(|l| l.matrix.n_rows()).collect::<Vec<_>>())
            .field("nullspace_mode", &self.nullspace_mode)
            .finish()
    }
}

/// Linear interpolation from the structured mesh with `coarse_n` subdivisions
/// to its regular refinement.
pub fn p1_prolongation(coarse_n: usize) -> Result<SparseMatrix> {
    let coarse = build_structured_mesh(coarse_n)?;
    let fine = refine(&coarse)?;
    let parents = fine.parents().expect("refined meshes record parents");
    let mut triplets = Vec::with_capacity(2 * parents.len());
    for (v, p) in parents.iter().enumerate() {
        match *p {
            VertexParent::Vertex(a) => triplets.push((v, a, 1.0)),
            VertexParent::Midpoint(a, b) => {
                triplets.push((v, a, 0.5));
                triplets.push((v, b, 0.5));
            }
        }
    }
    SparseMatrix::from_triplets(fine.n_vertices(), coarse.n_vertices(), &triplets)
}

/// Number of levels available below a structured mesh: halve while even.
pub fn max_levels(mesh: &Mesh) -> usize {
    let mut n = mesh.subdivisions();
    let mut levels = 1;
    while n % 2 == 0 && n > 1 {
        n /= 2;
        levels += 1;
    }
    levels
}

/// Levels used by default: coarsen until the grid has two subdivisions.
pub fn default_levels(mesh: &Mesh) -> usize {
    let mut n = mesh.subdivisions();
    let mut levels = 1;
    while n % 2 == 0 && n > 2 {
        n /= 2;
        levels += 1;
    }
    levels
}

/// Galerkin hierarchy with `n_levels` levels (1 = direct solve only).
pub fn build_hierarchy(fine_mesh: &Mesh, n_levels: usize, matrix: SparseMatrix) -> Result<MgHierarchy> {
    check_dim("build_hierarchy", fine_mesh.n_vertices(), matrix.n_rows())?;
    check_dim("build_hierarchy", fine_mesh.n_vertices(), matrix.n_cols())?;
    if n_levels == 0 || n_levels > max_levels(fine_mesh) {
        return Err(Error::InvalidInput(format!(
            "{n_levels} levels requested, mesh with {} subdivisions supports 1..={}",
            fine_mesh.subdivisions(),
            max_levels(fine_mesh)
        )));
    }
    let mut prolongations = Vec::with_capacity(n_levels - 1);
    let mut n = fine_mesh.subdivisions();
    for _ in 1..n_levels {
        n /= 2;
        prolongations.push(p1_prolongation(n)?);
    }
    build_hierarchy_from_prolongations(matrix, prolongations)
}

/// Galerkin hierarchy from explicit prolongations, finest first.
pub fn build_hierarchy_from_prolongations(matrix: SparseMatrix, prolongations: Vec<SparseMatrix>) -> Result<MgHierarchy> {
    let mut levels = Vec::with_capacity(prolongations.len() + 1);
    let mut current = matrix;
    for p in prolongations {
        check_dim("prolongation rows", current.n_rows(), p.n_rows())?;
        let coarse = p.transpose().matmul(&current.matmul(&p)?)?;
        levels.push(make_level(current, Some(p))?);
        current = coarse;
    }
    let coarse_factor = regularized_factor(&current)?;
    levels.push(make_level(current, None)?);
    Ok(MgHierarchy {
        levels,
        coarse_factor,
        nullspace_mode: NullspaceMode::ProjectConstants,
        pre_smooth: DEFAULT_SMOOTHING,
        post_smooth: DEFAULT_SMOOTHING,
    })
}

fn make_level(matrix: SparseMatrix, prolongation: Option<SparseMatrix>) -> Result<MgLevel> {
    let smoother_diag = matrix.diagonal();
    if let Some(i) = smoother_diag.iter().position(|d| !(*d > 0.0)) {
        return Err(Error::NotSpd(format!("diagonal entry {i} of a level operator is not positive")));
    }
    Ok(MgLevel { matrix, prolongation, smoother_diag })
}

fn regularized_factor(a: &SparseMatrix) -> Result<Cholesky<f64, Dyn>> {
    let n = a.n_rows();
    let mut dense = a.to_dense();
    let c = a.diagonal().iter().sum::<f64>() / (n as f64 * n as f64);
    dense.add_scalar_mut(c);
    Cholesky::new(dense).ok_or_else(|| Error::Singular("regularized coarsest operator is not positive definite".into()))
}

impl MgHierarchy {
    pub fn levels(&self) -> &[MgLevel] {
        &self.levels
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn nullspace_mode(&self) -> NullspaceMode {
        self.nullspace_mode
    }

    pub fn dim(&self) -> usize {
        self.levels[0].matrix.n_rows()
    }

    pub fn fine_matrix(&self) -> &SparseMatrix {
        &self.levels[0].matrix
    }

    pub fn with_smoothing(mut self, pre: usize, post: usize) -> Self {
        self.pre_smooth = pre;
        self.post_smooth = post;
        self
    }

    pub fn smoothing(&self) -> (usize, usize) {
        (self.pre_smooth, self.post_smooth)
    }

    fn coarse_solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = self.coarse_factor.solve(&DVector::from_column_slice(rhs)).as_slice().to_vec();
        vector::remove_mean(&mut x);
        x
    }

    fn cycle(&self, level: usize, rhs: &[f64], x: &mut Vec<f64>, pre: usize, post: usize, trace: &mut Option<&mut Vec<(usize, f64)>>) {
        let lvl = &self.levels[level];
        let Some(p) = &lvl.prolongation else {
            *x = self.coarse_solve(rhs);
            return;
        };
        jacobi(lvl, rhs, x, pre);
        let mut r = residual(&lvl.matrix, rhs, x);
        if let Some(t) = trace.as_deref_mut() {
            t.push((level, vector::norm2(&r)));
        }
        vector::remove_mean(&mut r);
        let mut rc = p.matvec_transpose(&r);
        vector::remove_mean(&mut rc);
        let mut ec = vec![0.0; rc.len()];
        self.cycle(level + 1, &rc, &mut ec, pre, post, trace);
        let mut e = p.matvec(&ec);
        vector::remove_mean(&mut e);
        vector::axpy(1.0, &e, x);
        jacobi(lvl, rhs, x, post);
        vector::remove_mean(x);
    }
}

fn residual(a: &SparseMatrix, rhs: &[f64], x: &[f64]) -> Vec<f64> {
    let ax = a.matvec(x);
    rhs.iter().zip(&ax).map(|(b, v)| b - v).collect()
}

fn jacobi(level: &MgLevel, rhs: &[f64], x: &mut [f64], sweeps: usize) {
    for _ in 0..sweeps {
        let ax = level.matrix.matvec(x);
        for i in 0..x.len() {
            x[i] += JACOBI_DAMPING * (rhs[i] - ax[i]) / level.smoother_diag[i];
        }
    }
}

/// One V-cycle for `A x = rhs` starting from `x0`. The right-hand side is
/// projected onto the zero-mean space first; the result has zero mean.
pub fn vcycle(h: &MgHierarchy, rhs: &[f64], x0: &[f64], pre_smooth: usize, post_smooth: usize) -> Result<Vec<f64>> {
    vcycle_inner(h, rhs, x0, pre_smooth, post_smooth, None)
}

/// As [`vcycle`], also returning the residual norm seen after pre-smoothing on
/// each non-coarsest level.
pub fn vcycle_traced(
    h: &MgHierarchy,
    rhs: &[f64],
    x0: &[f64],
    pre_smooth: usize,
    post_smooth: usize,
) -> Result<(Vec<f64>, Vec<(usize, f64)>)> {
    let mut trace = Vec::new();
    let x = vcycle_inner(h, rhs, x0, pre_smooth, post_smooth, Some(&mut trace))?;
    Ok((x, trace))
}

fn vcycle_inner(
    h: &MgHierarchy,
    rhs: &[f64],
    x0: &[f64],
    pre: usize,
    post: usize,
    mut trace: Option<&mut Vec<(usize, f64)>>,
) -> Result<Vec<f64>> {
    check_dim("vcycle rhs", h.dim(), rhs.len())?;
    check_dim("vcycle x0", h.dim(), x0.len())?;
    let mut b = rhs.to_vec();
    vector::remove_mean(&mut b);
    let mut x = x0.to_vec();
    vector::remove_mean(&mut x);
    h.cycle(0, &b, &mut x, pre, post, &mut trace);
    Ok(x)
}

/// `m` V-cycles from a zero initial guess.
pub fn apply_cycles(h: &MgHierarchy, rhs: &[f64], m: usize) -> Result<Vec<f64>> {
    let mut x = vec![0.0; h.dim()];
    for _ in 0..m {
        x = vcycle(h, rhs, &x, h.pre_smooth, h.post_smooth)?;
    }
    Ok(x)
}

/// `MG(A, m)`: applies the fine operator, inverts with `m` V-cycles.
#[derive(Clone, Debug)]
pub struct MgInverse {
    hierarchy: Arc<MgHierarchy>,
    cycles: usize,
}

pub fn mg_inverse(h: Arc<MgHierarchy>, m: usize) -> Result<MgInverse> {
    if m == 0 {
        return Err(Error::InvalidInput("at least one V-cycle is required".into()));
    }
    Ok(MgInverse { hierarchy: h, cycles: m })
}

impl MgInverse {
    pub fn hierarchy(&self) -> &MgHierarchy {
        &self.hierarchy
    }

    pub fn cycles(&self) -> usize {
        self.cycles
    }
}

impl SpdOperator for MgInverse {
    fn dim(&self) -> usize {
        self.hierarchy.dim()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.hierarchy.fine_matrix().matvec(x)
    }

    fn inv_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        apply_cycles(&self.hierarchy, x, self.cycles)
    }

    fn materialize(&self) -> Option<SparseMatrix> {
        Some(self.hierarchy.fine_matrix().clone())
    }

    fn inv_cost(&self) -> usize {
        self.cycles
    }
}

/// Projected direct inverse of a singular Neumann matrix, via `A + c 11ᵀ`.
/// Dense; meant for oracles on small meshes.
pub fn projected_direct_solver(a: &SparseMatrix) -> Result<impl Fn(&[f64]) -> Vec<f64>> {
    let factor = regularized_factor(a)?;
    Ok(move |rhs: &[f64]| {
        let mut b = rhs.to_vec();
        vector::remove_mean(&mut b);
        let mut x = factor.solve(&DVector::from_vec(b)).as_slice().to_vec();
        vector::remove_mean(&mut x);
        x
    })
}

/// Per-cycle error reduction `(‖e_K‖_A / ‖e_0‖_A)^{1/K}` for a random
/// zero-mean exact solution and zero initial guess.
pub fn measure_contraction(h: &MgHierarchy, cycles: usize, seed: u64) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let a = h.fine_matrix();
    let mut x_true: Vec<f64> = (0..h.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    vector::remove_mean(&mut x_true);
    let b = a.matvec(&x_true);
    let energy = |x: &[f64]| {
        let e = vector::sub(x, &x_true);
        vector::dot(&a.matvec(&e), &e).sqrt()
    };
    let e0 = energy(&vec![0.0; h.dim()]);
    let mut x = vec![0.0; h.dim()];
    for _ in 0..cycles {
        x = vcycle(h, &b, &x, h.pre_smooth, h.post_smooth)?;
    }
    Ok((energy(&x) / e0).powf(1.0 / cycles as f64))
}

/// Dense view of the V-cycle iteration matrix restricted to the zero-mean
/// space, for small spectral checks.
pub fn dense_cycle_inverse(h: &MgHierarchy, m: usize) -> Result<DMatrix<f64>> {
    let n = h.dim();
    let mut out = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        out.set_column(j, &DVector::from_vec(apply_cycles(h, &e, m)?));
        e[j] = 0.0;
    }
    Ok(out)
}
