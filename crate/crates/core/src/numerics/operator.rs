use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{vector, SparseMatrix};
use crate::error::{check_dim, Error, Result};

/// A symmetric positive definite linear map.
///
/// `apply` must be linear, symmetric and positive. `inv_apply` is the exact or
/// approximate inverse action used by the solvers (a multigrid cycle, a
/// diagonal scaling, a Cholesky solve). Implementations must be reentrant.
pub trait SpdOperator: Send + Sync {
    fn dim(&self) -> usize;

    fn apply(&self, x: &[f64]) -> Vec<f64>;

    fn inv_apply(&self, _x: &[f64]) -> Result<Vec<f64>> {
        Err(Error::Unsupported("inverse action is not available for this operator".into()))
    }

    /// Explicit matrix, when one is available.
    fn materialize(&self) -> Option<SparseMatrix> {
        None
    }

    /// Multigrid V-cycles spent by one `inv_apply`.
    fn inv_cost(&self) -> usize {
        0
    }
}

pub type SharedOperator = Arc<dyn SpdOperator>;

/// `⟨M x, y⟩`
pub fn weighted_inner(m: &dyn SpdOperator, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim("weighted_inner x", m.dim(), x.len())?;
    check_dim("weighted_inner y", m.dim(), y.len())?;
    Ok(vector::dot(&m.apply(x), y))
}

/// `‖x‖²_M`
pub fn weighted_norm_sq(m: &dyn SpdOperator, x: &[f64]) -> Result<f64> {
    weighted_inner(m, x, x)
}

/// `‖x‖²_{M⁻¹}` through the inverse action.
pub fn inverse_norm_sq(m: &dyn SpdOperator, x: &[f64]) -> Result<f64> {
    check_dim("inverse_norm_sq", m.dim(), x.len())?;
    Ok(vector::dot(&m.inv_apply(x)?, x))
}

/// Dense matrix of the operator, from `materialize` or column-by-column probing.
pub fn dense_of(op: &dyn SpdOperator) -> DMatrix<f64> {
    if let Some(m) = op.materialize() {
        return m.to_dense();
    }
    let n = op.dim();
    let mut out = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = op.apply(&e);
        out.set_column(j, &DVector::from_vec(col));
        e[j] = 0.0;
    }
    out
}

/// Dense matrix of the inverse action, probing column by column.
pub fn dense_inverse_of(op: &dyn SpdOperator) -> Result<DMatrix<f64>> {
    let n = op.dim();
    let mut out = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = op.inv_apply(&e)?;
        out.set_column(j, &DVector::from_vec(col));
        e[j] = 0.0;
    }
    Ok(out)
}

/// `s · I`
#[derive(Clone, Debug)]
pub struct ScaledIdentity {
    dim: usize,
    scale: f64,
}

impl ScaledIdentity {
    pub fn new(dim: usize, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::NotSpd(format!("identity scale {scale} must be positive")));
        }
        Ok(Self { dim, scale })
    }

    pub fn identity(dim: usize) -> Self {
        Self { dim, scale: 1.0 }
    }
}

impl SpdOperator for ScaledIdentity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        vector::scaled(self.scale, x)
    }

    fn inv_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("ScaledIdentity::inv_apply", self.dim, x.len())?;
        Ok(vector::scaled(1.0 / self.scale, x))
    }

    fn materialize(&self) -> Option<SparseMatrix> {
        Some(SparseMatrix::from_diagonal(&vec![self.scale; self.dim]))
    }
}

/// Positive diagonal matrix.
#[derive(Clone, Debug)]
pub struct DiagonalOperator {
    diag: Vec<f64>,
}

impl DiagonalOperator {
    pub fn new(diag: Vec<f64>) -> Result<Self> {
        if let Some((i, d)) = diag.iter().enumerate().find(|(_, d)| !(**d > 0.0 && d.is_finite())) {
            return Err(Error::NotSpd(format!("diagonal entry {i} is {d}")));
        }
        Ok(Self { diag })
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }
}

impl SpdOperator for DiagonalOperator {
    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.diag).map(|(a, d)| a * d).collect()
    }

    fn inv_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("DiagonalOperator::inv_apply", self.diag.len(), x.len())?;
        Ok(x.iter().zip(&self.diag).map(|(a, d)| a / d).collect())
    }

    fn materialize(&self) -> Option<SparseMatrix> {
        Some(SparseMatrix::from_diagonal(&self.diag))
    }
}

/// Dense SPD matrix with a cached Cholesky factor.
#[derive(Clone, Debug)]
pub struct DenseSpd {
    matrix: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
}

impl DenseSpd {
    /// Fails when the matrix is not square, not symmetric to `1e-12`
    /// relative, or has no Cholesky factor.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::NotSpd("matrix is not square".into()));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::NotSpd(format!("symmetry defect {asym:e}")));
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let factor = Cholesky::new(sym.clone()).ok_or_else(|| Error::NotSpd("Cholesky factorization failed".into()))?;
        Ok(Self { matrix: sym, factor })
    }

    pub fn from_sparse(m: &SparseMatrix) -> Result<Self> {
        Self::new(m.to_dense())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl SpdOperator for DenseSpd {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let v = &self.matrix * DVector::from_column_slice(x);
        v.as_slice().to_vec()
    }

    fn inv_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("DenseSpd::inv_apply", self.dim(), x.len())?;
        Ok(self.factor.solve(&DVector::from_column_slice(x)).as_slice().to_vec())
    }

    fn materialize(&self) -> Option<SparseMatrix> {
        Some(SparseMatrix::from_dense(&self.matrix))
    }
}

/// Sparse SPD matrix; the inverse action is a dense Cholesky solve and is only
/// offered when requested at construction.
#[derive(Clone, Debug)]
pub struct SparseSpd {
    matrix: SparseMatrix,
    factor: Option<Cholesky<f64, Dyn>>,
}

impl SparseSpd {
    pub fn new(matrix: SparseMatrix) -> Result<Self> {
        if matrix.n_rows() != matrix.n_cols() {
            return Err(Error::NotSpd("matrix is not square".into()));
        }
        Ok(Self { matrix, factor: None })
    }

    pub fn with_dense_inverse(matrix: SparseMatrix) -> Result<Self> {
        let dense = DenseSpd::from_sparse(&matrix)?;
        Ok(Self {
            matrix,
            factor: Some(dense.factor),
        })
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }
}

impl SpdOperator for SparseSpd {
    fn dim(&self) -> usize {
        self.matrix.n_rows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.matvec(x)
    }

    fn inv_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("SparseSpd::inv_apply", self.dim(), x.len())?;
        match &self.factor {
            Some(f) => Ok(f.solve(&DVector::from_column_slice(x)).as_slice().to_vec()),
            None => Err(Error::Unsupported("sparse operator built without an inverse".into())),
        }
    }

    fn materialize(&self) -> Option<SparseMatrix> {
        Some(self.matrix.clone())
    }
}

/// `ω A + (1 - ω) B` for operators that cannot be materialized.
pub struct ConvexCombination {
    omega: f64,
    first: SharedOperator,
    second: SharedOperator,
}

impl ConvexCombination {
    pub fn new(omega: f64, first: SharedOperator, second: SharedOperator) -> Result<Self> {
        check_dim("ConvexCombination", first.dim(), second.dim())?;
        if !(0.0..=1.0).contains(&omega) {
            return Err(Error::InvalidInput(format!("weight {omega} outside [0, 1]")));
        }
        Ok(Self { omega, first, second })
    }
}

impl SpdOperator for ConvexCombination {
    fn dim(&self) -> usize {
        self.first.dim()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vector::scaled(self.omega, &self.first.apply(x));
        vector::axpy(1.0 - self.omega, &self.second.apply(x), &mut y);
        y
    }

    fn materialize(&self) -> Option<SparseMatrix> {
        let a = self.first.materialize()?;
        let b = self.second.materialize()?;
        SparseMatrix::linear_combination(self.omega, &a, 1.0 - self.omega, &b).ok()
    }
}

/// Sampled linearity, symmetry and positivity checks (relative `1e-12`
/// for the first two). Returns the worst relative defects found.
pub fn probe_spd(op: &dyn SpdOperator, probes: usize, seed: u64) -> SpdProbe {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = op.dim();
    let mut out = SpdProbe::default();
    out.min_rayleigh = f64::INFINITY;
    for _ in 0..probes {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, b): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let ax = op.apply(&x);
        let ay = op.apply(&y);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| a * xi + b * yi).collect();
        let lhs = op.apply(&combo);
        let rhs: Vec<f64> = ax.iter().zip(&ay).map(|(u, v)| a * u + b * v).collect();
        let scale = vector::norm_inf(&rhs).max(vector::norm_inf(&lhs)).max(f64::MIN_POSITIVE);
        out.linearity = out.linearity.max(vector::norm_inf(&vector::sub(&lhs, &rhs)) / scale);
        let s1 = vector::dot(&ax, &y);
        let s2 = vector::dot(&x, &ay);
        let sscale = (vector::norm2(&ax) * vector::norm2(&y)).max(f64::MIN_POSITIVE);
        out.symmetry = out.symmetry.max((s1 - s2).abs() / sscale);
        let q = vector::dot(&ax, &x) / vector::dot(&x, &x);
        out.min_rayleigh = out.min_rayleigh.min(q);
    }
    out
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SpdProbe {
    pub linearity: f64,
    pub symmetry: f64,
    pub min_rayleigh: f64,
}

impl SpdProbe {
    pub fn passes(&self, tol: f64) -> bool {
        self.linearity <= tol && self.symmetry <= tol && self.min_rayleigh > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_inner_examples() {
        let id = ScaledIdentity::identity(2);
        assert_eq!(weighted_inner(&id, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        let m = DiagonalOperator::new(vec![2.0, 5.0]).unwrap();
        assert_eq!(weighted_inner(&m, &[1.0, 1.0], &[1.0, -1.0]).unwrap(), -3.0);
        assert_eq!(weighted_norm_sq(&m, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn weighted_inner_rejects_mismatch() {
        let id = ScaledIdentity::identity(2);
        assert!(matches!(
            weighted_inner(&id, &[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dense_spd_rejects_indefinite_and_asymmetric() {
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(DenseSpd::new(indefinite).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(DenseSpd::new(asym).is_err());
    }

    #[test]
    fn operators_pass_spd_probes() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, -1.0, 0.0, -1.0, 2.0]);
        let dense = DenseSpd::new(a).unwrap();
        assert!(probe_spd(&dense, 20, 1).passes(1e-12));
        let diag = DiagonalOperator::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(probe_spd(&diag, 20, 2).passes(1e-12));
        let x = [0.3, -1.0, 2.0];
        let back = dense.apply(&dense.inv_apply(&x).unwrap());
        assert!(vector::norm_inf(&vector::sub(&back, &x)) < 1e-14);
    }

    #[test]
    fn diagonal_rejects_nonpositive() {
        assert!(DiagonalOperator::new(vec![1.0, 0.0]).is_err());
        assert!(ScaledIdentity::new(3, -1.0).is_err());
    }
}
