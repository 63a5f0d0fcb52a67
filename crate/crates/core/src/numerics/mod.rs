//! Linear-algebra substrate shared by every other module.

pub mod eig;
pub mod krylov;
pub mod mtx;
pub mod operator;
pub mod oracle;
pub mod sparse;
pub mod vector;

pub use eig::{estimate_extreme_eigs, generalized_eigenvalues, EigMode, EigPair};
pub use operator::{
    dense_inverse_of, dense_of, inverse_norm_sq, probe_spd, weighted_inner, weighted_norm_sq, ConvexCombination,
    DenseSpd, DiagonalOperator, ScaledIdentity, SharedOperator, SparseSpd, SpdOperator, SpdProbe,
};
pub use oracle::{
    bregman_divergence, contraction_constant, contraction_defect, e_map, gradient_check, ConvexityBounds,
    ContractionDefect, FnOracle, GradientOracle, QuadraticOracle,
};
pub use sparse::SparseMatrix;
