//! Dense real linear algebra shared by every other module.
//!
//! Everything here is a pure function of its inputs. Tolerances are always
//! explicit arguments; [`DEFAULT_RANK_TOL`] is only a convenient default.

mod decomp;
mod eigen;
mod mat;

pub use decomp::{
    cholesky, cholesky_inverse, inverse, max_sym_eigenvalue, min_sym_eigenvalue, norm2,
    null_space, pinv, rank, singular_values, solve_least_squares, svd, sym_eigen, sym_sqrt_pair,
    Svd, DEFAULT_RANK_TOL,
};
pub use eigen::{eigenvalues, is_schur, spectral_radius, Spectrum};
pub use mat::{axpy, dot, norm2 as vec_norm2, norm_inf as vec_norm_inf, Mat};
