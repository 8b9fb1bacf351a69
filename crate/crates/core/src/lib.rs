//! Data-driven output synchronization for heterogeneous leader-follower
//! multi-agent systems.
//!
//! Each follower is an unknown discrete-time linear system. From one noisy
//! open-loop experiment per follower the crate builds a polytope of systems
//! consistent with the data, fits approximate output-regulator solutions,
//! synthesizes a robustly stabilizing state-feedback gain through a small LMI,
//! and certifies the closed loop by simulation and reachable-set bounds on the
//! tracking error.
//!
//! Module map:
//!
//! - [`numkit`]: dense linear algebra (SVD, pseudoinverse, eigenvalues).
//! - [`polytope`]: vertex-represented vector and matrix polytopes.
//! - [`graphnet`]: leader-follower digraph, Laplacian, observer coupling.
//! - [`datagen`]: open-loop data collection and the rank condition.
//! - [`represent`]: the data-consistent system polytope.
//! - [`regulator`]: approximate regulator equations and their error bounds.
//! - [`sdpcore`]: dense max-margin LMI solver.
//! - [`synthesis`]: feedback and observer gain design.
//! - [`simulate`]: closed-loop execution of the distributed protocol.
//! - [`reach`]: tracking-error reachable sets and bounds.

// NaN must fail these checks, so `!(x < y)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops read more clearly in the dense kernels.
#![allow(clippy::needless_range_loop)]

pub mod datagen;
pub mod error;
pub mod graphnet;
pub mod numkit;
pub mod polytope;
pub mod reach;
pub mod regulator;
pub mod represent;
pub mod sdpcore;
pub mod simulate;
pub mod synthesis;

pub use error::{Error, Result};
pub use numkit::Mat;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/ch1_data.md")]
    mod chapter1 {}
    #[doc = include_str!("../../../book/src/ch2_regulator.md")]
    mod chapter2 {}
    #[doc = include_str!("../../../book/src/ch3_synthesis.md")]
    mod chapter3 {}
    #[doc = include_str!("../../../book/src/ch4_bounds.md")]
    mod chapter4 {}
    #[doc = include_str!("../../../book/src/ch5_cli.md")]
    mod chapter5 {}
}
