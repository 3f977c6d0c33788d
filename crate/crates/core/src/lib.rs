//! Learning multi-user current distributions on a continuous-aperture array.
//!
//! The crate is organised bottom-up:
//!
//! * [`scene`]: aperture geometry, user placement and the line-of-sight channel.
//! * [`quadrature`]: midpoint grids, sampled channels, Gram matrices and the
//!   pointwise integral oracle.
//! * [`objective`]: SINR, spectral efficiency, power projection, current
//!   reconstruction and the subspace-optimality check.
//! * [`wmmse`]: the discretised WMMSE baseline and its lift back onto the
//!   channel subspace.
//! * [`gnn`]: the permutation-equivariant vertex/edge network with hand-written
//!   reverse-mode gradients.
//! * [`train`]: datasets, supervised surrogate training, policy training,
//!   finite-difference checks and checkpoints.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the `parallel`
//! feature is enabled and a plain sequential loop otherwise. Reductions are
//! always performed sequentially in index order so results do not depend on the
//! thread count.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gnn;
pub mod linalg;
pub mod objective;
pub mod optim;
pub mod par;
pub mod quadrature;
pub mod scene;
pub mod seeds;
pub mod train;
pub mod wmmse;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Dense complex matrix used for all K×K and K×M quantities.
pub type CMat = nalgebra::DMatrix<Complex64>;
/// Dense real matrix used by the networks.
pub type RMat = nalgebra::DMatrix<f64>;
