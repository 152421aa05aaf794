//! Block signal alignment (BSA) precoding for a MIMO two-way amplify-and-forward
//! relay serving one base station and several multi-antenna users.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: complex dense kernels (projectors, Hermitian EVD, Kronecker/vec,
//!   generalized Rayleigh quotients).
//! - [`system`]: experiment configuration and Rayleigh channel draws.
//! - [`precoding`]: per-user alignment geometry, deterministic BS/relay
//!   precoders, effective links and mutual information.
//! - [`optimizers`]: the two alternating outage optimizers (MMSE + ANOMAX and
//!   ANMwoN + ECG2ENGR).
//! - [`baselines`]: point-to-point signal alignment and time-sharing.
//! - [`sim`]: Monte Carlo sweeps, aggregation and CSV/JSON output.
//!
//! All numerical code is generic over the real scalar type `T: Real`
//! (`f32` or `f64`); the `*64` aliases below are what the simulator uses.

pub mod baselines;
pub mod error;
pub mod linalg;
pub mod optimizers;
pub mod precoding;
pub mod scalar;
pub mod sim;
pub mod system;

pub use error::{Error, Result};
pub use scalar::Real;

/// Complex scalar over the real type `T`.
pub type C<T> = nalgebra::Complex<T>;
/// Dense complex matrix.
pub type CMatrix<T> = nalgebra::DMatrix<C<T>>;
/// Dense complex column vector.
pub type CVector<T> = nalgebra::DVector<C<T>>;

pub type CMatrix64 = CMatrix<f64>;
pub type CMatrix32 = CMatrix<f32>;
pub type CVector64 = CVector<f64>;
pub type SystemConfig64 = system::SystemConfig<f64>;
pub type ChannelSet64 = system::ChannelSet<f64>;
pub type UserLinkGeometry64 = precoding::UserLinkGeometry<f64>;
pub type PrecoderState64 = precoding::PrecoderState<f64>;
pub type IterationTrace64 = optimizers::IterationTrace<f64>;
