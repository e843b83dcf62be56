//! Quantum normal forms for perturbations of linear flows on the torus.
//!
//! Symbols of the form `F(L_ω(ξ), x)` are stored as finite sums of atoms
//! `a e^{i(p t + q·x)}` with `t = <ω,ξ>`. On top of that representation the crate
//! provides the Moyal algebra, Weyl quantization on a truncated Fourier basis, the
//! homological equation, order-by-order and KAM normal forms, the classical limit, the
//! constants ledger and a matrix-diagonalization oracle.
//!
//! All numerical code is generic over [`scalar::Real`]; the aliases below fix `f64`.

pub mod classical;
pub mod error;
pub mod estimates;
pub mod homological;
pub mod kam;
pub mod moyal;
pub mod qnf;
pub mod scalar;
pub mod symbols;
pub mod verify;
pub mod weyl;

pub use error::{Error, Result};
pub use scalar::{fmt_g17, Cplx, Real};
pub use symbols::{Atom, AtomRecord, AtomicSymbol, Context, Freq, Mode};

/// Double-precision symbol.
pub type Symbol = symbols::AtomicSymbol<f64>;
/// Single-precision symbol.
pub type Symbol32 = symbols::AtomicSymbol<f32>;
/// Double-precision context.
pub type Ctx = symbols::Context<f64>;
/// Double-precision operator symbol `c·L_ω + S`.
pub type OpSymbol = moyal::OperatorSymbol<f64>;
/// Double-precision quantized operator.
pub type Operator = weyl::OperatorMatrix<f64>;
/// Double-precision normal form.
pub type QuantumNormalForm = qnf::NormalForm<f64>;
/// Double-precision KAM state.
pub type Kam = kam::KamState<f64>;
/// Double-precision divisor.
pub type Divisor = homological::DivisorModel<f64>;
