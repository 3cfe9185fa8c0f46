//! Secret-key rates, parameter optimization and protocol simulations for
//! round-robin differential-phase-shift QKD with slow basis choice.
//!
//! * [`keyrate`]: closed-form channel model and key-rate formulas.
//! * [`optimizer`]: deterministic search over `(μ, ν_th, M)` and curve sweeps.
//! * [`montecarlo`]: event-level simulation of the detection chain.
//! * [`attacksim`]: intercept-resend attack on naive slow-basis BB84 and the
//!   multi-detection sifting rule that stops it.

pub mod attacksim;
pub mod keyrate;
pub mod montecarlo;
pub mod optimizer;
pub mod rng;

pub use keyrate::{key_rate, Detector, KeyRateResult, ParamError, ProtocolParams};
