//! System definitions: the periodic nonlinearity, the Volterra system with
//! exponential-sum kernels, and the delayed PLL that reduces to it.

mod nonlinearity;
mod perturbed;
mod pll;
mod system;

pub use nonlinearity::{sine_nonlinearity, PeriodicNonlinearity, ScalarFn};
pub use perturbed::{perturbed_forcing, perturbed_kernel, smoothed_term};
pub use pll::{pll_to_volterra, EquilibriumRoot, HistoryIntegral, PllSpec};
pub use system::{DecayEnvelope, ExpSum, ExpTerm, ExplicitFn, Forcing, History, SystemSpec};
