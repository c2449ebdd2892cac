//! Discrete-input mutual information: block kernel, scalar quadrature oracle, per-round
//! evaluation and empirical CDF tables.

mod evaluator;
mod kernel;
mod quadrature;
mod table;

pub use evaluator::{EstimatorKind, MiEvaluator, RoundDraw};
pub use kernel::{block_mi, complex_normal, round_mi, FadingBlock, MiEstimate, MiKernel, MiSample};
pub use quadrature::{gauss_hermite, scalar_mi_quadrature, ScalarMiCurve, CURVE_NODES};
pub use table::{build_mi_table, build_mi_table_with, MiCdfTable, MIN_SAMPLES};
#[allow(unused_imports)]
pub(crate) use table::{fmt17, hex, sha256_hex};
