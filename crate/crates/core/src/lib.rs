// `!(x > 0.0)` style checks deliberately reject NaN; coefficient recursions read best as index loops.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bench;
pub mod error;
pub mod expansion;
pub mod normal;
pub mod parametrization;
pub mod pricing;
pub mod quadrature;
pub mod randomization;
pub mod arbitrage;
pub mod calibration;
pub mod io;
mod series;
