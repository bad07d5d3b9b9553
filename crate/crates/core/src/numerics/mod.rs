//! Distributions, bivariate normal rectangles and bracketed root finding.

mod bvn;
mod normal;
mod root;
mod student_t;

pub use bvn::{bvn_cdf, bvn_rect_prob, bvn_upper, BvnSpec};
pub use normal::{std_normal_cdf, std_normal_pdf, std_normal_quantile, std_normal_sf};
pub use root::{brent, find_root};
pub use student_t::{t_cdf, t_density_ratio, t_pdf, t_quantile};
