pub mod charroots;
pub mod distribution;
pub mod expsum;
pub mod error;
pub mod kernels;
pub mod laplace;
pub mod mc;
pub mod model;
pub mod poly;
pub mod pricing;
pub mod quad;
pub mod wiener_hopf;
