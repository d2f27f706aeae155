pub mod dataset;
pub mod error;
pub mod lasso;
pub mod numerics;
pub mod rng;
pub mod scn;
pub mod nlnr;
pub mod selection;
pub mod joint;
pub mod baselines;
pub mod simharness;
