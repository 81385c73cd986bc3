pub mod audit;
pub mod equivalence;
pub mod gradcheck;
pub mod metrics;
pub mod toy;
