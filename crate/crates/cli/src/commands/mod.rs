pub mod eval;
pub mod kmeans;
pub mod prepare;
pub mod train;
