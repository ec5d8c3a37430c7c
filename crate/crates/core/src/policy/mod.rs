//! Gaussian MLP policy, its score matrix products and the empirical Fisher.

mod gaussian;
pub mod mlp;
mod score;

pub use gaussian::{GaussianPolicy, PolicyConfig};
pub use mlp::{Activation, ForwardCache, Mlp};
pub use score::{fisher_solve, FisherOperator, ScoreGramOperator, ScoreMatrix};
