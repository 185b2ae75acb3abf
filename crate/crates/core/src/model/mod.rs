//! Data, design matrices, hyperparameter maps and the joint log posterior.

mod block;
mod data;
mod design;
mod hyper;
mod link;
mod posterior;

pub use block::{BlockCholesky, BlockSymmetric};
pub use data::{Column, Dataset};
pub use design::{build_design, Design, ModelSpec, RandomEffects};
pub use hyper::{HyperPoint, NaturalHyper};
pub use link::{Link, MU_CLAMP};
pub use posterior::{BetaMixedModel, Curvature, LatentDerivatives, LatentField};
