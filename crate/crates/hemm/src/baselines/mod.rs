//! Comparison methods: linear CATE models, k-nearest neighbours, and the
//! virtual-twins regressor, plus the CART engine they (and the propensity
//! model) share.

pub mod cart;
mod knn;
pub(crate) mod linear;
mod vt;

pub use cart::{BaggedTrees, CartConfig, CartNode, CartTree, SplitCriterion};
pub use knn::knn_cate;
pub use linear::{fit_linear_single, fit_linear_two, LinearCate};
pub use vt::{fit_virtual_twins, VirtualTwins, VtConfig};
