pub mod data;
pub mod masked;
pub mod prior;
pub mod stats;

pub use data::{
    swap_columns, swap_dataset, Dataset, KnockoffKind, KnockoffModel, Partition, ResponseKind,
    Scaling, GRAM_TOL,
};
pub use masked::{mask, FixedXView, MaskedDataset, MaskedView, ModelXView, Unmasked};
pub use prior::{Basis, Nonlinearity, PointMass, PriorConfig, VarianceParam, WeightParam};
pub use stats::{sign_prob_from_w, FeatureStatVector, GibbsTrace, ParamDraw, StatMethod};
