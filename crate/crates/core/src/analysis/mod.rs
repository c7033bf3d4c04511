//! Distributional and loss-landscape diagnostics.

mod landscape;
mod wasserstein;

pub use landscape::{
    direction_cosine, landscape, random_directions, LandscapeGrid, LandscapeMode, LandscapeSpec,
    ParamKind,
};
pub use wasserstein::{quantization_distance, wasserstein_1d, EmpiricalDistribution};
