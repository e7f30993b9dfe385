//! Grids, densities, moments, Maxwellians, the concentration rate and frame changes.

pub mod dump;
pub mod field;
pub mod grid;
pub mod interp;
pub mod theta;
pub mod transform;

pub use dump::{read_dump, write_dump, DumpHeader};
pub use field::{
    centered_moment_q, macro_moments, maxwellian, moment_q, shifted_maxwellian, DensityField,
    DiscreteMaxwellian, MacroFields,
};
pub use grid::{Axis, PhaseGrid, SpatialGrid};
pub use theta::{theta, theta_squared, ThetaField};
pub use transform::{blow_up, compose_asymptotic_profile, press_down, TransformTelemetry};
