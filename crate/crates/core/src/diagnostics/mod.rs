//! Functionals, norms, transforms and inequality checks on phase-space densities.

pub mod entropy;
pub mod equicontinuity;
pub mod norms;
pub mod shear;
pub mod weights;

pub use entropy::{
    boltzmann_entropy, ck_sandwich, csiszar_kullback, distance_to_product, fisher_information, free_energy,
    half_entropy, half_fisher, relative_entropy, FisherValue, Sandwich,
};
pub use equicontinuity::{equicontinuity_bound, equicontinuity_modulus, initial_lipschitz_m1, translate_w, ModulusRow};
pub use norms::{
    fp_dissipation, gaussian_poincare, marginal_weighted_norm, p_inequalities, projection_pi, weighted_norm,
    InequalityCheck, NormValue,
};
pub use shear::{monitor_twin, shear_gamma, shear_transform, twin_sample, TwinFrame, TwinMonitor, TwinSample};
pub use weights::{WeightSpec, WeightVariant};
