//! Phase-space steppers: transport, Fokker–Planck relaxation and their coupling.

pub mod checkpoint;
pub mod coupled;
pub mod direct;
pub mod fokker_planck;
pub mod transport;
pub mod tridiag;

pub use fokker_planck::{bernoulli, fokker_planck_in_place, fokker_planck_step};
pub use transport::{admissible_dt, transport_step, FaceDrifts, TransportScheme};
pub use tridiag::TridiagonalLu;
pub use coupled::{layer_resolving_step, marginal_residual, CoupledState, RescaledSolver, StepTelemetry};
pub use direct::{DirectSolver, DirectTelemetry};
pub use checkpoint::{write_checkpoint, CheckpointSidecar};
