//! Random walks conditioned to stay above a concave obstacle: exact transfer
//! tables for lattice steps, Gaussian-step samplers and scaling fits.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod gaussian;
pub mod kernel;
pub mod numeric;
pub mod obstacle;
pub mod oracle;
pub mod scaling;
pub mod step_law;

pub use error::{Error, Result};
pub use gaussian::{GaussianField, GibbsConfig, GibbsSamples, QuadratureConfig};
pub use kernel::{
    build_tables, HeightGrid, KernelConfig, KernelDiagnostics, KernelTables, Marginal,
};
pub use obstacle::{discretize, tilt_schedule, ObstacleProfile, ObstacleSpec, TiltSchedule};
pub use scaling::{ExponentReport, Fit, Row};
pub use step_law::{StepKind, StepLaw};
