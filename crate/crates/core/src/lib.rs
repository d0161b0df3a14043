//! Visual gyroscope for equirectangular panoramas.
//!
//! Orientation is estimated in three stages: roll and pitch from horizon
//! and vertical heat-maps ([`horizon`]), yaw by aligning mixtures of
//! photometric potentials on a coarse icosphere ([`mpp`]), and a final
//! photometric refinement of all three angles on a fine icosphere
//! ([`pvg`]). [`pipeline`] chains the stages per frame and [`eval`]
//! scores sequences against ground truth.

pub mod config;
pub mod error;
pub mod eval;
pub mod fisheye;
pub mod fixtures;
pub mod horizon;
pub mod icosphere;
pub mod mpp;
pub mod panorama;
pub mod pipeline;
pub mod pvg;
pub mod sphere;

pub use error::{Error, Result};
pub use icosphere::{build_icosphere, IcosphereGrid};
pub use panorama::{rotate_equirect, EquirectImage};
pub use sphere::{
    direction_to_equirect, equirect_to_direction, geodesic_angle, rotation_to_rpy,
    rpy_to_rotation, Direction, EulerRPY, RotationSO3,
};
