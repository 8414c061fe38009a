//! Construction and grid certification of partially hyperbolic maps obtained
//! by composing Anosov dynamics with Dehn twists.
//!
//! * [`hypgeo`]: upper half-plane, geodesic flow on T¹ℍ², Sasaki form.
//! * [`collar`]: the collar about a short geodesic and its twists.
//! * [`conecert`]: the cone-field certification engine.
//! * [`surface`]: genus-two Fuchsian groups, domain reduction, orbit experiments.
//! * [`flowbox`]: suspension flows, cyclic covers and the flow-box twist.

pub mod collar;
pub mod conecert;
mod ddmobius;
pub mod error;
pub mod flowbox;
pub mod hypgeo;
pub mod quadrature;
pub mod surface;

pub use error::{Error, Result};
pub use hypgeo::{AnosovFrame, HPoint, MobiusMap, TangentVec3, UnitTangent};
