//! Numerical toolkit for quasiperiodically forced circle maps
//! `(θ, x) ↦ (θ + ω, f_θ(x))` on the two-torus.

pub mod circle;
pub mod conditions;
pub mod critical;
pub mod dynamics;
pub mod exclusion;
pub mod maps;
mod quad;
pub mod sweep;

pub use circle::{CircleInterval, CirclePoint, RegionUnion};
pub use maps::{ArnoldParams, CocycleParams, Family, Forcing, PinchedParams, QpfSystem};

/// The golden mean `(√5 − 1)/2`.
pub const GOLDEN: f64 = 0.618_033_988_749_894_9;
