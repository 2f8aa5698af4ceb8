//! Robust ellipsoid fitting.
//!
//! The ellipsoid is modeled as an affine image of a unit-sphere template. Data
//! points are explained by a Gaussian mixture centered on the transformed
//! template plus a uniform outlier component, and the transform is estimated
//! with an ε-accelerated EM iteration. Relative density outlier scores (RDOS)
//! initialize the outlier weight and the template size.

pub mod accel;
pub mod baselines;
pub mod error;
pub mod density;
pub mod em;
pub mod evaluation;
pub mod geometry;
pub mod kdtree;
pub mod methods;
pub mod report;
pub mod sphere;

pub use error::{FitError, Result};
pub use geometry::{
    denormalize_ellipsoid, geometric_from_affine, geometric_from_quadric, is_ellipsoid,
    normalize_points, point_to_ellipsoid_distance, quadric_from_geometric, Ellipsoid, EulerZyx,
    NormalizationTransform, Point3, PointCloud, QuadricCoefficients,
};
