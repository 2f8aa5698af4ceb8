//! Unit-sphere template points deformed by the EM fit.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{FitError, Result};
use crate::geometry::Point3;

/// Template size bounds applied by the fitter.
pub const MIN_TEMPLATE: usize = 16;
pub const MAX_TEMPLATE: usize = 2500;

/// Angular layout of the template grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SphereLayout {
    /// `x = sinθ cosψ, y = sinθ sinψ, z = cosθ` with `θ_i = π(i - ½)/g`, so
    /// both hemispheres are covered and the poles are never duplicated.
    #[default]
    Polar,
    /// `x = cosθ sinψ, y = cosθ cosψ, z = sinθ` with `θ_i = πi/g`. Kept for
    /// ablation; it only covers `z >= 0`.
    UpperHemisphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpherePoints {
    pub points: Vec<Point3>,
    pub center: Point3,
    pub grid_side: usize,
}

impl SpherePoints {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn generate_sphere_points(target: usize) -> Result<SpherePoints> {
    generate_sphere_points_with(target, SphereLayout::Polar)
}

pub fn generate_sphere_points_with(target: usize, layout: SphereLayout) -> Result<SpherePoints> {
    if target < 4 {
        return Err(FitError::TooFewPoints(target));
    }
    let side = (target as f64).sqrt().round() as usize;
    let g = side as f64;
    let mut points = Vec::with_capacity(side * side);
    for i in 1..=side {
        for j in 1..=side {
            let psi = 2.0 * PI * j as f64 / g;
            let p = match layout {
                SphereLayout::Polar => {
                    let theta = PI * (i as f64 - 0.5) / g;
                    Point3::new(theta.sin() * psi.cos(), theta.sin() * psi.sin(), theta.cos())
                }
                SphereLayout::UpperHemisphere => {
                    let theta = PI * i as f64 / g;
                    Point3::new(theta.cos() * psi.sin(), theta.cos() * psi.cos(), theta.sin())
                }
            };
            points.push(p);
        }
    }
    Ok(SpherePoints {
        points,
        center: Point3::zeros(),
        grid_side: side,
    })
}

/// Template size used by the fitter for a given inlier count.
pub fn template_size(inlier_count: usize) -> usize {
    inlier_count.clamp(MIN_TEMPLATE, MAX_TEMPLATE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_template() {
        let s = generate_sphere_points(4).unwrap();
        assert_eq!(s.grid_side, 2);
        assert_eq!(s.len(), 4);
        assert!(s.points.iter().all(|p| (p.norm() - 1.0).abs() <= 1e-12));
        assert!(matches!(generate_sphere_points(3), Err(FitError::TooFewPoints(3))));
    }

    #[test]
    fn unit_norm_and_no_duplicates() {
        for target in [4, 5, 17, 100, 480, 2500] {
            let s = generate_sphere_points(target).unwrap();
            assert_eq!(s.len(), s.grid_side * s.grid_side);
            for (a, p) in s.points.iter().enumerate() {
                assert!((p.norm() - 1.0).abs() <= 1e-12);
                for q in &s.points[a + 1..] {
                    assert!((p - q).norm() > 1e-9);
                }
            }
        }
    }

    #[test]
    fn centroid_near_origin() {
        let s = generate_sphere_points(100).unwrap();
        let c: Point3 = s.points.iter().sum::<Point3>() / s.len() as f64;
        assert!(c.norm() <= 0.1);
    }

    #[test]
    fn both_hemispheres_covered() {
        for target in [100, 150, 400, 1000] {
            let s = generate_sphere_points(target).unwrap();
            let up = s.points.iter().filter(|p| p.z > 0.0).count();
            let down = s.points.iter().filter(|p| p.z < 0.0).count();
            assert!(4 * up >= s.len() && 4 * down >= s.len());
        }
        let s = generate_sphere_points_with(100, SphereLayout::UpperHemisphere).unwrap();
        assert!(s.points.iter().all(|p| p.z >= -1e-12));
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_sphere_points(333).unwrap(), generate_sphere_points(333).unwrap());
    }

    #[test]
    fn clamped_size() {
        assert_eq!(template_size(3), 16);
        assert_eq!(template_size(400), 400);
        assert_eq!(template_size(10_000), 2500);
    }
}
