//! Serializable summaries of fits and synthetic ground truth, shared by the
//! command-line tool and the Python bindings.

use serde::Serialize;

use crate::em::FitResult;
use crate::geometry::Ellipsoid;
use crate::methods::{Method, MethodFit, IRLS_ITERS};
use crate::sphere::template_size;

#[derive(Debug, Clone, Serialize)]
pub struct RdosJson {
    /// Template size implied by the inlier count.
    pub m: usize,
    pub w0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EllipsoidJson {
    pub center: [f64; 3],
    pub axes: [f64; 3],
    /// `[yaw, pitch, roll]` in radians.
    pub euler_zyx: [f64; 3],
}

impl From<&Ellipsoid> for EllipsoidJson {
    fn from(e: &Ellipsoid) -> Self {
        Self {
            center: [e.center.x, e.center.y, e.center.z],
            axes: [e.semi_axes[0], e.semi_axes[1], e.semi_axes[2]],
            euler_zyx: e.euler.to_array(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub method: Method,
    pub n_points: usize,
    /// Only present for the EM fitter.
    pub rdos: Option<RdosJson>,
    /// `null` when a baseline returned a non-ellipsoid quadric.
    pub ellipsoid: Option<EllipsoidJson>,
    pub quadric: [f64; 10],
    pub iterations: usize,
    pub converged: bool,
    pub final_nll: Option<f64>,
    pub seconds: f64,
}

fn converged(fit: &MethodFit, em: Option<&FitResult>) -> bool {
    match (fit.method, em) {
        (_, Some(r)) => r.converged,
        (Method::Algebraic, _) => true,
        _ => fit.iterations < IRLS_ITERS,
    }
}

impl FitReport {
    pub fn new(fit: &MethodFit, n_points: usize, seconds: f64) -> Self {
        let em = fit.em.as_ref();
        Self {
            method: fit.method,
            n_points,
            rdos: em.map(|r| RdosJson {
                m: template_size(r.rdos.inlier_count),
                w0: r.rdos.initial_weight,
            }),
            ellipsoid: fit.ellipsoid.as_ref().map(EllipsoidJson::from),
            quadric: *fit.quadric.coefficients(),
            iterations: fit.iterations,
            converged: converged(fit, em),
            final_nll: em.map(|r| r.final_nll),
            seconds,
        }
    }
}

/// Ground truth written next to a synthetic cloud.
#[derive(Debug, Clone, Serialize)]
pub struct TruthReport {
    pub ellipsoid: EllipsoidJson,
    pub quadric: [f64; 10],
    pub n_surface: usize,
    pub n_outliers: usize,
    pub noise: f64,
    pub outlier_fraction: f64,
    pub seed: u64,
    pub noise_convention: &'static str,
}
