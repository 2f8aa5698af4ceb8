//! One entry point for the EM fitter and the baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{algebraic_fit, irls_fit, RobustKernel};
use crate::em::{fit, FitConfig, FitResult};
use crate::error::{FitError, Result};
use crate::geometry::{
    geometric_from_quadric, quadric_from_geometric, Ellipsoid, PointCloud, QuadricCoefficients,
};

/// Reweighting sweeps allowed to the IRLS baselines.
pub const IRLS_ITERS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Em,
    Algebraic,
    IrlsTukey,
    IrlsHuber,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Em,
        Method::Algebraic,
        Method::IrlsTukey,
        Method::IrlsHuber,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Em => "em",
            Method::Algebraic => "algebraic",
            Method::IrlsTukey => "irls-tukey",
            Method::IrlsHuber => "irls-huber",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = FitError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| FitError::InvalidConfig(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFit {
    pub method: Method,
    /// Fitted quadric in input coordinates.
    pub quadric: QuadricCoefficients,
    /// `None` when a baseline returned a quadric that is not an ellipsoid.
    pub ellipsoid: Option<Ellipsoid>,
    pub iterations: usize,
    /// Full EM output when `method` is [`Method::Em`].
    pub em: Option<FitResult>,
}

impl MethodFit {
    pub fn is_ellipsoid(&self) -> bool {
        self.ellipsoid.is_some()
    }
}

/// Fits `x` with `method`; `cfg` only affects the EM fitter. Baselines work
/// directly on the input coordinates.
pub fn fit_with(x: &PointCloud, method: Method, cfg: &FitConfig) -> Result<MethodFit> {
    if method == Method::Em {
        let r = fit(x, cfg)?;
        return Ok(MethodFit {
            method,
            quadric: quadric_from_geometric(&r.ellipsoid),
            ellipsoid: Some(r.ellipsoid),
            iterations: r.iterations,
            em: Some(r),
        });
    }
    let (quadric, iterations) = match method {
        Method::Algebraic => (algebraic_fit(x)?, 0),
        Method::IrlsTukey | Method::IrlsHuber => {
            let kernel = if method == Method::IrlsTukey {
                RobustKernel::tukey()
            } else {
                RobustKernel::huber()
            };
            let r = irls_fit(x, kernel, IRLS_ITERS)?;
            (r.quadric, r.iterations)
        }
        Method::Em => unreachable!(),
    };
    Ok(MethodFit {
        method,
        ellipsoid: geometric_from_quadric(&quadric),
        quadric,
        iterations,
        em: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{EulerZyx, Point3};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("ransac".parse::<Method>().is_err());
    }

    #[test]
    fn baselines_recover_clean_ellipsoid_in_raw_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let truth = Ellipsoid::from_axes_rotation(
            Point3::new(10.0, -4.0, 3.0),
            Vector3::new(30.0, 20.0, 10.0),
            &EulerZyx::new(1.0, 0.2, -0.5).rotation(),
        )
        .unwrap();
        let x = PointCloud::new(
            (0..300)
                .map(|_| truth.surface_point(rng.random_range(0.0..PI), rng.random_range(0.0..2.0 * PI)))
                .collect(),
        )
        .unwrap();
        for m in [Method::Algebraic, Method::IrlsTukey, Method::IrlsHuber] {
            let r = fit_with(&x, m, &FitConfig::default()).unwrap();
            let e = r.ellipsoid.unwrap();
            assert!((e.center - truth.center).norm() < 1e-6);
            assert!((e.semi_axes - truth.semi_axes).amax() < 1e-6);
        }
    }
}
