//! Least-squares quadric fitters used as comparison baselines.

use nalgebra::{SMatrix, SVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{FitError, Result};
use crate::geometry::{Point3, PointCloud, QuadricCoefficients};

pub type Vector10 = SVector<f64, 10>;
pub type Matrix10 = SMatrix<f64, 10, 10>;

pub const TUKEY_C: f64 = 4.685;
pub const HUBER_C: f64 = 1.345;
/// Consistency factor turning the median absolute residual into a standard
/// deviation for Gaussian errors.
const MAD_SCALE: f64 = 1.4826;
const STEP_TOLERANCE: f64 = 1e-10;
/// Relative gap below which the two smallest eigenvalues count as equal.
const EIGEN_TIE: f64 = 1e-10;

/// `[x², y², z², 2xy, 2xz, 2yz, 2x, 2y, 2z, 1]`.
pub fn design_vector(p: &Point3) -> Vector10 {
    let (x, y, z) = (p.x, p.y, p.z);
    Vector10::from([
        x * x,
        y * y,
        z * z,
        2.0 * x * y,
        2.0 * x * z,
        2.0 * y * z,
        2.0 * x,
        2.0 * y,
        2.0 * z,
        1.0,
    ])
}

/// `Σ w_i a_i a_iᵀ`; unit weights when `weights` is `None`.
pub fn scatter_matrix(x: &PointCloud, weights: Option<&[f64]>) -> Matrix10 {
    let mut q = Matrix10::zeros();
    for (i, p) in x.iter().enumerate() {
        let a = design_vector(p);
        let w = weights.map_or(1.0, |w| w[i]);
        if w != 0.0 {
            q.syger(w, &a, &a, 1.0);
        }
    }
    q.fill_upper_triangle_with_lower_triangle();
    q
}

/// Unit vector minimizing `pᵀQp`.
fn smallest_eigenvector(q: Matrix10) -> Result<QuadricCoefficients> {
    let eig = SymmetricEigen::new(q);
    let mut order: Vec<usize> = (0..10).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l0, l1) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    let top = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    if (l1 - l0).abs() <= EIGEN_TIE * top {
        return Err(FitError::RankDeficient);
    }
    let v = eig.eigenvectors.column(order[0]);
    QuadricCoefficients::new(std::array::from_fn(|i| v[i]))
}

/// Minimizes the algebraic error `Σ (pᵀa_i)²` subject to `‖p‖ = 1`. No
/// ellipsoid constraint is imposed.
pub fn algebraic_fit(x: &PointCloud) -> Result<QuadricCoefficients> {
    weighted_fit(x, None)
}

/// Algebraic fit with per-point weights.
pub fn weighted_fit(x: &PointCloud, weights: Option<&[f64]>) -> Result<QuadricCoefficients> {
    if x.len() < 10 {
        return Err(FitError::InsufficientPoints {
            needed: 10,
            got: x.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != x.len() {
            return Err(FitError::InvalidConfig(format!(
                "{} weights for {} points",
                w.len(),
                x.len()
            )));
        }
    }
    smallest_eigenvector(scatter_matrix(x, weights))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RobustKernel {
    Tukey { c: f64 },
    Huber { c: f64 },
}

impl RobustKernel {
    pub fn tukey() -> Self {
        Self::Tukey { c: TUKEY_C }
    }

    pub fn huber() -> Self {
        Self::Huber { c: HUBER_C }
    }

    pub fn tuning(&self) -> f64 {
        match *self {
            Self::Tukey { c } | Self::Huber { c } => c,
        }
    }

    /// Weight for residual `r` at robust scale `s`.
    pub fn weight(&self, r: f64, s: f64) -> f64 {
        let u = r.abs();
        match *self {
            Self::Tukey { c } => {
                let cs = c * s;
                if u <= cs {
                    let q = 1.0 - (u / cs).powi(2);
                    q * q
                } else {
                    0.0
                }
            }
            Self::Huber { c } => {
                let cs = c * s;
                if u <= cs {
                    1.0
                } else {
                    cs / u
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlsFit {
    pub quadric: QuadricCoefficients,
    /// Reweighting sweeps performed.
    pub iterations: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Iteratively reweighted algebraic fit, starting from [`algebraic_fit`].
pub fn irls_fit(x: &PointCloud, kernel: RobustKernel, iters: usize) -> Result<IrlsFit> {
    if iters == 0 {
        return Err(FitError::InvalidConfig("iters must be at least 1".into()));
    }
    if !(kernel.tuning() > 0.0) {
        return Err(FitError::InvalidConfig("tuning constant must be positive".into()));
    }
    let design: Vec<Vector10> = x.iter().map(design_vector).collect();
    let typical = design.iter().map(|a| a.norm()).sum::<f64>() / design.len().max(1) as f64;
    let mut p = algebraic_fit(x)?;
    let mut iterations = 0;
    while iterations < iters {
        let coeffs = Vector10::from(*p.coefficients());
        let residuals: Vec<f64> = design.iter().map(|a| coeffs.dot(a)).collect();
        let scale = MAD_SCALE * median(residuals.iter().map(|r| r.abs()).collect());
        // An exact fit has nothing to reweight.
        if scale <= 1e-14 * typical {
            break;
        }
        iterations += 1;
        let weights: Vec<f64> = residuals.iter().map(|&r| kernel.weight(r, scale)).collect();
        if weights.iter().all(|&w| w == 0.0) {
            return Err(FitError::DegenerateWeights);
        }
        let next = weighted_fit(x, Some(&weights))?;
        let step = (Vector10::from(*next.coefficients()) - coeffs).norm();
        p = next;
        if step < STEP_TOLERANCE {
            break;
        }
    }
    Ok(IrlsFit {
        quadric: p,
        iterations,
    })
}
