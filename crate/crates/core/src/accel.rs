//! Vector ε-extrapolation of the EM parameter sequence.

use nalgebra::{Matrix3, SVector, Vector3};

/// The mixture parameters `(A row-major, t, σ², w)` as one vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaVector(pub SVector<f64, 14>);

impl OmegaVector {
    pub fn pack(a: &Matrix3<f64>, t: &Vector3<f64>, sigma2: f64, w: f64) -> Self {
        let mut v = SVector::<f64, 14>::zeros();
        for r in 0..3 {
            for c in 0..3 {
                v[3 * r + c] = a[(r, c)];
            }
        }
        v[9] = t[0];
        v[10] = t[1];
        v[11] = t[2];
        v[12] = sigma2;
        v[13] = w;
        Self(v)
    }

    pub fn unpack(&self) -> (Matrix3<f64>, Vector3<f64>, f64, f64) {
        let v = &self.0;
        let a = Matrix3::from_fn(|r, c| v[3 * r + c]);
        (a, Vector3::new(v[9], v[10], v[11]), v[12], v[13])
    }

    pub fn distance_squared(&self, other: &Self) -> f64 {
        (self.0 - other.0).norm_squared()
    }
}

/// Smallest difference norm for which the extrapolation is attempted.
const MIN_STEP: f64 = 1e-14;

/// Samelson inverse `x / ‖x‖²`, or `None` for a (near) zero vector.
fn vector_inverse(x: &SVector<f64, 14>, min_norm: f64) -> Option<SVector<f64, 14>> {
    let n2 = x.norm_squared();
    (n2.sqrt() >= min_norm && n2.is_finite()).then(|| x / n2)
}

/// `o1 + [[o2 - o1]⁻¹ - [o1 - o0]⁻¹]⁻¹`; returns `o2` unchanged when either
/// difference or the inner difference of inverses is degenerate.
pub fn epsilon_accelerate(o0: &OmegaVector, o1: &OmegaVector, o2: &OmegaVector) -> OmegaVector {
    let Some(inv_next) = vector_inverse(&(o2.0 - o1.0), MIN_STEP) else {
        return *o2;
    };
    let Some(inv_prev) = vector_inverse(&(o1.0 - o0.0), MIN_STEP) else {
        return *o2;
    };
    let inner = inv_next - inv_prev;
    // The inner term is degenerate when it is tiny relative to its parts.
    let scale = inv_next.norm().max(inv_prev.norm());
    let Some(correction) = vector_inverse(&inner, 1e-10 * scale) else {
        return *o2;
    };
    let out = o1.0 + correction;
    if out.iter().all(|c| c.is_finite()) {
        OmegaVector(out)
    } else {
        *o2
    }
}
