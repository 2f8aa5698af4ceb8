//! Ellipsoid representations and the conversions between them.
//!
//! Three forms are used throughout the crate:
//! - geometric: center, semi-axes `a >= b >= c` and ZYX Euler angles,
//! - quadric: the ten coefficients of
//!   `Ax² + By² + Cz² + 2Dxy + 2Exz + 2Fyz + 2Gx + 2Hy + 2Iz + J = 0`,
//! - affine: `x = A·y + t` applied to the unit sphere.

use nalgebra::{DMatrix, Matrix3, Rotation3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{FitError, Result};

pub type Point3 = Vector3<f64>;

/// Matrices with a larger condition number are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Relative eigenvalue gap below which two eigenvalues are considered tied.
const EIGEN_TIE_GAP: f64 = 1e-9;

/// An ordered set of finite 3D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(index) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(FitError::NonFinite { index });
        }
        Ok(Self { points })
    }

    pub fn from_rows(rows: &[[f64; 3]]) -> Result<Self> {
        Self::new(rows.iter().map(|r| Point3::new(r[0], r[1], r[2])).collect())
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    pub fn centroid(&self) -> Point3 {
        if self.points.is_empty() {
            return Point3::zeros();
        }
        self.points.iter().sum::<Point3>() / self.points.len() as f64
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounding_box(&self) -> (Point3, Point3) {
        let mut lo = Point3::repeat(f64::INFINITY);
        let mut hi = Point3::repeat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Diagonal length of the bounding box.
    pub fn diameter(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    /// Points as an `N x 3` row matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.points.len(), 3, |i, j| self.points[i][j])
    }
}

/// Euler angles in the ZYX (yaw-pitch-roll) convention: `R = Rz(yaw)·Ry(pitch)·Rx(roll)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerZyx {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl EulerZyx {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.yaw, self.pitch, self.roll]
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Rotation3::from_euler_angles(self.roll, self.pitch, self.yaw).into_inner()
    }

    /// Extracts angles from a proper rotation matrix.
    ///
    /// `yaw = atan2(Q21, Q11)`, `pitch = atan2(-Q31, hypot(Q11, Q21))`,
    /// `roll = atan2(Q32, Q33)`; at gimbal lock the yaw is pinned to zero.
    pub fn from_rotation(q: &Matrix3<f64>) -> Self {
        let hyp = q[(0, 0)].hypot(q[(1, 0)]);
        let pitch = (-q[(2, 0)]).atan2(hyp);
        let (yaw, roll) = if hyp > 1e-12 {
            (q[(1, 0)].atan2(q[(0, 0)]), q[(2, 1)].atan2(q[(2, 2)]))
        } else {
            (0.0, (-q[(1, 2)]).atan2(q[(1, 1)]))
        };
        Self {
            yaw: wrap_angle(yaw),
            pitch: wrap_angle(pitch),
            roll: wrap_angle(roll),
        }
    }
}

/// Maps an angle into `(-π, π]`.
fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut a = a % TAU;
    if a <= -PI {
        a += TAU;
    } else if a > PI {
        a -= TAU;
    }
    a
}

/// An ellipsoid in geometric form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: Point3,
    /// Semi-axis lengths, descending.
    pub semi_axes: Vector3<f64>,
    pub euler: EulerZyx,
}

impl Ellipsoid {
    /// Builds a canonical ellipsoid from arbitrary (positive) axes and a rotation
    /// whose columns are the axis directions.
    pub fn from_axes_rotation(
        center: Point3,
        axes: Vector3<f64>,
        rotation: &Matrix3<f64>,
    ) -> Result<Self> {
        if axes.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(FitError::DegenerateInput(format!(
                "semi-axes must be positive, got {:?}",
                axes.as_slice()
            )));
        }
        let affine = rotation * Matrix3::from_diagonal(&axes);
        geometric_from_affine(&affine, &center, &Point3::zeros())
    }

    pub fn sphere(center: Point3, radius: f64) -> Self {
        Self {
            center,
            semi_axes: Vector3::repeat(radius),
            euler: EulerZyx::default(),
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.euler.rotation()
    }

    /// `R·diag(a, b, c)`: maps the unit sphere onto the centered ellipsoid.
    pub fn affine(&self) -> Matrix3<f64> {
        self.rotation() * Matrix3::from_diagonal(&self.semi_axes)
    }

    /// `A·Aᵀ`, the inverse of the quadratic form matrix.
    pub fn shape_matrix(&self) -> Matrix3<f64> {
        let a = self.affine();
        a * a.transpose()
    }

    pub fn axis_ratio(&self) -> f64 {
        self.semi_axes.max() / self.semi_axes.min()
    }

    /// Surface point for spherical angles (`polar` from +z, `azimuth` from +x).
    pub fn surface_point(&self, polar: f64, azimuth: f64) -> Point3 {
        let u = Vector3::new(
            polar.sin() * azimuth.cos(),
            polar.sin() * azimuth.sin(),
            polar.cos(),
        );
        self.affine() * u + self.center
    }
}

/// The ten coefficients `(A, B, C, D, E, F, G, H, I, J)` of a quadric, scaled
/// to unit norm with the first non-negligible coefficient positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadricCoefficients([f64; 10]);

impl QuadricCoefficients {
    pub fn new(p: [f64; 10]) -> Result<Self> {
        if p.iter().any(|c| !c.is_finite()) {
            return Err(FitError::DegenerateInput("non-finite quadric coefficient".into()));
        }
        let norm = p.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 || p[..6].iter().all(|c| c.abs() <= 1e-15 * norm) {
            return Err(FitError::DegenerateInput(
                "quadric has no quadratic part".into(),
            ));
        }
        let lead = p
            .iter()
            .find(|c| c.abs() > 1e-12 * norm)
            .copied()
            .unwrap_or(1.0);
        let s = lead.signum() / norm;
        Ok(Self(p.map(|c| c * s)))
    }

    pub fn coefficients(&self) -> &[f64; 10] {
        &self.0
    }

    /// The symmetric matrix `[[A, D, E], [D, B, F], [E, F, C]]`.
    pub fn quadratic_part(&self) -> Matrix3<f64> {
        let [a, b, c, d, e, f, ..] = self.0;
        Matrix3::new(a, d, e, d, b, f, e, f, c)
    }

    /// `(G, H, I)`.
    pub fn linear_part(&self) -> Vector3<f64> {
        Vector3::new(self.0[6], self.0[7], self.0[8])
    }

    pub fn constant(&self) -> f64 {
        self.0[9]
    }

    /// The invariants `(I₁, I₂, I₃)`.
    pub fn invariants(&self) -> (f64, f64, f64) {
        let [a, b, c, d, e, f, ..] = self.0;
        let i1 = a * b + a * c + b * c - d * d - e * e - f * f;
        let i2 = a + b + c;
        let i3 = self.quadratic_part().determinant();
        (i1, i2, i3)
    }

    /// Algebraic residual at `x`.
    pub fn evaluate(&self, x: &Point3) -> f64 {
        let m = self.quadratic_part();
        x.dot(&(m * x)) + 2.0 * self.linear_part().dot(x) + self.constant()
    }
}

/// Ellipsoid predicate: `I₁ > 0`, `I₂·I₃ > 0`, and the quadric has real points.
pub fn is_ellipsoid(q: &QuadricCoefficients) -> bool {
    let (i1, i2, i3) = q.invariants();
    if !(i1 > 0.0 && i2 * i3 > 0.0) {
        return false;
    }
    let Some(m_inv) = q.quadratic_part().try_inverse() else {
        return false;
    };
    let g = q.linear_part();
    let value_at_center = q.constant() - g.dot(&(m_inv * g));
    value_at_center * i2 < 0.0
}

pub fn quadric_from_geometric(e: &Ellipsoid) -> QuadricCoefficients {
    let r = e.rotation();
    let inv_sq = e.semi_axes.map(|a| 1.0 / (a * a));
    let m = r * Matrix3::from_diagonal(&inv_sq) * r.transpose();
    let g = -(m * e.center);
    let j = e.center.dot(&(m * e.center)) - 1.0;
    QuadricCoefficients::new([
        m[(0, 0)],
        m[(1, 1)],
        m[(2, 2)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 2)],
        g[0],
        g[1],
        g[2],
        j,
    ])
    .expect("valid ellipsoid yields a nontrivial quadric")
}

/// Geometric form of a quadric, or `None` when it is not a real ellipsoid.
pub fn geometric_from_quadric(q: &QuadricCoefficients) -> Option<Ellipsoid> {
    if !is_ellipsoid(q) {
        return None;
    }
    let m = q.quadratic_part();
    let m_inv = m.try_inverse()?;
    let g = q.linear_part();
    let center = -(m_inv * g);
    let level = g.dot(&(m_inv * g)) - q.constant();
    let shape = m_inv * level;
    ellipsoid_from_shape(&shape, center).ok()
}

pub fn condition_number(m: &Matrix3<f64>) -> f64 {
    let sv = m.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    if lo <= 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Eigendecomposition of a symmetric 3x3 matrix with deterministic output:
/// eigenvalues descending, near-ties ordered by lexicographically largest
/// eigenvector, each eigenvector's largest component positive, and `det(Q) = +1`.
pub fn canonical_eigen(b: &Matrix3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let eig = SymmetricEigen::new(*b);
    let mut pairs: Vec<(f64, Vector3<f64>)> = (0..3)
        .map(|i| {
            let mut v: Vector3<f64> = eig.eigenvectors.column(i).into();
            let imax = v.iamax();
            if v[imax] < 0.0 {
                v = -v;
            }
            (eig.eigenvalues[i], v)
        })
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    let scale = pairs[0].0.abs().max(f64::MIN_POSITIVE);
    for _ in 0..2 {
        for i in 0..2 {
            let tied = (pairs[i].0 - pairs[i + 1].0).abs() <= EIGEN_TIE_GAP * scale;
            if tied && lex_less(&pairs[i].1, &pairs[i + 1].1) {
                pairs.swap(i, i + 1);
            }
        }
    }
    let values = Vector3::new(pairs[0].0, pairs[1].0, pairs[2].0);
    let mut q = Matrix3::from_columns(&[pairs[0].1, pairs[1].1, pairs[2].1]);
    if q.determinant() < 0.0 {
        q.set_column(2, &(-q.column(2)));
    }
    (values, q)
}

fn lex_less(a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
    for i in 0..3 {
        if a[i] != b[i] {
            return a[i] < b[i];
        }
    }
    false
}

/// Ellipsoid `{x : (x-c)ᵀ B⁻¹ (x-c) = 1}` for a positive-definite `B`.
pub fn ellipsoid_from_shape(shape: &Matrix3<f64>, center: Point3) -> Result<Ellipsoid> {
    let (values, q) = canonical_eigen(shape);
    if !(values[2] > 0.0) || !(values.max() / values[2] <= MAX_CONDITION * MAX_CONDITION) {
        return Err(FitError::SingularTransform {
            condition: (values.max() / values[2].max(0.0)).sqrt(),
        });
    }
    Ok(Ellipsoid {
        center,
        semi_axes: values.map(f64::sqrt),
        euler: EulerZyx::from_rotation(&q),
    })
}

/// Recovers the geometric parameters of the ellipsoid `A·s + t`, where `s` is a
/// unit sphere centered at `sphere_center`.
pub fn geometric_from_affine(
    a: &Matrix3<f64>,
    t: &Vector3<f64>,
    sphere_center: &Point3,
) -> Result<Ellipsoid> {
    let condition = condition_number(a);
    if !(condition < MAX_CONDITION) {
        return Err(FitError::SingularTransform { condition });
    }
    let center = t + a * sphere_center;
    ellipsoid_from_shape(&(a * a.transpose()), center)
}

/// Exact Euclidean distance from `x` to the surface of `e`.
///
/// In the principal frame the closest point is `s_i·y_i / (s_i + λ)` with
/// `s_i = a_i²`; clearing denominators in the surface constraint gives a
/// degree-6 polynomial in `λ`. Its real roots come from the companion matrix
/// and are polished with Newton's method on the rational form; roots where
/// some `s_i + λ` vanishes are handled separately.
pub fn point_to_ellipsoid_distance(x: &Point3, e: &Ellipsoid) -> f64 {
    let scale = e.semi_axes.max();
    let r = e.rotation();
    let y: Vector3<f64> = r.transpose() * (x - e.center) / scale;
    let s: Vector3<f64> = (e.semi_axes / scale).map(|a| a * a);
    closest_distance_principal(&y, &s) * scale
}

fn closest_distance_principal(y: &Vector3<f64>, s: &Vector3<f64>) -> f64 {
    let s_min = s.min();
    let mut best = f64::INFINITY;
    let mut outer_found = false;
    let mut consider = |p: Vector3<f64>| {
        let d = (y - p).norm();
        if d < best {
            best = d;
        }
    };

    for lambda in secular_real_roots(y, s) {
        if (0..3).any(|i| (s[i] + lambda).abs() <= 1e-12 * s[i]) {
            continue;
        }
        let lambda = polish_root(y, s, lambda);
        outer_found |= lambda > -s_min;
        let p = Vector3::from_fn(|i, _| s[i] * y[i] / (s[i] + lambda));
        if let Some(p) = project_radially(&p, s) {
            consider(p);
        }
    }

    // λ = -s_j is stationary only when y vanishes along every axis tied with j.
    for j in 0..3 {
        let lambda = -s[j];
        let tied: Vec<usize> = (0..3)
            .filter(|&i| (s[i] - s[j]).abs() <= 1e-12 * s[j])
            .collect();
        if tied.iter().any(|&i| y[i].abs() > 1e-12) {
            continue;
        }
        let mut p = Vector3::zeros();
        let mut used = 0.0;
        for i in 0..3 {
            if !tied.contains(&i) {
                p[i] = s[i] * y[i] / (s[i] + lambda);
                used += p[i] * p[i] / s[i];
            }
        }
        let rest = 1.0 - used;
        if rest >= 0.0 {
            p[tied[0]] = (s[j] * rest).sqrt();
            consider(p);
        }
    }

    // Bracketed bisection on the outer root, which companion eigenvalues
    // resolve poorly when it sits next to a pole.
    let near_pole = (0..3).any(|i| (s[i] - s_min).abs() <= 1e-12 && y[i].abs() < 1e-6);
    if (!outer_found || near_pole) && y.iter().any(|c| c.abs() > 1e-12) {
        let lambda = bisect_outer_root(y, s, s_min);
        let p = Vector3::from_fn(|i, _| s[i] * y[i] / (s[i] + lambda));
        if let Some(p) = project_radially(&p, s) {
            consider(p);
        }
    }
    best
}

/// Rescales `p` onto the surface `Σ p_i²/s_i = 1` to remove root-finding drift.
fn project_radially(p: &Vector3<f64>, s: &Vector3<f64>) -> Option<Vector3<f64>> {
    let level: f64 = (0..3).map(|i| p[i] * p[i] / s[i]).sum();
    (level > 0.0 && level.is_finite()).then(|| p / level.sqrt())
}

/// Real roots of `Σ s_i y_i² Π_{j≠i}(s_j+λ)² - Π(s_j+λ)² = 0`.
fn secular_real_roots(y: &Vector3<f64>, s: &Vector3<f64>) -> Vec<f64> {
    let sq = |i: usize| poly_mul(&[s[i], 1.0], &[s[i], 1.0]);
    let factors = [sq(0), sq(1), sq(2)];
    let mut poly = poly_mul(&poly_mul(&factors[0], &factors[1]), &factors[2]);
    for c in poly.iter_mut() {
        *c = -*c;
    }
    for i in 0..3 {
        let others = (0..3).filter(|&j| j != i).map(|j| &factors[j]);
        let mut term = vec![s[i] * y[i] * y[i]];
        for f in others {
            term = poly_mul(&term, f);
        }
        for (k, c) in term.iter().enumerate() {
            poly[k] += c;
        }
    }
    polynomial_real_roots(&poly)
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Real roots of a polynomial with coefficients in ascending order, from the
/// eigenvalues of its companion matrix.
fn polynomial_real_roots(coeffs: &[f64]) -> Vec<f64> {
    let mut c = coeffs.to_vec();
    while c.len() > 1 && c.last().is_some_and(|x| x.abs() < 1e-300) {
        c.pop();
    }
    let degree = c.len() - 1;
    if degree == 0 {
        return Vec::new();
    }
    let lead = c[degree];
    let companion = DMatrix::from_fn(degree, degree, |i, j| {
        if j == degree - 1 {
            -c[i] / lead
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| z.re)
        .collect()
}

fn secular(y: &Vector3<f64>, s: &Vector3<f64>, lambda: f64) -> (f64, f64) {
    let mut f = -1.0;
    let mut df = 0.0;
    for i in 0..3 {
        let q = s[i] + lambda;
        let term = s[i] * y[i] * y[i] / (q * q);
        f += term;
        df -= 2.0 * term / q;
    }
    (f, df)
}

fn polish_root(y: &Vector3<f64>, s: &Vector3<f64>, mut lambda: f64) -> f64 {
    for _ in 0..8 {
        let (f, df) = secular(y, s, lambda);
        if df == 0.0 || !df.is_finite() {
            break;
        }
        let step = f / df;
        let next = lambda - step;
        if !next.is_finite() || (0..3).any(|i| (s[i] + lambda) * (s[i] + next) <= 0.0) {
            break;
        }
        lambda = next;
        if step.abs() <= 1e-15 * (1.0 + lambda.abs()) {
            break;
        }
    }
    lambda
}

/// The root above `-s_min`, where the secular function is monotone.
fn bisect_outer_root(y: &Vector3<f64>, s: &Vector3<f64>, s_min: f64) -> f64 {
    let mut lo = -s_min;
    let mut hi = y.norm() * s.max().sqrt() + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if secular(y, s, mid).0 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Isotropic similarity that maps raw data to the normalized frame:
/// `u = (x - centroid) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub centroid: Point3,
    pub scale: f64,
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        Self {
            centroid: Point3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, x: &Point3) -> Point3 {
        (x - self.centroid) / self.scale
    }

    pub fn invert(&self, u: &Point3) -> Point3 {
        u * self.scale + self.centroid
    }
}

/// Centers the cloud at the origin and scales it to unit mean radius.
pub fn normalize_points(x: &PointCloud) -> Result<(PointCloud, NormalizationTransform)> {
    if x.len() < 2 {
        return Err(FitError::InsufficientPoints {
            needed: 1,
            got: x.len(),
        });
    }
    let centroid = x.centroid();
    let scale = x.iter().map(|p| (p - centroid).norm()).sum::<f64>() / x.len() as f64;
    let extent = x.iter().map(|p| p.amax()).fold(0.0, f64::max);
    if !(scale > 1e-14 * extent.max(f64::MIN_POSITIVE)) {
        return Err(FitError::DegenerateInput("all points coincide".into()));
    }
    let n = NormalizationTransform { centroid, scale };
    let points = x.iter().map(|p| n.apply(p)).collect();
    Ok((PointCloud { points }, n))
}

pub fn denormalize_ellipsoid(e: &Ellipsoid, n: &NormalizationTransform) -> Ellipsoid {
    Ellipsoid {
        center: n.invert(&e.center),
        semi_axes: e.semi_axes * n.scale,
        euler: e.euler,
    }
}

/// Expresses a quadric fitted in normalized coordinates in raw coordinates.
pub fn denormalize_quadric(
    q: &QuadricCoefficients,
    n: &NormalizationTransform,
) -> QuadricCoefficients {
    // u = (x - c)/s  ⇒  uᵀMu + 2gᵀu + J in terms of x.
    let s = n.scale;
    let c = n.centroid;
    let m = q.quadratic_part() / (s * s);
    let g = q.linear_part() / s - m * c;
    let j = c.dot(&(m * c)) - 2.0 * q.linear_part().dot(&c) / s + q.constant();
    QuadricCoefficients::new([
        m[(0, 0)],
        m[(1, 1)],
        m[(2, 2)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 2)],
        g[0],
        g[1],
        g[2],
        j,
    ])
    .expect("similarity preserves a nontrivial quadratic part")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_6, PI};

    fn q(p: [f64; 10]) -> QuadricCoefficients {
        QuadricCoefficients::new(p).unwrap()
    }

    #[test]
    fn ellipsoid_predicate_examples() {
        assert!(is_ellipsoid(&q([1., 1., 1., 0., 0., 0., 0., 0., 0., -1.])));
        let (i1, i2, i3) = q([1., 1., 1., 0., 0., 0., 0., 0., 0., -1.]).invariants();
        assert!(i1 > 0.0 && i2 * i3 > 0.0);
        assert!(!is_ellipsoid(&q([1., 1., -1., 0., 0., 0., 0., 0., 0., -1.])));
        // imaginary ellipsoid: invariants pass, no real points
        let imaginary = q([1., 1., 1., 0., 0., 0., 0., 0., 0., 1.]);
        let (i1, i2, i3) = imaginary.invariants();
        assert!(i1 > 0.0 && i2 * i3 > 0.0);
        assert!(!is_ellipsoid(&imaginary));
    }

    #[test]
    fn quadric_of_unit_sphere() {
        let p = quadric_from_geometric(&Ellipsoid::sphere(Point3::zeros(), 1.0));
        let k = 0.5;
        let expected = [k, k, k, 0., 0., 0., 0., 0., 0., -k];
        for (a, b) in p.coefficients().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn quadric_axis_ratio() {
        let e = Ellipsoid {
            center: Point3::zeros(),
            semi_axes: Vector3::new(2.0, 1.0, 1.0),
            euler: EulerZyx::default(),
        };
        let p = quadric_from_geometric(&e).coefficients().to_owned();
        assert!((p[1] / p[0] - 4.0).abs() < 1e-12);
        assert!(is_ellipsoid(&quadric_from_geometric(&e)));
    }

    #[test]
    fn rotated_round_trip_vanishes_on_surface() {
        let e = Ellipsoid {
            center: Point3::new(1.0, -2.0, 0.5),
            semi_axes: Vector3::new(3.0, 2.0, 0.7),
            euler: EulerZyx::new(0.4, -0.3, 1.1),
        };
        let p = quadric_from_geometric(&e);
        for i in 0..10 {
            for j in 0..10 {
                let x = e.surface_point(PI * (i as f64 + 0.5) / 10.0, 0.2 * PI * j as f64);
                assert!(p.evaluate(&x).abs() < 1e-10);
            }
        }
        let back = geometric_from_quadric(&p).unwrap();
        assert!((back.center - e.center).norm() < 1e-10);
        assert!((back.semi_axes - e.semi_axes).norm() < 1e-10);
    }

    #[test]
    fn affine_identity_and_diagonal() {
        let e = geometric_from_affine(&Matrix3::identity(), &Vector3::zeros(), &Point3::zeros())
            .unwrap();
        assert_eq!(e.center, Point3::zeros());
        assert!((e.semi_axes - Vector3::repeat(1.0)).norm() < 1e-15);

        let a = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0));
        let e = geometric_from_affine(&a, &Vector3::new(5.0, 0.0, 0.0), &Point3::zeros()).unwrap();
        assert_eq!(e.center, Point3::new(5.0, 0.0, 0.0));
        assert!((e.semi_axes - Vector3::new(2.0, 1.0, 1.0)).norm() < 1e-14);
        assert!(e.euler.to_array().iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn affine_yaw_rotation() {
        let rz = Rotation3::from_euler_angles(0.0, 0.0, FRAC_PI_6).into_inner();
        let a = rz * Matrix3::from_diagonal(&Vector3::new(3.0, 2.0, 1.0));
        let e = geometric_from_affine(&a, &Vector3::zeros(), &Point3::zeros()).unwrap();
        assert!((e.semi_axes - Vector3::new(3.0, 2.0, 1.0)).norm() < 1e-12);
        assert!((e.euler.yaw - FRAC_PI_6).abs() < 1e-12);
        assert!(e.euler.pitch.abs() < 1e-12 && e.euler.roll.abs() < 1e-12);
        // transformed sphere points satisfy the recovered quadric
        let p = quadric_from_geometric(&e);
        for k in 0..50 {
            let th = 0.1 + 0.06 * k as f64;
            let ph = 0.37 * k as f64;
            let y = Vector3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos());
            assert!(p.evaluate(&(a * y)).abs() < 1e-8);
        }
    }

    #[test]
    fn singular_affine_is_rejected() {
        let a = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
        assert!(matches!(
            geometric_from_affine(&a, &Vector3::zeros(), &Point3::zeros()),
            Err(FitError::SingularTransform { .. })
        ));
    }

    #[test]
    fn canonical_eigen_ties_are_deterministic() {
        let (v, q) = canonical_eigen(&Matrix3::identity());
        assert_eq!(v, Vector3::repeat(1.0));
        assert!((q.determinant() - 1.0).abs() < 1e-14);
        let (_, q2) = canonical_eigen(&Matrix3::identity());
        assert_eq!(q, q2);
    }

    #[test]
    fn distance_trivial_cases() {
        let sphere = Ellipsoid::sphere(Point3::zeros(), 1.0);
        assert!((point_to_ellipsoid_distance(&Point3::new(2.0, 0.0, 0.0), &sphere) - 1.0).abs() < 1e-12);
        assert!((point_to_ellipsoid_distance(&Point3::zeros(), &sphere) - 1.0).abs() < 1e-12);
        let e = Ellipsoid {
            center: Point3::zeros(),
            semi_axes: Vector3::new(2.0, 1.0, 1.0),
            euler: EulerZyx::default(),
        };
        assert!((point_to_ellipsoid_distance(&Point3::zeros(), &e) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distance_zero_on_surface() {
        let e = Ellipsoid {
            center: Point3::new(0.3, 0.2, -1.0),
            semi_axes: Vector3::new(10.0, 3.0, 1.0),
            euler: EulerZyx::new(0.2, 0.5, -0.7),
        };
        for i in 0..20 {
            let x = e.surface_point(0.05 + 0.15 * i as f64, 0.9 * i as f64);
            assert!(point_to_ellipsoid_distance(&x, &e) <= 1e-9);
        }
    }

    #[test]
    fn normalization_examples() {
        let x = PointCloud::from_rows(&[[0., 0., 0.], [2., 0., 0.]]).unwrap();
        let (u, n) = normalize_points(&x).unwrap();
        assert_eq!(n.centroid, Point3::new(1.0, 0.0, 0.0));
        assert_eq!(n.scale, 1.0);
        assert_eq!(u.points()[0], Point3::new(-1.0, 0.0, 0.0));
        assert_eq!(u.points()[1], Point3::new(1.0, 0.0, 0.0));

        let (_, n2) = normalize_points(&u).unwrap();
        assert!(n2.centroid.norm() < 1e-12 && (n2.scale - 1.0).abs() < 1e-12);

        let same = PointCloud::from_rows(&[[1., 2., 3.]; 5]).unwrap();
        assert!(matches!(normalize_points(&same), Err(FitError::DegenerateInput(_))));
    }

    #[test]
    fn denormalize_examples() {
        let e = Ellipsoid {
            center: Point3::new(1.0, 2.0, 3.0),
            semi_axes: Vector3::new(3.0, 2.0, 1.0),
            euler: EulerZyx::new(0.1, 0.2, 0.3),
        };
        assert_eq!(denormalize_ellipsoid(&e, &NormalizationTransform::identity()), e);
        let n = NormalizationTransform {
            centroid: Point3::zeros(),
            scale: 2.0,
        };
        let d = denormalize_ellipsoid(&e, &n);
        assert_eq!(d.center, e.center * 2.0);
        assert_eq!(d.semi_axes, e.semi_axes * 2.0);
        assert_eq!(d.euler, e.euler);
    }

    #[test]
    fn denormalized_quadric_matches_denormalized_ellipsoid() {
        let e = Ellipsoid {
            center: Point3::new(0.1, -0.2, 0.3),
            semi_axes: Vector3::new(1.5, 1.0, 0.5),
            euler: EulerZyx::new(0.3, -0.2, 0.9),
        };
        let n = NormalizationTransform {
            centroid: Point3::new(4.0, -1.0, 2.0),
            scale: 3.5,
        };
        let a = denormalize_quadric(&quadric_from_geometric(&e), &n);
        let b = quadric_from_geometric(&denormalize_ellipsoid(&e, &n));
        for (x, y) in a.coefficients().iter().zip(b.coefficients()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_points_rejected() {
        let err = PointCloud::from_rows(&[[0., 0., 0.], [f64::NAN, 0., 0.]]).unwrap_err();
        assert_eq!(err, FitError::NonFinite { index: 1 });
    }
}
