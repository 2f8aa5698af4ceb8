//! Mixture model and the ε-accelerated EM estimator.
//!
//! The template points `y_m` are moved by `A·y_m + t` and each becomes an
//! isotropic Gaussian with variance `σ²` and weight `(1 - w)/M`. A uniform
//! component of density `1/V` over the bounding box of the data carries the
//! remaining weight `w` and absorbs outliers.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::accel::{epsilon_accelerate, OmegaVector};
use crate::density::{rdos_scores_with, KernelVariance, DEFAULT_K};
use crate::error::{FitError, Result};
use crate::geometry::{
    condition_number, denormalize_ellipsoid, geometric_from_affine, normalize_points, Ellipsoid,
    NormalizationTransform, Point3, PointCloud, MAX_CONDITION,
};
use crate::sphere::{generate_sphere_points_with, template_size, SphereLayout, SpherePoints};

pub const SIGMA2_MIN: f64 = 1e-12;
/// Lower bound for `w` after an M-step that found no outlier mass.
pub const W_MIN: f64 = 1e-12;
/// Upper bound for `w` after an M-step.
pub const W_MAX: f64 = 0.999;
/// States never carry `w` above this; `w = 1` would remove the Gaussians.
pub const W_LIMIT: f64 = 1.0 - 1e-12;

const MAX_RESCUES: usize = 3;
const RESCUE_JITTER: f64 = 1e-8;
/// Kernel terms below `exp(-40)` of the column maximum are dropped; they are
/// under 1e-17 relative to the column sum.
const EXP_CUTOFF: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    pub a: Matrix3<f64>,
    pub t: Vector3<f64>,
    pub sigma2: f64,
    pub w: f64,
    /// Bounding-box volume of the data; fixed during a fit.
    pub volume: f64,
}

impl MixtureState {
    pub fn omega(&self) -> OmegaVector {
        OmegaVector::pack(&self.a, &self.t, self.sigma2, self.w)
    }

    /// A state from a packed parameter vector, or `None` if it is not a valid
    /// mixture (non-positive variance, weight outside `[0, 1)`, singular `A`).
    pub fn from_omega(o: &OmegaVector, volume: f64) -> Option<Self> {
        let (a, t, sigma2, w) = o.unpack();
        let valid = sigma2 > 0.0
            && (0.0..=W_LIMIT).contains(&w)
            && condition_number(&a) < MAX_CONDITION
            && o.0.iter().all(|c| c.is_finite());
        valid.then_some(Self {
            a,
            t,
            sigma2,
            w,
            volume,
        })
    }

    fn transformed(&self, y: &[Point3]) -> Vec<Point3> {
        y.iter().map(|p| self.a * p + self.t).collect()
    }
}

/// Posterior responsibilities from one E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    /// `M x N`; entry `(m, n)` is the posterior of component `m` for point `n`.
    pub p: DMatrix<f64>,
    /// Posterior of the uniform component for each point.
    pub outlier: Vec<f64>,
    /// Total Gaussian mass `1ᵀP1`.
    pub np: f64,
    /// Total uniform mass.
    pub no: f64,
}

impl Responsibilities {
    /// Builds responsibilities from an explicit matrix; the outlier column is
    /// whatever mass each point leaves unassigned.
    pub fn from_matrix(p: DMatrix<f64>) -> Self {
        let outlier: Vec<f64> = p
            .column_iter()
            .map(|c| (1.0 - c.sum()).max(0.0))
            .collect();
        Self {
            np: p.sum(),
            no: outlier.iter().sum(),
            p,
            outlier,
        }
    }
}

/// Product of the axis-aligned extents of the cloud, each floored at
/// `1e-6 x diameter`.
pub fn bounding_volume(x: &PointCloud) -> Result<f64> {
    if x.len() < 2 {
        return Err(FitError::InsufficientPoints {
            needed: 1,
            got: x.len(),
        });
    }
    let diameter = x.diameter();
    if !(diameter > 0.0) {
        return Err(FitError::DegenerateInput("all points coincide".into()));
    }
    let (lo, hi) = x.bounding_box();
    Ok((hi - lo).iter().map(|e| e.max(1e-6 * diameter)).product())
}

/// Orthonormal eigenvectors of the scatter matrix of `x` (assumed centered),
/// by decreasing eigenvalue. Each column is signed so that the third moment of
/// the projections is non-negative, so rotating `x` rotates the frame with it.
pub fn principal_frame(x: &PointCloud) -> Matrix3<f64> {
    let scatter: Matrix3<f64> = x.iter().map(|p| p * p.transpose()).sum();
    let eig = scatter.symmetric_eigen();
    let mut order = [0, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut frame = Matrix3::zeros();
    for (col, &k) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(k).into_owned();
        let skew: f64 = x.iter().map(|p| p.dot(&v).powi(3)).sum();
        frame.set_column(col, &if skew < 0.0 { -v } else { v });
    }
    frame
}

/// E-step on a state, also returning the negative log-likelihood of that state.
fn evaluate(x: &[Point3], y: &[Point3], s: &MixtureState) -> (Responsibilities, f64) {
    let m = y.len();
    let n = x.len();
    let centers = s.transformed(y);
    let w = s.w.clamp(0.0, W_LIMIT);
    let inv2s = 0.5 / s.sigma2;
    let log_norm = 1.5 * (2.0 * PI * s.sigma2).ln();
    // ln of the uniform term relative to an unnormalized Gaussian kernel
    let log_uniform = if w > 0.0 {
        log_norm + (w / (1.0 - w)).ln() + (m as f64 / s.volume).ln()
    } else {
        f64::NEG_INFINITY
    };
    let log_mix = ((1.0 - w) / m as f64).ln() - log_norm;

    // Coordinates split by axis so the distance loop vectorizes.
    let cx: Vec<f64> = centers.iter().map(|c| c.x).collect();
    let cy: Vec<f64> = centers.iter().map(|c| c.y).collect();
    let cz: Vec<f64> = centers.iter().map(|c| c.z).collect();

    let mut p = DMatrix::<f64>::zeros(m, n);
    let mut outlier = vec![0.0; n];
    let mut nll = 0.0;
    for (j, (xn, col)) in x.iter().zip(p.as_mut_slice().chunks_exact_mut(m)).enumerate() {
        let mut dmin = f64::INFINITY;
        for (k, d) in col.iter_mut().enumerate() {
            let (dx, dy, dz) = (xn.x - cx[k], xn.y - cy[k], xn.z - cz[k]);
            *d = dx * dx + dy * dy + dz * dz;
            dmin = dmin.min(*d);
        }
        let mut sum = 0.0;
        for pm in col.iter_mut() {
            let e = (*pm - dmin) * inv2s;
            *pm = if e > EXP_CUTOFF { 0.0 } else { (-e).exp() };
            sum += *pm;
        }
        let lc = log_uniform + dmin * inv2s;
        let shift = lc.max(0.0);
        let gauss_scale = (-shift).exp();
        let uniform = (lc - shift).exp();
        let denom = sum * gauss_scale + uniform;
        let f = gauss_scale / denom;
        for pm in col.iter_mut() {
            *pm *= f;
        }
        outlier[j] = uniform / denom;
        nll -= log_mix - dmin * inv2s + shift + denom.ln();
    }
    let np = p.sum();
    let no = outlier.iter().sum();
    (
        Responsibilities {
            p,
            outlier,
            np,
            no,
        },
        nll,
    )
}

/// Posterior of every component for every point under `s`.
pub fn e_step(x: &PointCloud, y: &SpherePoints, s: &MixtureState) -> Responsibilities {
    evaluate(x.points(), &y.points, s).0
}

/// `E(Ω|X) = -Σ_n ln(w/V + (1-w)/M Σ_m N(x_n; A·y_m + t, σ²I))`.
pub fn negative_log_likelihood(x: &PointCloud, y: &SpherePoints, s: &MixtureState) -> f64 {
    if s.w >= 1.0 {
        return x.len() as f64 * s.volume.ln();
    }
    evaluate(x.points(), &y.points, s).1
}

/// Closed-form minimizer of the expected complete-data negative log-likelihood.
pub fn m_step(
    x: &PointCloud,
    y: &SpherePoints,
    r: &Responsibilities,
    volume: f64,
) -> Result<MixtureState> {
    m_step_points(x.points(), &y.points, r, volume)
}

fn m_step_points(
    x: &[Point3],
    y: &[Point3],
    r: &Responsibilities,
    volume: f64,
) -> Result<MixtureState> {
    let np = r.np;
    if !(np > 0.0) {
        return Err(FitError::SingularMoment {
            condition: f64::INFINITY,
        });
    }
    let m = y.len();
    let mut col_sums = vec![0.0; x.len()];
    let mut row_sums = vec![0.0; m];
    // Σ_m p_mn y_m for every data point n
    let mut py = vec![Vector3::zeros(); x.len()];
    for ((col, cs), pyn) in r.p.as_slice().chunks_exact(m).zip(&mut col_sums).zip(&mut py) {
        let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
        for ((p, rs), ym) in col.iter().zip(&mut row_sums).zip(y) {
            *rs += p;
            sx += p * ym.x;
            sy += p * ym.y;
            sz += p * ym.z;
        }
        *cs = col.iter().sum();
        *pyn = Vector3::new(sx, sy, sz);
    }

    let mu_x = x
        .iter()
        .zip(&col_sums)
        .map(|(p, w)| p * *w)
        .sum::<Vector3<f64>>()
        / np;
    let mu_y = py.iter().sum::<Vector3<f64>>() / np;

    // B = X̂ᵀPᵀŶ, accumulated one data point at a time.
    let mut b = Matrix3::zeros();
    let mut x_spread = 0.0;
    for ((xn, cs), pyn) in x.iter().zip(&col_sums).zip(&py) {
        let xc = xn - mu_x;
        b += xc * (pyn - mu_y * *cs).transpose();
        x_spread += cs * xc.norm_squared();
    }
    let mut c = Matrix3::zeros();
    for (ym, rs) in y.iter().zip(&row_sums) {
        let yc = ym - mu_y;
        c += yc * yc.transpose() * *rs;
    }
    let condition = condition_number(&c);
    if !(condition < MAX_CONDITION) {
        return Err(FitError::SingularMoment { condition });
    }
    let c_inv = c.try_inverse().ok_or(FitError::SingularMoment { condition })?;
    let a = b * c_inv;
    let t = mu_x - a * mu_y;
    let sigma2 = ((x_spread - (b * a.transpose()).trace()) / (3.0 * np)).max(SIGMA2_MIN);
    let w = if r.no > 0.0 {
        (r.no / (np + r.no)).min(W_MAX)
    } else {
        W_MIN
    };
    Ok(MixtureState {
        a,
        t,
        sigma2,
        w,
        volume,
    })
}

/// Expected complete-data negative log-likelihood, up to constants:
/// `Σ p_mn (‖x_n - A·y_m - t‖²/(2σ²) + 1.5 ln σ²) - N_p ln(1-w) - N_o ln(w/V)`.
pub fn q_function(x: &PointCloud, y: &SpherePoints, r: &Responsibilities, s: &MixtureState) -> f64 {
    let centers = s.transformed(&y.points);
    let inv2s = 0.5 / s.sigma2;
    let half_log = 1.5 * s.sigma2.ln();
    let mut q = 0.0;
    for (j, xn) in x.iter().enumerate() {
        for (pm, c) in r.p.column(j).iter().zip(&centers) {
            if *pm != 0.0 {
                q += pm * ((xn - c).norm_squared() * inv2s + half_log);
            }
        }
    }
    q -= r.np * (1.0 - s.w).ln();
    if r.no > 0.0 {
        q -= r.no * (s.w / s.volume).ln();
    }
    q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Convergence threshold on the squared parameter change.
    pub delta: f64,
    pub max_iters: usize,
    pub use_acceleration: bool,
    /// RDOS neighborhood size (capped at `N - 1`).
    pub k: usize,
    /// Fixed template size instead of the RDOS inlier count.
    pub m_override: Option<usize>,
    /// Fixed initial outlier weight instead of the RDOS estimate.
    pub w_override: Option<f64>,
    /// Recorded for reproducibility; the estimator itself is deterministic.
    pub seed: u64,
    pub kernel_variance: KernelVariance,
    pub sphere_layout: SphereLayout,
    /// Also run from `w = 0` and keep the likelier result.
    pub zero_weight_restart: bool,
    /// Start the template in the principal-axis frame of the data instead of
    /// the input axes, which makes the fit follow rotations of the input.
    pub align_principal_axes: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            delta: 1e-8,
            max_iters: 500,
            use_acceleration: true,
            k: DEFAULT_K,
            m_override: None,
            w_override: None,
            seed: 0,
            kernel_variance: KernelVariance::default(),
            sphere_layout: SphereLayout::default(),
            zero_weight_restart: true,
            align_principal_axes: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(FitError::InvalidConfig("delta must be positive".into()));
        }
        if self.max_iters < 3 {
            return Err(FitError::InvalidConfig("max_iters must be at least 3".into()));
        }
        if self.k == 0 {
            return Err(FitError::InvalidConfig("k must be at least 1".into()));
        }
        if let Some(m) = self.m_override {
            if m < 4 {
                return Err(FitError::TooFewPoints(m));
            }
        }
        if let Some(w) = self.w_override {
            if !(0.0..1.0).contains(&w) {
                return Err(FitError::InvalidConfig("w_override must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdosSummary {
    /// Points with RDOS `<= 2`.
    pub inlier_count: usize,
    /// Fraction of points with RDOS `> 2`.
    pub initial_weight: f64,
}

/// Which initial outlier weight produced the returned fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Start {
    /// `w` seeded with the RDOS outlier fraction (or the override).
    Rdos,
    ZeroWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Fitted ellipsoid in input coordinates.
    pub ellipsoid: Ellipsoid,
    /// Final mixture state in normalized coordinates.
    pub state: MixtureState,
    pub normalization: NormalizationTransform,
    /// Iterations of the returned run.
    pub iterations: usize,
    /// Iterations summed over every start.
    pub total_iterations: usize,
    pub start: Start,
    pub final_nll: f64,
    pub converged: bool,
    pub rdos: RdosSummary,
    /// Template size requested (clamped inlier count or override).
    pub template_target: usize,
    /// Template size generated (`grid_side²`).
    pub template_points: usize,
    /// Negative log-likelihood of the initial state and after every iteration.
    pub nll_trace: Vec<f64>,
}

struct Evaluated {
    state: MixtureState,
    resp: Responsibilities,
    nll: f64,
}

/// Outcome of one EM run from a given starting state.
struct Run {
    state: MixtureState,
    nll: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

/// Fits an ellipsoid to `x_raw`.
///
/// Normalizes the data, rotates it into its principal-axis frame (unless
/// disabled), scores it with RDOS to size the template and seed
/// `w`, then alternates E- and M-steps. With acceleration on, every plain
/// iterate is followed by an ε-extrapolation from the last three iterates;
/// the extrapolated state is kept only if it does not raise the negative
/// log-likelihood, and the iterate history restarts from it.
///
/// Unless disabled, a second run starts from `w = 0` and the run with the
/// lower final negative log-likelihood is returned.
pub fn fit(x_raw: &PointCloud, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if x_raw.len() < 10 {
        return Err(FitError::InsufficientPoints {
            needed: 9,
            got: x_raw.len(),
        });
    }
    let (x, normalization) = normalize_points(x_raw)?;
    // The uniform component covers the bounding box in the input axes.
    let volume = bounding_volume(&x)?;
    let frame = if cfg.align_principal_axes {
        principal_frame(&x)
    } else {
        Matrix3::identity()
    };
    let x = PointCloud::new(x.iter().map(|p| frame.transpose() * p).collect())?;
    let k = cfg.k.min(x.len() - 1);
    let report = rdos_scores_with(&x, k, cfg.kernel_variance)?;
    let rdos = RdosSummary {
        inlier_count: report.inlier_count,
        initial_weight: report.initial_weight,
    };
    let template_target = cfg
        .m_override
        .unwrap_or_else(|| template_size(report.inlier_count));
    let template = generate_sphere_points_with(template_target, cfg.sphere_layout)?;
    let w0 = cfg.w_override.unwrap_or(rdos.initial_weight).min(W_MAX);
    let initial = MixtureState {
        a: Matrix3::identity(),
        t: Vector3::zeros(),
        sigma2: initial_variance(x.points(), &template.points),
        w: w0,
        volume,
    };

    let (xs, ys) = (x.points(), template.points.as_slice());
    let mut best = run_em(xs, ys, initial, volume, cfg);
    let mut start = Start::Rdos;
    let mut total_iterations = best.as_ref().map_or(0, |r| r.iterations);
    if cfg.zero_weight_restart && w0 > 0.0 {
        let alternative = run_em(xs, ys, MixtureState { w: 0.0, ..initial }, volume, cfg);
        total_iterations += alternative.as_ref().map_or(0, |r| r.iterations);
        let better = match (&best, &alternative) {
            (Err(_), Ok(_)) => true,
            (Ok(b), Ok(a)) => a.nll < b.nll,
            _ => false,
        };
        if better {
            best = alternative;
            start = Start::ZeroWeight;
        }
    }
    let run = best?;

    let state = MixtureState {
        a: frame * run.state.a,
        t: frame * run.state.t,
        ..run.state
    };
    let fitted = geometric_from_affine(&state.a, &state.t, &template.center)?;
    Ok(FitResult {
        ellipsoid: denormalize_ellipsoid(&fitted, &normalization),
        state,
        normalization,
        iterations: run.iterations,
        total_iterations,
        start,
        final_nll: run.nll,
        converged: run.converged,
        rdos,
        template_target,
        template_points: template.len(),
        nll_trace: run.trace,
    })
}

fn run_em(
    xs: &[Point3],
    ys: &[Point3],
    initial: MixtureState,
    volume: f64,
    cfg: &FitConfig,
) -> Result<Run> {
    let eval = |state: MixtureState| {
        let (resp, nll) = evaluate(xs, ys, &state);
        Evaluated { state, resp, nll }
    };

    let mut current = eval(initial);
    let mut trace = vec![current.nll];
    let mut history = vec![current.state.omega()];
    let mut last_extrapolated: Option<OmegaVector> = None;
    let mut rescues = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let mut next = m_step_points(xs, ys, &current.resp, volume)?;
        if !(condition_number(&next.a) < MAX_CONDITION) {
            rescues += 1;
            if rescues > MAX_RESCUES {
                return Err(FitError::SingularTransform {
                    condition: condition_number(&next.a),
                });
            }
            next = current.state;
            next.a += Matrix3::identity() * RESCUE_JITTER;
        }
        let plain = eval(next);
        let plain_omega = plain.state.omega();

        if cfg.use_acceleration {
            history.push(plain_omega);
            if history.len() >= 3 {
                let h = history.len();
                let extrapolated = epsilon_accelerate(&history[h - 3], &history[h - 2], &history[h - 1]);
                let done = last_extrapolated
                    .is_some_and(|prev| extrapolated.distance_squared(&prev) <= cfg.delta);
                last_extrapolated = Some(extrapolated);
                current = plain;
                if extrapolated != plain_omega {
                    if let Some(candidate) = MixtureState::from_omega(&extrapolated, volume) {
                        let jumped = eval(candidate);
                        if jumped.nll <= current.nll {
                            current = jumped;
                            history.clear();
                            history.push(extrapolated);
                        }
                    }
                }
                trace.push(current.nll);
                if done {
                    converged = true;
                    break;
                }
            } else {
                current = plain;
                trace.push(current.nll);
            }
        } else {
            let done = plain_omega.distance_squared(&current.state.omega()) <= cfg.delta;
            current = plain;
            trace.push(current.nll);
            if done {
                converged = true;
                break;
            }
        }
    }
    Ok(Run {
        state: current.state,
        nll: current.nll,
        iterations,
        converged,
        trace,
    })
}

/// `Σ_{n,m} ‖x_n - y_m‖² / (3NM)`, in closed form.
pub fn initial_variance(x: &[Point3], y: &[Point3]) -> f64 {
    let (n, m) = (x.len() as f64, y.len() as f64);
    let mean_x = x.iter().sum::<Point3>() / n;
    let mean_y = y.iter().sum::<Point3>() / m;
    let sq_x = x.iter().map(|p| p.norm_squared()).sum::<f64>() / n;
    let sq_y = y.iter().map(|p| p.norm_squared()).sum::<f64>() / m;
    ((sq_x + sq_y - 2.0 * mean_x.dot(&mean_y)) / 3.0).max(SIGMA2_MIN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EulerZyx;
    use crate::sphere::generate_sphere_points;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: Vec<Point3>) -> PointCloud {
        PointCloud::new(points).unwrap()
    }

    fn template(points: Vec<Point3>) -> SpherePoints {
        SpherePoints {
            grid_side: 0,
            center: Point3::zeros(),
            points,
        }
    }

    fn random_point(rng: &mut ChaCha8Rng, scale: f64) -> Point3 {
        Point3::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    }

    fn random_state(rng: &mut ChaCha8Rng, volume: f64) -> MixtureState {
        MixtureState {
            a: Matrix3::identity() + Matrix3::from_fn(|_, _| rng.random_range(-0.4..0.4)),
            t: random_point(rng, 0.3),
            sigma2: rng.random_range(0.01..0.5),
            w: rng.random_range(0.0..0.9),
            volume,
        }
    }

    /// Small random problem: N = 20 points near a deformed sphere, M = 16.
    fn small_instance(rng: &mut ChaCha8Rng) -> (PointCloud, SpherePoints) {
        instance(rng, 20)
    }

    fn instance(rng: &mut ChaCha8Rng, n: usize) -> (PointCloud, SpherePoints) {
        let y = generate_sphere_points(16).unwrap();
        let x: Vec<Point3> = (0..n)
            .map(|_| {
                let d = random_point(rng, 1.0).normalize();
                Point3::new(1.5 * d.x, d.y, 0.7 * d.z) + random_point(rng, 0.1)
            })
            .collect();
        (cloud(x), y)
    }

    #[test]
    fn bounding_volume_examples() {
        let corners: Vec<Point3> = (0..8)
            .map(|i| Point3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        assert!((bounding_volume(&cloud(corners)).unwrap() - 1.0).abs() < 1e-12);
        let two = cloud(vec![Point3::zeros(), Point3::new(2.0, 3.0, 4.0)]);
        assert!((bounding_volume(&two).unwrap() - 24.0).abs() < 1e-12);
        let flat = cloud(vec![
            Point3::zeros(),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 2.0, 0.0),
        ]);
        let floor = 1e-6 * 5f64.sqrt();
        assert!((bounding_volume(&flat).unwrap() - 2.0 * floor).abs() < 1e-15);
        let same = cloud(vec![Point3::new(1.0, 1.0, 1.0); 3]);
        assert!(matches!(bounding_volume(&same), Err(FitError::DegenerateInput(_))));
    }

    #[test]
    fn single_component_without_uniform() {
        let x = cloud(vec![Point3::new(3.0, -1.0, 2.0), Point3::new(0.1, 0.2, 0.3)]);
        let y = template(vec![Point3::new(1.0, 0.0, 0.0)]);
        let s = MixtureState {
            a: Matrix3::identity(),
            t: Vector3::zeros(),
            sigma2: 0.5,
            w: 0.0,
            volume: 1.0,
        };
        let r = e_step(&x, &y, &s);
        assert!(r.p.iter().all(|&p| p == 1.0));
        assert!(r.outlier.iter().all(|&o| o == 0.0));
    }

    #[test]
    fn responsibility_concentrates_as_variance_vanishes() {
        let y = generate_sphere_points(16).unwrap();
        let x = cloud(vec![y.points[5], Point3::new(0.3, 0.0, 0.0)]);
        let s = MixtureState {
            a: Matrix3::identity(),
            t: Vector3::zeros(),
            sigma2: 1e-8,
            w: 0.1,
            volume: 8.0,
        };
        let r = e_step(&x, &y, &s);
        assert!(r.p[(5, 0)] >= 1.0 - 1e-9);
    }

    #[test]
    fn two_by_two_matches_direct_formula() {
        let x = vec![Point3::new(0.2, 0.1, -0.3), Point3::new(1.1, -0.4, 0.5)];
        let y = vec![Point3::new(0.0, 0.0, 1.0), Point3::new(1.0, 0.0, 0.0)];
        let s = MixtureState {
            a: Matrix3::new(1.2, 0.1, 0.0, -0.2, 0.9, 0.1, 0.0, 0.3, 1.1),
            t: Vector3::new(0.05, -0.1, 0.2),
            sigma2: 0.3,
            w: 0.5,
            volume: 5.0,
        };
        let r = e_step(&cloud(x.clone()), &template(y.clone()), &s);
        for (n, xn) in x.iter().enumerate() {
            let g: Vec<f64> = y
                .iter()
                .map(|ym| (-(xn - (s.a * ym + s.t)).norm_squared() / (2.0 * s.sigma2)).exp())
                .collect();
            let c = (2.0 * PI * s.sigma2).powf(1.5) * (s.w / (1.0 - s.w)) * (2.0 / s.volume);
            let denom = g[0] + g[1] + c;
            for m in 0..2 {
                assert!((r.p[(m, n)] - g[m] / denom).abs() < 1e-14);
            }
            assert!((r.outlier[n] - c / denom).abs() < 1e-14);
        }
    }

    #[test]
    fn columns_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (x, y) = small_instance(&mut rng);
            let mut s = random_state(&mut rng, 27.0);
            s.sigma2 = 10f64.powf(rng.random_range(-6.0..1.0));
            let r = e_step(&x, &y, &s);
            for (n, col) in r.p.column_iter().enumerate() {
                assert!(col.iter().all(|&p| p >= 0.0));
                assert!((col.sum() + r.outlier[n] - 1.0).abs() <= 1e-12);
            }
            assert!((r.np + r.no - x.len() as f64).abs() <= 1e-9);
        }
    }

    #[test]
    fn nll_examples() {
        let x = cloud(vec![Point3::zeros(), Point3::new(1.0, 2.0, 3.0)]);
        let y = template(vec![Point3::zeros()]);
        let mut s = MixtureState {
            a: Matrix3::identity(),
            t: Vector3::zeros(),
            sigma2: 1.0,
            w: 1.0,
            volume: 6.0,
        };
        assert!((negative_log_likelihood(&x, &y, &s) - 2.0 * 6f64.ln()).abs() < 1e-12);
        s.w = 0.0;
        let one = cloud(vec![Point3::zeros(), Point3::zeros()]);
        let e = negative_log_likelihood(&one, &y, &s);
        assert!((e - 2.0 * 1.5 * (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (x, y) = small_instance(&mut rng);
            let s = random_state(&mut rng, 9.0);
            let m = y.len() as f64;
            let naive: f64 = -x
                .iter()
                .map(|xn| {
                    let g: f64 = y
                        .points
                        .iter()
                        .map(|ym| {
                            let d = (xn - (s.a * ym + s.t)).norm_squared();
                            (2.0 * PI * s.sigma2).powf(-1.5) * (-d / (2.0 * s.sigma2)).exp()
                        })
                        .sum();
                    (s.w / s.volume + (1.0 - s.w) / m * g).ln()
                })
                .sum::<f64>();
            let e = negative_log_likelihood(&x, &y, &s);
            assert!((e - naive).abs() <= 1e-9 * naive.abs().max(1.0), "{e} vs {naive}");
        }
    }

    #[test]
    fn m_step_exact_correspondence() {
        let y = generate_sphere_points(16).unwrap();
        let r = Responsibilities::from_matrix(DMatrix::identity(16, 16));
        let s = m_step(&cloud(y.points.clone()), &y, &r, 8.0).unwrap();
        assert!((s.a - Matrix3::identity()).amax() < 1e-12);
        assert!(s.t.amax() < 1e-12);
        assert_eq!(s.sigma2, SIGMA2_MIN);
        assert_eq!(s.w, W_MIN);

        let doubled = cloud(y.points.iter().map(|p| 2.0 * p).collect());
        let s = m_step(&doubled, &y, &r, 8.0).unwrap();
        assert!((s.a - Matrix3::identity() * 2.0).amax() < 1e-12);
        assert!(s.t.amax() < 1e-12);
    }

    #[test]
    fn m_step_rejects_collapsed_moments() {
        let y = generate_sphere_points(16).unwrap();
        let x = cloud(y.points.clone());
        let mut p = DMatrix::zeros(16, 16);
        for n in 0..16 {
            p[(0, n)] = 1.0;
        }
        let r = Responsibilities::from_matrix(p);
        assert!(matches!(m_step(&x, &y, &r, 8.0), Err(FitError::SingularMoment { .. })));
        let r = Responsibilities::from_matrix(DMatrix::zeros(16, 16));
        assert!(matches!(m_step(&x, &y, &r, 8.0), Err(FitError::SingularMoment { .. })));
    }

    fn q_gradient(x: &PointCloud, y: &SpherePoints, r: &Responsibilities, s: &MixtureState) -> f64 {
        let base = s.omega();
        let mut g2 = 0.0;
        for i in 0..14 {
            // relative steps for the positive scalars σ² and w
            let floor = if i >= 12 { 0.0 } else { 0.1 };
            let h = 1e-3 * base.0[i].abs().max(floor);
            let q_at = |offset: f64| {
                let mut o = base;
                o.0[i] += offset;
                let (a, t, sigma2, w) = o.unpack();
                q_function(x, y, r, &MixtureState { a, t, sigma2, w, volume: s.volume })
            };
            // sixth-order central difference
            let d = (q_at(3.0 * h) - q_at(-3.0 * h) - 9.0 * (q_at(2.0 * h) - q_at(-2.0 * h))
                + 45.0 * (q_at(h) - q_at(-h)))
                / (60.0 * h);
            g2 += d * d;
        }
        g2.sqrt()
    }

    #[test]
    fn m_step_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let (x, y) = small_instance(&mut rng);
            let volume = bounding_volume(&x).unwrap();
            let r = e_step(&x, &y, &random_state(&mut rng, volume));
            let s = m_step(&x, &y, &r, volume).unwrap();
            let grad = q_gradient(&x, &y, &r, &s);
            assert!(grad < 1e-6, "gradient norm {grad}");
            let q0 = q_function(&x, &y, &r, &s);
            for _ in 0..200 {
                let mut o = s.omega();
                for c in o.0.iter_mut() {
                    *c += rng.random_range(-1e-3..1e-3);
                }
                if let Some(p) = MixtureState::from_omega(&o, volume) {
                    assert!(q_function(&x, &y, &r, &p) >= q0 - 1e-12 * q0.abs());
                }
            }
        }
    }

    #[test]
    fn q_function_structure() {
        let y = generate_sphere_points(16).unwrap();
        let x = cloud(y.points.clone());
        let r = Responsibilities::from_matrix(DMatrix::identity(16, 16));
        let s = MixtureState {
            a: Matrix3::identity(),
            t: Vector3::zeros(),
            sigma2: 0.2,
            w: 0.3,
            volume: 8.0,
        };
        let doubled = MixtureState { sigma2: 0.4, ..s };
        let diff = q_function(&x, &y, &r, &doubled) - q_function(&x, &y, &r, &s);
        assert!((diff - 1.5 * 16.0 * 2f64.ln()).abs() < 1e-10);

        // dQ/dw vanishes at w = No/N.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, y) = small_instance(&mut rng);
        let r = e_step(&x, &y, &random_state(&mut rng, 9.0));
        let opt = MixtureState { w: r.no / (r.np + r.no), ..random_state(&mut rng, 9.0) };
        let h = 1e-6;
        let q = |w| q_function(&x, &y, &r, &MixtureState { w, ..opt });
        let dq = (q(opt.w + h) - q(opt.w - h)) / (2.0 * h);
        assert!(dq.abs() < 1e-8 * (r.np + r.no), "{dq}");
    }

    #[test]
    fn plain_em_is_monotone() {
        // Enough points per component that the variance never reaches its floor,
        // where the likelihood is unbounded and monotonicity no longer applies.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let (x, y) = instance(&mut rng, 120);
            let volume = bounding_volume(&x).unwrap();
            let mut s = random_state(&mut rng, volume);
            s.w *= 0.5;
            let mut r = e_step(&x, &y, &s);
            let mut nll = negative_log_likelihood(&x, &y, &s);
            for _ in 0..30 {
                let next = m_step(&x, &y, &r, volume).unwrap();
                let q_next = q_function(&x, &y, &r, &next);
                assert!(q_function(&x, &y, &r, &s) >= q_next - 1e-9);
                s = next;
                r = e_step(&x, &y, &s);
                let e = negative_log_likelihood(&x, &y, &s);
                assert!(s.sigma2 > SIGMA2_MIN);
                assert!(e <= nll + 1e-6, "{e} > {nll}");
                nll = e;
            }
        }
    }

    fn ellipsoid_samples(e: &Ellipsoid, n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
        cloud(
            (0..n)
                .map(|_| e.surface_point(rng.random_range(0.0..PI), rng.random_range(0.0..2.0 * PI)))
                .collect(),
        )
    }

    #[test]
    fn fits_clean_ellipsoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = Ellipsoid::from_axes_rotation(
            Point3::new(1.0, -2.0, 0.5),
            Vector3::new(3.0, 2.0, 1.0),
            &EulerZyx::new(0.4, -0.3, 1.1).rotation(),
        )
        .unwrap();
        let x = ellipsoid_samples(&truth, 500, &mut rng);
        let r = fit(&x, &FitConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.ellipsoid.center - truth.center).norm() < 0.1);
        for (got, want) in r.ellipsoid.semi_axes.iter().zip([3.0, 2.0, 1.0]) {
            assert!((got - want).abs() < 0.1 * want, "{:?}", r.ellipsoid.semi_axes);
        }

        let plain = FitConfig { use_acceleration: false, ..FitConfig::default() };
        let r = fit(&x, &plain).unwrap();
        for pair in r.nll_trace.windows(2).skip(1) {
            assert!(pair[1] <= pair[0] + 1e-6);
        }
    }

    #[test]
    fn template_input_is_a_fixed_point() {
        let y = generate_sphere_points(400).unwrap();
        // The template's scatter has a repeated eigenvalue, so the principal
        // frame is arbitrary; the identity is only the answer in the input frame.
        let cfg = FitConfig {
            m_override: Some(400),
            align_principal_axes: false,
            ..FitConfig::default()
        };
        let r = fit(&cloud(y.points.clone()), &cfg).unwrap();
        for a in r.ellipsoid.semi_axes.iter() {
            assert!((a - 1.0).abs() < 1e-3, "{:?}", r.ellipsoid.semi_axes);
        }
    }

    #[test]
    fn principal_frame_follows_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = cloud(
            (0..200)
                .map(|_| {
                    let p = random_point(&mut rng, 1.0);
                    Point3::new(3.0 * p.x, 2.0 * p.y + 0.3 * p.x * p.x, p.z)
                })
                .collect(),
        );
        let (x, _) = normalize_points(&x).unwrap();
        let q = principal_frame(&x);
        assert!((q.transpose() * q - Matrix3::identity()).amax() < 1e-12);
        let r = EulerZyx::new(0.7, -0.4, 2.0).rotation();
        let turned = cloud(x.iter().map(|p| r * p).collect());
        assert!((principal_frame(&turned) - r * q).amax() < 1e-9);
    }

    #[test]
    fn config_validation() {
        let bad = [
            FitConfig { delta: 0.0, ..FitConfig::default() },
            FitConfig { max_iters: 2, ..FitConfig::default() },
            FitConfig { k: 0, ..FitConfig::default() },
            FitConfig { w_override: Some(1.0), ..FitConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
        let x = cloud((0..9).map(|i| Point3::new(i as f64, 0.0, (i * i) as f64)).collect());
        assert!(matches!(
            fit(&x, &FitConfig::default()),
            Err(FitError::InsufficientPoints { .. })
        ));
    }
}
