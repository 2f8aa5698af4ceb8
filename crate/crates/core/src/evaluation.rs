//! Synthetic ground truth, error metrics and the multi-trial harness.

use std::f64::consts::PI;
use std::io::{self, Write};
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::em::FitConfig;
use crate::error::{FitError, Result};
use crate::geometry::{condition_number, Ellipsoid, EulerZyx, Point3, PointCloud, MAX_CONDITION};
use crate::methods::{fit_with, Method};

/// Outliers are drawn from the data's bounding box scaled by this factor.
pub const OUTLIER_BOX_INFLATION: f64 = 1.5;
/// Half-width of the cube random centers are drawn from.
pub const CENTER_RANGE: f64 = 5.0;
pub const NOISE_CONVENTION: &str =
    "noise is a standard deviation given as a fraction of the mean distance of the clean points from their centroid";

/// SplitMix64 output for `state`; used to derive independent seeds.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub axes: Vector3<f64>,
    /// Drawn uniformly from `[-5, 5]³` when absent.
    pub center: Option<Point3>,
    /// Drawn uniformly over rotations when absent.
    pub euler: Option<EulerZyx>,
    pub n_points: usize,
    /// Noise standard deviation as a fraction of the mean radius.
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(axes: Vector3<f64>, n_points: usize, seed: u64) -> Self {
        Self {
            axes,
            center: None,
            euler: None,
            n_points,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(FitError::InvalidConfig("axes must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(FitError::InvalidConfig("noise must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(FitError::InvalidConfig("outlier fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub truth: Ellipsoid,
    /// Surface points (with noise) followed by the outliers.
    pub points: PointCloud,
    pub n_outliers: usize,
}

/// Rotation drawn uniformly from SO(3), as ZYX angles.
pub fn random_euler<R: Rng>(rng: &mut R) -> EulerZyx {
    EulerZyx::new(
        rng.random_range(-PI..PI),
        rng.random_range(-1.0f64..1.0).asin(),
        rng.random_range(-PI..PI),
    )
}

/// Points at uniformly drawn spherical angles, mapped onto `e`.
pub fn sample_surface<R: Rng>(e: &Ellipsoid, n: usize, rng: &mut R) -> Vec<Point3> {
    (0..n)
        .map(|_| e.surface_point(rng.random_range(0.0..PI), rng.random_range(0.0..2.0 * PI)))
        .collect()
}

/// Draws the ground-truth ellipsoid and its surface samples for `spec`.
pub fn sample_ellipsoid_surface(spec: &SyntheticSpec) -> Result<(Ellipsoid, PointCloud)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let center = spec.center.unwrap_or_else(|| {
        Point3::from_fn(|_, _| rng.random_range(-CENTER_RANGE..CENTER_RANGE))
    });
    let euler = spec.euler.unwrap_or_else(|| random_euler(&mut rng));
    let truth = Ellipsoid {
        center,
        semi_axes: spec.axes,
        euler,
    };
    let points = sample_surface(&truth, spec.n_points, &mut rng);
    Ok((truth, PointCloud::new(points)?))
}

fn mean_radius(points: &[Point3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let c = points.iter().sum::<Point3>() / points.len() as f64;
    points.iter().map(|p| (p - c).norm()).sum::<f64>() / points.len() as f64
}

/// Adds isotropic Gaussian noise with standard deviation
/// `sigma_frac x (mean distance from the centroid)`.
pub fn add_gaussian_noise(x: &PointCloud, sigma_frac: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma_frac >= 0.0 && sigma_frac.is_finite()) {
        return Err(FitError::InvalidConfig("noise must be non-negative".into()));
    }
    if sigma_frac == 0.0 {
        return Ok(x.clone());
    }
    let sigma = sigma_frac * mean_radius(x.points());
    let normal = Normal::new(0.0, sigma).map_err(|e| FitError::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new(
        x.iter()
            .map(|p| p + Point3::from_fn(|_, _| normal.sample(&mut rng)))
            .collect(),
    )
}

/// Number of outliers that makes up `fraction` of the output.
pub fn outlier_count(n: usize, fraction: f64) -> usize {
    if fraction <= 0.0 {
        return 0;
    }
    // The small offset keeps exact products such as 0.5·100/0.5 from rounding up.
    (fraction * n as f64 / (1.0 - fraction) - 1e-9).ceil().max(0.0) as usize
}

/// Appends points uniform in the inflated bounding box of `x` so that they
/// make up `fraction` of the result.
pub fn add_outliers(x: &PointCloud, fraction: f64, seed: u64) -> Result<PointCloud> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(FitError::InvalidConfig("outlier fraction must lie in [0, 1)".into()));
    }
    let count = outlier_count(x.len(), fraction);
    if count == 0 {
        return Ok(x.clone());
    }
    let (lo, hi) = inflated_box(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = x.points().to_vec();
    points.extend((0..count).map(|_| {
        Point3::from_fn(|i, _| {
            if hi[i] > lo[i] {
                rng.random_range(lo[i]..hi[i])
            } else {
                lo[i]
            }
        })
    }));
    PointCloud::new(points)
}

/// The bounding box of `x` scaled about its center by the inflation factor.
pub fn inflated_box(x: &PointCloud) -> (Point3, Point3) {
    let (lo, hi) = x.bounding_box();
    let mid = (lo + hi) / 2.0;
    let half = (hi - lo) * (OUTLIER_BOX_INFLATION / 2.0);
    (mid - half, mid + half)
}

/// Full synthetic instance: surface samples, then noise, then outliers.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let (truth, clean) = sample_ellipsoid_surface(spec)?;
    let noisy = add_gaussian_noise(&clean, spec.noise_sigma, splitmix64(spec.seed ^ 0x6e6f_6973_65))?;
    let points = add_outliers(&noisy, spec.outlier_fraction, splitmix64(spec.seed ^ 0x6f75_746c_6965_72))?;
    Ok(SyntheticData {
        truth,
        n_outliers: points.len() - noisy.len(),
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub e_c: f64,
    pub e_a: f64,
    pub is_ellipsoid: bool,
}

/// `‖c_t - ĉ‖`.
pub fn offset_error(truth: &Ellipsoid, fitted: &Ellipsoid) -> f64 {
    (truth.center - fitted.center).norm()
}

/// `s_max/s_min - 1` for the residual transform `Â⁻¹A_t`.
pub fn shape_error(truth: &Ellipsoid, fitted: &Ellipsoid) -> Result<f64> {
    let a_hat = fitted.affine();
    let condition = condition_number(&a_hat);
    if !(condition < MAX_CONDITION) {
        return Err(FitError::SingularTransform { condition });
    }
    let inv = a_hat
        .try_inverse()
        .ok_or(FitError::SingularTransform { condition })?;
    let sv = (inv * truth.affine()).singular_values();
    Ok((sv.max() / sv.min() - 1.0).max(0.0))
}

pub fn error_metrics(truth: &Ellipsoid, fitted: &Ellipsoid) -> Result<ErrorMetrics> {
    Ok(ErrorMetrics {
        e_c: offset_error(truth, fitted),
        e_a: shape_error(truth, fitted)?,
        is_ellipsoid: true,
    })
}

/// One cell of a benchmark grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    /// Surface points per trial, before outliers.
    pub n_points: usize,
    pub noise: f64,
    pub outlier_fraction: f64,
    /// Axis ratio `r`; trials use axes `(r, U[1, r], 1)`. `None` means `(3, 2, 1)`.
    pub axis_ratio: Option<f64>,
}

impl Cell {
    pub fn new(method: Method, n_points: usize) -> Self {
        Self {
            method,
            n_points,
            noise: 0.0,
            outlier_fraction: 0.0,
            axis_ratio: None,
        }
    }

    /// The ground-truth spec for trial `seed`.
    pub fn spec(&self, seed: u64) -> SyntheticSpec {
        let axes = match self.axis_ratio {
            Some(r) => {
                let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x6178_6573));
                let mid = if r > 1.0 { rng.random_range(1.0..r) } else { 1.0 };
                Vector3::new(r, mid, 1.0)
            }
            None => Vector3::new(3.0, 2.0, 1.0),
        };
        SyntheticSpec {
            noise_sigma: self.noise,
            outlier_fraction: self.outlier_fraction,
            ..SyntheticSpec::new(axes, self.n_points, seed)
        }
    }

    pub fn axis_ratio_value(&self) -> f64 {
        self.axis_ratio.unwrap_or(3.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    /// NaN when the fit failed or was not an ellipsoid.
    pub e_c: f64,
    pub e_a: f64,
    pub is_ellipsoid: bool,
    pub iterations: usize,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl Summary {
    /// Statistics of the finite values; NaN fields when there are none.
    pub fn of(values: &[f64]) -> Self {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Self {
                mean: f64::NAN,
                median: f64::NAN,
                std: f64::NAN,
            };
        }
        // sorted so the reduction order does not depend on trial order
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let median = if v.len() % 2 == 1 {
            v[v.len() / 2]
        } else {
            0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
        };
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            median,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub cell: Cell,
    pub records: Vec<TrialRecord>,
    /// Over ellipsoid fits only.
    pub e_c: Summary,
    pub e_a: Summary,
    pub non_ellipsoid: usize,
    /// Fits that returned an error.
    pub failures: usize,
    pub mean_iterations: f64,
    pub seconds: f64,
}

impl TrialStats {
    pub fn from_records(cell: Cell, records: Vec<TrialRecord>) -> Self {
        let valid: Vec<&TrialRecord> = records
            .iter()
            .filter(|r| r.is_ellipsoid && r.error.is_none())
            .collect();
        let e_c: Vec<f64> = valid.iter().map(|r| r.e_c).collect();
        let e_a: Vec<f64> = valid.iter().map(|r| r.e_a).collect();
        let failures = records.iter().filter(|r| r.error.is_some()).count();
        let non_ellipsoid = records
            .iter()
            .filter(|r| r.error.is_none() && !r.is_ellipsoid)
            .count();
        let mean_iterations = if records.is_empty() {
            0.0
        } else {
            records.iter().map(|r| r.iterations as f64).sum::<f64>() / records.len() as f64
        };
        let seconds = records.iter().map(|r| r.seconds).sum();
        Self {
            cell,
            e_c: Summary::of(&e_c),
            e_a: Summary::of(&e_a),
            non_ellipsoid,
            failures,
            mean_iterations,
            seconds,
            records,
        }
    }
}

/// Seed of trial `index`; shared by every cell so methods and noise levels
/// are compared on the same draws.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index))
}

/// Runs a single trial. Fitter errors are recorded, never propagated.
pub fn run_trial(cell: &Cell, seed: u64, cfg: &FitConfig, timing: bool) -> TrialRecord {
    let failed = |error: String, seconds: f64| TrialRecord {
        seed,
        e_c: f64::NAN,
        e_a: f64::NAN,
        is_ellipsoid: false,
        iterations: 0,
        seconds,
        error: Some(error),
    };
    let data = match generate(&cell.spec(seed)) {
        Ok(d) => d,
        Err(e) => return failed(e.to_string(), 0.0),
    };
    let start = Instant::now();
    let outcome = fit_with(&data.points, cell.method, &FitConfig { seed, ..cfg.clone() });
    let seconds = if timing { start.elapsed().as_secs_f64() } else { 0.0 };
    let fitted = match outcome {
        Ok(f) => f,
        Err(e) => return failed(e.to_string(), seconds),
    };
    let metrics = fitted
        .ellipsoid
        .as_ref()
        .map(|e| error_metrics(&data.truth, e));
    match metrics {
        Some(Ok(m)) => TrialRecord {
            seed,
            e_c: m.e_c,
            e_a: m.e_a,
            is_ellipsoid: true,
            iterations: fitted.iterations,
            seconds,
            error: None,
        },
        Some(Err(e)) => failed(e.to_string(), seconds),
        None => TrialRecord {
            seed,
            e_c: f64::NAN,
            e_a: f64::NAN,
            is_ellipsoid: false,
            iterations: fitted.iterations,
            seconds,
            error: None,
        },
    }
}

/// `trials` independent trials of `cell`.
pub fn run_cell(cell: &Cell, trials: usize, master_seed: u64, cfg: &FitConfig, timing: bool) -> TrialStats {
    let records = (0..trials as u64)
        .map(|i| run_trial(cell, trial_seed(master_seed, i), cfg, timing))
        .collect();
    TrialStats::from_records(cell.clone(), records)
}

pub fn run_trials(
    cells: &[Cell],
    trials: usize,
    master_seed: u64,
    cfg: &FitConfig,
    timing: bool,
) -> Vec<TrialStats> {
    cells
        .iter()
        .map(|c| run_cell(c, trials, master_seed, cfg, timing))
        .collect()
}

fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.10e}")
    }
}

/// One row per trial, preceded by a comment line with the noise convention.
pub fn write_trials_csv<W: Write>(mut w: W, stats: &[TrialStats]) -> io::Result<()> {
    writeln!(w, "# {NOISE_CONVENTION}")?;
    writeln!(w, "method,n,noise,outlier_frac,axis_ratio,seed,e_c,e_a,is_ellipsoid,iters,seconds")?;
    for s in stats {
        let c = &s.cell;
        for r in &s.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.method,
                c.n_points,
                c.noise,
                c.outlier_fraction,
                c.axis_ratio_value(),
                r.seed,
                fmt_f64(r.e_c),
                fmt_f64(r.e_a),
                r.is_ellipsoid,
                r.iterations,
                fmt_f64(r.seconds),
            )?;
        }
    }
    Ok(())
}

/// One row per cell.
pub fn write_aggregate_csv<W: Write>(mut w: W, stats: &[TrialStats]) -> io::Result<()> {
    writeln!(w, "# {NOISE_CONVENTION}")?;
    writeln!(
        w,
        "method,n,noise,outlier_frac,axis_ratio,trials,mean_e_c,median_e_c,std_e_c,mean_e_a,median_e_a,std_e_a,non_ellipsoid,failures,mean_iters,seconds"
    )?;
    for s in stats {
        let c = &s.cell;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.method,
            c.n_points,
            c.noise,
            c.outlier_fraction,
            c.axis_ratio_value(),
            s.records.len(),
            fmt_f64(s.e_c.mean),
            fmt_f64(s.e_c.median),
            fmt_f64(s.e_c.std),
            fmt_f64(s.e_a.mean),
            fmt_f64(s.e_a.median),
            fmt_f64(s.e_a.std),
            s.non_ellipsoid,
            s.failures,
            fmt_f64(s.mean_iterations),
            fmt_f64(s.seconds),
        )?;
    }
    Ok(())
}
