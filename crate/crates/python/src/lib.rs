//! Python bindings: fit ellipsoids, score outliers and generate test clouds.

#[pyo3::pymodule]
mod ellfit {
    use std::time::Instant;

    use nalgebra::Vector3;
    use pyo3::exceptions::PyValueError;
    use pyo3::prelude::*;

    use ellfit_core::density;
    use ellfit_core::em::FitConfig;
    use ellfit_core::evaluation::{self, SyntheticSpec};
    use ellfit_core::methods::{fit_with, Method};
    use ellfit_core::report::FitReport;
    use ellfit_core::{
        point_to_ellipsoid_distance, quadric_from_geometric, EulerZyx, FitError, Point3,
        PointCloud,
    };

    fn value_error(e: FitError) -> PyErr {
        PyValueError::new_err(e.to_string())
    }

    fn cloud(points: Vec<[f64; 3]>) -> PyResult<PointCloud> {
        PointCloud::from_rows(&points).map_err(value_error)
    }

    fn rows(x: &PointCloud) -> Vec<[f64; 3]> {
        x.iter().map(|p| [p.x, p.y, p.z]).collect()
    }

    #[pyclass(frozen, from_py_object)]
    #[derive(Clone)]
    struct Ellipsoid {
        inner: ellfit_core::Ellipsoid,
    }

    #[pymethods]
    impl Ellipsoid {
        #[new]
        #[pyo3(signature = (center, axes, euler_zyx = [0.0; 3]))]
        fn new(center: [f64; 3], axes: [f64; 3], euler_zyx: [f64; 3]) -> PyResult<Self> {
            let [yaw, pitch, roll] = euler_zyx;
            let inner = ellfit_core::Ellipsoid::from_axes_rotation(
                Point3::from(center),
                Vector3::from(axes),
                &EulerZyx::new(yaw, pitch, roll).rotation(),
            )
            .map_err(value_error)?;
            Ok(Self { inner })
        }

        #[getter]
        fn center(&self) -> [f64; 3] {
            self.inner.center.into()
        }

        /// Semi-axes in descending order.
        #[getter]
        fn axes(&self) -> [f64; 3] {
            self.inner.semi_axes.into()
        }

        #[getter]
        fn euler_zyx(&self) -> [f64; 3] {
            self.inner.euler.to_array()
        }

        /// Unit-norm coefficients `[a, b, c, f, g, h, p, q, r, d]`.
        fn quadric(&self) -> [f64; 10] {
            *quadric_from_geometric(&self.inner).coefficients()
        }

        /// Euclidean distance from `point` to the surface.
        fn distance(&self, point: [f64; 3]) -> f64 {
            point_to_ellipsoid_distance(&Point3::from(point), &self.inner)
        }

        /// Offset and shape errors of `self` measured against `truth`.
        fn errors(&self, truth: &Ellipsoid) -> PyResult<(f64, f64)> {
            let m = evaluation::error_metrics(&truth.inner, &self.inner).map_err(value_error)?;
            Ok((m.e_c, m.e_a))
        }

        fn __repr__(&self) -> String {
            let [cx, cy, cz] = self.center();
            let [a, b, c] = self.axes();
            format!("Ellipsoid(center=[{cx}, {cy}, {cz}], axes=[{a}, {b}, {c}])")
        }
    }

    #[pyclass(frozen)]
    struct FitResult {
        report: FitReport,
        ellipsoid: Option<ellfit_core::Ellipsoid>,
        nll_trace: Vec<f64>,
    }

    #[pymethods]
    impl FitResult {
        #[getter]
        fn method(&self) -> &'static str {
            self.report.method.name()
        }

        /// `None` when a baseline produced a quadric that is not an ellipsoid.
        #[getter]
        fn ellipsoid(&self) -> Option<Ellipsoid> {
            self.ellipsoid.map(|inner| Ellipsoid { inner })
        }

        #[getter]
        fn quadric(&self) -> [f64; 10] {
            self.report.quadric
        }

        #[getter]
        fn iterations(&self) -> usize {
            self.report.iterations
        }

        #[getter]
        fn converged(&self) -> bool {
            self.report.converged
        }

        #[getter]
        fn final_nll(&self) -> Option<f64> {
            self.report.final_nll
        }

        #[getter]
        fn seconds(&self) -> f64 {
            self.report.seconds
        }

        /// Negative log-likelihood after each EM iteration; empty for baselines.
        #[getter]
        fn nll_trace(&self) -> Vec<f64> {
            self.nll_trace.clone()
        }

        /// Same document as `ellfit fit` prints.
        #[pyo3(signature = (indent = None))]
        fn to_json(&self, indent: Option<usize>) -> PyResult<String> {
            let err = |e: serde_json::Error| PyValueError::new_err(e.to_string());
            let Some(width) = indent else {
                return serde_json::to_string(&self.report).map_err(err);
            };
            let pad = " ".repeat(width);
            let mut buf = Vec::new();
            let fmt = serde_json::ser::PrettyFormatter::with_indent(pad.as_bytes());
            let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
            serde::Serialize::serialize(&self.report, &mut ser).map_err(err)?;
            Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
        }
    }

    #[pyfunction]
    #[pyo3(signature = (
        points,
        method = "em",
        k = 15,
        delta = 1e-8,
        max_iters = 500,
        accelerate = true,
        m_override = None,
        w_override = None,
        seed = 0,
        single_start = false,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        py: Python<'_>,
        points: Vec<[f64; 3]>,
        method: &str,
        k: usize,
        delta: f64,
        max_iters: usize,
        accelerate: bool,
        m_override: Option<usize>,
        w_override: Option<f64>,
        seed: u64,
        single_start: bool,
    ) -> PyResult<FitResult> {
        let method: Method = method.parse().map_err(value_error)?;
        let x = cloud(points)?;
        let cfg = FitConfig {
            k,
            delta,
            max_iters,
            use_acceleration: accelerate,
            m_override,
            w_override,
            seed,
            zero_weight_restart: !single_start,
            ..FitConfig::default()
        };
        let start = Instant::now();
        let fitted = py
            .detach(|| fit_with(&x, method, &cfg))
            .map_err(value_error)?;
        let report = FitReport::new(&fitted, x.len(), start.elapsed().as_secs_f64());
        Ok(FitResult {
            report,
            ellipsoid: fitted.ellipsoid,
            nll_trace: fitted.em.map(|r| r.nll_trace).unwrap_or_default(),
        })
    }

    /// Per-point outlier scores; points scoring above 2 count as outliers.
    #[pyfunction]
    #[pyo3(signature = (points, k = 15))]
    fn rdos_scores(points: Vec<[f64; 3]>, k: usize) -> PyResult<Vec<f64>> {
        let x = cloud(points)?;
        Ok(density::rdos_scores(&x, k).map_err(value_error)?.scores)
    }

    /// Noisy samples of a random ellipsoid plus uniform outliers.
    /// Returns `(points, truth)`.
    #[pyfunction]
    #[pyo3(signature = (axes, n, seed = 0, noise = 0.0, outliers = 0.0, center = None, euler_zyx = None))]
    fn synthesize(
        axes: [f64; 3],
        n: usize,
        seed: u64,
        noise: f64,
        outliers: f64,
        center: Option<[f64; 3]>,
        euler_zyx: Option<[f64; 3]>,
    ) -> PyResult<(Vec<[f64; 3]>, Ellipsoid)> {
        let spec = SyntheticSpec {
            center: center.map(Point3::from),
            euler: euler_zyx.map(|[y, p, r]| EulerZyx::new(y, p, r)),
            noise_sigma: noise,
            outlier_fraction: outliers,
            ..SyntheticSpec::new(Vector3::from(axes), n, seed)
        };
        let data = evaluation::generate(&spec).map_err(value_error)?;
        Ok((rows(&data.points), Ellipsoid { inner: data.truth }))
    }
}
