mod io;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::builder::TypedValueParser;
use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde::Serialize;

use ellfit_core::density::{rdos_scores, DEFAULT_K};
use ellfit_core::em::FitConfig;
use ellfit_core::evaluation::{
    generate, run_trials, write_aggregate_csv, write_trials_csv, Cell, SyntheticSpec, TrialStats,
    NOISE_CONVENTION,
};
use ellfit_core::methods::{fit_with, Method};
use ellfit_core::report::{EllipsoidJson, FitReport, TruthReport};
use ellfit_core::{quadric_from_geometric, EulerZyx, Point3, PointCloud};

use crate::io::{parse, write_xyz, Format};

#[derive(Parser)]
#[command(name = "ellfit", version, about = "Robust ellipsoid fitting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an ellipsoid to a point cloud and print the result as JSON.
    Fit(FitArgs),
    /// Write a synthetic ellipsoid cloud and its ground truth.
    Synth(SynthArgs),
    /// Run a benchmark grid and write per-trial and aggregate CSVs.
    Bench(BenchArgs),
    /// Print per-point RDOS scores as CSV.
    Rdos(RdosArgs),
}

#[derive(Args)]
struct InputArgs {
    input: PathBuf,
    /// Input format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct EmArgs {
    /// RDOS neighborhood size.
    #[arg(long, default_value_t = DEFAULT_K, value_parser = clap::value_parser!(u32).range(1..).map(|v| v as usize))]
    k: usize,
    /// Convergence threshold on the squared parameter change.
    #[arg(long, default_value_t = 1e-8)]
    delta: f64,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Disable ε-acceleration.
    #[arg(long)]
    no_accel: bool,
    /// Skip the extra EM run started from zero outlier weight.
    #[arg(long)]
    single_start: bool,
}

impl EmArgs {
    fn config(&self, seed: u64) -> FitConfig {
        FitConfig {
            delta: self.delta,
            max_iters: self.max_iters,
            use_acceleration: !self.no_accel,
            zero_weight_restart: !self.single_start,
            k: self.k,
            seed,
            ..FitConfig::default()
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "em")]
    method: Method,
    #[command(flatten)]
    em: EmArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed sphere template size.
    #[arg(long)]
    m_override: Option<usize>,
    /// Fixed initial outlier weight.
    #[arg(long)]
    w_override: Option<f64>,
    /// Pretty-print with this many spaces of indentation.
    #[arg(long)]
    json_indent: Option<usize>,
    /// Report `seconds` as 0 so the output is reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Semi-axes `a,b,c`.
    #[arg(long, value_parser = triple, default_value = "3,2,1")]
    axes: [f64; 3],
    /// Surface points before outliers.
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise standard deviation as a fraction of the mean radius.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Outlier fraction of the final cloud.
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
    /// Center `x,y,z`; random when omitted.
    #[arg(long, value_parser = triple, allow_hyphen_values = true)]
    center: Option<[f64; 3]>,
    /// Rotation as ZYX angles `yaw,pitch,roll`; random when omitted.
    #[arg(long, value_parser = triple, allow_hyphen_values = true)]
    euler: Option<[f64; 3]>,
    /// Output XYZ file.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth JSON; defaults to `<out>.truth.json`.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Noise levels in percent of the mean radius.
    #[arg(long, value_delimiter = ',', default_values_t = [5.0])]
    noise_grid: Vec<f64>,
    /// Outlier fractions in percent.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0])]
    outlier_grid: Vec<f64>,
    /// Axis ratios; axes (3,2,1) when omitted.
    #[arg(long, value_delimiter = ',')]
    axis_ratio_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "em")]
    methods: Vec<Method>,
    /// Surface points per trial.
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    em: EmArgs,
    /// Directory for `trials.csv` and `aggregate.csv`.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Record wall-clock seconds (makes the CSVs non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct RdosArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = DEFAULT_K, value_parser = clap::value_parser!(u32).range(1..).map(|v| v as usize))]
    k: usize,
}

enum Failure {
    /// Bad input or flags: exit 2.
    Input(String),
    /// The computation failed: exit 3.
    Fit(String),
}

type Outcome = Result<(), Failure>;

fn read_cloud(args: &InputArgs) -> Result<PointCloud, Failure> {
    let path = &args.input;
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let format = args.format.unwrap_or_else(|| Format::from_path(path));
    let points = parse(&text, format).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    if points.is_empty() {
        return Err(Failure::Input(format!("{}: no points", path.display())));
    }
    PointCloud::new(points).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn output_error(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Fit(format!("{}: {e}", path.display()))
}

fn to_json<T: Serialize>(value: &T, indent: Option<usize>) -> String {
    match indent {
        None => serde_json::to_string(value).expect("report serializes"),
        Some(n) => {
            let pad = vec![b' '; n];
            let mut buf = Vec::new();
            let formatter = serde_json::ser::PrettyFormatter::with_indent(&pad);
            let mut ser = serde_json::Serializer::with_formatter(&mut buf, formatter);
            value.serialize(&mut ser).expect("report serializes");
            String::from_utf8(buf).expect("JSON is UTF-8")
        }
    }
}

fn cmd_fit(args: &FitArgs) -> Outcome {
    let cloud = read_cloud(&args.input)?;
    let cfg = FitConfig {
        m_override: args.m_override,
        w_override: args.w_override,
        ..args.em.config(args.seed)
    };
    cfg.validate().map_err(|e| Failure::Input(e.to_string()))?;
    let start = Instant::now();
    let fit = fit_with(&cloud, args.method, &cfg).map_err(|e| Failure::Fit(e.to_string()))?;
    let seconds = if args.no_timing { 0.0 } else { start.elapsed().as_secs_f64() };
    let report = FitReport::new(&fit, cloud.len(), seconds);
    println!("{}", to_json(&report, args.json_indent));
    Ok(())
}

/// Parses `x,y,z`.
fn triple(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into()
        .map_err(|v: Vec<f64>| format!("expected 3 comma-separated values, found {}", v.len()))
}

fn cmd_synth(args: &SynthArgs) -> Outcome {
    let spec = SyntheticSpec {
        center: args.center.map(Point3::from),
        euler: args.euler.map(|[y, p, r]| EulerZyx::new(y, p, r)),
        noise_sigma: args.noise,
        outlier_fraction: args.outliers,
        ..SyntheticSpec::new(Vector3::from(args.axes), args.n, args.seed)
    };
    spec.validate().map_err(|e| Failure::Input(e.to_string()))?;
    let data = generate(&spec).map_err(|e| Failure::Input(e.to_string()))?;

    let file = File::create(&args.out).map_err(output_error(&args.out))?;
    let mut w = BufWriter::new(file);
    write_xyz(&mut w, data.points.points()).map_err(output_error(&args.out))?;
    w.flush().map_err(output_error(&args.out))?;

    let truth_path = args
        .truth
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.truth.json", args.out.display())));
    let truth = TruthReport {
        ellipsoid: EllipsoidJson::from(&data.truth),
        quadric: *quadric_from_geometric(&data.truth).coefficients(),
        n_surface: args.n,
        n_outliers: data.n_outliers,
        noise: args.noise,
        outlier_fraction: args.outliers,
        seed: args.seed,
        noise_convention: NOISE_CONVENTION,
    };
    fs::write(&truth_path, to_json(&truth, Some(2)) + "\n").map_err(output_error(&truth_path))
}

fn cmd_bench(args: &BenchArgs) -> Outcome {
    let ratios: Vec<Option<f64>> = if args.axis_ratio_grid.is_empty() {
        vec![None]
    } else {
        args.axis_ratio_grid.iter().map(|&r| Some(r)).collect()
    };
    if args.trials == 0 || args.n == 0 {
        return Err(Failure::Input("--trials and --n must be positive".into()));
    }
    if ratios.iter().flatten().any(|r| !(*r >= 1.0)) {
        return Err(Failure::Input("axis ratios must be at least 1".into()));
    }
    let mut cells = Vec::new();
    for &method in &args.methods {
        for &noise in &args.noise_grid {
            for &outliers in &args.outlier_grid {
                for &ratio in &ratios {
                    let cell = Cell {
                        noise: noise / 100.0,
                        outlier_fraction: outliers / 100.0,
                        axis_ratio: ratio,
                        ..Cell::new(method, args.n)
                    };
                    cell.spec(0).validate().map_err(|e| Failure::Input(e.to_string()))?;
                    cells.push(cell);
                }
            }
        }
    }
    let cfg = args.em.config(args.seed);
    cfg.validate().map_err(|e| Failure::Input(e.to_string()))?;
    let stats = run_trials(&cells, args.trials, args.seed, &cfg, args.timing);

    fs::create_dir_all(&args.out_dir).map_err(output_error(&args.out_dir))?;
    type Writer = fn(&mut BufWriter<File>, &[TrialStats]) -> std::io::Result<()>;
    let writers: [(&str, Writer); 2] = [
        ("trials.csv", |w, s| write_trials_csv(w, s)),
        ("aggregate.csv", |w, s| write_aggregate_csv(w, s)),
    ];
    for (name, write) in writers {
        let path = args.out_dir.join(name);
        let mut w = BufWriter::new(File::create(&path).map_err(output_error(&path))?);
        write(&mut w, &stats).map_err(output_error(&path))?;
        w.flush().map_err(output_error(&path))?;
    }

    println!(
        "{:<11} {:>6} {:>6} {:>6} {:>10} {:>10} {:>10} {:>7} {:>7}",
        "method", "noise", "outl", "ratio", "mean E_c", "mean E_a", "med E_a", "non-ell", "failed"
    );
    for s in &stats {
        let c = &s.cell;
        println!(
            "{:<11} {:>6.3} {:>6.3} {:>6.2} {:>10.4} {:>10.4} {:>10.4} {:>7} {:>7}",
            c.method.name(),
            c.noise,
            c.outlier_fraction,
            c.axis_ratio_value(),
            s.e_c.mean,
            s.e_a.mean,
            s.e_a.median,
            s.non_ellipsoid,
            s.failures
        );
    }
    if stats.iter().all(|s| s.failures == s.records.len()) {
        return Err(Failure::Fit("every trial failed".into()));
    }
    Ok(())
}

fn cmd_rdos(args: &RdosArgs) -> Outcome {
    let cloud = read_cloud(&args.input)?;
    let report = rdos_scores(&cloud, args.k).map_err(|e| Failure::Input(e.to_string()))?;
    let stdout = std::io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    let fail = |e: std::io::Error| Failure::Fit(e.to_string());
    writeln!(w, "index,x,y,z,bandwidth,density,rdos,outlier").map_err(fail)?;
    for (i, p) in cloud.iter().enumerate() {
        writeln!(
            w,
            "{i},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            p.x,
            p.y,
            p.z,
            report.bandwidths[i],
            report.densities[i],
            report.scores[i],
            report.is_outlier(i)
        )
        .map_err(fail)?;
    }
    w.flush().map_err(fail)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Rdos(a) => cmd_rdos(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("ellfit: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Fit(msg)) => {
            eprintln!("ellfit: {msg}");
            ExitCode::from(3)
        }
    }
}
