//! `mbcri`: fit, simulate and summarize monotone concave production frontiers.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mbcri::artifact::FitArtifact;
use mbcri::data::{Dataset, ReadOptions};
use mbcri::economics::{frontier_multiplier, mpss, technical_efficiency};
use mbcri::estimator::{quantile_sorted, run, ContextSpec, EstimatorMode, FitConfig, PanelSpec, ParamSummary};
use mbcri::frontier::Frontier;
use mbcri::sim::{run_replicates, SimulationSpec};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "mbcri", version, about = "Bayesian monotone concave stochastic frontier estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Seed of the random streams; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML file with estimator settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads for replicate fan-out.
    #[arg(long, global = true, env = "MBCRI_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a frontier from a CSV of observations.
    Fit(FitArgs),
    /// Run simulation replicates of a benchmark design.
    Simulate(SimulateArgs),
    /// Most productive scale size along capital/labor rays of a two-input fit.
    Mpss(MpssArgs),
    /// Efficiency quantiles and period effects of a saved fit.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Smooth,
    NonSmooth,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Skip rows with zero or negative output instead of failing.
    #[arg(long)]
    drop_nonpositive_y: bool,
    /// Remove this fraction of rows with the largest log-linear residuals before fitting.
    #[arg(long)]
    drop_top_residual_fraction: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    example: u8,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
}

#[derive(Args)]
struct MpssArgs {
    #[arg(long)]
    artifact: PathBuf,
    /// Percentiles of the observed capital/labor ratio.
    #[arg(long, value_delimiter = ',', default_value = "10,25,50,75,90")]
    percentiles: Vec<f64>,
    /// Grid points along each ray.
    #[arg(long, default_value_t = 200)]
    grid: usize,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    artifact: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            FitConfig::from_toml_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => FitConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
    match cli.command {
        Command::Fit(a) => fit(a, cfg, &cli.out_dir),
        Command::Simulate(a) => simulate(a, cfg, cli.seed.unwrap_or(0), &cli.out_dir),
        Command::Mpss(a) => mpss_table(a, &cli.out_dir),
        Command::Report(a) => report(a, &cli.out_dir),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn fit(args: FitArgs, mut cfg: FitConfig, out: &Path) -> Result<u8> {
    if let Some(m) = args.mode {
        cfg.mode = match m {
            Mode::Smooth => EstimatorMode::Smooth,
            Mode::NonSmooth => EstimatorMode::NonSmooth,
        };
    }
    let config_text = cfg.to_toml_string()?;
    let mut manifest = RunManifest::new("fit", Some(&args.input), &config_text, cfg.seed);
    let file = fs::File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let opts = ReadOptions { drop_nonpositive_y: args.drop_nonpositive_y };
    let (mut data, read) = Dataset::from_csv(file, &opts).with_context(|| format!("reading {}", args.input.display()))?;
    if !read.dropped_nonpositive_y.is_empty() {
        eprintln!("dropped {} rows with non-positive y: lines {:?}", read.dropped_nonpositive_y.len(), read.dropped_nonpositive_y);
    }
    if let Some(f) = args.drop_top_residual_fraction {
        let removed = data.drop_top_residual_fraction(f)?;
        if !removed.is_empty() {
            eprintln!("dropped {} rows with the largest residuals: data rows {:?}", removed.len(), removed);
        }
    }
    let panel = if data.is_panel() {
        Some(PanelSpec::from_dataset(&data, cfg.effects.gamma_mean, cfg.effects.gamma_variance)?)
    } else {
        None
    };
    let context = match data.context {
        Some(_) => Some(ContextSpec::from_dataset(&data, cfg.effects.delta_mean, cfg.effects.delta_variance)?),
        None => None,
    };
    let summary = run(&data, &cfg, panel.as_ref(), context.as_ref())?;
    let artifact = FitArtifact::new(cfg, data, summary);

    let path = out.join("posterior.json");
    fs::write(&path, artifact.to_json()? + "\n")?;
    manifest.outputs.push(path);
    let path = out.join("observations.csv");
    write_observations(&artifact, &path)?;
    manifest.outputs.push(path);
    let s = &artifact.summary;
    if let (Some(g), Some(p)) = (&s.gamma, &s.gamma_periods) {
        let path = out.join("gamma.csv");
        write_gamma(g, p, &path)?;
        manifest.outputs.push(path);
    }
    if let Some(d) = &s.delta {
        let path = out.join("delta.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["variable", "map", "lower", "upper", "mean"])?;
        for (j, p) in d.iter().enumerate() {
            w.write_record([format!("z{}", j + 1), p.map.to_string(), p.lower.to_string(), p.upper.to_string(), p.mean.to_string()])?;
        }
        w.flush()?;
        manifest.outputs.push(path);
    }
    manifest.write(out)?;
    if s.stationary {
        Ok(0)
    } else {
        eprintln!("chain did not reach stationarity in {} iterations; results cover the last saved iterations", s.iterations);
        Ok(2)
    }
}

fn write_observations(a: &FitArtifact, path: &Path) -> Result<()> {
    let s = &a.summary;
    let d = a.data.dim();
    // The plane column refers to the non-smooth pick or, for smooth fits, the last saved state.
    let model = s.selected_model().or_else(|| s.states.last().map(|st| &st.model));
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = ["index", "firm", "period", "y", "f_hat", "te", "u_hat", "plane"].map(String::from).to_vec();
    header.extend((1..=d).map(|j| format!("mp_{j}")));
    w.write_record(&header)?;
    for (i, o) in a.data.observations.iter().enumerate() {
        let u = s.inefficiency[i];
        let mut row = vec![
            i.to_string(),
            o.firm_id.clone().unwrap_or_default(),
            o.period.map(|p| p.to_string()).unwrap_or_default(),
            o.output.to_string(),
            s.frontier[i].to_string(),
            (-u).exp().to_string(),
            u.to_string(),
            model.map(|m| m.supporting_plane(&o.inputs).to_string()).unwrap_or_default(),
        ];
        row.extend(s.estimate.marginal_products(&o.inputs).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_gamma(g: &[ParamSummary], periods: &[i64], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["period", "map", "lower", "upper", "mean", "multiplier"])?;
    for (p, s) in periods.iter().zip(g) {
        w.write_record([
            p.to_string(),
            s.map.to_string(),
            s.lower.to_string(),
            s.upper.to_string(),
            s.mean.to_string(),
            frontier_multiplier(s.map).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn simulate(args: SimulateArgs, cfg: FitConfig, seed: u64, out: &Path) -> Result<u8> {
    let spec = SimulationSpec {
        example: args.example,
        rho: args.rho,
        n: args.n,
        replicates: args.replicates,
        seed,
        ..SimulationSpec::default()
    };
    let config_text = format!("{}\n{}", cfg.to_toml_string()?, serde_json::to_string(&spec)?);
    let mut manifest = RunManifest::new("simulate", None, &config_text, seed);
    let result = run_replicates(&spec, &cfg)?;

    let dir = out.join("replicates");
    fs::create_dir_all(&dir)?;
    for o in &result.outcomes {
        let path = dir.join(format!("replicate_{:03}.json", o.replicate));
        fs::write(&path, serde_json::to_string_pretty(o)? + "\n")?;
        if let Some(e) = &o.error {
            eprintln!("replicate {} failed: {e}", o.replicate);
        }
        manifest.outputs.push(path);
    }
    let path = out.join("aggregate.csv");
    let mut w = csv_writer(&path)?;
    w.serialize(&result.aggregate)?;
    w.flush()?;
    manifest.outputs.push(path);
    let path = out.join("timings.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["replicate", "seconds"])?;
    for (o, t) in result.outcomes.iter().zip(&result.runtimes) {
        w.write_record([o.replicate.to_string(), format!("{t:.3}")])?;
    }
    w.flush()?;
    manifest.outputs.push(path);
    manifest.write(out)?;
    let a = &result.aggregate;
    println!(
        "example {} rho {} n {}: mean MSE f {:.6} (sd {:.6}), mean inefficiency deviation {:.4}, {} of {} replicates failed",
        a.example, a.rho, a.n, a.mse_f_mean, a.mse_f_sd, a.mean_ineff_deviation, a.failed, a.replicates
    );
    Ok(0)
}

fn load_artifact(path: &Path) -> Result<FitArtifact> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    FitArtifact::from_json(&text).with_context(|| format!("loading {}", path.display()))
}

fn mpss_table(args: MpssArgs, out: &Path) -> Result<u8> {
    let a = load_artifact(&args.artifact)?;
    if a.data.dim() != 2 {
        bail!("scale analysis needs two inputs (capital, labor); the fit has {}", a.data.dim());
    }
    if let Some(p) = args.percentiles.iter().find(|p| !(0.0..=100.0).contains(*p)) {
        bail!("percentile {p} is outside [0, 100]");
    }
    let mut manifest = RunManifest::new("mpss", Some(&args.artifact), &a.config.to_toml_string()?, a.config.seed);
    let mut ratios: Vec<f64> = a.data.observations.iter().map(|o| o.inputs[0] / o.inputs[1]).collect();
    ratios.sort_by(f64::total_cmp);
    let span = |j: usize| {
        let vals = a.data.observations.iter().map(|o| o.inputs[j]);
        vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (capital, labor) = (span(0), span(1));
    let frontier: &dyn Frontier = match a.summary.selected_model() {
        Some(m) => m,
        None => &a.summary.estimate,
    };
    let path = out.join("mpss.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["percentile", "ratio", "capital", "labor", "average_product"])?;
    for &p in &args.percentiles {
        let ratio = quantile_sorted(&ratios, p / 100.0);
        // Each ray is kept inside the observed input box.
        let range = (labor.0.max(capital.0 / ratio), labor.1.min(capital.1 / ratio));
        if range.0 > range.1 {
            bail!("the ray at ratio {ratio} leaves the observed input range");
        }
        let m = mpss(frontier, ratio, args.grid, range)?;
        w.write_record([p.to_string(), ratio.to_string(), m.capital.to_string(), m.labor.to_string(), m.average_product.to_string()])?;
    }
    w.flush()?;
    manifest.outputs.push(path);
    manifest.write(out)?;
    Ok(0)
}

fn report(args: ReportArgs, out: &Path) -> Result<u8> {
    let a = load_artifact(&args.artifact)?;
    let mut manifest = RunManifest::new("report", Some(&args.artifact), &a.config.to_toml_string()?, a.config.seed);
    let s = &a.summary;
    let draws: Vec<Vec<f64>> = s.states.iter().map(|st| st.u.clone()).collect();
    let eff = technical_efficiency(&draws)?;
    let path = out.join("efficiency.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["statistic", "efficiency"])?;
    for (label, v) in eff.quantiles.rows() {
        w.write_record([label.to_string(), v.to_string()])?;
    }
    w.flush()?;
    manifest.outputs.push(path);
    println!("median inefficiency {:.4}", eff.median_inefficiency);
    println!("planes (posterior mode) {}", s.planes_mode);
    println!("theta {:.4} [{:.4}, {:.4}]", s.theta.map, s.theta.lower, s.theta.upper);
    if let (Some(g), Some(p)) = (&s.gamma, &s.gamma_periods) {
        let path = out.join("gamma.csv");
        write_gamma(g, p, &path)?;
        manifest.outputs.push(path);
    }
    manifest.write(out)?;
    Ok(0)
}
