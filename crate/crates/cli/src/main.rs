use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use curbside::config::ScenarioConfig;
use curbside::control::PolicySpec;
use curbside::engine::run_simulation;
use curbside::estimation::{
    fit_mixture_gamma, partition_lane, read_observations, FitOptions, ForcedStopObservation,
};
use curbside::georef::{estimate_extrinsics, range_error_report, CameraIntrinsics, Correspondence};
use curbside::metrics::{density_tsv, MetricsOptions};
use curbside::montecarlo::{run_monte_carlo_with, Execution, MonteCarloResult};
use curbside::PatienceModel;

#[derive(Parser)]
#[command(name = "curbside", version, about = "FIFO taxi drop-off lane simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    JsonLines,
}

#[derive(clap::Args)]
struct Scenario {
    /// Scenario TOML file, or `preset:april25` / `preset:july13`.
    #[arg(long)]
    config: String,
    /// TOML fragments merged over the config in order (e.g. fitted patience).
    #[arg(long)]
    overlay: Vec<PathBuf>,
    /// Policy override: batching, no_control, no_wait:L0=<m>,
    /// downstream:L0=<m>,L_H=<m>.
    #[arg(long)]
    policy: Option<String>,
    /// Demand override (taxis/h).
    #[arg(long)]
    demand: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo runs of one scenario.
    Simulate {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long, default_value_t = 1)]
        runs: u64,
        /// Base seed (defaults to the config's seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Mean outflow over a grid of L0 or L_H values.
    Sweep {
        #[command(flatten)]
        scenario: Scenario,
        /// `L0=start:step:stop` or `L_H=v1,v2,...`.
        #[arg(long)]
        sweep: String,
        /// Companion parameter values, one series each (e.g. `L0=0,30,60,90`).
        #[arg(long)]
        fixed: Option<String>,
        #[arg(long, default_value_t = 100)]
        runs: u64,
        #[arg(long)]
        seed: Option<u64>,
        /// Write sweep.tsv here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Lane partition and patience fits from forced-stop observations.
    Estimate {
        /// CSV with columns location,wait,discharged,instance.
        #[arg(long)]
        observations: PathBuf,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 240.0)]
        lane_length: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Camera pose from pixel/world correspondences.
    Georef {
        /// CSV with columns x,y,X,Y,Z.
        #[arg(long)]
        correspondences: PathBuf,
        /// TOML with fx, fy, x0, y0.
        #[arg(long)]
        intrinsics: PathBuf,
        /// Ground points (same CSV layout) for the range-error table.
        #[arg(long)]
        test_points: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            scenario,
            runs,
            seed,
            out,
            format,
        } => simulate(&scenario, runs, seed, &out, format),
        Command::Sweep {
            scenario,
            sweep,
            fixed,
            runs,
            seed,
            out,
            format,
        } => run_sweep(&scenario, &sweep, fixed.as_deref(), runs, seed, out.as_deref(), format),
        Command::Estimate {
            observations,
            k,
            lane_length,
            out,
        } => estimate(&observations, k, lane_length, &out),
        Command::Georef {
            correspondences,
            intrinsics,
            test_points,
            out,
        } => georef(&correspondences, &intrinsics, test_points.as_deref(), &out),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load(s: &Scenario) -> Result<ScenarioConfig> {
    let overlays: Vec<&Path> = s.overlay.iter().map(PathBuf::as_path).collect();
    let mut cfg = match s.config.strip_prefix("preset:") {
        Some(name) => ScenarioConfig::preset_with_overlays(name, &overlays)?,
        None => ScenarioConfig::load(Path::new(&s.config), &overlays)?,
    };
    if let Some(p) = &s.policy {
        cfg.policy = parse_policy(p, &cfg.policy)?;
    }
    if let Some(d) = s.demand {
        cfg.demand_rate = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_policy(text: &str, current: &PolicySpec) -> Result<PolicySpec> {
    let (kind, args) = text.split_once(':').unwrap_or((text, ""));
    let mut l0 = None;
    let mut lh = None;
    for kv in args.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("policy argument {kv:?} is not key=value"))?;
        let v: f64 = v.parse().with_context(|| format!("policy value {v:?}"))?;
        match k {
            "L0" | "l0" => l0 = Some(v),
            "L_H" | "l_h" | "LH" => lh = Some(v),
            _ => bail!("unknown policy parameter {k:?}"),
        }
    }
    Ok(match kind {
        "batching" => match current {
            PolicySpec::Batching { .. } => *current,
            _ => bail!("batching thresholds must come from the config"),
        },
        "no_control" => PolicySpec::NoControl,
        "no_wait" => PolicySpec::NoWait {
            l0: l0.context("no_wait needs L0")?,
        },
        "downstream" => PolicySpec::Downstream {
            l0: l0.context("downstream needs L0")?,
            l_h: lh.context("downstream needs L_H")?,
        },
        other => bail!("unknown policy {other:?}"),
    })
}

fn fmt_opt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "NA".into()
    }
}

fn simulate(s: &Scenario, runs: u64, seed: Option<u64>, out: &Path, format: Format) -> Result<()> {
    let cfg = load(s)?;
    let seed = seed.unwrap_or(cfg.seed);
    let mc = run_monte_carlo_with(&cfg, runs, seed, Execution::Parallel, MetricsOptions::default())?;
    // the first run again, for its event log and raw forced stops
    let first = run_simulation(&cfg, mc.runs[0].seed)?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let write = |name: &str, text: &str| -> Result<()> {
        fs::write(out.join(name), text).with_context(|| format!("writing {name}"))
    };
    write("summary.tsv", &mc.report.summary_tsv())?;
    write("runs.tsv", &runs_tsv(&mc))?;
    write("convergence.tsv", &convergence_tsv(&mc))?;
    write("forced_stops.tsv", &mc.report.forced_stops_tsv())?;
    write("travel_time_density.tsv", &density_tsv(&mc.report.travel_time.histogram, "travel_time_s"))?;
    write(
        "dropoff_location_density.tsv",
        &density_tsv(&mc.report.dropoff_location.histogram, "location_m"),
    )?;
    write("events.jsonl", &first.events_jsonl()?)?;
    write("observations.csv", &observations_csv(&first))?;
    write("scenario.toml", &cfg.to_toml_string()?)?;

    match format {
        Format::Table => print!("{}", mc.report.summary_tsv()),
        Format::JsonLines => {
            let last = mc.last().context("no runs")?;
            println!("{}", serde_json::to_string(last)?);
        }
    }
    Ok(())
}

fn runs_tsv(mc: &MonteCarloResult) -> String {
    let mut s = String::from(
        "run\tseed\toutflow\tmean_travel_time\texits\tforced_stops\tmean_dropoff_location\tqueue_busy_fraction\n",
    );
    for r in &mc.runs {
        let _ = writeln!(
            s,
            "{}\t{}\t{:.4}\t{}\t{}\t{}\t{}\t{:.4}",
            r.index,
            r.seed,
            r.outflow,
            fmt_opt(r.mean_travel_time),
            r.exits,
            r.forced_stops,
            fmt_opt(r.mean_dropoff_location),
            r.queue_busy_fraction
        );
    }
    s
}

fn convergence_tsv(mc: &MonteCarloResult) -> String {
    let mut s = String::from("runs\ttravel_time_mean\ttravel_time_sd\ttravel_time_se\toutflow_mean\toutflow_sd\toutflow_se\n");
    for p in &mc.convergence {
        let _ = writeln!(
            s,
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            p.runs, p.travel_time_mean, p.travel_time_sd, p.travel_time_se, p.outflow_mean, p.outflow_sd, p.outflow_se
        );
    }
    s
}

/// Forced stops of post-warmup taxis in the estimation input format.
fn observations_csv(run: &curbside::RunResult) -> String {
    let mut s = String::from("location,wait,discharged,instance\n");
    for t in &run.taxis {
        if !t.entry_time.is_some_and(|e| e > run.warmup) {
            continue;
        }
        for e in &t.stops {
            let _ = writeln!(s, "{:.3},{:.3},{},{}", e.position, e.wait, u8::from(e.discharged), e.instance);
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Param {
    L0,
    LH,
}

fn parse_param(name: &str) -> Result<Param> {
    match name {
        "L0" | "l0" => Ok(Param::L0),
        "L_H" | "l_h" | "LH" => Ok(Param::LH),
        other => bail!("sweep parameter must be L0 or L_H, got {other:?}"),
    }
}

/// `name=start:step:stop` (inclusive) or `name=v1,v2,...`.
fn parse_grid(spec: &str, lane_length: f64) -> Result<(Param, Vec<f64>)> {
    let (name, values) = spec
        .split_once('=')
        .with_context(|| format!("grid {spec:?} must look like L0=0:30:240"))?;
    let param = parse_param(name.trim())?;
    let mut grid = Vec::new();
    if values.contains(':') {
        let parts: Vec<f64> = values
            .split(':')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("grid range {values:?}"))?;
        let [start, step, stop] = parts[..] else {
            bail!("grid range needs start:step:stop");
        };
        if !(step > 0.0) {
            bail!("grid step must be positive");
        }
        let n = ((stop - start) / step + 1e-9).floor();
        if n >= 0.0 {
            grid.extend((0..=n as usize).map(|i| start + step * i as f64));
        }
    } else {
        for v in values.split(',').map(str::trim).filter(|v| !v.is_empty()) {
            grid.push(v.parse::<f64>().with_context(|| format!("grid value {v:?}"))?);
        }
    }
    if grid.is_empty() {
        bail!("config error: empty sweep grid {spec:?}");
    }
    if let Some(v) = grid.iter().find(|v| !(0.0..=lane_length).contains(*v)) {
        bail!("config error: grid value {v} outside the lane [0, {lane_length}]");
    }
    Ok((param, grid))
}

#[allow(clippy::too_many_arguments)]
fn run_sweep(
    s: &Scenario,
    sweep: &str,
    fixed: Option<&str>,
    runs: u64,
    seed: Option<u64>,
    out: Option<&Path>,
    format: Format,
) -> Result<()> {
    let base = load(s)?;
    let length = base.lane.length;
    let (param, grid) = parse_grid(sweep, length)?;
    let companions = match fixed {
        Some(f) => {
            let (p, v) = parse_grid(f, length)?;
            if p == param {
                bail!("--fixed must name the other parameter");
            }
            v
        }
        None => vec![f64::NAN],
    };
    let seed = seed.unwrap_or(base.seed);
    let mut rows = String::from("policy\tL0\tL_H\truns\toutflow_mean\toutflow_se\ttravel_time_mean\ttravel_time_se\n");
    let mut json = String::new();
    for &c in &companions {
        for &v in &grid {
            let mut cfg = base.clone();
            let (l0, lh) = match param {
                Param::L0 => (v, c),
                Param::LH => (c, v),
            };
            cfg.policy = sweep_policy(&base.policy, l0, lh)?;
            cfg.validate()?;
            let mc = run_monte_carlo_with(&cfg, runs, seed, Execution::Parallel, MetricsOptions::default())?;
            let (pl0, plh) = match cfg.policy {
                PolicySpec::NoWait { l0 } => (l0, f64::NAN),
                PolicySpec::Downstream { l0, l_h } => (l0, l_h),
                _ => (f64::NAN, f64::NAN),
            };
            let _ = writeln!(
                rows,
                "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                cfg.policy.name(),
                fmt_opt(pl0),
                fmt_opt(plh),
                runs,
                mc.outflow.mean,
                mc.outflow.se(),
                mc.travel_time.mean,
                mc.travel_time.se()
            );
            let _ = writeln!(
                json,
                "{}",
                serde_json::json!({
                    "policy": cfg.policy.name(),
                    "l0": pl0.is_finite().then_some(pl0),
                    "l_h": plh.is_finite().then_some(plh),
                    "runs": runs,
                    "outflow_mean": mc.outflow.mean,
                    "outflow_se": mc.outflow.se(),
                    "travel_time_mean": mc.travel_time.mean,
                    "travel_time_se": mc.travel_time.se(),
                })
            );
        }
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("sweep.tsv"), &rows)?;
    }
    match format {
        Format::Table => print!("{rows}"),
        Format::JsonLines => print!("{json}"),
    }
    Ok(())
}

/// Policy for one grid point. A NaN companion keeps the base policy's value.
fn sweep_policy(base: &PolicySpec, l0: f64, lh: f64) -> Result<PolicySpec> {
    let keep = |v: f64, old: Option<f64>| if v.is_nan() { old } else { Some(v) };
    Ok(match *base {
        PolicySpec::NoWait { l0: b0 } => {
            if !lh.is_nan() {
                bail!("no_wait has no L_H; use --policy downstream:... to sweep L_H");
            }
            PolicySpec::NoWait {
                l0: keep(l0, Some(b0)).context("L0")?,
            }
        }
        PolicySpec::Downstream { l0: b0, l_h: bh } => PolicySpec::Downstream {
            l0: keep(l0, Some(b0)).context("L0")?,
            l_h: keep(lh, Some(bh)).context("L_H")?,
        },
        _ => bail!("sweeps need a no_wait or downstream policy (use --policy)"),
    })
}

fn estimate(path: &Path, k: usize, lane_length: f64, out: &Path) -> Result<()> {
    let obs = read_observations(path)?;
    let first: Vec<ForcedStopObservation> = obs.iter().copied().filter(|o| o.instance == 1).collect();
    let later: Vec<ForcedStopObservation> = obs.iter().copied().filter(|o| o.instance > 1).collect();
    if k > first.len() {
        bail!("k = {k} exceeds the {} first-instance observations", first.len());
    }
    let partition = partition_lane(&first, k, lane_length)?;
    let opts = FitOptions::default();
    let mut first_instance = Vec::with_capacity(k);
    for (i, w) in partition.edges.windows(2).enumerate() {
        let last = i + 1 == k;
        let seg: Vec<ForcedStopObservation> = first
            .iter()
            .copied()
            .filter(|o| o.location >= w[0] && (o.location < w[1] || last))
            .collect();
        let fit = fit_mixture_gamma(&seg, opts)
            .with_context(|| format!("segment {} ({}-{} m, {} stops)", i + 1, w[0], w[1], seg.len()))?;
        first_instance.push(fit.params);
    }
    let later_fit = fit_mixture_gamma(&later, opts)
        .with_context(|| format!("later-instance stops ({})", later.len()))?;
    let model = PatienceModel {
        segment_boundaries: partition.boundaries().to_vec(),
        first_instance,
        later_instances: later_fit.params,
    };
    model.validate()?;

    let mut behavior = toml::Table::new();
    behavior.insert("patience".into(), toml::Value::try_from(&model)?);
    let mut root = toml::Table::new();
    root.insert("behavior".into(), toml::Value::Table(behavior));
    let fragment = format!(
        "# Fitted patience model; merge with `simulate --overlay`.\n{}",
        toml::to_string_pretty(&root)?
    );

    let mut table = String::from("segment\tfrom_m\tto_m\tcount\tmean_wait_s\n");
    for i in 0..k {
        let _ = writeln!(
            table,
            "{}\t{}\t{}\t{}\t{:.4}",
            i + 1,
            partition.edges[i],
            partition.edges[i + 1],
            partition.counts[i],
            partition.means[i]
        );
    }
    let _ = writeln!(table, "# objective\t{:.6}", partition.objective);

    fs::create_dir_all(out)?;
    fs::write(out.join("patience.toml"), &fragment)?;
    fs::write(out.join("partition.tsv"), &table)?;
    print!("{table}");
    for w in model.pattern_warnings() {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn read_correspondences(path: &Path) -> Result<Vec<Correspondence>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.with_context(|| format!("{}", path.display()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let v: Vec<f64> = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("{}: line {line}: expected numbers", path.display()))?;
        let [x, y, wx, wy, wz] = v[..] else {
            bail!("{}: line {line}: expected 5 columns x,y,X,Y,Z", path.display());
        };
        out.push(Correspondence {
            pixel: [x, y],
            world: [wx, wy, wz],
        });
    }
    Ok(out)
}

fn georef(corr: &Path, intr: &Path, test: Option<&Path>, out: &Path) -> Result<()> {
    let text = fs::read_to_string(intr).with_context(|| format!("reading {}", intr.display()))?;
    let intrinsics: CameraIntrinsics =
        toml::from_str(&text).with_context(|| format!("{}: intrinsics", intr.display()))?;
    intrinsics.validate()?;
    let points = read_correspondences(corr)?;
    let fit = estimate_extrinsics(&intrinsics, &points)?;
    let mut doc = toml::Table::new();
    doc.insert("extrinsics".into(), toml::Value::try_from(fit.extrinsics)?);
    doc.insert("rms_px".into(), toml::Value::Float(fit.rms_px));
    let mut report = String::from("range_m\ttrue_z_m\tpredicted_z_m\terror_m\n");
    let tests = match test {
        Some(p) => read_correspondences(p)?,
        None => points.clone(),
    };
    for r in range_error_report(&intrinsics, &fit.extrinsics, &tests)? {
        let _ = writeln!(report, "{:.4}\t{:.4}\t{:.6}\t{:.3e}", r.range, r.true_z, r.predicted_z, r.error);
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("extrinsics.toml"), toml::to_string_pretty(&doc)?)?;
    fs::write(out.join("range_error.tsv"), &report)?;
    print!("{}", toml::to_string_pretty(&doc)?);
    Ok(())
}
