mod config;
mod plot;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use trackcast::cells::CellKind;
use trackcast::eval::{
    ablation_csv, collect_pairs, comparison_csv, evaluate_linear, evaluate_model, evaluate_pairs, frequency_csv,
    maintenance_frequency_report, run_ablation, AblationCase, EvalReport,
};
use trackcast::forecast::{
    load_checkpoint, save_checkpoint, target_of, train, ForecastModel, TrainOutcome,
};
use trackcast::trackgen::{make_windows, read_dataset, simulate, split_by_ratio, write_dataset, Splits, TrackDataset};
use trackcast::{par, Error, Result};

use config::RunConfig;
use plot::PlotKind;

const THREADS_ENV: &str = "TRACKCAST_THREADS";

#[derive(Parser)]
#[command(name = "trackcast", version, about = "Track alignment forecasting runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct DataArg {
    /// Dataset directory; simulated from the config scenario when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from the scenario section.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model and write its checkpoint and loss history.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Evaluate a checkpoint and the linear baseline on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Predict the observed targets instead of running a model.
        #[arg(long)]
        oracle: bool,
    },
    /// Train and evaluate the exogenous ablation grid.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
        /// Comma-separated case names; all 8 when absent.
        #[arg(long)]
        cases: Option<String>,
    },
    /// Train every variant in `compare.variants` and report them side by side.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArg,
    },
    /// Render a CSV as an SVG line or scatter plot.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// x column; the first column when absent.
        #[arg(long)]
        x: Option<String>,
        /// Comma-separated y columns; every other column when absent.
        #[arg(long)]
        y: Option<String>,
        #[arg(long, value_enum, default_value = "line")]
        kind: PlotKind,
    },
}

/// Timestamped lines go to `run.log` and stderr; nothing else carries a clock.
struct RunLog {
    file: fs::File,
}

impl RunLog {
    fn open(dir: &Path) -> Result<Self> {
        let path = dir.join("run.log");
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        Ok(Self { file })
    }

    fn line(&mut self, msg: &str) {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        let stamped = format!("[{}.{:03}] {msg}", now.as_secs(), now.subsec_millis());
        let _ = writeln!(self.file, "{stamped}");
        eprintln!("{msg}");
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.into(),
        source,
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    log: RunLog,
}

fn start(common: &Common, command: &str) -> Result<Run> {
    let cfg = RunConfig::load(&common.config)?.with_seed(common.seed);
    cfg.validate()?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::Usage("no output directory: pass --out or set `output` in the config".into()))?;
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    write(&out.join("config.resolved.toml"), cfg.to_toml())?;
    let mut log = RunLog::open(&out)?;
    log.line(&format!("{command}: seed {} -> {}", cfg.seed, out.display()));
    Ok(Run { cfg, out, log })
}

fn load_data(run: &mut Run, data: &DataArg) -> Result<TrackDataset> {
    match &data.data {
        Some(dir) => {
            let ds = read_dataset(dir)?;
            run.log.line(&format!(
                "dataset {}: {} inspections x {} positions",
                dir.display(),
                ds.inspections(),
                ds.positions()
            ));
            Ok(ds)
        }
        None => {
            run.log.line("no --data given, simulating from the scenario section");
            simulate(&run.cfg.scenario)
        }
    }
}

fn splits(run: &Run, ds: &TrackDataset) -> Result<Splits> {
    split_by_ratio(ds, run.cfg.evaluation.ratios())
}

fn save_trained(run: &mut Run, dir: &Path, t: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write(&dir.join("checkpoint.bin"), save_checkpoint(&t.model))?;
    write(&dir.join("loss.csv"), t.history.to_csv())?;
    let best = t.history.validation[t.best_epoch - 1];
    run.log.line(&format!(
        "{}: kept epoch {} of {} (validation loss {best:.6})",
        dir.display(),
        t.best_epoch,
        t.history.train.len()
    ));
    Ok(())
}

fn timed<T>(log: &mut RunLog, what: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t0 = std::time::Instant::now();
    let r = f();
    log.line(&format!("{what} took {:.1} s", t0.elapsed().as_secs_f64()));
    r
}

fn cmd_simulate(common: &Common) -> Result<()> {
    let mut run = start(common, "simulate")?;
    let scenario = run.cfg.scenario.clone();
    let ds = timed(&mut run.log, "simulation", || simulate(&scenario))?;
    write_dataset(&ds, &run.out)?;
    let v = &ds.irregularities;
    let mut below4 = 0usize;
    for t in 0..ds.inspections() {
        for side in 0..2 {
            below4 += v.row(t, side).iter().filter(|&&x| x < -4.0).count();
        }
    }
    let flags: usize = (0..ds.inspections())
        .flat_map(|t| (0..ds.positions()).map(move |l| (t, l)))
        .map(|(t, l)| {
            (0..trackcast::embed::MAINTENANCE_CATEGORIES.len())
                .filter(|&k| ds.exogenous.maintenance_at(t, k, l) != 0)
                .count()
        })
        .sum();
    let summary = format!(
        "positions {}\ninspections {}\nyears {:.3}\nmaintenance_flags {flags}\nvertical_below_-4 {below4}\nprovenance {}\n",
        ds.positions(),
        ds.inspections(),
        ds.years_spanned(),
        ds.provenance
    );
    write(&run.out.join("scenario_summary.txt"), summary)?;
    run.log.line("dataset written");
    Ok(())
}

fn cmd_train(common: &Common, data: &DataArg) -> Result<()> {
    let mut run = start(common, "train")?;
    let ds = load_data(&mut run, data)?;
    let sp = splits(&run, &ds)?;
    let model = ForecastModel::new(run.cfg.model.clone(), ds.positions(), run.cfg.seed)?;
    run.log.line(&format!(
        "{} with {} parameters, {} epochs",
        model.config.variant.name(),
        model.parameter_count(),
        run.cfg.training.epochs
    ));
    let (training, seed) = (run.cfg.training.clone(), run.cfg.seed);
    let outcome = timed(&mut run.log, "training", || train(model, &sp.train, &sp.validation, &training, seed))?;
    let out = run.out.clone();
    save_trained(&mut run, &out, &outcome)
}

fn cmd_evaluate(common: &Common, data: &DataArg, checkpoint: Option<&Path>, oracle: bool) -> Result<()> {
    let mut run = start(common, "evaluate")?;
    let ds = load_data(&mut run, data)?;
    let sp = splits(&run, &ds)?;
    let settings = run.cfg.evaluation.settings();
    let tau = run.cfg.model.tau;

    let (name, report) = if oracle {
        run.log.line("oracle mode: predictions are the observed targets");
        let windows = make_windows(sp.test.inspections(), tau)?.windows;
        let pairs = collect_pairs(&sp.test, &windows, |w| Ok(target_of(&sp.test, w)))?;
        ("oracle".to_string(), evaluate_pairs(&pairs, ds.positions(), &settings)?)
    } else {
        let path = checkpoint.expect("clap requires --checkpoint without --oracle");
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        let model = load_checkpoint(&bytes)?;
        if model.config != run.cfg.model {
            return Err(Error::Config(format!(
                "checkpoint {} was trained with a different model section:\n  checkpoint: {:?}\n  config:     {:?}",
                path.display(),
                model.config,
                run.cfg.model
            )));
        }
        if model.positions != ds.positions() {
            return Err(Error::Config(format!(
                "checkpoint covers {} positions, dataset has {}",
                model.positions,
                ds.positions()
            )));
        }
        (model.config.variant.name().to_string(), evaluate_model(&model, &sp.test, &settings)?)
    };
    let linear = evaluate_linear(&sp.test, tau, &settings)?;
    write_reports(&mut run, &sp.test, vec![(name, report)], linear)
}

/// `comparison.csv` for every model plus the baseline, and `frequency_scatter.csv`
/// for the first model against the baseline.
fn write_reports(run: &mut Run, test: &TrackDataset, models: Vec<(String, EvalReport)>, linear: EvalReport) -> Result<()> {
    let settings = run.cfg.evaluation.settings();
    let freq = maintenance_frequency_report(test, &models[0].1.per_position_rmse, &linear.per_position_rmse)?;
    let mut rows = models;
    for (name, r) in &rows {
        run.log.line(&format!("{name}: rmse {:.4} over {} pairs", r.entire.rmse.unwrap_or(f64::NAN), r.entire.n));
    }
    rows.push(("linear".into(), linear));
    write(&run.out.join("comparison.csv"), comparison_csv(&rows, &settings))?;
    write(&run.out.join("frequency_scatter.csv"), frequency_csv(&freq))?;
    Ok(())
}

fn cmd_ablate(common: &Common, data: &DataArg, cases: Option<&str>) -> Result<()> {
    let mut run = start(common, "ablate")?;
    let cases = match cases {
        Some(list) => AblationCase::parse_list(list)?,
        None => AblationCase::grid(),
    };
    if cases.is_empty() {
        return Err(Error::Usage("--cases is empty".into()));
    }
    let ds = load_data(&mut run, data)?;
    let sp = splits(&run, &ds)?;
    let settings = run.cfg.evaluation.settings();
    let names: Vec<String> = cases.iter().map(|c| c.name()).collect();
    run.log.line(&format!("cases: {}", names.join(", ")));
    let (model, training, seed) = (run.cfg.model.clone(), run.cfg.training.clone(), run.cfg.seed);
    let rows = timed(&mut run.log, "ablation", || {
        Ok(run_ablation(&model, &training, &sp, &cases, seed, &settings))
    })?;
    let mut failed = Vec::new();
    for r in &rows {
        match (&r.trained, &r.outcome) {
            (Some(t), Ok(_)) => {
                let dir = run.out.join("cases").join(r.case.name());
                save_trained(&mut run, &dir, t)?;
            }
            (_, Err(e)) => {
                run.log.line(&format!("warning: case {} failed: {e}", r.case.name()));
                failed.push(r.case.name());
            }
            _ => {}
        }
    }
    write(&run.out.join("ablation.csv"), ablation_csv(&rows, &settings))?;
    if failed.len() == rows.len() {
        return Err(Error::Numeric {
            name: "ablation".into(),
            detail: format!("every case failed ({}), see run.log", failed.join(", ")),
        });
    }
    if !failed.is_empty() {
        run.log.line(&format!("warning: {} of {} cases failed: {}", failed.len(), rows.len(), failed.join(", ")));
    }
    Ok(())
}

fn cmd_compare(common: &Common, data: &DataArg) -> Result<()> {
    let mut run = start(common, "compare")?;
    let ds = load_data(&mut run, data)?;
    let sp = splits(&run, &ds)?;
    let settings = run.cfg.evaluation.settings();
    let variants: Vec<CellKind> = run.cfg.compare.variants.clone();
    let (base, training, seed) = (run.cfg.model.clone(), run.cfg.training.clone(), run.cfg.seed);
    let trained = timed(&mut run.log, "training all variants", || {
        Ok(par::map(&variants, |&variant| {
            let config = trackcast::forecast::ModelConfig { variant, ..base.clone() };
            let model = ForecastModel::new(config, ds.positions(), seed)?;
            let t = train(model, &sp.train, &sp.validation, &training, seed)?;
            let report = evaluate_model(&t.model, &sp.test, &settings)?;
            Ok((t, report))
        }))
    })?;
    let mut rows = Vec::new();
    for (variant, r) in variants.iter().zip(trained) {
        let (t, report): (TrainOutcome, EvalReport) = r?;
        let dir = run.out.join("models").join(variant.name());
        save_trained(&mut run, &dir, &t)?;
        rows.push((variant.name().to_string(), report));
    }
    let linear = evaluate_linear(&sp.test, base.tau, &settings)?;
    write_reports(&mut run, &sp.test, rows, linear)
}

fn cmd_plot(input: &Path, out: &Path, x: Option<&str>, y: Option<&str>, kind: PlotKind) -> Result<()> {
    let table = plot::read_table(input)?;
    let x = x.map(str::to_string).unwrap_or_else(|| table.header[0].clone());
    let ys: Vec<String> = match y {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => table.header.iter().filter(|h| **h != x).cloned().collect(),
    };
    let svg = plot::render(&table, &x, &ys, kind)?;
    write(out, svg)
}

fn threads() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = threads().and_then(|n| {
        par::with_threads(n, || match &cli.command {
            Command::Simulate { common } => cmd_simulate(common),
            Command::Train { common, data } => cmd_train(common, data),
            Command::Evaluate {
                common,
                data,
                checkpoint,
                oracle,
            } => cmd_evaluate(common, data, checkpoint.as_deref(), *oracle),
            Command::Ablate { common, data, cases } => cmd_ablate(common, data, cases.as_deref()),
            Command::Compare { common, data } => cmd_compare(common, data),
            Command::Plot { input, out, x, y, kind } => cmd_plot(input, out, x.as_deref(), y.as_deref(), *kind),
        })
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
