//! Command-line front end: `run` a scenario or `sweep` one parameter.

use {
	crate::{
		engine::{
			run_scenario, steady_fmmr, sustained_convergence, LifecycleEvent, RunOutput, SimError,
		},
		plot,
		scenario::{Action, Scenario, ScenarioError},
		units::{Bytes, Pid},
	},
	anyhow::Context,
	clap::{Parser, Subcommand, ValueEnum},
	rayon::prelude::*,
	serde::Serialize,
	std::{
		fs,
		path::{Path, PathBuf},
	},
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_SCENARIO: i32 = 2;
pub const EXIT_KILLED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "tierqos", version, about = "Two-tier memory QoS simulator")]
pub struct Cli {
	#[command(subcommand)]
	pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
	/// Run a scenario and write metrics.csv, telemetry.csv, events.csv and summary.txt.
	Run(RunArgs),
	/// Run a scenario once per parameter value and compare convergence.
	Sweep(SweepArgs),
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
	/// Scenario file (TOML).
	pub scenario: PathBuf,
	/// Output directory.
	#[arg(long, default_value = "out")]
	pub out: PathBuf,
	/// Overrides the scenario seed.
	#[arg(long)]
	pub seed: Option<u64>,
	/// Also write SVG timelines.
	#[arg(long)]
	pub plot: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
	/// Migration rate in bytes per second (`100MiB`, `1GiB`, ...).
	#[value(name = "migration_cap")]
	MigrationCap,
	/// Epoch length in seconds.
	#[value(name = "epoch_duration")]
	EpochDuration,
}

#[derive(Debug, clap::Args)]
pub struct SweepArgs {
	/// Scenario file (TOML).
	pub scenario: PathBuf,
	#[arg(long, value_enum)]
	pub param: SweepParam,
	/// Comma-separated values.
	#[arg(long, value_delimiter = ',', required = true)]
	pub values: Vec<String>,
	/// Overrides the scenario seed.
	#[arg(long)]
	pub seed: Option<u64>,
	/// Also write sweep.csv here.
	#[arg(long)]
	pub out: Option<PathBuf>,
}

/// Outcome of one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
	pub value: String,
	/// Epochs from the disturbance until the focus process converged.
	pub convergence_epochs: Option<u64>,
	pub convergence_secs: Option<f64>,
	pub steady_fmmr: Option<f64>,
	pub total_migrated: u64,
}

/// The process a sweep reports on (tightest target, lowest pid on ties) and
/// the epoch of its last disturbance (hot-set resize or target change, else
/// its start).
pub fn sweep_focus(scenario: &Scenario) -> Option<(Pid, u64)> {
	let pid = scenario
		.events
		.iter()
		.filter_map(|e| match &e.action {
			Action::Start(spec) => Some((spec.t_miss, spec.pid)),
			_ => None,
		})
		.min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))?
		.1;
	let at = scenario
		.events
		.iter()
		.rev()
		.find(|e| match &e.action {
			Action::ResizeHotSet { pid: p, .. } | Action::SetTmiss { pid: p, .. } => *p == pid,
			_ => false,
		})
		.or_else(|| {
			scenario
				.events
				.iter()
				.find(|e| matches!(&e.action, Action::Start(s) if s.pid == pid))
		})?
		.at;
	Some((pid, scenario.epoch_of(at)))
}

/// Scenario variant for one sweep value.
pub fn sweep_variant(
	scenario: &Scenario,
	param: SweepParam,
	value: &str,
) -> Result<Scenario, String> {
	match param {
		SweepParam::MigrationCap => {
			let rate = value.parse::<Bytes>()?;
			if rate.get() == 0 {
				return Err("migration rate must be positive".into());
			}
			Ok(scenario.with_migration_rate(rate.get() as f64))
		}
		SweepParam::EpochDuration => {
			let secs = value
				.trim()
				.parse::<f64>()
				.map_err(|e| format!("invalid epoch {value:?}: {e}"))?;
			if !(secs > 0.0 && secs.is_finite()) {
				return Err(format!("epoch must be positive, got {value}"));
			}
			Ok(scenario.with_epoch(secs))
		}
	}
}

/// Summarizes one finished sweep run.
pub fn sweep_point(value: &str, scenario: &Scenario, out: &RunOutput) -> SweepPoint {
	let conv = scenario.convergence;
	let focus = sweep_focus(scenario);
	let convergence_epochs = focus.and_then(|(pid, from)| {
		sustained_convergence(&out.rows, pid, from, conv.tolerance, conv.sustain).map(|e| e - from)
	});
	SweepPoint {
		value: value.into(),
		convergence_epochs,
		convergence_secs: convergence_epochs.map(|e| e as f64 * scenario.epoch),
		steady_fmmr: focus
			.and_then(|(pid, _)| steady_fmmr(&out.rows, pid, conv.sustain.max(1) as usize)),
		total_migrated: out.total_migrated,
	}
}

/// Runs `scenario` once per value, in parallel; results keep the value order.
pub fn sweep(
	scenario: &Scenario,
	param: SweepParam,
	values: &[String],
) -> Result<Vec<SweepPoint>, SimError> {
	let variants = values
		.iter()
		.map(|v| {
			sweep_variant(scenario, param, v)
				.map_err(|reason| ScenarioError::Invalid {
					field: "values",
					reason,
				})
				.map(|s| (v, s))
		})
		.collect::<Result<Vec<_>, _>>()?;
	variants
		.par_iter()
		.map(|(value, s)| run_scenario(s).map(|out| sweep_point(value, s, &out)))
		.collect()
}

/// Renders sweep results as an aligned text table.
pub fn format_sweep(param: SweepParam, points: &[SweepPoint]) -> String {
	let name = match param {
		SweepParam::MigrationCap => "rate/s",
		SweepParam::EpochDuration => "epoch_s",
	};
	let mut out = format!(
		"{name:>10} {:>12} {:>12} {:>12} {:>16}\n",
		"conv_epochs", "conv_secs", "steady_fmmr", "migrated_bytes"
	);
	let opt = |v: Option<String>| v.unwrap_or_else(|| "never".into());
	for p in points {
		out += &format!(
			"{:>10} {:>12} {:>12} {:>12} {:>16}\n",
			p.value,
			opt(p.convergence_epochs.map(|e| e.to_string())),
			opt(p.convergence_secs.map(|s| format!("{s:.1}"))),
			opt(p.steady_fmmr.map(|f| format!("{f:.4}"))),
			p.total_migrated,
		);
	}
	let mut ranked = points.iter().collect::<Vec<_>>();
	ranked.sort_by(|a, b| {
		let key = |p: &SweepPoint| p.convergence_secs.unwrap_or(f64::INFINITY);
		key(a).total_cmp(&key(b))
	});
	out += &format!(
		"fastest to slowest: {}\n",
		ranked
			.iter()
			.map(|p| p.value.as_str())
			.collect::<Vec<_>>()
			.join(", ")
	);
	out
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
	let mut writer =
		csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
	for row in rows {
		writer.serialize(row)?;
	}
	writer
		.flush()
		.with_context(|| format!("writing {}", path.display()))?;
	Ok(())
}

/// Writes the run's files into `dir`.
pub fn write_outputs(dir: &Path, out: &RunOutput, with_plots: bool) -> anyhow::Result<()> {
	fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
	let metrics = dir.join("metrics.csv");
	if out.rows.is_empty() {
		// Header only, so downstream readers still find the columns.
		fs::write(
			&metrics,
			"epoch,pid,ops_completed,inst_fmmr,ewma_fmmr,quota_bytes,fast_resident_bytes,migrated_bytes,flagged\n",
		)?;
	} else {
		write_csv(&metrics, &out.rows)?;
	}
	write_csv(&dir.join("telemetry.csv"), &out.telemetry)?;
	write_csv::<LifecycleEvent>(&dir.join("events.csv"), &out.lifecycle)?;
	fs::write(dir.join("summary.txt"), out.summary.to_toml())?;
	if with_plots && !out.rows.is_empty() {
		plot::render_csv(&metrics, dir)?;
	}
	Ok(())
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario, ScenarioError> {
	let mut scenario = Scenario::load(path)?;
	if let Some(seed) = seed {
		scenario.seed = seed;
	}
	Ok(scenario)
}

fn exit_code(err: &SimError) -> i32 {
	match err {
		SimError::Scenario(_) | SimError::Workload { .. } => EXIT_SCENARIO,
		_ => EXIT_FAILURE,
	}
}

fn cmd_run(args: &RunArgs) -> i32 {
	let scenario = match load(&args.scenario, args.seed) {
		Ok(s) => s,
		Err(e) => {
			eprintln!("error: {e}");
			return EXIT_SCENARIO;
		}
	};
	let out = match run_scenario(&scenario) {
		Ok(out) => out,
		Err(e) => {
			eprintln!("error: {e}");
			return exit_code(&e);
		}
	};
	if let Err(e) = write_outputs(&args.out, &out, args.plot) {
		eprintln!("error: {e:#}");
		return EXIT_FAILURE;
	}
	println!(
		"{}: {} epochs, {} rows, {} bytes migrated -> {}",
		scenario.name,
		out.summary.epochs,
		out.rows.len(),
		out.total_migrated,
		args.out.display()
	);
	for p in &out.summary.processes {
		let conv = p
			.converged_epoch
			.map_or("never".into(), |e| format!("epoch {e}"));
		println!(
			"  pid {:>3} t_miss {:.2} final fmmr {:.4} converged {conv} ({})",
			p.pid, p.t_miss, p.final_ewma, p.outcome
		);
	}
	let killed = out.killed();
	if killed.is_empty() {
		EXIT_OK
	} else {
		eprintln!("killed: {killed:?}");
		EXIT_KILLED
	}
}

fn cmd_sweep(args: &SweepArgs) -> i32 {
	let scenario = match load(&args.scenario, args.seed) {
		Ok(s) => s,
		Err(e) => {
			eprintln!("error: {e}");
			return EXIT_SCENARIO;
		}
	};
	let points = match sweep(&scenario, args.param, &args.values) {
		Ok(points) => points,
		Err(e) => {
			eprintln!("error: {e}");
			return exit_code(&e);
		}
	};
	print!("{}", format_sweep(args.param, &points));
	if let Some(dir) = &args.out {
		let written = fs::create_dir_all(dir)
			.with_context(|| format!("creating {}", dir.display()))
			.and_then(|_| write_csv(&dir.join("sweep.csv"), &points));
		if let Err(e) = written {
			eprintln!("error: {e:#}");
			return EXIT_FAILURE;
		}
	}
	EXIT_OK
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
	I: IntoIterator<Item = T>,
	T: Into<std::ffi::OsString> + Clone,
{
	let cli = match Cli::try_parse_from(args) {
		Ok(cli) => cli,
		Err(e) => {
			let _ = e.print();
			return if e.use_stderr() {
				EXIT_SCENARIO
			} else {
				EXIT_OK
			};
		}
	};
	match &cli.command {
		Command::Run(args) => cmd_run(args),
		Command::Sweep(args) => cmd_sweep(args),
	}
}
