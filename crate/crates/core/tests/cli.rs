//! End-to-end tests of the `tierqos` binary.

mod common;

use {
	common::scenario_path,
	std::{
		collections::BTreeSet,
		fs,
		path::Path,
		process::{Command, Output},
	},
	tempfile::TempDir,
	tierqos::{
		cli::{EXIT_KILLED, EXIT_OK, EXIT_SCENARIO},
		plot::read_metrics,
	},
};

const SMALL: &str = r#"
name = "small"
duration = 12
seed = 4
page_size = "64KiB"
fast_capacity = "4MiB"
slow_capacity = "64MiB"
registration_threshold = "256KiB"
migration_cap = "1MiB"

[perf]
fast_latency = 10000
slow_latency = 40000

[sampler]
period = 10

[[events]]
at = 0
action = "start"
pid = 1
t_miss = 1.0
working_set = "4MiB"
pattern = { kind = "uniform" }

[[events]]
at = 2
action = "start"
pid = 2
t_miss = 0.1
working_set = "8MiB"
pattern = { kind = "hot_set", hot = "2MiB", hot_frac = 0.95 }

[[events]]
at = 6
action = "resize_hot_set"
pid = 2
hot = "3MiB"

[[events]]
at = 9
action = "stop"
pid = 1
"#;

fn tierqos(args: &[&str]) -> Output {
	Command::new(env!("CARGO_BIN_EXE_tierqos"))
		.args(args)
		.output()
		.expect("binary runs")
}

fn write_scenario(dir: &TempDir, text: &str) -> String {
	let path = dir.path().join("scenario.toml");
	fs::write(&path, text).unwrap();
	path.to_str().unwrap().to_owned()
}

fn path_str(p: &Path) -> &str {
	p.to_str().unwrap()
}

#[test]
fn run_writes_one_row_per_live_process_and_epoch() {
	let dir = TempDir::new().unwrap();
	let scenario = write_scenario(&dir, SMALL);
	let out = dir.path().join("out");
	let result = tierqos(&["run", &scenario, "--out", path_str(&out), "--plot"]);
	assert_eq!(
		result.status.code(),
		Some(EXIT_OK),
		"{}",
		String::from_utf8_lossy(&result.stderr)
	);

	for file in [
		"metrics.csv",
		"telemetry.csv",
		"events.csv",
		"summary.txt",
		"fmmr.svg",
		"throughput.svg",
		"quota.svg",
	] {
		assert!(out.join(file).is_file(), "{file} missing");
	}
	let header = fs::read_to_string(out.join("metrics.csv")).unwrap();
	assert!(header.starts_with(
		"epoch,pid,ops_completed,inst_fmmr,ewma_fmmr,quota_bytes,fast_resident_bytes,migrated_bytes,flagged\n"
	));

	let rows = read_metrics(&out.join("metrics.csv")).unwrap();
	let keys = rows.iter().map(|r| (r.epoch, r.pid)).collect::<Vec<_>>();
	// pid 1 lives in epochs 0..9, pid 2 in 2..12.
	let expected = (0..12u64)
		.flat_map(|e| [(e, 1), (e, 2)])
		.filter(|&(e, pid)| if pid == 1 { e < 9 } else { e >= 2 })
		.collect::<Vec<_>>();
	assert_eq!(keys, expected);
	assert_eq!(keys.iter().collect::<BTreeSet<_>>().len(), keys.len());

	let events = fs::read_to_string(out.join("events.csv")).unwrap();
	assert!(events.contains("9,1,exited"), "{events}");
	let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
	assert!(summary.contains("scenario = \"small\""), "{summary}");
}

#[test]
fn seed_override_changes_the_stream_but_not_the_shape() {
	let dir = TempDir::new().unwrap();
	let scenario = write_scenario(&dir, SMALL);
	let read = |seed: &str| {
		let out = dir.path().join(format!("out-{seed}"));
		let result = tierqos(&["run", &scenario, "--out", path_str(&out), "--seed", seed]);
		assert_eq!(result.status.code(), Some(EXIT_OK));
		fs::read_to_string(out.join("metrics.csv")).unwrap()
	};
	let (a, b, a_again) = (read("1"), read("2"), read("1"));
	assert_eq!(a, a_again);
	assert_ne!(a, b);
	assert_eq!(a.lines().count(), b.lines().count());
}

#[test]
fn sweeps_rank_their_values() {
	let dir = TempDir::new().unwrap();
	let scenario = write_scenario(&dir, SMALL);
	let result = tierqos(&[
		"sweep",
		&scenario,
		"--param",
		"migration_cap",
		"--values",
		"256KiB,1MiB,16MiB",
	]);
	assert_eq!(
		result.status.code(),
		Some(EXIT_OK),
		"{}",
		String::from_utf8_lossy(&result.stderr)
	);
	let table = String::from_utf8(result.stdout).unwrap();
	assert_eq!(table.lines().count(), 5, "{table}");
	assert!(table.contains("fastest to slowest:"), "{table}");
	for v in ["256KiB", "1MiB", "16MiB"] {
		assert!(table.contains(v), "{table}");
	}

	let out = dir.path().join("sweep");
	let result = tierqos(&[
		"sweep",
		&scenario,
		"--param",
		"epoch_duration",
		"--values",
		"0.5,1,2",
		"--out",
		path_str(&out),
	]);
	assert_eq!(
		result.status.code(),
		Some(EXIT_OK),
		"{}",
		String::from_utf8_lossy(&result.stderr)
	);
	let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
	assert_eq!(csv.lines().count(), 4, "{csv}");
}

#[test]
fn bad_sweep_values_are_scenario_errors() {
	let dir = TempDir::new().unwrap();
	let scenario = write_scenario(&dir, SMALL);
	let result = tierqos(&[
		"sweep",
		&scenario,
		"--param",
		"epoch_duration",
		"--values",
		"1,-2",
	]);
	assert_eq!(result.status.code(), Some(EXIT_SCENARIO));
	let result = tierqos(&["sweep", &scenario, "--param", "page_size", "--values", "1"]);
	assert_eq!(result.status.code(), Some(EXIT_SCENARIO));
}

#[test]
fn out_of_order_events_name_the_offending_index() {
	let dir = TempDir::new().unwrap();
	let text = SMALL.replace("at = 6\n", "at = 1\n");
	let scenario = write_scenario(&dir, &text);
	let result = tierqos(&["run", &scenario, "--out", path_str(&dir.path().join("out"))]);
	assert_eq!(result.status.code(), Some(EXIT_SCENARIO));
	let stderr = String::from_utf8_lossy(&result.stderr);
	assert!(stderr.contains("event 2"), "{stderr}");
	assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_and_malformed_scenarios_are_rejected() {
	let dir = TempDir::new().unwrap();
	let missing = dir.path().join("nope.toml");
	let result = tierqos(&["run", path_str(&missing)]);
	assert_eq!(result.status.code(), Some(EXIT_SCENARIO));

	let scenario = write_scenario(&dir, "duration = \"soon\"\n");
	let result = tierqos(&["run", &scenario]);
	assert_eq!(result.status.code(), Some(EXIT_SCENARIO));

	let result = tierqos(&["launch"]);
	assert_eq!(result.status.code(), Some(EXIT_SCENARIO));
}

#[test]
fn killed_processes_set_the_exit_code_and_are_reported() {
	let dir = TempDir::new().unwrap();
	let out = dir.path().join("out");
	let scenario = scenario_path("overcommit.toml");
	let result = tierqos(&["run", path_str(&scenario), "--out", path_str(&out)]);
	assert_eq!(result.status.code(), Some(EXIT_KILLED));
	let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
	assert!(summary.contains("killed = [1]"), "{summary}");
	let events = fs::read_to_string(out.join("events.csv")).unwrap();
	assert!(events.contains(",1,killed,"), "{events}");
}
