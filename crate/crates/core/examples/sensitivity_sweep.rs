//! Convergence after a hot set doubles, across migration rates and epoch lengths.

use tierqos::{
	cli::{format_sweep, sweep, SweepParam},
	scenario::Scenario,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
	let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/hotset_growth.toml");
	let scenario = Scenario::load(path)?;
	let rates = ["1MiB", "4MiB", "8MiB", "32MiB", "128MiB"].map(String::from);
	print!(
		"{}",
		format_sweep(
			SweepParam::MigrationCap,
			&sweep(&scenario, SweepParam::MigrationCap, &rates)?
		)
	);
	println!();
	let epochs = ["0.25", "0.5", "1", "2"].map(String::from);
	print!(
		"{}",
		format_sweep(
			SweepParam::EpochDuration,
			&sweep(&scenario, SweepParam::EpochDuration, &epochs)?
		)
	);
	Ok(())
}
