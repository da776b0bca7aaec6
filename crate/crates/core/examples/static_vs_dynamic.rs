//! A key-value store whose hot set outgrows a static partition, under each policy.

use tierqos::{
	engine::{run_scenario, steady_fmmr},
	policy::PolicyKind,
	scenario::Scenario,
	units::MIB,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
	let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/kvs_dynamic.toml");
	let scenario = Scenario::load(path)?;
	println!(
		"{:>8} {:>10} {:>10} {:>12}",
		"policy", "kvs fmmr", "kvs quota", "graph fmmr"
	);
	for policy in [PolicyKind::Static, PolicyKind::MaxMem, PolicyKind::NoQos] {
		let out = run_scenario(&scenario.with_policy(policy))?;
		let quota = out.rows_of(1).last().map_or(0, |r| r.quota_bytes);
		println!(
			"{:>8} {:>10.4} {:>9}M {:>12.4}",
			format!("{policy:?}").to_lowercase(),
			steady_fmmr(&out.rows, 1, 30).unwrap_or(f64::NAN),
			quota / MIB,
			steady_fmmr(&out.rows, 2, 30).unwrap_or(f64::NAN),
		);
	}
	Ok(())
}
