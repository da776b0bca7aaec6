//! Six co-located processes with staggered arrivals, a hot-set change and a
//! target change. Pass a directory to also write the CSVs and charts.

use tierqos::{cli::write_outputs, engine::run_scenario, scenario::Scenario, units::MIB};

fn main() -> Result<(), Box<dyn std::error::Error>> {
	let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/colocation.toml");
	let scenario = Scenario::load(path)?;
	let out = run_scenario(&scenario)?;

	let pids = scenario.pids();
	print!("epoch");
	for pid in &pids {
		print!("  p{pid} fmmr / quota");
	}
	println!();
	for epoch in (0..scenario.epochs()).step_by(20) {
		print!("{epoch:>5}");
		for pid in &pids {
			match out.rows.iter().find(|r| r.epoch == epoch && r.pid == *pid) {
				Some(r) => print!("  {:>7.3} / {:>4}M", r.ewma_fmmr, r.quota_bytes / MIB),
				None => print!("  {:>16}", "-"),
			}
		}
		println!();
	}
	for p in &out.summary.processes {
		let converged = p.converged_epoch.map_or("never converged".to_owned(), |e| {
			format!("converged at epoch {e}")
		});
		println!("pid {} {converged}, final fmmr {:.3}", p.pid, p.final_ewma);
	}
	if let Some(dir) = std::env::args().nth(1) {
		write_outputs(dir.as_ref(), &out, true)?;
		println!("wrote {dir}");
	}
	Ok(())
}
