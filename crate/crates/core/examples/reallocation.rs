//! Quota reallocation decisions for a few hand-made situations.

use tierqos::{
	policy::plan_reallocation,
	telemetry::ProcessQoSState,
	units::{Bytes, Pid, GIB, MIB},
};

fn process(pid: Pid, t_miss: f64, a_miss: f64, quota: u64) -> ProcessQoSState {
	let mut s = ProcessQoSState::new(pid, t_miss, pid.into(), 100).expect("valid target");
	s.a_miss = a_miss;
	s.quota = quota;
	s.footprint = 64 * GIB;
	s
}

fn show(title: &str, states: &[ProcessQoSState], budget: u64, free: u64) {
	let plan = plan_reallocation(states, budget, free);
	println!(
		"{title}: R = {}, F_need = {:.2}, F_surplus = {:.2}",
		Bytes(budget),
		plan.f_need,
		plan.f_surplus
	);
	for s in states {
		let delta = plan.delta(s.pid);
		let flag = if plan.flagged.contains(&s.pid) {
			" (flagged)"
		} else {
			""
		};
		println!(
			"  pid {} a_miss {:.2} t_miss {:.2}: {:+.1} MiB{flag}",
			s.pid,
			s.a_miss,
			s.t_miss,
			delta as f64 / MIB as f64
		);
	}
}

fn main() {
	show(
		"proportional transfer",
		&[
			process(1, 0.1, 0.4, 8 * GIB),
			process(2, 0.1, 0.05, 10 * GIB),
		],
		2 * GIB,
		0,
	);
	show(
		"idle donor",
		&[
			process(1, 0.1, 0.3, 8 * GIB),
			process(2, 0.5, 0.0, GIB),
			process(3, 0.5, 0.0, 4 * GIB),
		],
		2 * GIB,
		0,
	);
	show(
		"free memory first",
		&[
			process(1, 0.1, 0.3, 8 * GIB),
			process(2, 0.1, 0.05, 8 * GIB),
		],
		2 * GIB,
		GIB,
	);
	show(
		"infeasible mix",
		&[
			process(1, 0.1, 0.3, 8 * GIB),
			process(2, 0.1, 0.6, 8 * GIB),
			process(3, 1.0, 0.9, GIB / 2),
		],
		2 * GIB,
		0,
	);
	show(
		"all targets met",
		&[process(1, 0.1, 0.05, 8 * GIB), process(2, 1.0, 0.5, GIB)],
		2 * GIB,
		3 * GIB,
	);
}
