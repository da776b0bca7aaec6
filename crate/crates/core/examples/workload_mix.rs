//! Access shares of the synthetic patterns.

use tierqos::{
	units::{Bytes, MIB},
	workload::{process_rng, Generator, PatternSpec},
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
	let page = 2 * MIB;
	let patterns = [
		PatternSpec::Uniform,
		PatternSpec::Zipf { exponent: 1.0 },
		PatternSpec::HotSet {
			hot: Bytes(64 * MIB),
			hot_frac: 0.9,
		},
		PatternSpec::HotWarm {
			hot: Bytes(32 * MIB),
			warm: Bytes(128 * MIB),
			hot_frac: 0.6,
			warm_frac: 0.3,
		},
	];
	println!("{:>10} {:>12} {:>12}", "pattern", "first 64MiB", "expected");
	for (pid, spec) in patterns.into_iter().enumerate() {
		let mut generator =
			Generator::new(spec.clone(), 512 * MIB, page, process_rng(7, pid as u32))?;
		let prefix = 64 * MIB / page;
		let accesses = generator.next_accesses(200_000);
		let seen = accesses.iter().filter(|&&p| p < prefix).count() as f64 / accesses.len() as f64;
		let expected = generator.share_where(|p| p < prefix);
		println!("{:>10} {seen:>12.4} {expected:>12.4}", spec.name());
	}
	Ok(())
}
