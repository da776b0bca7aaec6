//! Stride sampling and the smoothed fast-memory miss ratio.

use {
	rand::{Rng, SeedableRng},
	rand_chacha::ChaCha8Rng,
	tierqos::{
		telemetry::{ProcessQoSState, SamplerConfig},
		units::Tier,
	},
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
	let config = SamplerConfig::default();
	let mut state = ProcessQoSState::new(1, 0.1, 0, config.period)?;
	let mut rng = ChaCha8Rng::seed_from_u64(1);

	// 30% of accesses miss fast memory for eight epochs, then the process goes quiet.
	println!("epoch  samples  inst_fmmr  ewma_fmmr");
	for epoch in 0..20 {
		let accesses = if epoch < 8 { 50_000 } else { 0 };
		let stream = (0..accesses).map(|i| {
			(
				i,
				if rng.gen_bool(0.3) {
					Tier::Slow
				} else {
					Tier::Fast
				},
			)
		});
		let samples = state
			.ingest_accesses(stream, |_| Ok::<_, ()>(()))
			.expect("infallible");
		let ewma = state.close_epoch(&config);
		println!(
			"{epoch:>5}  {samples:>7}  {:>9.4}  {ewma:>9.4}",
			state.inst_fmmr
		);
	}
	println!(
		"smoothed ratios below {} read as exactly zero",
		config.idle_epsilon
	);
	Ok(())
}
