//! Heat bins of one process: sampling, cooling and victim selection.

use tierqos::{
	hotness::{BinConfig, HotnessBins},
	units::{Tier, KIB},
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
	let mut bins = HotnessBins::new(
		1,
		BinConfig {
			bins: 6,
			page_size: 64 * KIB,
		},
	)?;
	for page in 0..8 {
		bins.register(page, if page < 4 { Tier::Fast } else { Tier::Slow })?;
	}

	// Pages 4 and 5 are slow but busy; page 0 is fast and barely touched.
	bins.begin_epoch();
	for (page, samples) in [(0, 1), (1, 3), (2, 6), (4, 12), (5, 20)] {
		for _ in 0..samples {
			bins.record_sample(page)?;
		}
	}
	println!("after the first epoch:\n{}", bins.dump());

	// Page 5 reaching 32 samples halves everybody else (lazily).
	bins.begin_epoch();
	for _ in 0..12 {
		let outcome = bins.record_sample(5)?;
		if outcome.cooled {
			println!(
				"page 5 triggered cooling {} at count {}",
				bins.cool_seq(),
				outcome.count
			);
		}
	}
	for page in 0..8 {
		println!(
			"page {page}: raw {:>2} effective {:>2} bin {}",
			bins.record(page).map_or(0, |r| r.raw_count),
			bins.effective_count(page).unwrap_or(0),
			bins.bin_of(page).unwrap_or(0)
		);
	}
	println!("demote first: {:?}", bins.demotion_victims(2 * 64 * KIB));
	println!("promote first: {:?}", bins.promotion_victims(2 * 64 * KIB));
	Ok(())
}
