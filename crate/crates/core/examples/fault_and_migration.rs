//! Fault-time placement under quotas and capped migration execution.

use tierqos::{
	memmgr::{schedule, FaultGate, MigrationLedger, TierConfig, TierState},
	policy::{plan_migrations, MigrationBudget},
	units::{Bytes, Tier, MIB},
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
	let config = TierConfig {
		page_size: MIB,
		fast_capacity: 8 * MIB,
		slow_capacity: 32 * MIB,
		registration_threshold: MIB,
		bins: 6,
	};
	let mut tiers = TierState::new(config)?;
	tiers.add_process(1)?;
	tiers.add_process(2)?;

	// pid 1 may hold 4 MiB of fast memory; its first four pages land there.
	let gate = FaultGate {
		quota: 4 * MIB,
		gated: true,
	};
	tiers.register_region(1, 10 * MIB, true, gate)?;
	tiers.register_region(2, 6 * MIB, false, FaultGate::OPEN)?;
	for page in [0, 1, 2] {
		let tier = tiers.handle_fault(2, page, FaultGate::OPEN)?;
		println!("pid 2 page {page} faulted into {tier}");
	}
	println!(
		"fast used {} / free {}, pid 1 fast {}",
		Bytes(tiers.fast_used()),
		Bytes(tiers.fast_free()),
		Bytes(tiers.fast_resident(1))
	);

	// pid 1's hot pages sit in slow memory; plan a gradient swap.
	let heat = &mut tiers.process_mut(1)?.heat;
	heat.begin_epoch();
	for page in 6..10 {
		for _ in 0..(page * 2) {
			heat.record_sample(page)?;
		}
	}
	heat.record_sample(0)?;
	let mut budget = MigrationBudget {
		realloc: 0,
		gradient: 8 * MIB,
	};
	let resident = tiers.fast_resident(1);
	let plan = plan_migrations(
		1,
		&mut tiers.process_mut(1)?.heat,
		4 * MIB,
		resident,
		&mut budget,
	);
	println!("promote {:?}, demote {:?}", plan.promotions, plan.demotions);

	// A 4 MiB cap applies the first four moves (all demotions run first).
	let moves = schedule(&[plan]);
	let mut ledger = MigrationLedger::new(0, 4 * MIB);
	let consumed = tiers.execute_moves(&moves, ledger.cap, &mut ledger);
	println!(
		"moved {} of {} planned pages ({})",
		ledger.moves.len(),
		moves.len(),
		Bytes(ledger.bytes_moved)
	);
	show(&tiers);

	// The next epoch picks up where the cap stopped.
	let mut ledger = MigrationLedger::new(1, 4 * MIB);
	tiers.execute_moves(&moves[consumed..], ledger.cap, &mut ledger);
	println!("moved the remaining {} pages", ledger.moves.len());
	show(&tiers);
	tiers.check_accounting()?;
	Ok(())
}

fn show(tiers: &TierState) {
	let layout = (0..10)
		.map(|page| {
			if tiers.tier_of(1, page) == Some(Tier::Fast) {
				'F'
			} else {
				's'
			}
		})
		.collect::<String>();
	println!("pid 1 pages 0..10: {layout}");
}
