//! Randomized invariants of the hotness bins, the sampler and the policy.

mod common;

use {
	common::{oracle_deltas, random_instance, rng, EagerBins},
	proptest::prelude::*,
	std::{cmp::Reverse, collections::BTreeMap},
	tierqos::{
		hotness::{BinConfig, CoolOutcome, HotnessBins},
		policy::{plan_migrations, plan_reallocation, MigrationBudget},
		telemetry::{ProcessQoSState, StrideSampler},
		units::{PageId, Tier},
	},
};

const PAGE: u64 = 4096;

#[derive(Clone, Debug)]
enum Op {
	Sample(PageId),
	Cool,
	Epoch,
	Move(PageId),
}

fn ops(pages: u64, len: usize) -> impl Strategy<Value = Vec<Op>> {
	let op = prop_oneof![
		40 => (0..pages).prop_map(Op::Sample),
		// A handful of pages soaks up most samples so cooling actually fires.
		40 => (0..pages.min(4)).prop_map(Op::Sample),
		3 => Just(Op::Cool),
		5 => Just(Op::Epoch),
		5 => (0..pages).prop_map(Op::Move),
	];
	prop::collection::vec(op, 0..len)
}

/// Lazy bins, the eager model and the time each page was last sampled.
struct Replay {
	lazy: HotnessBins,
	eager: EagerBins,
	sampled: BTreeMap<PageId, u64>,
}

fn replay(pages: u64, ops: &[Op]) -> Replay {
	let config = BinConfig {
		bins: 6,
		page_size: PAGE,
	};
	let mut lazy = HotnessBins::new(7, config).unwrap();
	let mut eager = EagerBins::new(config.bins);
	for page in 0..pages {
		lazy.register(
			page,
			if page % 2 == 0 {
				Tier::Fast
			} else {
				Tier::Slow
			},
		)
		.unwrap();
		eager.register(page);
	}
	let mut sampled = BTreeMap::new();
	for (t, op) in ops.iter().enumerate() {
		match *op {
			Op::Sample(page) => {
				let outcome = lazy.record_sample(page).unwrap();
				assert_eq!(outcome.cooled, eager.sample(page));
				sampled.insert(page, t as u64 + 1);
			}
			Op::Cool => {
				let cooled = matches!(lazy.cool(), CoolOutcome::Cooled { .. });
				assert_eq!(cooled, eager.cool());
			}
			Op::Epoch => {
				lazy.begin_epoch();
				eager.begin_epoch();
			}
			Op::Move(page) => {
				let tier = lazy.tier_of(page).unwrap().other();
				lazy.set_tier(page, tier).unwrap();
			}
		}
	}
	Replay {
		lazy,
		eager,
		sampled,
	}
}

proptest! {
	#![proptest_config(ProptestConfig::with_cases(200))]

	#[test]
	fn lazy_cooling_matches_eager_halving(ops in ops(24, 400)) {
		let Replay { lazy, eager, .. } = replay(24, &ops);
		for page in 0..24 {
			prop_assert_eq!(lazy.effective_count(page), Some(eager.count(page)));
			prop_assert_eq!(lazy.bin_of(page), Some(eager.bin(page)));
		}
		prop_assert_eq!(lazy.tallies().iter().sum::<usize>(), 24);
		prop_assert!(lazy.check_invariants().is_ok());
	}

	#[test]
	fn victim_orders_match_a_full_sort(ops in ops(16, 300)) {
		let Replay { mut lazy, eager, sampled } = replay(16, &ops);
		let last = |page: PageId| sampled.get(&page).copied().unwrap_or(0);
		let mut fast = (0..16).filter(|&p| lazy.tier_of(p) == Some(Tier::Fast)).collect::<Vec<_>>();
		fast.sort_by_key(|&p| (eager.bin(p), last(p), p));
		let mut slow = (0..16)
			.filter(|&p| lazy.tier_of(p) == Some(Tier::Slow) && eager.bin(p) > 0)
			.collect::<Vec<_>>();
		slow.sort_by_key(|&p| (Reverse(eager.bin(p)), last(p), p));
		prop_assert_eq!(lazy.demotion_order(), fast);
		prop_assert_eq!(lazy.promotion_order(), slow);
	}

	#[test]
	fn stride_sampler_matches_a_naive_counter(period in 1u32..300, epochs in prop::collection::vec(0usize..1000, 1..6)) {
		let mut sampler = StrideSampler::new(period);
		let mut seen = 0u64;
		for n in epochs {
			let taken = (0..n).filter(|_| sampler.tick()).count();
			let naive = (seen + 1..=seen + n as u64).filter(|i| i % period as u64 == 0).count();
			prop_assert_eq!(taken, naive);
			seen += n as u64;
			prop_assert_eq!(sampler.carry() as u64, seen % period as u64);
		}
	}

	#[test]
	fn reallocation_matches_the_oracle(seed in any::<u64>()) {
		let (states, budget, free) = random_instance(&mut rng(seed), 8);
		let plan = plan_reallocation(&states, budget, free);
		let expected = oracle_deltas(&states, budget, free);
		for s in &states {
			let want = expected.get(&s.pid).copied().unwrap_or(0);
			prop_assert!((plan.delta(s.pid) - want).abs() <= 1, "pid {} {} vs {}", s.pid, plan.delta(s.pid), want);
		}
	}

	#[test]
	fn reallocation_conserves_memory(seed in any::<u64>()) {
		let (mut states, budget, free) = random_instance(&mut rng(seed), 8);
		let plan = plan_reallocation(&states, budget, free);
		let before: u64 = states.iter().map(|s| s.quota).sum();
		prop_assert_eq!(plan.net(), (plan.free_granted + plan.shared) as i64);
		prop_assert!(plan.free_granted + plan.shared <= free);
		let lost: u64 = plan.deltas.values().filter(|d| **d < 0).map(|d| d.unsigned_abs()).sum();
		prop_assert_eq!(lost, plan.transferred);
		prop_assert!(lost <= budget);
		let footprints = states.iter().map(|s| (s.pid, s.footprint)).collect::<BTreeMap<_, _>>();
		plan.apply(&mut states);
		let after: u64 = states.iter().map(|s| s.quota).sum();
		prop_assert_eq!(after as i64 - before as i64, plan.net());
		for s in &states {
			if plan.delta(s.pid) > 0 {
				prop_assert!(s.quota <= footprints[&s.pid]);
			}
		}
	}

	#[test]
	fn shortages_flag_a_suffix_of_arrivals(seed in any::<u64>()) {
		let (states, budget, _) = random_instance(&mut rng(seed), 8);
		let plan = plan_reallocation(&states, budget, 0);
		let mut needy = states.iter().filter(|s| s.a_miss > s.t_miss).collect::<Vec<_>>();
		needy.sort_by_key(|s| s.arrival_seq);
		let mut short = false;
		for s in needy {
			if short {
				// Once someone went short, later arrivals get nothing and are flagged.
				prop_assert!(plan.delta(s.pid) <= 0);
				prop_assert!(plan.flagged.contains(&s.pid) || plan.delta(s.pid) == 0);
			}
			short |= plan.flagged.contains(&s.pid);
		}
		// Preempted quota only ever flows to earlier arrivals.
		let mut order = states.iter().filter(|s| s.a_miss > s.t_miss).collect::<Vec<_>>();
		order.sort_by_key(|s| s.arrival_seq);
		if let Some(first_loser) = order.iter().position(|s| plan.delta(s.pid) < 0) {
			prop_assert!(order[first_loser..].iter().all(|s| plan.delta(s.pid) <= 0));
		}
	}

	#[test]
	fn at_most_one_idle_process_gives(seed in any::<u64>()) {
		let (mut states, budget, free) = random_instance(&mut rng(seed), 8);
		// Make a few processes idle.
		for s in states.iter_mut().step_by(2) {
			s.a_miss = 0.0;
		}
		let plan = plan_reallocation(&states, budget, free);
		let givers = states
			.iter()
			.filter(|s| s.a_miss == 0.0 && plan.delta(s.pid) < 0)
			.map(|s| s.pid)
			.collect::<Vec<_>>();
		let oldest_idle = states
			.iter()
			.filter(|s| s.a_miss == 0.0 && s.a_miss < s.t_miss && s.quota > 0)
			.min_by_key(|s| s.arrival_seq);
		if let Some(idle) = oldest_idle {
			prop_assert!(givers.is_empty() || givers == [idle.pid], "givers {:?}, oldest idle {}", givers, idle.pid);
		}
	}

	#[test]
	fn larger_budgets_extend_migration_plans(
		ops in ops(24, 300),
		quota in 0u64..24,
		realloc in 0u64..8,
		gradient in 0u64..16,
		extra in 0u64..8,
	) {
		let Replay { mut lazy, .. } = replay(24, &ops);
		let resident = lazy.fast_pages() as u64 * PAGE;
		let mut plan_with = |realloc: u64, gradient: u64| {
			let mut budget = MigrationBudget { realloc: realloc * PAGE, gradient: gradient * PAGE };
			let given = budget;
			let plan = plan_migrations(7, &mut lazy, quota * PAGE, resident, &mut budget);
			assert!(budget.realloc <= given.realloc && budget.gradient <= given.gradient);
			assert!(plan.pages() as u64 * PAGE <= given.total());
			plan
		};
		let small = plan_with(realloc, gradient);
		let big = plan_with(realloc, gradient + extra);
		prop_assert!(big.promotions.starts_with(&small.promotions));
		prop_assert!(big.demotions.starts_with(&small.demotions));
		let small = plan_with(realloc, 0);
		let big = plan_with(realloc + extra, 0);
		prop_assert!(big.promotions.starts_with(&small.promotions));
		prop_assert!(big.demotions.starts_with(&small.demotions));
		for page in &big.promotions {
			prop_assert_eq!(lazy.tier_of(*page), Some(Tier::Slow));
			prop_assert!(lazy.bin_of(*page).unwrap() > 0);
		}
		for page in &big.demotions {
			prop_assert_eq!(lazy.tier_of(*page), Some(Tier::Fast));
		}
	}
}

#[test]
fn reallocation_is_exact_for_the_worked_example() {
	const GIB: u64 = 1 << 30;
	let mut p1 = ProcessQoSState::new(1, 0.1, 0, 100).unwrap();
	p1.a_miss = 0.4;
	p1.footprint = 64 * GIB;
	let mut p2 = ProcessQoSState::new(2, 0.1, 1, 100).unwrap();
	p2.a_miss = 0.05;
	p2.quota = 10 * GIB;
	p2.footprint = 10 * GIB;
	let states = [p1, p2];
	let plan = plan_reallocation(&states, 2 * GIB, 0);
	assert_eq!(oracle_deltas(&states, 2 * GIB, 0), plan.deltas);
	assert_eq!(plan.delta(1), 2 * GIB as i64);
	assert_eq!(plan.delta(2), -2 * GIB as i64);
	assert_eq!(plan.f_need, 4.0);
	assert_eq!(plan.f_surplus, 2.0);
}
