//! Reference models shared by the integration tests.

#![allow(dead_code)]

use {
	num_bigint::BigInt,
	num_rational::BigRational,
	num_traits::{ToPrimitive, Zero},
	rand::{Rng, SeedableRng},
	rand_chacha::ChaCha8Rng,
	std::{collections::BTreeMap, path::PathBuf},
	tierqos::{
		scenario::Scenario,
		telemetry::ProcessQoSState,
		units::{PageId, Pid},
	},
};

pub fn scenario_path(name: &str) -> PathBuf {
	PathBuf::from(env!("CARGO_MANIFEST_DIR"))
		.join("scenarios")
		.join(name)
}

pub fn load_scenario(name: &str) -> Scenario {
	Scenario::load(scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn rat(x: f64) -> BigRational {
	BigRational::from_float(x).expect("finite")
}

fn int(x: u64) -> BigRational {
	BigRational::from_integer(BigInt::from(x))
}

fn floor_u64(x: &BigRational) -> u64 {
	x.floor()
		.to_integer()
		.to_u64()
		.expect("non-negative and in range")
}

/// Quota deltas computed straight from the reallocation formulas with exact
/// rational arithmetic.
pub fn oracle_deltas(
	states: &[ProcessQoSState],
	budget: u64,
	free_fast: u64,
) -> BTreeMap<Pid, i64> {
	let mut order = states.to_vec();
	order.sort_by_key(|s| (s.arrival_seq, s.pid));
	let mut deltas = BTreeMap::<Pid, i64>::new();
	let mut add = |pid: Pid, d: i64| *deltas.entry(pid).or_default() += d;

	let needy = order
		.iter()
		.filter(|s| s.a_miss > s.t_miss)
		.collect::<Vec<_>>();
	if needy.is_empty() {
		let rooms = order
			.iter()
			.map(|s| (s.pid, s.footprint.saturating_sub(s.quota)))
			.collect::<Vec<_>>();
		// Highest common level that fits in the free memory.
		let fill = |level: u64| {
			rooms
				.iter()
				.map(|&(_, r)| r.min(level) as u128)
				.sum::<u128>()
		};
		let (mut lo, mut hi) = (0u64, rooms.iter().map(|&(_, r)| r).max().unwrap_or(0));
		while lo < hi {
			let mid = lo + (hi - lo).div_ceil(2);
			if fill(mid) <= free_fast as u128 {
				lo = mid;
			} else {
				hi = mid - 1;
			}
		}
		for (pid, room) in rooms {
			add(pid, room.min(lo) as i64);
		}
		return deltas;
	}

	let ratio = |s: &ProcessQoSState| rat(s.a_miss) / rat(s.t_miss);
	let f_need = needy
		.iter()
		.fold(BigRational::zero(), |acc, s| acc + ratio(s));
	let mut free_left = free_fast;
	let mut unmet = Vec::new();
	for s in &needy {
		let headroom = s.footprint.saturating_sub(s.quota);
		let grant = free_left.min(headroom);
		free_left -= grant;
		add(s.pid, grant as i64);
		let want = ratio(s) * int(budget) / &f_need;
		let cap = int(headroom - grant);
		unmet.push((
			s.pid,
			floor_u64(if want < cap { &want } else { &cap }),
			s.quota + grant,
		));
	}
	let need: u64 = unmet.iter().map(|&(_, u, _)| u).sum();

	let surplus = order
		.iter()
		.filter(|s| s.a_miss < s.t_miss && s.quota > 0)
		.collect::<Vec<_>>();
	let mut takes = Vec::new();
	if let Some(idle) = surplus.iter().find(|s| s.a_miss == 0.0) {
		takes.push((idle.pid, need.min(idle.quota)));
	} else if !surplus.is_empty() {
		let inverse = |s: &ProcessQoSState| rat(s.t_miss) / rat(s.a_miss);
		let f_surplus = surplus
			.iter()
			.fold(BigRational::zero(), |acc, s| acc + inverse(s));
		for s in &surplus {
			let loss = floor_u64(&(inverse(s) * int(need) / &f_surplus));
			takes.push((s.pid, loss.min(s.quota)));
		}
	}
	let mut left: u64 = takes.iter().map(|&(_, t)| t).sum();
	// Shortfalls of earlier arrivals come out of the latest needy arrivals.
	let mut held = unmet.iter().map(|&(_, _, h)| h).collect::<Vec<_>>();
	for i in 0..unmet.len() {
		let (pid, want, _) = unmet[i];
		let got = want.min(left);
		left -= got;
		add(pid, got as i64);
		let mut short = want - got;
		for j in (i + 1..unmet.len()).rev() {
			let give = short.min(held[j]);
			held[j] -= give;
			short -= give;
			add(unmet[j].0, -(give as i64));
			add(pid, give as i64);
		}
	}
	for (pid, take) in takes.into_iter().rev() {
		let back = left.min(take);
		left -= back;
		add(pid, -((take - back) as i64));
	}
	deltas.retain(|_, d| *d != 0);
	deltas
}

/// A random reallocation input: at most `max_procs` processes with a mix of
/// idle, satisfied and needy miss ratios.
pub fn random_instance(rng: &mut ChaCha8Rng, max_procs: usize) -> (Vec<ProcessQoSState>, u64, u64) {
	const MIB: u64 = 1 << 20;
	let n = rng.gen_range(1..=max_procs);
	let mut seqs = (0..n as u64).collect::<Vec<_>>();
	for i in (1..n).rev() {
		seqs.swap(i, rng.gen_range(0..=i));
	}
	let states = (0..n)
		.map(|i| {
			let t_miss = match rng.gen_range(0..4) {
				0 => 1.0,
				1 => 0.1,
				_ => rng.gen_range(0.01..=1.0),
			};
			let mut s =
				ProcessQoSState::new(i as Pid + 1, t_miss, seqs[i], 100).expect("valid target");
			s.a_miss = match rng.gen_range(0..6) {
				0 => 0.0,
				1 => t_miss,
				_ => rng.gen_range(0.0..=1.0),
			};
			s.quota = match rng.gen_range(0..4) {
				0 => 0,
				_ => rng.gen_range(0..=512 * MIB),
			};
			s.footprint = s.quota + rng.gen_range(0..=512 * MIB);
			s
		})
		.collect();
	let budget = rng.gen_range(0..=256 * MIB);
	let free_fast = match rng.gen_range(0..3) {
		0 => 0,
		_ => rng.gen_range(0..=256 * MIB),
	};
	(states, budget, free_fast)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
	ChaCha8Rng::seed_from_u64(seed)
}

/// Hotness counters that halve every page at each cooling.
#[derive(Clone, Debug)]
pub struct EagerBins {
	pub counts: BTreeMap<PageId, u32>,
	bins: usize,
	cooled: bool,
}

impl EagerBins {
	pub fn new(bins: usize) -> Self {
		Self {
			counts: BTreeMap::new(),
			bins,
			cooled: false,
		}
	}

	pub fn register(&mut self, page: PageId) {
		self.counts.insert(page, 0);
	}

	pub fn begin_epoch(&mut self) {
		self.cooled = false;
	}

	fn halve_all(&mut self, except: Option<PageId>) {
		for (&page, count) in &mut self.counts {
			if Some(page) != except {
				*count /= 2;
			}
		}
	}

	pub fn cool(&mut self) -> bool {
		if self.cooled {
			return false;
		}
		self.cooled = true;
		self.halve_all(None);
		true
	}

	pub fn sample(&mut self, page: PageId) -> bool {
		let count = self.counts.get_mut(&page).expect("registered");
		*count = count.saturating_add(1);
		if *count >= 1 << (self.bins - 1) && !self.cooled {
			self.cooled = true;
			self.halve_all(Some(page));
			return true;
		}
		false
	}

	pub fn count(&self, page: PageId) -> u32 {
		self.counts[&page]
	}

	/// Bin from the boundary table: bin k holds counts in `[2^(k-1), 2^k)`,
	/// the last bin everything above.
	pub fn bin(&self, page: PageId) -> usize {
		let count = self.count(page) as u64;
		(1..self.bins)
			.rev()
			.find(|&k| count >= 1 << (k - 1))
			.unwrap_or(0)
	}
}
