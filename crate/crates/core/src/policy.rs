//! Per-epoch QoS decisions.
//!
//! Fast memory is redistributed in proportion to each process's distance from
//! its target miss ratio. A process with `a_miss > t_miss` is *needy* and is
//! given `(a_miss / t_miss) * R / F_need` bytes, where `F_need` sums that
//! ratio over all needy processes. A process below its target that holds fast
//! memory is a *surplus* process and gives up `(t_miss / a_miss) * R / F_surplus`
//! bytes. A zero `a_miss` counts as an infinite ratio, with `inf / inf = 1`, so
//! one such process (the oldest) is tapped for the whole amount and nobody
//! else gives anything that epoch.
//!
//! Unallocated fast memory is handed to needy processes first, in arrival
//! order, without counting against `R`. When takes cannot cover the remaining
//! need, needy processes are served first-come-first-served: an earlier
//! arrival's shortfall is taken from the latest needy arrivals, and whoever
//! ends up short is flagged. When nobody is needy, unallocated fast memory is
//! split equally.
//!
//! After quotas are settled every process's pages are re-planned along its
//! heat gradient: hottest slow pages are promoted, coldest fast pages demoted.

use {
	crate::{
		hotness::HotnessBins,
		telemetry::ProcessQoSState,
		units::{PageId, Pid},
	},
	serde::{Deserialize, Serialize},
	std::{
		cmp::Reverse,
		collections::{BTreeMap, BTreeSet},
		fmt,
		ops::{Add, Sub},
	},
};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PolicyError {
	#[error("static partitions total {total} bytes but fast memory holds {capacity}")]
	Overcommitted { total: u64, capacity: u64 },
}

/// Quota changes decided for one epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReallocationPlan {
	/// Byte budget `R` for transfers between processes.
	pub budget: u64,
	/// Total need scale; zero when nobody is needy.
	pub f_need: f64,
	/// Total surplus scale; infinite when a process with zero misses is tapped.
	pub f_surplus: f64,
	/// Signed quota change per process.
	pub deltas: BTreeMap<Pid, i64>,
	/// Needy processes left short of what they asked for, or preempted by earlier arrivals.
	pub flagged: BTreeSet<Pid>,
	/// Bytes granted to needy processes from unallocated memory.
	pub free_granted: u64,
	/// Bytes moved from surplus to needy processes.
	pub transferred: u64,
	/// Bytes of unallocated memory split equally once every target was met.
	pub shared: u64,
}

impl ReallocationPlan {
	pub fn empty(budget: u64) -> Self {
		Self {
			budget,
			..Self::default()
		}
	}

	pub fn delta(&self, pid: Pid) -> i64 {
		self.deltas.get(&pid).copied().unwrap_or(0)
	}

	/// Net change of the total quota (always the part drawn from unallocated memory).
	pub fn net(&self) -> i64 {
		self.deltas.values().sum()
	}

	fn add(&mut self, pid: Pid, delta: i64) {
		if delta != 0 {
			*self.deltas.entry(pid).or_default() += delta;
		}
	}

	/// Applies the deltas to `states`.
	///
	/// # Panics
	/// Panics if a delta would drive a quota negative.
	pub fn apply(&self, states: &mut [ProcessQoSState]) {
		for state in states {
			let delta = self.delta(state.pid);
			state.quota = state
				.quota
				.checked_add_signed(delta)
				.expect("reallocation drove a quota negative");
		}
	}
}

/// Computes this epoch's quota changes.
///
/// `budget` is `R`; `free_fast` is the fast memory no process is entitled to.
pub fn plan_reallocation(
	states: &[ProcessQoSState],
	budget: u64,
	free_fast: u64,
) -> ReallocationPlan {
	let mut plan = ReallocationPlan::empty(budget);
	let mut order = states.iter().collect::<Vec<_>>();
	order.sort_by_key(|s| (s.arrival_seq, s.pid));

	let needy = order
		.iter()
		.filter(|s| s.a_miss > s.t_miss)
		.copied()
		.collect::<Vec<_>>();
	if needy.is_empty() {
		share_leftover(&order, free_fast, &mut plan);
		return plan;
	}

	plan.f_need = needy.iter().map(|s| s.a_miss / s.t_miss).sum();

	// Unallocated memory first, first come first served, outside of `R`.
	let mut free_left = free_fast;
	let mut unmet = Vec::with_capacity(needy.len());
	for s in &needy {
		let want = budget as f64 * (s.a_miss / s.t_miss / plan.f_need);
		let headroom = s.footprint.saturating_sub(s.quota);
		let grant = free_left.min(headroom);
		free_left -= grant;
		plan.free_granted += grant;
		plan.add(s.pid, grant as i64);
		unmet.push((
			s.pid,
			want.min((headroom - grant) as f64).floor() as u64,
			s.quota + grant,
		));
	}
	let need: u64 = unmet.iter().map(|&(_, u, _)| u).sum();

	// Takes from processes below target.
	let surplus = order
		.iter()
		.filter(|s| s.a_miss < s.t_miss && s.quota > 0)
		.copied()
		.collect::<Vec<_>>();
	let mut takes = Vec::new();
	if let Some(idle) = surplus.iter().find(|s| s.a_miss == 0.0) {
		plan.f_surplus = f64::INFINITY;
		takes.push((idle.pid, need.min(idle.quota)));
	} else if !surplus.is_empty() {
		plan.f_surplus = surplus.iter().map(|s| s.t_miss / s.a_miss).sum();
		for s in &surplus {
			let loss = (need as f64 * (s.t_miss / s.a_miss / plan.f_surplus)).floor() as u64;
			takes.push((s.pid, loss.min(s.quota)));
		}
	}
	let pool: u64 = takes.iter().map(|&(_, t)| t).sum();

	let mut left = pool;
	// Needy processes that can still give up quota, latest arrival last.
	let mut donors = unmet
		.iter()
		.map(|&(pid, _, held)| (pid, held))
		.collect::<Vec<_>>();
	for (i, &(pid, want, _)) in unmet.iter().enumerate() {
		let got = want.min(left);
		left -= got;
		plan.add(pid, got as i64);
		let mut short = want - got;
		while short > 0 && donors.len() > i + 1 {
			let (donor, held) = donors.last_mut().expect("non-empty");
			let give = short.min(*held);
			*held -= give;
			short -= give;
			plan.add(*donor, -(give as i64));
			plan.add(pid, give as i64);
			plan.transferred += give;
			plan.flagged.insert(*donor);
			if *held == 0 {
				donors.pop();
			}
		}
		if short > 0 {
			plan.flagged.insert(pid);
		}
	}
	// Rounding can leave a few bytes unclaimed; they stay with their owners.
	for (_, take) in takes.iter_mut().rev() {
		let back = left.min(*take);
		*take -= back;
		left -= back;
	}
	for (pid, take) in takes {
		plan.add(pid, -(take as i64));
		plan.transferred += take;
	}
	plan
}

/// Splits unallocated memory equally, never past a process's footprint.
fn share_leftover(order: &[&ProcessQoSState], free_fast: u64, plan: &mut ReallocationPlan) {
	let mut room = order
		.iter()
		.map(|s| (s.pid, s.footprint.saturating_sub(s.quota)))
		.filter(|&(_, r)| r > 0)
		.collect::<Vec<_>>();
	let mut left = free_fast;
	while left > 0 && !room.is_empty() {
		let share = left / room.len() as u64;
		if share == 0 {
			break;
		}
		for (pid, r) in &mut room {
			let give = share.min(*r);
			*r -= give;
			left -= give;
			plan.add(*pid, give as i64);
		}
		room.retain(|&(_, r)| r > 0);
	}
	plan.shared = free_fast - left;
}

/// Per-epoch migration allowance, split between quota changes and the heat gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MigrationBudget {
	/// Bytes for demoting excess pages and filling grown quotas.
	pub realloc: u64,
	/// Bytes for hot/cold swaps within an unchanged quota.
	pub gradient: u64,
}

impl MigrationBudget {
	pub fn total(&self) -> u64 {
		self.realloc + self.gradient
	}
}

impl Add for MigrationBudget {
	type Output = Self;

	fn add(self, rhs: Self) -> Self {
		Self {
			realloc: self.realloc + rhs.realloc,
			gradient: self.gradient + rhs.gradient,
		}
	}
}

impl Sub for MigrationBudget {
	type Output = Self;

	fn sub(self, rhs: Self) -> Self {
		Self {
			realloc: self.realloc - rhs.realloc,
			gradient: self.gradient - rhs.gradient,
		}
	}
}

/// Pages one process should move this epoch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MigrationPlan {
	pub pid: Pid,
	/// Slow to fast, hottest first.
	pub promotions: Vec<PageId>,
	/// Fast to slow, coldest first.
	pub demotions: Vec<PageId>,
}

impl MigrationPlan {
	pub fn pages(&self) -> usize {
		self.promotions.len() + self.demotions.len()
	}

	pub fn is_empty(&self) -> bool {
		self.pages() == 0
	}
}

/// Plans one process's migrations.
///
/// Excess fast pages (resident above `quota_after`) are demoted coldest first
/// and a grown quota is filled hottest first, both from `budget.realloc`. Then,
/// from `budget.gradient`, the hottest remaining slow page is swapped with the
/// coldest remaining fast page for as long as it sits in a strictly hotter bin.
/// Whatever is used is subtracted from `budget`.
pub fn plan_migrations(
	pid: Pid,
	bins: &mut HotnessBins,
	quota_after: u64,
	fast_resident: u64,
	budget: &mut MigrationBudget,
) -> MigrationPlan {
	let page_size = bins.config().page_size;
	let quota_pages = (quota_after / page_size) as usize;
	let resident_pages = (fast_resident / page_size) as usize;
	let mut realloc = (budget.realloc / page_size) as usize;
	let mut gradient = (budget.gradient / page_size) as usize;

	let cold = bins.demotion_order();
	let hot = bins.promotion_order();
	let mut plan = MigrationPlan {
		pid,
		..MigrationPlan::default()
	};
	let (mut next_cold, mut next_hot) = (0, 0);

	if resident_pages > quota_pages {
		let n = (resident_pages - quota_pages).min(realloc).min(cold.len());
		plan.demotions.extend_from_slice(&cold[..n]);
		next_cold = n;
		realloc -= n;
	} else {
		let n = (quota_pages - resident_pages).min(realloc).min(hot.len());
		plan.promotions.extend_from_slice(&hot[..n]);
		next_hot = n;
		realloc -= n;
	}

	while gradient >= 2 && next_hot < hot.len() && next_cold < cold.len() {
		let (h, c) = (hot[next_hot], cold[next_cold]);
		if bins.bin_of(h) <= bins.bin_of(c) {
			break;
		}
		plan.promotions.push(h);
		plan.demotions.push(c);
		next_hot += 1;
		next_cold += 1;
		gradient -= 2;
	}

	budget.realloc = budget.realloc.min(realloc as u64 * page_size);
	budget.gradient = budget.gradient.min(gradient as u64 * page_size);
	plan
}

/// A process's view handed to migration planning.
#[derive(Debug)]
pub struct ProcessHeat<'a> {
	pub pid: Pid,
	pub quota: u64,
	pub fast_resident: u64,
	pub bins: &'a mut HotnessBins,
}

/// Which policy drives a simulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
	#[serde(rename = "maxmem")]
	MaxMem,
	Static,
	#[serde(rename = "noqos")]
	NoQos,
}

impl fmt::Display for PolicyKind {
	fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
		f.write_str(match self {
			PolicyKind::MaxMem => "maxmem",
			PolicyKind::Static => "static",
			PolicyKind::NoQos => "noqos",
		})
	}
}

/// A fast-memory management policy.
pub trait QosPolicy: fmt::Debug + Send {
	fn kind(&self) -> PolicyKind;

	/// Quota granted when a process registers `footprint` managed bytes while
	/// `unallocated` fast bytes belong to nobody.
	fn admit(&mut self, pid: Pid, footprint: u64, unallocated: u64) -> u64;

	/// Whether fault-time fast placement is limited by the quota.
	fn gates_faults(&self) -> bool {
		true
	}

	/// Whether quotas merely mirror fast residency (no entitlements at all).
	fn quotas_follow_residency(&self) -> bool {
		false
	}

	fn reallocate(
		&mut self,
		states: &[ProcessQoSState],
		free_fast: u64,
		budget: u64,
	) -> ReallocationPlan;

	/// Plans migrations for `procs`, given in arrival order. `fast_free` is the
	/// physically unused fast memory.
	fn plan_migrations(
		&mut self,
		procs: &mut [ProcessHeat<'_>],
		budget: MigrationBudget,
		fast_free: u64,
	) -> Vec<MigrationPlan>;
}

/// Dynamic miss-ratio driven policy.
#[derive(Clone, Debug, Default)]
pub struct MaxMemPolicy;

impl QosPolicy for MaxMemPolicy {
	fn kind(&self) -> PolicyKind {
		PolicyKind::MaxMem
	}

	fn admit(&mut self, _pid: Pid, footprint: u64, unallocated: u64) -> u64 {
		footprint.min(unallocated)
	}

	fn reallocate(
		&mut self,
		states: &[ProcessQoSState],
		free_fast: u64,
		budget: u64,
	) -> ReallocationPlan {
		plan_reallocation(states, budget, free_fast)
	}

	fn plan_migrations(
		&mut self,
		procs: &mut [ProcessHeat<'_>],
		budget: MigrationBudget,
		_: u64,
	) -> Vec<MigrationPlan> {
		plan_pooled(procs, budget)
	}
}

/// Fixed per-process partitions of fast memory.
#[derive(Clone, Debug)]
pub struct StaticPolicy {
	partitions: BTreeMap<Pid, u64>,
}

/// Builds the static-partition baseline.
pub fn baseline_static(
	partitions: BTreeMap<Pid, u64>,
	fast_capacity: u64,
) -> Result<StaticPolicy, PolicyError> {
	let total = partitions.values().sum();
	if total > fast_capacity {
		return Err(PolicyError::Overcommitted {
			total,
			capacity: fast_capacity,
		});
	}
	Ok(StaticPolicy { partitions })
}

impl StaticPolicy {
	pub fn partition(&self, pid: Pid) -> u64 {
		self.partitions.get(&pid).copied().unwrap_or(0)
	}
}

impl QosPolicy for StaticPolicy {
	fn kind(&self) -> PolicyKind {
		PolicyKind::Static
	}

	fn admit(&mut self, pid: Pid, _footprint: u64, unallocated: u64) -> u64 {
		self.partition(pid).min(unallocated)
	}

	fn reallocate(&mut self, _: &[ProcessQoSState], _: u64, budget: u64) -> ReallocationPlan {
		ReallocationPlan::empty(budget)
	}

	fn plan_migrations(
		&mut self,
		procs: &mut [ProcessHeat<'_>],
		budget: MigrationBudget,
		_: u64,
	) -> Vec<MigrationPlan> {
		plan_pooled(procs, budget)
	}
}

/// QoS-blind tiering: the globally hottest pages get fast memory.
#[derive(Clone, Debug, Default)]
pub struct NoQosPolicy;

pub fn baseline_noqos() -> NoQosPolicy {
	NoQosPolicy
}

impl QosPolicy for NoQosPolicy {
	fn kind(&self) -> PolicyKind {
		PolicyKind::NoQos
	}

	fn admit(&mut self, _: Pid, _: u64, _: u64) -> u64 {
		0
	}

	fn gates_faults(&self) -> bool {
		false
	}

	fn quotas_follow_residency(&self) -> bool {
		true
	}

	fn reallocate(&mut self, _: &[ProcessQoSState], _: u64, budget: u64) -> ReallocationPlan {
		ReallocationPlan::empty(budget)
	}

	fn plan_migrations(
		&mut self,
		procs: &mut [ProcessHeat<'_>],
		budget: MigrationBudget,
		fast_free: u64,
	) -> Vec<MigrationPlan> {
		plan_global(procs, budget.total(), fast_free)
	}
}

/// Plans every process against shared budget pools: each process may first
/// use an equal share, then leftovers go to processes in arrival order.
pub fn plan_pooled(procs: &mut [ProcessHeat<'_>], budget: MigrationBudget) -> Vec<MigrationPlan> {
	let Some(page_size) = procs.first().map(|p| p.bins.config().page_size) else {
		return Vec::new();
	};
	let n = procs.len() as u64;
	let share = MigrationBudget {
		realloc: budget.realloc / page_size / n * page_size,
		gradient: budget.gradient / page_size / n * page_size,
	};

	let mut used = Vec::with_capacity(procs.len());
	let mut plans = Vec::with_capacity(procs.len());
	for p in procs.iter_mut() {
		let mut left = share;
		plans.push(plan_migrations(
			p.pid,
			p.bins,
			p.quota,
			p.fast_resident,
			&mut left,
		));
		used.push(share - left);
	}

	let mut spare = budget
		- used
			.iter()
			.fold(MigrationBudget::default(), |acc, &u| acc + u);
	for (i, p) in procs.iter_mut().enumerate() {
		if spare.realloc < page_size && spare.gradient < 2 * page_size {
			break;
		}
		let given = used[i] + spare;
		let mut left = given;
		plans[i] = plan_migrations(p.pid, p.bins, p.quota, p.fast_resident, &mut left);
		let now_used = given - left;
		spare = given - now_used;
		used[i] = now_used;
	}
	plans
}

/// Plans migrations over one global heat ordering, ignoring quotas.
pub fn plan_global(
	procs: &mut [ProcessHeat<'_>],
	budget: u64,
	fast_free: u64,
) -> Vec<MigrationPlan> {
	let Some(page_size) = procs.first().map(|p| p.bins.config().page_size) else {
		return Vec::new();
	};

	// (bin key, rank within process, process index, page)
	let mut hot = Vec::new();
	let mut cold = Vec::new();
	for (i, p) in procs.iter_mut().enumerate() {
		for (rank, page) in p.bins.promotion_order().into_iter().enumerate() {
			let bin = p.bins.bin_of(page).unwrap_or(0);
			hot.push((Reverse(bin), rank, i, page));
		}
		for (rank, page) in p.bins.demotion_order().into_iter().enumerate() {
			let bin = p.bins.bin_of(page).unwrap_or(0);
			cold.push((bin, rank, i, page));
		}
	}
	hot.sort_unstable();
	cold.sort_unstable();

	let mut plans = procs
		.iter()
		.map(|p| MigrationPlan {
			pid: p.pid,
			..MigrationPlan::default()
		})
		.collect::<Vec<_>>();
	let mut pages = (budget / page_size) as usize;

	let fill = ((fast_free / page_size) as usize).min(pages).min(hot.len());
	for &(_, _, i, page) in &hot[..fill] {
		plans[i].promotions.push(page);
	}
	pages -= fill;

	let (mut next_hot, mut next_cold) = (fill, 0);
	while pages >= 2 && next_hot < hot.len() && next_cold < cold.len() {
		let (Reverse(hot_bin), _, hi, hp) = hot[next_hot];
		let (cold_bin, _, ci, cp) = cold[next_cold];
		if hot_bin <= cold_bin {
			break;
		}
		plans[hi].promotions.push(hp);
		plans[ci].demotions.push(cp);
		next_hot += 1;
		next_cold += 1;
		pages -= 2;
	}
	plans
}
