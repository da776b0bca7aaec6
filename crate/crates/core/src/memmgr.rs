//! Ground-truth tier occupancy: regions, fault-time placement, migration
//! execution and process exit.

use {
	crate::{
		hotness::{BinConfig, HotnessBins, HotnessError},
		policy::MigrationPlan,
		units::{PageId, Pid, Tier, GIB},
	},
	std::collections::BTreeMap,
};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MemError {
	#[error("process {pid} killed: no free memory in either tier")]
	ProcessKilled { pid: Pid },

	#[error("unknown process {0}")]
	UnknownProcess(Pid),

	#[error("process {0} is already registered")]
	DuplicateProcess(Pid),

	#[error("process {pid} asked for {size} bytes but only {free} are free")]
	RegionRejected { pid: Pid, size: u64, free: u64 },

	#[error("region size must be positive")]
	EmptyRegion,

	#[error("page {page} lies outside every region of process {pid}")]
	OutOfRange { pid: Pid, page: PageId },

	#[error(transparent)]
	Hotness(#[from] HotnessError),
}

/// Capacities and layout of the two tiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TierConfig {
	pub page_size: u64,
	pub fast_capacity: u64,
	pub slow_capacity: u64,
	/// Regions smaller than this bypass tier management and live in fast memory.
	pub registration_threshold: u64,
	pub bins: usize,
}

impl Default for TierConfig {
	fn default() -> Self {
		Self {
			page_size: 2 << 20,
			fast_capacity: 128 * GIB,
			slow_capacity: 768 * GIB,
			registration_threshold: GIB,
			bins: crate::hotness::DEFAULT_BINS,
		}
	}
}

/// What the quota allows at fault time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FaultGate {
	pub quota: u64,
	/// Ungated faults go to fast memory whenever it has room.
	pub gated: bool,
}

impl FaultGate {
	pub const OPEN: FaultGate = FaultGate {
		quota: u64::MAX,
		gated: false,
	};
}

/// Fault placement decision table.
pub fn place(quota_headroom: bool, fast_free: bool, slow_free: bool) -> Option<Tier> {
	match (quota_headroom && fast_free, slow_free) {
		(true, _) => Some(Tier::Fast),
		(false, true) => Some(Tier::Slow),
		(false, false) => None,
	}
}

/// A registered address range of one process.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
	pub pid: Pid,
	pub start: PageId,
	pub pages: u64,
	/// False for small regions that stay in fast memory outside tier management.
	pub managed: bool,
}

impl Region {
	pub fn contains(&self, page: PageId) -> bool {
		(self.start..self.start + self.pages).contains(&page)
	}
}

/// Pages of one process. The hotness bins double as its page table: a managed
/// page is resident exactly when it is registered there.
#[derive(Clone, Debug)]
pub struct ProcessPages {
	pub heat: HotnessBins,
	regions: Vec<Region>,
	next_page: PageId,
	managed_pages: u64,
	unmanaged_pages: u64,
}

impl ProcessPages {
	pub fn regions(&self) -> &[Region] {
		&self.regions
	}

	/// Pages spanned by all regions.
	pub fn address_pages(&self) -> u64 {
		self.next_page
	}

	/// Registered managed pages, resident or not.
	pub fn managed_pages(&self) -> u64 {
		self.managed_pages
	}

	pub fn unmanaged_pages(&self) -> u64 {
		self.unmanaged_pages
	}

	pub fn fast_pages(&self) -> u64 {
		self.heat.fast_pages() as u64
	}

	pub fn slow_pages(&self) -> u64 {
		self.heat.slow_pages() as u64
	}

	fn region_of(&self, page: PageId) -> Option<&Region> {
		self.regions.iter().find(|r| r.contains(page))
	}
}

/// One applied page move.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Move {
	pub pid: Pid,
	pub page: PageId,
	pub to: Tier,
}

impl Move {
	pub fn from(&self) -> Tier {
		self.to.other()
	}
}

/// Migrations of one epoch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MigrationLedger {
	pub epoch: u64,
	pub cap: u64,
	pub bytes_moved: u64,
	pub moves: Vec<Move>,
	/// Entries skipped because the page was freed or already in place.
	pub stale: u64,
	/// Promotions skipped because fast memory was full.
	pub stalled: u64,
}

impl MigrationLedger {
	pub fn new(epoch: u64, cap: u64) -> Self {
		Self {
			epoch,
			cap,
			..Self::default()
		}
	}

	pub fn bytes_for(&self, pid: Pid, page_size: u64) -> u64 {
		self.moves.iter().filter(|m| m.pid == pid).count() as u64 * page_size
	}
}

/// Orders plans for execution: every demotion first, then every promotion,
/// each in plan order.
pub fn schedule(plans: &[MigrationPlan]) -> Vec<Move> {
	let demotions = plans.iter().flat_map(|p| {
		p.demotions.iter().map(|&page| Move {
			pid: p.pid,
			page,
			to: Tier::Slow,
		})
	});
	let promotions = plans.iter().flat_map(|p| {
		p.promotions.iter().map(|&page| Move {
			pid: p.pid,
			page,
			to: Tier::Fast,
		})
	});
	demotions.chain(promotions).collect()
}

/// Freed memory of an exited process.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExitReport {
	pub fast_bytes: u64,
	pub slow_bytes: u64,
	pub unmanaged_bytes: u64,
}

impl ExitReport {
	pub fn total(&self) -> u64 {
		self.fast_bytes + self.slow_bytes + self.unmanaged_bytes
	}
}

/// Occupancy of both tiers across all processes.
#[derive(Clone, Debug)]
pub struct TierState {
	config: TierConfig,
	fast_used: u64,
	slow_used: u64,
	unmanaged_fast: u64,
	procs: BTreeMap<Pid, ProcessPages>,
}

impl TierState {
	pub fn new(config: TierConfig) -> Result<Self, MemError> {
		// Validates bin count and page size up front.
		HotnessBins::new(0, Self::bin_config(&config))?;
		Ok(Self {
			config,
			fast_used: 0,
			slow_used: 0,
			unmanaged_fast: 0,
			procs: BTreeMap::new(),
		})
	}

	fn bin_config(config: &TierConfig) -> BinConfig {
		BinConfig {
			bins: config.bins,
			page_size: config.page_size,
		}
	}

	pub fn config(&self) -> &TierConfig {
		&self.config
	}

	pub fn page_size(&self) -> u64 {
		self.config.page_size
	}

	/// Managed bytes in fast memory.
	pub fn fast_used(&self) -> u64 {
		self.fast_used
	}

	pub fn slow_used(&self) -> u64 {
		self.slow_used
	}

	/// Fast bytes held by unmanaged regions.
	pub fn unmanaged_fast(&self) -> u64 {
		self.unmanaged_fast
	}

	/// Fast memory available to tier management.
	pub fn managed_fast_capacity(&self) -> u64 {
		self.config.fast_capacity - self.unmanaged_fast
	}

	pub fn fast_free(&self) -> u64 {
		self.config.fast_capacity - self.fast_used - self.unmanaged_fast
	}

	pub fn slow_free(&self) -> u64 {
		self.config.slow_capacity - self.slow_used
	}

	pub fn contains(&self, pid: Pid) -> bool {
		self.procs.contains_key(&pid)
	}

	pub fn pids(&self) -> impl Iterator<Item = Pid> + '_ {
		self.procs.keys().copied()
	}

	pub fn process(&self, pid: Pid) -> Result<&ProcessPages, MemError> {
		self.procs.get(&pid).ok_or(MemError::UnknownProcess(pid))
	}

	pub fn process_mut(&mut self, pid: Pid) -> Result<&mut ProcessPages, MemError> {
		self.procs
			.get_mut(&pid)
			.ok_or(MemError::UnknownProcess(pid))
	}

	/// Mutable access to every process at once, in pid order.
	pub fn processes_mut(&mut self) -> impl Iterator<Item = (Pid, &mut ProcessPages)> {
		self.procs.iter_mut().map(|(&pid, p)| (pid, p))
	}

	pub fn fast_resident(&self, pid: Pid) -> u64 {
		self.procs
			.get(&pid)
			.map_or(0, |p| p.fast_pages() * self.config.page_size)
	}

	pub fn slow_resident(&self, pid: Pid) -> u64 {
		self.procs
			.get(&pid)
			.map_or(0, |p| p.slow_pages() * self.config.page_size)
	}

	pub fn add_process(&mut self, pid: Pid) -> Result<(), MemError> {
		if self.procs.contains_key(&pid) {
			return Err(MemError::DuplicateProcess(pid));
		}
		let heat = HotnessBins::new(pid, Self::bin_config(&self.config))?;
		self.procs.insert(
			pid,
			ProcessPages {
				heat,
				regions: Vec::new(),
				next_page: 0,
				managed_pages: 0,
				unmanaged_pages: 0,
			},
		);
		Ok(())
	}

	/// Registers `size` bytes (rounded up to whole pages). With `populate`,
	/// every page is faulted in immediately under `gate`.
	pub fn register_region(
		&mut self,
		pid: Pid,
		size: u64,
		populate: bool,
		gate: FaultGate,
	) -> Result<Region, MemError> {
		if size == 0 {
			return Err(MemError::EmptyRegion);
		}
		let page_size = self.config.page_size;
		let pages = size.div_ceil(page_size);
		let bytes = pages * page_size;
		let free = self.fast_free() + self.slow_free();
		if bytes > free {
			return Err(MemError::RegionRejected {
				pid,
				size: bytes,
				free,
			});
		}
		let managed = bytes >= self.config.registration_threshold;
		if !managed && bytes > self.fast_free() {
			return Err(MemError::RegionRejected {
				pid,
				size: bytes,
				free: self.fast_free(),
			});
		}

		let proc = self
			.procs
			.get_mut(&pid)
			.ok_or(MemError::UnknownProcess(pid))?;
		let region = Region {
			pid,
			start: proc.next_page,
			pages,
			managed,
		};
		proc.next_page += pages;
		proc.regions.push(region);
		if managed {
			proc.managed_pages += pages;
		} else {
			proc.unmanaged_pages += pages;
			self.unmanaged_fast += bytes;
		}

		if populate && managed {
			for page in region.start..region.start + pages {
				self.handle_fault(pid, page, gate)?;
			}
		}
		Ok(region)
	}

	/// Tier of `page` if it is resident.
	pub fn tier_of(&self, pid: Pid, page: PageId) -> Option<Tier> {
		let proc = self.procs.get(&pid)?;
		proc.heat.tier_of(page).or_else(|| {
			proc.region_of(page)
				.filter(|r| !r.managed)
				.map(|_| Tier::Fast)
		})
	}

	/// Places a non-resident page. A resident page just reports its tier.
	pub fn handle_fault(
		&mut self,
		pid: Pid,
		page: PageId,
		gate: FaultGate,
	) -> Result<Tier, MemError> {
		let page_size = self.config.page_size;
		let fast_free = self.fast_free() >= page_size;
		let slow_free = self.slow_free() >= page_size;
		let proc = self
			.procs
			.get_mut(&pid)
			.ok_or(MemError::UnknownProcess(pid))?;
		if let Some(tier) = proc.heat.tier_of(page) {
			return Ok(tier);
		}
		let region = proc
			.region_of(page)
			.ok_or(MemError::OutOfRange { pid, page })?;
		if !region.managed {
			return Ok(Tier::Fast);
		}

		let fast_bytes = proc.fast_pages() * page_size;
		let headroom = !gate.gated || fast_bytes + page_size <= gate.quota;
		let tier = place(headroom, fast_free, slow_free).ok_or(MemError::ProcessKilled { pid })?;
		proc.heat.register(page, tier)?;
		match tier {
			Tier::Fast => self.fast_used += page_size,
			Tier::Slow => self.slow_used += page_size,
		}
		Ok(tier)
	}

	/// Resolves an access stream, faulting pages in as needed.
	///
	/// Stops at the first kill.
	pub fn resolve_batch(
		&mut self,
		pid: Pid,
		pages: &[PageId],
		gate: FaultGate,
		out: &mut Vec<(PageId, Tier)>,
	) -> Result<(), MemError> {
		out.reserve(pages.len());
		let mut rest = pages;
		while !rest.is_empty() {
			let heat = &self
				.procs
				.get(&pid)
				.ok_or(MemError::UnknownProcess(pid))?
				.heat;
			let mut resolved = 0;
			for &page in rest {
				match heat.tier_of(page) {
					Some(tier) => out.push((page, tier)),
					None => break,
				}
				resolved += 1;
			}
			rest = &rest[resolved..];
			if let Some(&page) = rest.first() {
				let tier = self.handle_fault(pid, page, gate)?;
				out.push((page, tier));
				rest = &rest[1..];
			}
		}
		Ok(())
	}

	/// Applies `moves` in order until `limit` bytes have moved.
	///
	/// Returns how many entries were consumed; the rest did not fit.
	pub fn execute_moves(
		&mut self,
		moves: &[Move],
		limit: u64,
		ledger: &mut MigrationLedger,
	) -> usize {
		let page_size = self.config.page_size;
		let limit = limit.min(ledger.cap);
		for (i, mv) in moves.iter().enumerate() {
			let current = self
				.procs
				.get(&mv.pid)
				.and_then(|p| p.heat.tier_of(mv.page));
			if current != Some(mv.from()) {
				ledger.stale += 1;
				continue;
			}
			if mv.to == Tier::Fast && self.fast_free() < page_size {
				ledger.stalled += 1;
				continue;
			}
			if ledger.bytes_moved + page_size > limit {
				return i;
			}
			let proc = self.procs.get_mut(&mv.pid).expect("checked above");
			proc.heat.set_tier(mv.page, mv.to).expect("resident page");
			match mv.to {
				Tier::Fast => {
					self.fast_used += page_size;
					self.slow_used -= page_size;
				}
				Tier::Slow => {
					self.slow_used += page_size;
					self.fast_used -= page_size;
				}
			}
			ledger.bytes_moved += page_size;
			ledger.moves.push(*mv);
		}
		moves.len()
	}

	/// Executes plans under the ledger's cap; the unapplied tail is dropped.
	///
	/// Returns the number of pages moved.
	pub fn execute_migrations(
		&mut self,
		plans: &[MigrationPlan],
		ledger: &mut MigrationLedger,
	) -> usize {
		let before = ledger.moves.len();
		let moves = schedule(plans);
		self.execute_moves(&moves, ledger.cap, ledger);
		ledger.moves.len() - before
	}

	/// Frees everything `pid` holds.
	pub fn process_exit(&mut self, pid: Pid) -> Result<ExitReport, MemError> {
		let proc = self
			.procs
			.remove(&pid)
			.ok_or(MemError::UnknownProcess(pid))?;
		let page_size = self.config.page_size;
		let report = ExitReport {
			fast_bytes: proc.fast_pages() * page_size,
			slow_bytes: proc.slow_pages() * page_size,
			unmanaged_bytes: proc.unmanaged_pages * page_size,
		};
		self.fast_used -= report.fast_bytes;
		self.slow_used -= report.slow_bytes;
		self.unmanaged_fast -= report.unmanaged_bytes;
		Ok(report)
	}

	/// Recounts occupancy from the page records and compares with the tallies.
	pub fn check_accounting(&self) -> Result<(), String> {
		let page_size = self.config.page_size;
		let (mut fast, mut slow, mut unmanaged) = (0, 0, 0);
		for (&pid, proc) in &self.procs {
			proc.heat
				.check_invariants()
				.map_err(|e| format!("process {pid}: {e}"))?;
			let (mut f, mut s) = (0u64, 0u64);
			for page in 0..proc.next_page {
				match proc.heat.tier_of(page) {
					Some(Tier::Fast) => f += 1,
					Some(Tier::Slow) => s += 1,
					None => {}
				}
			}
			if f != proc.fast_pages() || s != proc.slow_pages() {
				return Err(format!(
					"process {pid}: page records disagree with bin tallies"
				));
			}
			if f + s > proc.managed_pages {
				return Err(format!(
					"process {pid}: {} resident pages exceed {} registered",
					f + s,
					proc.managed_pages
				));
			}
			fast += f * page_size;
			slow += s * page_size;
			unmanaged += proc.unmanaged_pages * page_size;
		}
		if fast != self.fast_used || slow != self.slow_used || unmanaged != self.unmanaged_fast {
			return Err(format!(
				"recount fast {fast} slow {slow} unmanaged {unmanaged}, tallies fast {} slow {} unmanaged {}",
				self.fast_used, self.slow_used, self.unmanaged_fast
			));
		}
		if fast + unmanaged > self.config.fast_capacity || slow > self.config.slow_capacity {
			return Err("tier over capacity".into());
		}
		Ok(())
	}
}

#[cfg(test)]
mod tests {
	use super::*;

	const PAGE: u64 = 4096;

	fn state(fast_pages: u64, slow_pages: u64) -> TierState {
		TierState::new(TierConfig {
			page_size: PAGE,
			fast_capacity: fast_pages * PAGE,
			slow_capacity: slow_pages * PAGE,
			registration_threshold: PAGE,
			bins: 6,
		})
		.unwrap()
	}

	#[test]
	fn populate_fills_fast_first() {
		let mut s = state(4, 100);
		s.add_process(1).unwrap();
		s.register_region(1, 10 * PAGE, true, FaultGate::OPEN)
			.unwrap();
		assert_eq!(s.fast_resident(1), 4 * PAGE);
		assert_eq!(s.slow_resident(1), 6 * PAGE);
		s.check_accounting().unwrap();
	}

	#[test]
	fn lazy_region_has_nothing_resident() {
		let mut s = state(4, 4);
		s.add_process(1).unwrap();
		let r = s.register_region(1, 1, false, FaultGate::OPEN).unwrap();
		assert_eq!(r.pages, 1);
		assert_eq!(s.fast_used() + s.slow_used(), 0);
		assert_eq!(s.tier_of(1, 0), None);
	}

	#[test]
	fn oversized_region_is_rejected() {
		let mut s = state(4, 4);
		s.add_process(1).unwrap();
		let err = s
			.register_region(1, 9 * PAGE, false, FaultGate::OPEN)
			.unwrap_err();
		assert!(matches!(err, MemError::RegionRejected { .. }));
	}

	#[test]
	fn decision_table() {
		for headroom in [false, true] {
			for fast in [false, true] {
				for slow in [false, true] {
					let expected = if headroom && fast {
						Some(Tier::Fast)
					} else if slow {
						Some(Tier::Slow)
					} else {
						None
					};
					assert_eq!(place(headroom, fast, slow), expected);
				}
			}
		}
	}

	#[test]
	fn quota_gates_faults() {
		let mut s = state(8, 8);
		s.add_process(1).unwrap();
		let gate = FaultGate {
			quota: 2 * PAGE,
			gated: true,
		};
		s.register_region(1, 4 * PAGE, true, gate).unwrap();
		assert_eq!(s.fast_resident(1), 2 * PAGE);
		assert_eq!(s.slow_resident(1), 2 * PAGE);
	}

	#[test]
	fn full_tiers_kill() {
		let mut s = state(1, 1);
		s.add_process(1).unwrap();
		s.register_region(1, 2 * PAGE, false, FaultGate::OPEN)
			.unwrap();
		s.add_process(2).unwrap();
		s.register_region(2, 2 * PAGE, true, FaultGate::OPEN)
			.unwrap();
		assert_eq!(
			s.handle_fault(1, 0, FaultGate::OPEN),
			Err(MemError::ProcessKilled { pid: 1 })
		);
	}

	fn plan(pid: Pid, promotions: Vec<PageId>, demotions: Vec<PageId>) -> MigrationPlan {
		MigrationPlan {
			pid,
			promotions,
			demotions,
		}
	}

	#[test]
	fn cap_applies_a_prefix() {
		let mut s = state(2, 10);
		s.add_process(1).unwrap();
		s.register_region(1, 7 * PAGE, true, FaultGate::OPEN)
			.unwrap();
		let mut ledger = MigrationLedger::new(0, 2 * PAGE);
		let moved = s.execute_migrations(&[plan(1, vec![2, 3, 4], vec![0, 1])], &mut ledger);
		assert_eq!(moved, 2);
		assert_eq!(
			ledger.moves.iter().map(|m| m.page).collect::<Vec<_>>(),
			vec![0, 1]
		);
		assert_eq!(ledger.bytes_moved, 2 * PAGE);
		s.check_accounting().unwrap();
	}

	#[test]
	fn promotion_into_full_fast_stalls() {
		let mut s = state(1, 10);
		s.add_process(1).unwrap();
		s.register_region(1, 3 * PAGE, true, FaultGate::OPEN)
			.unwrap();
		let mut ledger = MigrationLedger::new(0, 100 * PAGE);
		assert_eq!(
			s.execute_migrations(&[plan(1, vec![1], vec![])], &mut ledger),
			0
		);
		assert_eq!(ledger.stalled, 1);
	}

	#[test]
	fn stale_entries_are_skipped() {
		let mut s = state(4, 10);
		s.add_process(1).unwrap();
		s.add_process(2).unwrap();
		s.register_region(1, 2 * PAGE, true, FaultGate::OPEN)
			.unwrap();
		s.register_region(2, 2 * PAGE, true, FaultGate::OPEN)
			.unwrap();
		s.process_exit(2).unwrap();
		let mut ledger = MigrationLedger::new(0, 100 * PAGE);
		let plans = [plan(1, vec![0], vec![1]), plan(2, vec![], vec![0])];
		assert_eq!(s.execute_migrations(&plans, &mut ledger), 1);
		assert_eq!(ledger.stale, 2);
		s.check_accounting().unwrap();
	}

	#[test]
	fn exit_frees_everything() {
		let mut s = state(8, 8);
		s.add_process(1).unwrap();
		s.register_region(1, 10 * PAGE, true, FaultGate::OPEN)
			.unwrap();
		let report = s.process_exit(1).unwrap();
		assert_eq!(report.fast_bytes, 8 * PAGE);
		assert_eq!((s.fast_used(), s.slow_used()), (0, 0));
		assert_eq!(s.process_exit(1), Err(MemError::UnknownProcess(1)));
	}

	#[test]
	fn small_regions_stay_unmanaged() {
		let mut s = TierState::new(TierConfig {
			page_size: PAGE,
			fast_capacity: 8 * PAGE,
			slow_capacity: 8 * PAGE,
			registration_threshold: 4 * PAGE,
			bins: 6,
		})
		.unwrap();
		s.add_process(1).unwrap();
		let r = s
			.register_region(1, 2 * PAGE, true, FaultGate::OPEN)
			.unwrap();
		assert!(!r.managed);
		assert_eq!(s.unmanaged_fast(), 2 * PAGE);
		assert_eq!(s.managed_fast_capacity(), 6 * PAGE);
		assert_eq!(s.tier_of(1, 1), Some(Tier::Fast));
		assert_eq!(s.fast_used(), 0);
		s.check_accounting().unwrap();
	}
}
