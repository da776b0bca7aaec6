//! Per-process hotness bins.
//!
//! Every resident page carries an accumulated sample count. Pages are grouped
//! into `B` exponentially spaced bins: bin 0 holds never (or no longer)
//! accessed pages, bin `k` holds counts in `[2^(k-1), 2^k)` and the last bin
//! holds everything from `2^(B-2)` upwards. When a page's count reaches
//! `2^(B-1)` all counts are halved ("cooling"), at most once per epoch.
//!
//! Cooling is lazy: it only bumps a sequence number. A page's counter is
//! brought up to date (halved once per cooling it has not seen yet) when it
//! receives a sample or when it is considered as a migration victim.

use {
	crate::units::{PageId, Pid, Tier, MIB},
	std::{collections::BTreeSet, fmt::Write as _},
};

pub const DEFAULT_BINS: usize = 6;
pub const DEFAULT_PAGE_SIZE: u64 = 2 * MIB;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum HotnessError {
	#[error("page {page} of process {pid} is not registered with its hotness bins")]
	UnknownPage { pid: Pid, page: PageId },

	#[error("page {page} of process {pid} is already registered")]
	AlreadyRegistered { pid: Pid, page: PageId },

	#[error("bin count must be in 2..=32, got {0}")]
	BinCount(usize),

	#[error("page size must be positive")]
	PageSize,
}

/// Bin layout parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BinConfig {
	pub bins: usize,
	pub page_size: u64,
}

impl Default for BinConfig {
	fn default() -> Self {
		Self {
			bins: DEFAULT_BINS,
			page_size: DEFAULT_PAGE_SIZE,
		}
	}
}

impl BinConfig {
	/// Count at which a page would outgrow the hottest bin and cooling fires.
	pub fn cooling_threshold(&self) -> u32 {
		1 << (self.bins - 1)
	}

	/// Pages needed to cover `budget` bytes.
	pub fn pages_for(&self, budget: u64) -> usize {
		budget.div_ceil(self.page_size) as usize
	}
}

/// Bin index of a page with effective count `count`.
pub fn classify(count: u32, bins: usize) -> usize {
	match count {
		0 => 0,
		c => (c.ilog2() as usize + 1).min(bins - 1),
	}
}

/// `count` halved `times` times, rounding down at every step.
pub fn halve(count: u32, times: u32) -> u32 {
	count.checked_shr(times).unwrap_or(0)
}

/// Heat state of one page.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PageRecord {
	pub page_id: PageId,
	pub owner: Pid,
	pub tier: Tier,
	/// Sample count as of `cool_seen`.
	pub raw_count: u32,
	/// Cooling sequence number the count was last synced to.
	pub cool_seen: u32,
	/// Update stamp of the last sample; orders pages within a bin.
	stamp: u64,
	/// Bin the page is filed under (the bin of `raw_count`).
	bin: usize,
}

impl PageRecord {
	fn key(&self) -> (u64, PageId) {
		(self.stamp, self.page_id)
	}
}

#[derive(Clone, Debug, Default)]
struct BinSlot {
	tally: usize,
	fast: BTreeSet<(u64, PageId)>,
	slow: BTreeSet<(u64, PageId)>,
}

impl BinSlot {
	fn list_mut(&mut self, tier: Tier) -> &mut BTreeSet<(u64, PageId)> {
		match tier {
			Tier::Fast => &mut self.fast,
			Tier::Slow => &mut self.slow,
		}
	}

	fn list(&self, tier: Tier) -> &BTreeSet<(u64, PageId)> {
		match tier {
			Tier::Fast => &self.fast,
			Tier::Slow => &self.slow,
		}
	}
}

/// Result of a single [`HotnessBins::record_sample`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleOutcome {
	pub count: u32,
	pub bin: usize,
	pub cooled: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoolOutcome {
	Cooled {
		seq: u32,
	},
	/// A cooling already happened this epoch.
	Suppressed,
}

/// Hotness bins of a single process.
#[derive(Clone, Debug)]
pub struct HotnessBins {
	owner: Pid,
	config: BinConfig,
	pages: Vec<Option<PageRecord>>,
	slots: Vec<BinSlot>,
	registered: usize,
	fast_pages: usize,
	cool_seq: u32,
	cooled_this_epoch: bool,
	clock: u64,
}

impl HotnessBins {
	pub fn new(owner: Pid, config: BinConfig) -> Result<Self, HotnessError> {
		if !(2..=32).contains(&config.bins) {
			return Err(HotnessError::BinCount(config.bins));
		}
		if config.page_size == 0 {
			return Err(HotnessError::PageSize);
		}
		Ok(Self {
			owner,
			config,
			pages: Vec::new(),
			slots: vec![BinSlot::default(); config.bins],
			registered: 0,
			fast_pages: 0,
			cool_seq: 0,
			cooled_this_epoch: false,
			clock: 0,
		})
	}

	pub fn config(&self) -> BinConfig {
		self.config
	}

	pub fn owner(&self) -> Pid {
		self.owner
	}

	pub fn cool_seq(&self) -> u32 {
		self.cool_seq
	}

	pub fn cooled_this_epoch(&self) -> bool {
		self.cooled_this_epoch
	}

	/// Number of registered (resident) pages.
	pub fn len(&self) -> usize {
		self.registered
	}

	pub fn is_empty(&self) -> bool {
		self.registered == 0
	}

	pub fn fast_pages(&self) -> usize {
		self.fast_pages
	}

	pub fn slow_pages(&self) -> usize {
		self.registered - self.fast_pages
	}

	pub fn contains(&self, page: PageId) -> bool {
		self.record(page).is_some()
	}

	/// Stored record, without pending coolings applied.
	pub fn record(&self, page: PageId) -> Option<&PageRecord> {
		self.pages.get(usize::try_from(page).ok()?)?.as_ref()
	}

	pub fn tier_of(&self, page: PageId) -> Option<Tier> {
		self.record(page).map(|rec| rec.tier)
	}

	/// Sample count with every pending cooling applied.
	pub fn effective_count(&self, page: PageId) -> Option<u32> {
		self.record(page)
			.map(|rec| halve(rec.raw_count, self.cool_seq - rec.cool_seen))
	}

	/// Logical bin of a page.
	pub fn bin_of(&self, page: PageId) -> Option<usize> {
		self.effective_count(page)
			.map(|c| classify(c, self.config.bins))
	}

	/// Starts a new policy epoch, re-arming cooling.
	pub fn begin_epoch(&mut self) {
		self.cooled_this_epoch = false;
	}

	pub fn register(&mut self, page: PageId, tier: Tier) -> Result<(), HotnessError> {
		let idx = page as usize;
		if self.pages.len() <= idx {
			self.pages.resize(idx + 1, None);
		}
		if self.pages[idx].is_some() {
			return Err(HotnessError::AlreadyRegistered {
				pid: self.owner,
				page,
			});
		}
		let rec = PageRecord {
			page_id: page,
			owner: self.owner,
			tier,
			raw_count: 0,
			cool_seen: self.cool_seq,
			stamp: 0,
			bin: 0,
		};
		self.file(&rec);
		self.pages[idx] = Some(rec);
		self.registered += 1;
		if tier == Tier::Fast {
			self.fast_pages += 1;
		}
		Ok(())
	}

	pub fn unregister(&mut self, page: PageId) -> Result<PageRecord, HotnessError> {
		let rec = self
			.pages
			.get_mut(page as usize)
			.and_then(Option::take)
			.ok_or(HotnessError::UnknownPage {
				pid: self.owner,
				page,
			})?;
		self.unfile(&rec);
		self.registered -= 1;
		if rec.tier == Tier::Fast {
			self.fast_pages -= 1;
		}
		Ok(rec)
	}

	/// Moves a page to `tier` (after a migration).
	pub fn set_tier(&mut self, page: PageId, tier: Tier) -> Result<(), HotnessError> {
		let mut rec = self.take(page)?;
		if rec.tier != tier {
			match tier {
				Tier::Fast => self.fast_pages += 1,
				Tier::Slow => self.fast_pages -= 1,
			}
		}
		rec.tier = tier;
		self.put(rec);
		Ok(())
	}

	/// Accounts one access sample to `page`.
	pub fn record_sample(&mut self, page: PageId) -> Result<SampleOutcome, HotnessError> {
		let mut rec = self.take(page)?;
		self.sync(&mut rec);
		self.clock += 1;
		rec.raw_count = rec.raw_count.saturating_add(1);
		rec.stamp = self.clock;
		rec.bin = classify(rec.raw_count, self.config.bins);

		let mut cooled = false;
		if rec.raw_count >= self.config.cooling_threshold() {
			if let CoolOutcome::Cooled { seq } = self.cool() {
				// The page that triggered the cooling keeps its count.
				rec.cool_seen = seq;
				cooled = true;
			}
		}

		let outcome = SampleOutcome {
			count: rec.raw_count,
			bin: rec.bin,
			cooled,
		};
		self.put(rec);
		Ok(outcome)
	}

	/// Halves every page's count (lazily).
	pub fn cool(&mut self) -> CoolOutcome {
		if self.cooled_this_epoch {
			return CoolOutcome::Suppressed;
		}
		self.cool_seq += 1;
		self.cooled_this_epoch = true;
		CoolOutcome::Cooled { seq: self.cool_seq }
	}

	/// All fast-resident pages, coldest first.
	pub fn demotion_order(&mut self) -> Vec<PageId> {
		self.refresh_tier(Tier::Fast);
		self.slots
			.iter()
			.flat_map(|slot| slot.fast.iter().map(|&(_, page)| page))
			.collect()
	}

	/// All slow-resident pages that were accessed recently, hottest first.
	pub fn promotion_order(&mut self) -> Vec<PageId> {
		self.refresh_tier(Tier::Slow);
		self.slots[1..]
			.iter()
			.rev()
			.flat_map(|slot| slot.slow.iter().map(|&(_, page)| page))
			.collect()
	}

	/// Fast-resident pages to demote to cover `budget` bytes, coldest bin first.
	pub fn demotion_victims(&mut self, budget: u64) -> Vec<PageId> {
		let n = self.config.pages_for(budget);
		let mut order = self.demotion_order();
		order.truncate(n);
		order
	}

	/// Slow-resident pages to promote to cover `budget` bytes, hottest bin first.
	/// Pages in bin 0 are never returned.
	pub fn promotion_victims(&mut self, budget: u64) -> Vec<PageId> {
		let n = self.config.pages_for(budget);
		let mut order = self.promotion_order();
		order.truncate(n);
		order
	}

	/// Per-bin page tallies by logical bin.
	pub fn tallies(&self) -> Vec<usize> {
		let mut tallies = vec![0; self.config.bins];
		for rec in self.pages.iter().flatten() {
			tallies[classify(
				halve(rec.raw_count, self.cool_seq - rec.cool_seen),
				self.config.bins,
			)] += 1;
		}
		tallies
	}

	/// Per-bin tallies as text, one line per bin.
	pub fn dump(&self) -> String {
		let mut out = String::new();
		let _ = writeln!(out, "pid {} cool_seq {}", self.owner, self.cool_seq);
		let mut fast = vec![0; self.config.bins];
		for rec in self.pages.iter().flatten() {
			if rec.tier == Tier::Fast {
				fast[classify(
					halve(rec.raw_count, self.cool_seq - rec.cool_seen),
					self.config.bins,
				)] += 1;
			}
		}
		for (bin, (total, fast)) in self.tallies().into_iter().zip(fast).enumerate() {
			let _ = writeln!(
				out,
				"bin {bin}: {total} pages ({fast} fast, {} slow)",
				total - fast
			);
		}
		out
	}

	/// Verifies the internal filing against the page records.
	pub fn check_invariants(&self) -> Result<(), String> {
		let mut filed = 0;
		for (bin, slot) in self.slots.iter().enumerate() {
			if slot.tally != slot.fast.len() + slot.slow.len() {
				return Err(format!(
					"bin {bin}: tally {} disagrees with lists",
					slot.tally
				));
			}
			filed += slot.tally;
			for tier in [Tier::Fast, Tier::Slow] {
				for &(stamp, page) in slot.list(tier) {
					let rec = self
						.record(page)
						.ok_or_else(|| format!("bin {bin} lists unknown page {page}"))?;
					if rec.tier != tier || rec.bin != bin || rec.stamp != stamp {
						return Err(format!("page {page} misfiled in bin {bin}"));
					}
				}
			}
		}
		if filed != self.registered {
			return Err(format!(
				"{filed} pages filed but {} registered",
				self.registered
			));
		}
		for rec in self.pages.iter().flatten() {
			if rec.cool_seen > self.cool_seq {
				return Err(format!(
					"page {} saw cooling {} from the future",
					rec.page_id, rec.cool_seen
				));
			}
			if rec.bin != classify(rec.raw_count, self.config.bins) {
				return Err(format!(
					"page {} filed in bin {} with count {}",
					rec.page_id, rec.bin, rec.raw_count
				));
			}
		}
		Ok(())
	}

	fn take(&mut self, page: PageId) -> Result<PageRecord, HotnessError> {
		let rec = self
			.pages
			.get_mut(page as usize)
			.and_then(Option::take)
			.ok_or(HotnessError::UnknownPage {
				pid: self.owner,
				page,
			})?;
		self.unfile(&rec);
		Ok(rec)
	}

	fn put(&mut self, rec: PageRecord) {
		self.file(&rec);
		let idx = rec.page_id as usize;
		self.pages[idx] = Some(rec);
	}

	fn file(&mut self, rec: &PageRecord) {
		let slot = &mut self.slots[rec.bin];
		slot.tally += 1;
		slot.list_mut(rec.tier).insert(rec.key());
	}

	fn unfile(&mut self, rec: &PageRecord) {
		let slot = &mut self.slots[rec.bin];
		slot.tally -= 1;
		slot.list_mut(rec.tier).remove(&rec.key());
	}

	/// Applies pending coolings to a detached record.
	fn sync(&self, rec: &mut PageRecord) {
		let pending = self.cool_seq - rec.cool_seen;
		if pending > 0 {
			rec.raw_count = halve(rec.raw_count, pending);
			rec.cool_seen = self.cool_seq;
			rec.bin = classify(rec.raw_count, self.config.bins);
		}
	}

	/// Brings every stale page of `tier` up to date so the lists reflect logical bins.
	fn refresh_tier(&mut self, tier: Tier) {
		let stale = self
			.pages
			.iter()
			.flatten()
			.filter(|rec| rec.tier == tier && rec.cool_seen != self.cool_seq)
			.map(|rec| rec.page_id)
			.collect::<Vec<_>>();
		for page in stale {
			let mut rec = self.take(page).expect("stale page vanished");
			self.sync(&mut rec);
			self.put(rec);
		}
	}
}
