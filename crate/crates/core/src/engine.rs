//! The epoch loop.
//!
//! Every epoch runs the same seven steps: apply due scenario events, derive
//! each process's op count from its current fast-hit share, generate and
//! resolve its accesses (faulting pages in and feeding the sampler), close the
//! epoch's telemetry, plan quotas and migrations, execute migrations under the
//! cap, and emit one [`MetricsRow`] per live process.

use {
	crate::{
		memmgr::{schedule, FaultGate, MemError, MigrationLedger, Move, ProcessPages, TierState},
		policy::{MigrationBudget, ProcessHeat, QosPolicy, ReallocationPlan},
		scenario::{Action, ProcessSpec, Scenario, ScenarioError},
		telemetry::{ProcessQoSState, TelemetryRow},
		units::{PageId, Pid, Tier},
		workload::{process_rng, Generator, WorkloadError},
	},
	rayon::prelude::*,
	serde::{Deserialize, Serialize},
	std::collections::{BTreeMap, BTreeSet},
};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
	#[error(transparent)]
	Scenario(#[from] ScenarioError),

	#[error(transparent)]
	Memory(#[from] MemError),

	#[error("process {pid}: {source}")]
	Workload { pid: Pid, source: WorkloadError },

	#[error("accounting check failed in epoch {epoch}: {reason}")]
	Audit { epoch: u64, reason: String },
}

/// One process's state at the end of an epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
	pub epoch: u64,
	pub pid: Pid,
	pub ops_completed: u64,
	pub inst_fmmr: f64,
	pub ewma_fmmr: f64,
	pub quota_bytes: u64,
	pub fast_resident_bytes: u64,
	pub migrated_bytes: u64,
	pub flagged: bool,
	/// Target in force during the epoch.
	#[serde(skip)]
	pub t_miss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleKind {
	Started,
	Exited,
	Killed,
	/// The region could not be registered; the process never ran.
	Rejected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifecycleEvent {
	pub epoch: u64,
	pub pid: Pid,
	pub kind: LifecycleKind,
	pub detail: String,
}

/// Everything that happened in one epoch.
#[derive(Clone, Debug)]
pub struct EpochReport {
	pub epoch: u64,
	pub rows: Vec<MetricsRow>,
	pub telemetry: Vec<TelemetryRow>,
	pub ledger: MigrationLedger,
	/// `None` when planning was paused behind a migration backlog.
	pub plan: Option<ReallocationPlan>,
	pub lifecycle: Vec<LifecycleEvent>,
	/// Fast bytes no process is entitled to.
	pub unallocated: u64,
	/// Moves still queued behind the bandwidth limit.
	pub backlog: usize,
}

#[derive(Debug)]
struct Proc {
	qos: ProcessQoSState,
	generator: Generator,
	threads: u32,
	ops: u64,
	flagged: bool,
	accesses: Vec<PageId>,
}

/// A running scenario.
#[derive(Debug)]
pub struct Simulation {
	scenario: Scenario,
	tiers: TierState,
	policy: Box<dyn QosPolicy>,
	procs: BTreeMap<Pid, Proc>,
	arrivals: u64,
	unallocated: u64,
	epoch: u64,
	cap: u64,
	next_event: usize,
	backlog: Vec<Move>,
	migrating: bool,
	resolved: Vec<(PageId, Tier)>,
}

impl Simulation {
	pub fn new(scenario: Scenario) -> Result<Self, SimError> {
		scenario.validate()?;
		let tiers = TierState::new(scenario.tier_config())?;
		let policy = scenario.build_policy()?;
		Ok(Self {
			unallocated: tiers.managed_fast_capacity(),
			cap: scenario.migration_cap.get(),
			tiers,
			policy,
			scenario,
			procs: BTreeMap::new(),
			arrivals: 0,
			epoch: 0,
			next_event: 0,
			backlog: Vec::new(),
			migrating: false,
			resolved: Vec::new(),
		})
	}

	pub fn scenario(&self) -> &Scenario {
		&self.scenario
	}

	pub fn tiers(&self) -> &TierState {
		&self.tiers
	}

	pub fn policy(&self) -> &dyn QosPolicy {
		self.policy.as_ref()
	}

	/// Index of the next epoch to run.
	pub fn epoch(&self) -> u64 {
		self.epoch
	}

	pub fn is_finished(&self) -> bool {
		self.epoch >= self.scenario.epochs()
	}

	pub fn unallocated(&self) -> u64 {
		self.unallocated
	}

	/// Current per-epoch migration cap.
	pub fn migration_cap(&self) -> u64 {
		self.cap
	}

	pub fn pids(&self) -> Vec<Pid> {
		self.procs.keys().copied().collect()
	}

	pub fn qos(&self, pid: Pid) -> Option<&ProcessQoSState> {
		self.procs.get(&pid).map(|p| &p.qos)
	}

	/// Live pids in arrival order.
	fn arrival_order(&self) -> Vec<Pid> {
		let mut order = self
			.procs
			.values()
			.map(|p| (p.qos.arrival_seq, p.qos.pid))
			.collect::<Vec<_>>();
		order.sort_unstable();
		order.into_iter().map(|(_, pid)| pid).collect()
	}

	fn gate(&self, pid: Pid) -> FaultGate {
		FaultGate {
			quota: self.procs.get(&pid).map_or(0, |p| p.qos.quota),
			gated: self.policy.gates_faults(),
		}
	}

	/// Runs one epoch.
	pub fn step(&mut self) -> Result<EpochReport, SimError> {
		let epoch = self.epoch;
		let mut lifecycle = Vec::new();

		// 1. events
		while let Some(event) = self.scenario.events.get(self.next_event) {
			if self.scenario.epoch_of(event.at) > epoch {
				break;
			}
			let action = event.action.clone();
			self.next_event += 1;
			self.apply(action, &mut lifecycle)?;
		}
		self.sync_mirrored_quotas();

		// 2. ops from the current hit split
		let perf = self.scenario.perf;
		let epoch_secs = self.scenario.epoch;
		for (&pid, proc) in &mut self.procs {
			let pages = self.tiers.process(pid)?;
			let share = proc
				.generator
				.share_where(|page| resident_fast(pages, page));
			proc.ops = perf.ops(proc.threads, epoch_secs, share, self.migrating);
		}

		// 3. generate, resolve, sample
		self.procs.par_iter_mut().for_each(|(_, proc)| {
			proc.accesses.clear();
			let Proc {
				generator,
				accesses,
				ops,
				..
			} = proc;
			generator.fill(*ops, accesses);
		});
		for (_, pages) in self.tiers.processes_mut() {
			pages.heat.begin_epoch();
		}
		for pid in self.arrival_order() {
			let gate = self.gate(pid);
			let accesses = std::mem::take(&mut self.procs.get_mut(&pid).expect("live").accesses);
			self.resolved.clear();
			let outcome = self
				.tiers
				.resolve_batch(pid, &accesses, gate, &mut self.resolved);
			self.procs.get_mut(&pid).expect("live").accesses = accesses;
			match outcome {
				Ok(()) => {}
				Err(MemError::ProcessKilled { .. }) => {
					self.kill(pid, epoch, "no free memory at page fault", &mut lifecycle)?;
					continue;
				}
				Err(e) => return Err(e.into()),
			}
			let proc = self.procs.get_mut(&pid).expect("live");
			let pages = self.tiers.process_mut(pid)?;
			proc.qos
				.ingest_accesses(self.resolved.iter().copied(), |sample| {
					if pages.heat.contains(sample.page) {
						pages.heat.record_sample(sample.page)?;
					}
					Ok::<_, MemError>(())
				})?;
		}
		self.sync_mirrored_quotas();

		// 4. telemetry
		let mut telemetry = Vec::with_capacity(self.procs.len());
		for proc in self.procs.values_mut() {
			let (a_fast, a_slow) = (proc.qos.a_fast, proc.qos.a_slow);
			proc.qos.close_epoch(&self.scenario.sampler);
			telemetry.push(TelemetryRow {
				epoch,
				pid: proc.qos.pid,
				a_fast,
				a_slow,
				inst_fmmr: proc.qos.inst_fmmr,
				ewma_fmmr: proc.qos.a_miss,
				quota: proc.qos.quota,
			});
		}

		// 5. plan
		let (plan, moves) = if self.backlog.is_empty() {
			let (plan, moves) = self.plan()?;
			(Some(plan), moves)
		} else {
			(None, std::mem::take(&mut self.backlog))
		};

		// 6. execute
		let mut ledger = MigrationLedger::new(epoch, self.cap);
		let limit = match perf.migration_bandwidth {
			Some(bw) => ((bw.get() as f64 * epoch_secs).floor() as u64).min(self.cap),
			None => self.cap,
		};
		let consumed = self.tiers.execute_moves(&moves, limit, &mut ledger);
		if perf.migration_bandwidth.is_some() {
			self.backlog = moves[consumed..].to_vec();
		}
		self.migrating = ledger.bytes_moved > 0 || !self.backlog.is_empty();
		self.sync_mirrored_quotas();

		// 7. rows
		let page_size = self.tiers.page_size();
		let mut migrated = BTreeMap::<Pid, u64>::new();
		for mv in &ledger.moves {
			*migrated.entry(mv.pid).or_default() += page_size;
		}
		let rows = self
			.procs
			.iter()
			.map(|(&pid, proc)| MetricsRow {
				epoch,
				pid,
				ops_completed: proc.ops,
				inst_fmmr: proc.qos.inst_fmmr,
				ewma_fmmr: proc.qos.a_miss,
				quota_bytes: proc.qos.quota,
				fast_resident_bytes: self.tiers.fast_resident(pid),
				migrated_bytes: migrated.get(&pid).copied().unwrap_or(0),
				flagged: proc.flagged,
				t_miss: proc.qos.t_miss,
			})
			.collect();

		self.epoch += 1;
		Ok(EpochReport {
			epoch,
			rows,
			telemetry,
			ledger,
			plan,
			lifecycle,
			unallocated: self.unallocated,
			backlog: self.backlog.len(),
		})
	}

	fn plan(&mut self) -> Result<(ReallocationPlan, Vec<Move>), SimError> {
		let order = self.arrival_order();
		let realloc = (self.cap as f64 * self.scenario.maxmem.realloc_fraction).floor() as u64;
		let states = order
			.iter()
			.map(|pid| self.procs[pid].qos.clone())
			.collect::<Vec<_>>();
		let plan = self.policy.reallocate(&states, self.unallocated, realloc);
		for proc in self.procs.values_mut() {
			let delta = plan.delta(proc.qos.pid);
			proc.qos.quota = proc
				.qos
				.quota
				.checked_add_signed(delta)
				.expect("reallocation never drives a quota negative");
			proc.flagged = plan.flagged.contains(&proc.qos.pid);
		}
		self.unallocated = self
			.unallocated
			.checked_add_signed(-plan.net())
			.expect("reallocation never grants more than is unallocated");

		let budget = MigrationBudget {
			realloc,
			gradient: self.cap - realloc,
		};
		let fast_free = self.tiers.fast_free();
		let page_size = self.tiers.page_size();
		let mut pages = self
			.tiers
			.processes_mut()
			.collect::<BTreeMap<Pid, &mut ProcessPages>>();
		let mut heats = Vec::with_capacity(order.len());
		for pid in &order {
			let proc = pages.remove(pid).expect("live process has pages");
			heats.push(ProcessHeat {
				pid: *pid,
				quota: self.procs[pid].qos.quota,
				fast_resident: proc.fast_pages() * page_size,
				bins: &mut proc.heat,
			});
		}
		let plans = self.policy.plan_migrations(&mut heats, budget, fast_free);
		Ok((plan, schedule(&plans)))
	}

	fn apply(
		&mut self,
		action: Action,
		lifecycle: &mut Vec<LifecycleEvent>,
	) -> Result<(), SimError> {
		let epoch = self.epoch;
		if let Some(pid) = action.pid() {
			if !matches!(action, Action::Start(_)) && !self.procs.contains_key(&pid) {
				// The process was killed or rejected earlier.
				return Ok(());
			}
		}
		match action {
			Action::Start(spec) => self.start(spec, lifecycle)?,
			Action::Stop { pid } => {
				let report = self.tiers.process_exit(pid)?;
				let proc = self.procs.remove(&pid).expect("checked above");
				self.unallocated += proc.qos.quota + report.unmanaged_bytes;
				lifecycle.push(LifecycleEvent {
					epoch,
					pid,
					kind: LifecycleKind::Exited,
					detail: format!("freed {} bytes", report.total()),
				});
			}
			Action::SetTmiss { pid, t_miss } => {
				let proc = self.procs.get_mut(&pid).expect("checked above");
				proc.qos
					.set_target(t_miss)
					.map_err(|source| ScenarioError::Telemetry {
						index: self.next_event - 1,
						source,
					})?;
			}
			Action::ResizeHotSet { pid, hot } => {
				let proc = self.procs.get_mut(&pid).expect("checked above");
				proc.generator
					.resize_hot(hot.get())
					.map_err(|source| SimError::Workload { pid, source })?;
			}
			Action::SetMigrationCap { cap } => self.cap = cap.get(),
			Action::SetThreads { pid, threads } => {
				self.procs.get_mut(&pid).expect("checked above").threads = threads;
			}
		}
		Ok(())
	}

	fn start(
		&mut self,
		spec: ProcessSpec,
		lifecycle: &mut Vec<LifecycleEvent>,
	) -> Result<(), SimError> {
		let epoch = self.epoch;
		let pid = spec.pid;
		let page_size = self.tiers.page_size();
		let bytes = spec.working_set.pages(page_size) * page_size;
		let managed = bytes >= self.tiers.config().registration_threshold;
		let reject = |detail: String, lifecycle: &mut Vec<LifecycleEvent>| {
			lifecycle.push(LifecycleEvent {
				epoch,
				pid,
				kind: LifecycleKind::Rejected,
				detail,
			});
		};
		if !managed && bytes > self.unallocated {
			reject(
				format!("{bytes} unmanaged bytes exceed unallocated fast memory"),
				lifecycle,
			);
			return Ok(());
		}

		let generator = Generator::new(
			spec.pattern.clone(),
			spec.working_set.get(),
			page_size,
			process_rng(self.scenario.seed, pid),
		)
		.map_err(|source| SimError::Workload { pid, source })?;
		let mut qos = ProcessQoSState::new(
			pid,
			spec.t_miss,
			self.arrivals,
			self.scenario.sampler.period,
		)
		.map_err(|source| ScenarioError::Telemetry {
			index: self.next_event - 1,
			source,
		})?;
		self.arrivals += 1;

		self.tiers.add_process(pid)?;
		if managed {
			qos.footprint = bytes;
			qos.quota = self
				.policy
				.admit(pid, bytes, self.unallocated)
				.min(self.unallocated);
			self.unallocated -= qos.quota;
		} else {
			self.unallocated -= bytes;
		}
		let gate = FaultGate {
			quota: qos.quota,
			gated: self.policy.gates_faults(),
		};
		self.procs.insert(
			pid,
			Proc {
				qos,
				generator,
				threads: spec.threads,
				ops: 0,
				flagged: false,
				accesses: Vec::new(),
			},
		);

		match self.tiers.register_region(pid, bytes, spec.populate, gate) {
			Ok(_) => {
				lifecycle.push(LifecycleEvent {
					epoch,
					pid,
					kind: LifecycleKind::Started,
					detail: format!("{bytes} bytes{}", if managed { "" } else { " unmanaged" }),
				});
				Ok(())
			}
			Err(MemError::RegionRejected { size, free, .. }) => {
				self.tiers.process_exit(pid)?;
				let proc = self.procs.remove(&pid).expect("just inserted");
				self.unallocated += proc.qos.quota + if managed { 0 } else { bytes };
				reject(
					format!("region of {size} bytes rejected, {free} free"),
					lifecycle,
				);
				Ok(())
			}
			Err(MemError::ProcessKilled { .. }) => {
				self.kill(pid, epoch, "no free memory while populating", lifecycle)
			}
			Err(e) => Err(e.into()),
		}
	}

	fn kill(
		&mut self,
		pid: Pid,
		epoch: u64,
		why: &str,
		lifecycle: &mut Vec<LifecycleEvent>,
	) -> Result<(), SimError> {
		let report = self.tiers.process_exit(pid)?;
		let proc = self.procs.remove(&pid).expect("killed process was live");
		self.unallocated += proc.qos.quota + report.unmanaged_bytes;
		lifecycle.push(LifecycleEvent {
			epoch,
			pid,
			kind: LifecycleKind::Killed,
			detail: why.into(),
		});
		Ok(())
	}

	fn sync_mirrored_quotas(&mut self) {
		if !self.policy.quotas_follow_residency() {
			return;
		}
		let mut total = 0;
		for (&pid, proc) in &mut self.procs {
			proc.qos.quota = self.tiers.fast_resident(pid);
			total += proc.qos.quota;
		}
		self.unallocated = self.tiers.managed_fast_capacity() - total;
	}

	/// Cross-checks quota conservation and tier accounting.
	pub fn audit(&self) -> Result<(), String> {
		self.tiers.check_accounting()?;
		let quotas: u64 = self.procs.values().map(|p| p.qos.quota).sum();
		let capacity = self.tiers.managed_fast_capacity();
		if quotas + self.unallocated != capacity {
			return Err(format!(
				"quotas {quotas} + unallocated {} != managed fast capacity {capacity}",
				self.unallocated
			));
		}
		for (&pid, proc) in &self.procs {
			if !(0.0..=1.0).contains(&proc.qos.a_miss) {
				return Err(format!("process {pid} has ewma {}", proc.qos.a_miss));
			}
		}
		Ok(())
	}

	/// Runs to the end, auditing after every epoch and handing each report to
	/// `observer`.
	pub fn run_with(
		&mut self,
		mut observer: impl FnMut(&EpochReport),
	) -> Result<RunOutput, SimError> {
		let mut out = RunOutput::default();
		while !self.is_finished() {
			let report = self.step()?;
			self.audit().map_err(|reason| SimError::Audit {
				epoch: report.epoch,
				reason,
			})?;
			if report.ledger.bytes_moved > report.ledger.cap {
				return Err(SimError::Audit {
					epoch: report.epoch,
					reason: format!(
						"moved {} bytes over a cap of {}",
						report.ledger.bytes_moved, report.ledger.cap
					),
				});
			}
			observer(&report);
			out.total_migrated += report.ledger.bytes_moved;
			out.max_epoch_migrated = out.max_epoch_migrated.max(report.ledger.bytes_moved);
			out.rows.extend(report.rows);
			out.telemetry.extend(report.telemetry);
			out.lifecycle.extend(report.lifecycle);
		}
		out.summary = summarize(self, &out);
		Ok(out)
	}

	pub fn run(&mut self) -> Result<RunOutput, SimError> {
		self.run_with(|_| {})
	}
}

fn resident_fast(pages: &ProcessPages, page: PageId) -> bool {
	match pages.heat.tier_of(page) {
		Some(tier) => tier == Tier::Fast,
		None => pages
			.regions()
			.iter()
			.any(|r| !r.managed && r.contains(page)),
	}
}

/// Runs `scenario` from start to end.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput, SimError> {
	Simulation::new(scenario.clone())?.run()
}

/// Collected output of a complete run.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
	pub rows: Vec<MetricsRow>,
	pub telemetry: Vec<TelemetryRow>,
	pub lifecycle: Vec<LifecycleEvent>,
	pub total_migrated: u64,
	pub max_epoch_migrated: u64,
	pub summary: RunSummary,
}

impl RunOutput {
	pub fn killed(&self) -> Vec<Pid> {
		self.lifecycle
			.iter()
			.filter(|e| e.kind == LifecycleKind::Killed)
			.map(|e| e.pid)
			.collect()
	}

	/// Rows of one process, in epoch order.
	pub fn rows_of(&self, pid: Pid) -> Vec<&MetricsRow> {
		self.rows.iter().filter(|r| r.pid == pid).collect()
	}
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProcessSummary {
	pub pid: Pid,
	pub name: Option<String>,
	pub t_miss: f64,
	pub first_epoch: u64,
	pub last_epoch: u64,
	pub outcome: String,
	pub final_ewma: f64,
	pub final_quota: u64,
	pub mean_ops: f64,
	pub flagged_epochs: u64,
	/// Start of the first stretch of `sustain` epochs within tolerance.
	pub converged_epoch: Option<u64>,
	/// First epoch after which the process stayed within tolerance.
	pub settled_epoch: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
	pub scenario: String,
	pub policy: String,
	pub seed: u64,
	pub epochs: u64,
	pub epoch_seconds: f64,
	pub total_migrated_bytes: u64,
	pub max_epoch_migrated_bytes: u64,
	pub killed: Vec<Pid>,
	pub processes: Vec<ProcessSummary>,
	pub lifecycle: Vec<LifecycleEvent>,
}

impl RunSummary {
	pub fn to_toml(&self) -> String {
		toml::to_string(self).expect("summaries serialize")
	}
}

fn summarize(sim: &Simulation, out: &RunOutput) -> RunSummary {
	let scenario = &sim.scenario;
	let conv = scenario.convergence;
	let mut names = BTreeMap::new();
	for event in &scenario.events {
		if let Action::Start(spec) = &event.action {
			names.insert(spec.pid, spec.name.clone());
		}
	}
	let pids = out.rows.iter().map(|r| r.pid).collect::<BTreeSet<_>>();
	let processes = pids
		.into_iter()
		.map(|pid| {
			let rows = out.rows_of(pid);
			let last = rows.last().expect("pid has rows");
			let outcome = match out
				.lifecycle
				.iter()
				.rev()
				.find(|e| e.pid == pid)
				.map(|e| e.kind)
			{
				Some(LifecycleKind::Killed) => "killed",
				Some(LifecycleKind::Exited) => "exited",
				_ if sim.procs.contains_key(&pid) => "running",
				_ => "exited",
			};
			ProcessSummary {
				pid,
				name: names.get(&pid).cloned().flatten(),
				t_miss: last.t_miss,
				first_epoch: rows[0].epoch,
				last_epoch: last.epoch,
				outcome: outcome.into(),
				final_ewma: last.ewma_fmmr,
				final_quota: last.quota_bytes,
				mean_ops: rows.iter().map(|r| r.ops_completed as f64).sum::<f64>()
					/ rows.len() as f64,
				flagged_epochs: rows.iter().filter(|r| r.flagged).count() as u64,
				converged_epoch: sustained_convergence(
					&out.rows,
					pid,
					0,
					conv.tolerance,
					conv.sustain,
				),
				settled_epoch: settled_epoch(&out.rows, pid, conv.tolerance),
			}
		})
		.collect();
	RunSummary {
		scenario: scenario.name.clone(),
		policy: sim.policy.kind().to_string(),
		seed: scenario.seed,
		epochs: sim.epoch,
		epoch_seconds: scenario.epoch,
		total_migrated_bytes: out.total_migrated,
		max_epoch_migrated_bytes: out.max_epoch_migrated,
		killed: out.killed(),
		processes,
		lifecycle: out.lifecycle.clone(),
	}
}

fn within(row: &MetricsRow, tolerance: f64) -> bool {
	row.ewma_fmmr <= row.t_miss + tolerance
}

/// First epoch `e >= from` that begins `sustain` consecutive epochs in which
/// `pid`'s smoothed miss ratio stays within `tolerance` of its target.
pub fn sustained_convergence(
	rows: &[MetricsRow],
	pid: Pid,
	from: u64,
	tolerance: f64,
	sustain: u64,
) -> Option<u64> {
	let rows = rows
		.iter()
		.filter(|r| r.pid == pid && r.epoch >= from)
		.collect::<Vec<_>>();
	let mut run_start = None;
	let mut run = 0;
	let mut prev_epoch = None;
	for row in rows {
		let contiguous = prev_epoch.is_some_and(|p| p + 1 == row.epoch);
		prev_epoch = Some(row.epoch);
		if within(row, tolerance) {
			if run == 0 || !contiguous {
				run_start = Some(row.epoch);
				run = 0;
			}
			run += 1;
			if run >= sustain.max(1) {
				return run_start;
			}
		} else {
			run = 0;
		}
	}
	None
}

/// First epoch from which `pid` stays within tolerance until its last row.
pub fn settled_epoch(rows: &[MetricsRow], pid: Pid, tolerance: f64) -> Option<u64> {
	let rows = rows.iter().filter(|r| r.pid == pid).collect::<Vec<_>>();
	let mut settled = None;
	for row in rows {
		match (within(row, tolerance), settled) {
			(true, None) => settled = Some(row.epoch),
			(false, _) => settled = None,
			_ => {}
		}
	}
	settled
}

/// Mean smoothed miss ratio of `pid` over its last `window` rows.
pub fn steady_fmmr(rows: &[MetricsRow], pid: Pid, window: usize) -> Option<f64> {
	let rows = rows.iter().filter(|r| r.pid == pid).collect::<Vec<_>>();
	let tail = &rows[rows.len().saturating_sub(window)..];
	(!tail.is_empty()).then(|| tail.iter().map(|r| r.ewma_fmmr).sum::<f64>() / tail.len() as f64)
}

#[cfg(test)]
mod tests {
	use super::*;

	const TWO: &str = r#"
		duration = 20
		seed = 3
		page_size = "64KiB"
		fast_capacity = "4MiB"
		slow_capacity = "64MiB"
		registration_threshold = "256KiB"
		migration_cap = "1MiB"

		[perf]
		fast_latency = 10000
		slow_latency = 40000

		[sampler]
		period = 10

		[[events]]
		at = 0
		action = "start"
		pid = 1
		t_miss = 1.0
		working_set = "4MiB"
		pattern = { kind = "uniform" }

		[[events]]
		at = 2
		action = "start"
		pid = 2
		t_miss = 0.1
		working_set = "4MiB"
		pattern = { kind = "hot_set", hot = "2MiB", hot_frac = 0.95 }
	"#;

	#[test]
	fn empty_scenario_runs_cleanly() {
		let out = run_scenario(&"duration = 5".parse().unwrap()).unwrap();
		assert!(out.rows.is_empty());
		assert_eq!(out.summary.epochs, 5);
	}

	#[test]
	fn rows_are_in_epoch_pid_order() {
		let out = run_scenario(&TWO.parse().unwrap()).unwrap();
		let keys = out
			.rows
			.iter()
			.map(|r| (r.epoch, r.pid))
			.collect::<Vec<_>>();
		let mut sorted = keys.clone();
		sorted.sort();
		assert_eq!(keys, sorted);
		assert_eq!(out.rows.len(), 20 + 18);
	}

	#[test]
	fn single_fast_process_runs_at_fast_latency() {
		let s: Scenario = r#"
			duration = 3
			page_size = "64KiB"
			fast_capacity = "4MiB"
			registration_threshold = "64KiB"
			[perf]
			fast_latency = 10000
			slow_latency = 40000
			[[events]]
			at = 0
			action = "start"
			pid = 1
			t_miss = 0.5
			threads = 2
			working_set = "1MiB"
			pattern = { kind = "uniform" }
		"#
		.parse()
		.unwrap();
		let out = run_scenario(&s).unwrap();
		assert!(out.rows.iter().all(|r| r.ops_completed == 2 * 100_000));
		assert!(out.rows.iter().all(|r| r.inst_fmmr == 0.0));
	}

	#[test]
	fn latency_sensitive_process_converges() {
		let out = run_scenario(&TWO.parse().unwrap()).unwrap();
		let p2 = out.summary.processes.iter().find(|p| p.pid == 2).unwrap();
		assert!(p2.settled_epoch.is_some(), "{:?}", out.rows_of(2));
		let last = out.rows_of(1).last().unwrap().quota_bytes;
		assert!(last < out.rows_of(2).last().unwrap().quota_bytes);
	}

	#[test]
	fn convergence_helpers() {
		let row = |epoch, ewma| MetricsRow {
			epoch,
			pid: 1,
			ops_completed: 0,
			inst_fmmr: ewma,
			ewma_fmmr: ewma,
			quota_bytes: 0,
			fast_resident_bytes: 0,
			migrated_bytes: 0,
			flagged: false,
			t_miss: 0.1,
		};
		let rows = [0.5, 0.11, 0.3, 0.1, 0.1, 0.1, 0.2, 0.1]
			.iter()
			.enumerate()
			.map(|(e, &v)| row(e as u64, v))
			.collect::<Vec<_>>();
		assert_eq!(sustained_convergence(&rows, 1, 0, 0.02, 3), Some(3));
		assert_eq!(sustained_convergence(&rows, 1, 0, 0.02, 1), Some(1));
		assert_eq!(sustained_convergence(&rows, 1, 4, 0.02, 3), None);
		assert_eq!(settled_epoch(&rows, 1, 0.02), Some(7));
		assert!((steady_fmmr(&rows, 1, 2).unwrap() - 0.15).abs() < 1e-12);
	}
}
