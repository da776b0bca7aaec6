//! Scenario files: machine shape, policy choice and a timed event script.
//!
//! Scenarios are TOML. Byte quantities accept either integers or strings with
//! a binary suffix (`"128MiB"`). Times are in simulated seconds and are
//! quantized down to the enclosing epoch.
//!
//! ```toml
//! name = "two-tenants"
//! duration = 60
//! seed = 7
//! page_size = "128KiB"
//! fast_capacity = "64MiB"
//! slow_capacity = "512MiB"
//! registration_threshold = "1MiB"
//! policy = "maxmem"
//!
//! [[events]]
//! at = 0
//! action = "start"
//! pid = 1
//! t_miss = 0.1
//! working_set = "32MiB"
//! pattern = { kind = "hot_set", hot = "16MiB", hot_frac = 0.9 }
//!
//! [[events]]
//! at = 30
//! action = "set_tmiss"
//! pid = 1
//! t_miss = 0.05
//! ```

use {
	crate::{
		hotness::DEFAULT_BINS,
		memmgr::TierConfig,
		policy::{
			baseline_noqos, baseline_static, MaxMemPolicy, PolicyError, PolicyKind, QosPolicy,
		},
		telemetry::{SamplerConfig, TelemetryError},
		units::{Bytes, Pid, GIB, MIB},
		workload::{PatternSpec, WorkloadError},
	},
	serde::{Deserialize, Serialize},
	std::{
		collections::{BTreeMap, BTreeSet},
		path::{Path, PathBuf},
	},
};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
	#[error("cannot read {path}: {source}")]
	Io {
		path: PathBuf,
		source: std::io::Error,
	},

	#[error("{0}")]
	Parse(String),

	#[error("event {index} at t={at} comes before the previous event at t={previous}")]
	EventOrder {
		index: usize,
		at: f64,
		previous: f64,
	},

	#[error("event {index} refers to process {pid}, which is not running")]
	DeadPid { index: usize, pid: Pid },

	#[error("event {index} starts process {pid}, which is already running")]
	DuplicatePid { index: usize, pid: Pid },

	#[error("event {index}: {source}")]
	Workload { index: usize, source: WorkloadError },

	#[error("event {index}: {source}")]
	Telemetry {
		index: usize,
		source: TelemetryError,
	},

	#[error("invalid `{field}`: {reason}")]
	Invalid { field: &'static str, reason: String },

	#[error(transparent)]
	Policy(#[from] PolicyError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ScenarioError {
	ScenarioError::Invalid {
		field,
		reason: reason.into(),
	}
}

/// Latency-driven throughput model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerfModel {
	/// Nanoseconds per fast-tier access.
	pub fast_latency: f64,
	/// Nanoseconds per slow-tier access.
	pub slow_latency: f64,
	/// Slow-latency multiplier while migrations are in flight.
	pub migration_penalty: f64,
	/// Copy bandwidth in bytes per second. Planned moves beyond what it can
	/// drain in one epoch are queued, and planning pauses until the queue empties.
	pub migration_bandwidth: Option<Bytes>,
}

impl Default for PerfModel {
	fn default() -> Self {
		Self {
			fast_latency: 100.0,
			slow_latency: 400.0,
			migration_penalty: 1.1,
			migration_bandwidth: None,
		}
	}
}

impl PerfModel {
	pub fn validate(&self) -> Result<(), ScenarioError> {
		if !(self.fast_latency > 0.0 && self.fast_latency.is_finite()) {
			return Err(invalid("perf.fast_latency", "must be positive"));
		}
		if !(self.slow_latency >= self.fast_latency && self.slow_latency.is_finite()) {
			return Err(invalid(
				"perf.slow_latency",
				"must be at least fast_latency",
			));
		}
		if !(self.migration_penalty >= 1.0 && self.migration_penalty.is_finite()) {
			return Err(invalid("perf.migration_penalty", "must be at least 1"));
		}
		if self.migration_bandwidth == Some(Bytes(0)) {
			return Err(invalid("perf.migration_bandwidth", "must be positive"));
		}
		Ok(())
	}

	/// Mean access latency for a process whose accesses hit fast memory with
	/// probability `fast_share`.
	pub fn mean_latency(&self, fast_share: f64, migrating: bool) -> f64 {
		let penalty = if migrating {
			self.migration_penalty
		} else {
			1.0
		};
		fast_share * self.fast_latency + (1.0 - fast_share) * self.slow_latency * penalty
	}

	/// Accesses `threads` threads complete in `epoch` seconds.
	pub fn ops(&self, threads: u32, epoch: f64, fast_share: f64, migrating: bool) -> u64 {
		(threads as f64 * epoch * 1e9 / self.mean_latency(fast_share, migrating)).floor() as u64
	}
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaxMemConfig {
	/// Share of the per-epoch migration cap spent on quota changes.
	pub realloc_fraction: f64,
}

impl Default for MaxMemConfig {
	fn default() -> Self {
		Self {
			realloc_fraction: 0.5,
		}
	}
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
	pub pid: Pid,
	pub size: Bytes,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticConfig {
	pub partitions: Vec<Partition>,
}

/// When a process counts as meeting its target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
	pub tolerance: f64,
	/// Consecutive epochs within tolerance.
	pub sustain: u64,
}

impl Default for ConvergenceConfig {
	fn default() -> Self {
		Self {
			tolerance: 0.02,
			sustain: 10,
		}
	}
}

fn one() -> u32 {
	1
}

fn yes() -> bool {
	true
}

/// A synthetic process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSpec {
	pub pid: Pid,
	#[serde(default)]
	pub name: Option<String>,
	pub t_miss: f64,
	pub working_set: Bytes,
	#[serde(default = "one")]
	pub threads: u32,
	/// Fault the whole working set in at start.
	#[serde(default = "yes")]
	pub populate: bool,
	pub pattern: PatternSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
	Start(ProcessSpec),
	Stop {
		pid: Pid,
	},
	SetTmiss {
		pid: Pid,
		t_miss: f64,
	},
	ResizeHotSet {
		pid: Pid,
		hot: Bytes,
	},
	/// New per-epoch migration cap.
	SetMigrationCap {
		cap: Bytes,
	},
	/// Changes how many threads issue accesses; zero makes the process idle.
	SetThreads {
		pid: Pid,
		threads: u32,
	},
}

impl Action {
	pub fn pid(&self) -> Option<Pid> {
		match *self {
			Action::Start(ref p) => Some(p.pid),
			Action::Stop { pid }
			| Action::SetTmiss { pid, .. }
			| Action::ResizeHotSet { pid, .. }
			| Action::SetThreads { pid, .. } => Some(pid),
			Action::SetMigrationCap { .. } => None,
		}
	}

	pub fn name(&self) -> &'static str {
		match self {
			Action::Start(_) => "start",
			Action::Stop { .. } => "stop",
			Action::SetTmiss { .. } => "set_tmiss",
			Action::ResizeHotSet { .. } => "resize_hot_set",
			Action::SetMigrationCap { .. } => "set_migration_cap",
			Action::SetThreads { .. } => "set_threads",
		}
	}
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
	/// Simulated seconds since the start of the run.
	pub at: f64,
	#[serde(flatten)]
	pub action: Action,
}

fn default_name() -> String {
	"scenario".into()
}

fn default_duration() -> f64 {
	60.0
}

fn default_epoch() -> f64 {
	1.0
}

fn default_page() -> Bytes {
	Bytes(2 * MIB)
}

fn default_fast() -> Bytes {
	Bytes(128 * GIB)
}

fn default_slow() -> Bytes {
	Bytes(768 * GIB)
}

fn default_threshold() -> Bytes {
	Bytes(GIB)
}

fn default_bins() -> usize {
	DEFAULT_BINS
}

fn default_cap() -> Bytes {
	Bytes(4 * GIB)
}

fn default_policy() -> PolicyKind {
	PolicyKind::MaxMem
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
	#[serde(default = "default_name")]
	pub name: String,
	/// Simulated seconds.
	#[serde(default = "default_duration")]
	pub duration: f64,
	/// Policy epoch in simulated seconds.
	#[serde(default = "default_epoch")]
	pub epoch: f64,
	#[serde(default)]
	pub seed: u64,
	#[serde(default = "default_page")]
	pub page_size: Bytes,
	#[serde(default = "default_fast")]
	pub fast_capacity: Bytes,
	#[serde(default = "default_slow")]
	pub slow_capacity: Bytes,
	#[serde(default = "default_threshold")]
	pub registration_threshold: Bytes,
	#[serde(default = "default_bins")]
	pub hotness_bins: usize,
	/// Migration cap per epoch.
	#[serde(default = "default_cap")]
	pub migration_cap: Bytes,
	#[serde(default = "default_policy")]
	pub policy: PolicyKind,
	#[serde(default)]
	pub sampler: SamplerConfig,
	#[serde(default)]
	pub perf: PerfModel,
	#[serde(default)]
	pub maxmem: MaxMemConfig,
	#[serde(default, rename = "static")]
	pub static_partitions: StaticConfig,
	#[serde(default)]
	pub convergence: ConvergenceConfig,
	#[serde(default)]
	pub events: Vec<Event>,
}

impl Default for Scenario {
	fn default() -> Self {
		toml::from_str("").expect("empty scenario parses")
	}
}

impl std::str::FromStr for Scenario {
	type Err = ScenarioError;

	fn from_str(s: &str) -> Result<Self, Self::Err> {
		let mut scenario: Scenario =
			toml::from_str(s).map_err(|e| ScenarioError::Parse(e.to_string()))?;
		scenario.sampler.epoch = scenario.epoch;
		scenario.validate()?;
		Ok(scenario)
	}
}

impl Scenario {
	pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
		let path = path.as_ref();
		let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
			path: path.to_owned(),
			source,
		})?;
		text.parse().map_err(|e| match e {
			ScenarioError::Parse(msg) => ScenarioError::Parse(format!("{}: {msg}", path.display())),
			other => other,
		})
	}

	pub fn to_toml(&self) -> String {
		toml::to_string(self).expect("scenarios serialize")
	}

	/// Number of epochs in the run.
	pub fn epochs(&self) -> u64 {
		(self.duration / self.epoch - 1e-9).ceil().max(0.0) as u64
	}

	/// Epoch in which an event at `at` seconds takes effect.
	pub fn epoch_of(&self, at: f64) -> u64 {
		(at / self.epoch + 1e-9).floor() as u64
	}

	pub fn tier_config(&self) -> TierConfig {
		TierConfig {
			page_size: self.page_size.get(),
			fast_capacity: self.fast_capacity.get(),
			slow_capacity: self.slow_capacity.get(),
			registration_threshold: self.registration_threshold.get(),
			bins: self.hotness_bins,
		}
	}

	pub fn partitions(&self) -> BTreeMap<Pid, u64> {
		self.static_partitions
			.partitions
			.iter()
			.map(|p| (p.pid, p.size.get()))
			.collect()
	}

	pub fn build_policy(&self) -> Result<Box<dyn QosPolicy>, ScenarioError> {
		Ok(match self.policy {
			PolicyKind::MaxMem => Box::new(MaxMemPolicy),
			PolicyKind::Static => Box::new(baseline_static(
				self.partitions(),
				self.fast_capacity.get(),
			)?),
			PolicyKind::NoQos => Box::new(baseline_noqos()),
		})
	}

	/// Copy with a different policy.
	pub fn with_policy(&self, policy: PolicyKind) -> Self {
		Self {
			policy,
			..self.clone()
		}
	}

	/// Copy with a migration cap given as a rate in bytes per second.
	pub fn with_migration_rate(&self, per_second: f64) -> Self {
		let mut s = self.clone();
		s.migration_cap = Bytes((per_second * self.epoch).round() as u64);
		s
	}

	/// Copy with a different epoch length; migration caps keep their rate.
	pub fn with_epoch(&self, epoch: f64) -> Self {
		let scale = epoch / self.epoch;
		let rescale = |b: Bytes| Bytes((b.get() as f64 * scale).round() as u64);
		let mut s = self.clone();
		s.epoch = epoch;
		s.sampler.epoch = epoch;
		s.migration_cap = rescale(self.migration_cap);
		for event in &mut s.events {
			if let Action::SetMigrationCap { cap } = &mut event.action {
				*cap = rescale(*cap);
			}
		}
		s
	}

	pub fn validate(&self) -> Result<(), ScenarioError> {
		if !(self.duration >= 0.0 && self.duration.is_finite()) {
			return Err(invalid(
				"duration",
				"must be a non-negative number of seconds",
			));
		}
		if !(self.epoch > 0.0 && self.epoch.is_finite()) {
			return Err(invalid("epoch", "must be positive"));
		}
		if self.page_size.get() == 0 {
			return Err(invalid("page_size", "must be positive"));
		}
		if !self
			.fast_capacity
			.get()
			.is_multiple_of(self.page_size.get())
		{
			return Err(invalid("fast_capacity", "must be a whole number of pages"));
		}
		if !self
			.slow_capacity
			.get()
			.is_multiple_of(self.page_size.get())
		{
			return Err(invalid("slow_capacity", "must be a whole number of pages"));
		}
		if !(2..=32).contains(&self.hotness_bins) {
			return Err(invalid("hotness_bins", "must be between 2 and 32"));
		}
		if !(0.0..=1.0).contains(&self.maxmem.realloc_fraction) {
			return Err(invalid("maxmem.realloc_fraction", "must lie in [0, 1]"));
		}
		if self.convergence.tolerance < 0.0 {
			return Err(invalid("convergence.tolerance", "must not be negative"));
		}
		self.sampler
			.validate()
			.map_err(|e| invalid("sampler", e.to_string()))?;
		self.perf.validate()?;
		if self.policy == PolicyKind::Static {
			let mut seen = BTreeSet::new();
			for p in &self.static_partitions.partitions {
				if !seen.insert(p.pid) {
					return Err(invalid(
						"static.partitions",
						format!("process {} listed twice", p.pid),
					));
				}
			}
			baseline_static(self.partitions(), self.fast_capacity.get())?;
		}

		let mut live = BTreeSet::new();
		let mut previous = 0.0;
		for (index, event) in self.events.iter().enumerate() {
			if !(event.at >= 0.0 && event.at.is_finite()) {
				return Err(invalid(
					"events.at",
					format!("event {index} has time {}", event.at),
				));
			}
			if event.at < previous {
				return Err(ScenarioError::EventOrder {
					index,
					at: event.at,
					previous,
				});
			}
			previous = event.at;
			match &event.action {
				Action::Start(spec) => {
					if !live.insert(spec.pid) {
						return Err(ScenarioError::DuplicatePid {
							index,
							pid: spec.pid,
						});
					}
					crate::telemetry::ProcessQoSState::new(spec.pid, spec.t_miss, 0, 1)
						.map_err(|source| ScenarioError::Telemetry { index, source })?;
					if spec.working_set.get() < self.page_size.get() {
						return Err(ScenarioError::Workload {
							index,
							source: WorkloadError::EmptyWorkingSet,
						});
					}
					spec.pattern
						.validate(spec.working_set.get())
						.map_err(|source| ScenarioError::Workload { index, source })?;
				}
				action => {
					if let Some(pid) = action.pid() {
						if !live.contains(&pid) {
							return Err(ScenarioError::DeadPid { index, pid });
						}
					}
					match *action {
						Action::Stop { pid } => {
							live.remove(&pid);
						}
						Action::SetTmiss { t_miss, pid } => {
							crate::telemetry::ProcessQoSState::new(pid, t_miss, 0, 1)
								.map_err(|source| ScenarioError::Telemetry { index, source })?;
						}
						Action::ResizeHotSet { pid, hot } => {
							let spec = self
								.start_spec(pid, index)
								.expect("live process was started");
							let mut pattern = spec.pattern.clone();
							match &mut pattern {
								PatternSpec::HotSet { hot: h, .. } => *h = hot,
								PatternSpec::HotWarm { hot: h, warm, .. } => {
									*h = hot;
									*warm = (*warm).max(hot);
								}
								other => {
									return Err(ScenarioError::Workload {
										index,
										source: WorkloadError::NoHotSet(other.name()),
									})
								}
							}
							pattern
								.validate(spec.working_set.get())
								.map_err(|source| ScenarioError::Workload { index, source })?;
						}
						_ => {}
					}
				}
			}
		}
		Ok(())
	}

	/// The most recent start event of `pid` before event `before`.
	fn start_spec(&self, pid: Pid, before: usize) -> Option<&ProcessSpec> {
		self.events[..before]
			.iter()
			.rev()
			.find_map(|e| match &e.action {
				Action::Start(spec) if spec.pid == pid => Some(spec),
				_ => None,
			})
	}

	/// Pids in order of their first start.
	pub fn pids(&self) -> Vec<Pid> {
		let mut seen = BTreeSet::new();
		self.events
			.iter()
			.filter_map(|e| match &e.action {
				Action::Start(spec) if seen.insert(spec.pid) => Some(spec.pid),
				_ => None,
			})
			.collect()
	}
}
