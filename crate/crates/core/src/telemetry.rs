//! Access sampling and fast-memory miss ratio (FMMR) tracking.

use {
	crate::units::{PageId, Pid, Tier},
	serde::{Deserialize, Serialize},
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TelemetryError {
	#[error("target miss ratio must lie in (0, 1], got {0}")]
	TargetOutOfRange(f64),

	#[error("sampling period must be at least 1")]
	Period,

	#[error("EWMA weight must lie in (0, 1], got {0}")]
	Lambda(f64),

	#[error("epoch duration must be positive, got {0}")]
	Epoch(f64),

	#[error("idle epsilon must lie in [0, 1), got {0}")]
	IdleEpsilon(f64),
}

/// Sampling and smoothing parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
	/// One in `period` accesses becomes a sample.
	pub period: u32,
	/// EWMA weight of the newest epoch.
	pub lambda: f64,
	/// Policy epoch length in simulated seconds.
	pub epoch: f64,
	/// Smoothed miss ratios below this snap to zero.
	pub idle_epsilon: f64,
}

impl Default for SamplerConfig {
	fn default() -> Self {
		Self {
			period: 100,
			lambda: 0.5,
			epoch: 1.0,
			idle_epsilon: 1e-3,
		}
	}
}

impl SamplerConfig {
	pub fn validate(&self) -> Result<(), TelemetryError> {
		if self.period == 0 {
			return Err(TelemetryError::Period);
		}
		if !(self.lambda > 0.0 && self.lambda <= 1.0) {
			return Err(TelemetryError::Lambda(self.lambda));
		}
		if !(self.epoch > 0.0 && self.epoch.is_finite()) {
			return Err(TelemetryError::Epoch(self.epoch));
		}
		if !(0.0..1.0).contains(&self.idle_epsilon) {
			return Err(TelemetryError::IdleEpsilon(self.idle_epsilon));
		}
		Ok(())
	}
}

/// Deterministic 1-in-`period` sampler with a running counter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StrideSampler {
	period: u32,
	count: u32,
}

impl StrideSampler {
	pub fn new(period: u32) -> Self {
		Self {
			period: period.max(1),
			count: 0,
		}
	}

	/// Advances by one access; true if this access is sampled.
	#[inline]
	pub fn tick(&mut self) -> bool {
		self.count += 1;
		if self.count == self.period {
			self.count = 0;
			true
		} else {
			false
		}
	}

	/// Accesses counted towards the next sample.
	pub fn carry(&self) -> u32 {
		self.count
	}
}

/// A sampled access.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sample {
	pub page: PageId,
	pub tier: Tier,
}

/// Instantaneous FMMR of one epoch's samples; zero when nothing was sampled.
pub fn epoch_fmmr(a_fast: u64, a_slow: u64) -> f64 {
	match a_fast + a_slow {
		0 => 0.0,
		total => a_slow as f64 / total as f64,
	}
}

/// One EWMA step.
pub fn update_ewma(prev: f64, inst: f64, lambda: f64) -> f64 {
	(lambda * inst + (1.0 - lambda) * prev).clamp(0.0, 1.0)
}

/// QoS bookkeeping for one process.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessQoSState {
	pub pid: Pid,
	/// Target miss ratio.
	pub t_miss: f64,
	/// Sampled fast-tier accesses this epoch.
	pub a_fast: u64,
	/// Sampled slow-tier accesses this epoch.
	pub a_slow: u64,
	/// Smoothed miss ratio.
	pub a_miss: f64,
	/// Miss ratio of the last closed epoch.
	pub inst_fmmr: f64,
	/// Fast-memory entitlement in bytes.
	pub quota: u64,
	/// Registration order, used for first-come-first-served decisions.
	pub arrival_seq: u64,
	/// Managed bytes the process has registered; quota beyond this is useless.
	pub footprint: u64,
	sampler: StrideSampler,
}

impl ProcessQoSState {
	pub fn new(
		pid: Pid,
		t_miss: f64,
		arrival_seq: u64,
		period: u32,
	) -> Result<Self, TelemetryError> {
		check_target(t_miss)?;
		Ok(Self {
			pid,
			t_miss,
			a_fast: 0,
			a_slow: 0,
			a_miss: 0.0,
			inst_fmmr: 0.0,
			quota: 0,
			arrival_seq,
			footprint: 0,
			sampler: StrideSampler::new(period),
		})
	}

	pub fn set_target(&mut self, t_miss: f64) -> Result<(), TelemetryError> {
		check_target(t_miss)?;
		self.t_miss = t_miss;
		Ok(())
	}

	pub fn sampler(&self) -> &StrideSampler {
		&self.sampler
	}

	/// Runs an access stream through the sampler. Every sampled access bumps the
	/// per-tier counters and is handed to `on_sample` (normally the hotness bins).
	///
	/// Returns the number of samples taken.
	pub fn ingest_accesses<I, F, E>(&mut self, accesses: I, mut on_sample: F) -> Result<usize, E>
	where
		I: IntoIterator<Item = (PageId, Tier)>,
		F: FnMut(Sample) -> Result<(), E>,
	{
		let mut taken = 0;
		for (page, tier) in accesses {
			if !self.sampler.tick() {
				continue;
			}
			match tier {
				Tier::Fast => self.a_fast += 1,
				Tier::Slow => self.a_slow += 1,
			}
			taken += 1;
			on_sample(Sample { page, tier })?;
		}
		Ok(taken)
	}

	/// Closes the epoch: computes the instantaneous ratio, folds it into the
	/// EWMA and resets the counters.
	pub fn close_epoch(&mut self, config: &SamplerConfig) -> f64 {
		self.inst_fmmr = epoch_fmmr(self.a_fast, self.a_slow);
		let mut ewma = update_ewma(self.a_miss, self.inst_fmmr, config.lambda);
		if ewma < config.idle_epsilon {
			ewma = 0.0;
		}
		self.a_miss = ewma;
		self.a_fast = 0;
		self.a_slow = 0;
		ewma
	}
}

fn check_target(t_miss: f64) -> Result<(), TelemetryError> {
	if t_miss > 0.0 && t_miss <= 1.0 {
		Ok(())
	} else {
		Err(TelemetryError::TargetOutOfRange(t_miss))
	}
}

/// Per-epoch telemetry of one process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRow {
	pub epoch: u64,
	pub pid: Pid,
	pub a_fast: u64,
	pub a_slow: u64,
	pub inst_fmmr: f64,
	pub ewma_fmmr: f64,
	pub quota: u64,
}
