//! Synthetic access streams.
//!
//! A process's working set is one contiguous page range. Set-based patterns
//! carve it into a hot prefix, an optional warm range after it and a cold
//! remainder; each access first picks a set by its fraction, then a page
//! uniformly inside it.

use {
	crate::units::{Bytes, PageId, Pid},
	rand::{distributions::Distribution, Rng, SeedableRng},
	rand_chacha::ChaCha8Rng,
	rand_distr::Zipf,
	serde::{Deserialize, Serialize},
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WorkloadError {
	#[error("working set must hold at least one page")]
	EmptyWorkingSet,

	#[error("hot set ({hot} bytes) exceeds {what} ({limit} bytes)")]
	HotTooLarge {
		hot: u64,
		what: &'static str,
		limit: u64,
	},

	#[error("warm set ({warm} bytes) exceeds the working set ({working_set} bytes)")]
	WarmTooLarge { warm: u64, working_set: u64 },

	#[error("access fractions must lie in [0, 1] and sum to at most 1")]
	Fractions,

	#[error("zipf exponent must be positive, got {0}")]
	ZipfExponent(f64),

	#[error("pattern {0} has no hot set to resize")]
	NoHotSet(&'static str),
}

/// Shape of a process's accesses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PatternSpec {
	/// Every page equally likely.
	Uniform,
	/// Page `i` (1-based rank) drawn with weight `1 / i^exponent`.
	Zipf { exponent: f64 },
	/// Hot prefix, warm range up to `warm` bytes, cold remainder.
	HotWarm {
		hot: Bytes,
		warm: Bytes,
		hot_frac: f64,
		warm_frac: f64,
	},
	/// Hot prefix taking `hot_frac` of accesses, uniform remainder.
	HotSet { hot: Bytes, hot_frac: f64 },
}

impl PatternSpec {
	pub fn name(&self) -> &'static str {
		match self {
			PatternSpec::Uniform => "uniform",
			PatternSpec::Zipf { .. } => "zipf",
			PatternSpec::HotWarm { .. } => "hot_warm",
			PatternSpec::HotSet { .. } => "hot_set",
		}
	}

	pub fn hot_bytes(&self) -> Option<u64> {
		match self {
			PatternSpec::HotWarm { hot, .. } | PatternSpec::HotSet { hot, .. } => Some(hot.get()),
			_ => None,
		}
	}

	pub fn validate(&self, working_set: u64) -> Result<(), WorkloadError> {
		let frac_ok = |f: f64| (0.0..=1.0).contains(&f);
		match *self {
			PatternSpec::Uniform => Ok(()),
			PatternSpec::Zipf { exponent } if exponent > 0.0 && exponent.is_finite() => Ok(()),
			PatternSpec::Zipf { exponent } => Err(WorkloadError::ZipfExponent(exponent)),
			PatternSpec::HotSet { hot, hot_frac } => {
				if hot.get() > working_set {
					return Err(WorkloadError::HotTooLarge {
						hot: hot.get(),
						what: "the working set",
						limit: working_set,
					});
				}
				if !frac_ok(hot_frac) {
					return Err(WorkloadError::Fractions);
				}
				Ok(())
			}
			PatternSpec::HotWarm {
				hot,
				warm,
				hot_frac,
				warm_frac,
			} => {
				if hot > warm {
					return Err(WorkloadError::HotTooLarge {
						hot: hot.get(),
						what: "the warm set",
						limit: warm.get(),
					});
				}
				if warm.get() > working_set {
					return Err(WorkloadError::WarmTooLarge {
						warm: warm.get(),
						working_set,
					});
				}
				if !frac_ok(hot_frac) || !frac_ok(warm_frac) || hot_frac + warm_frac > 1.0 + 1e-12 {
					return Err(WorkloadError::Fractions);
				}
				Ok(())
			}
		}
	}
}

/// Contiguous page range chosen with a fixed probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
	pub start: PageId,
	pub pages: u64,
	pub weight: f64,
}

#[derive(Clone, Debug)]
enum Sampler {
	Segments {
		bounds: Vec<f64>,
		segments: Vec<Segment>,
	},
	Zipf(Zipf<f64>),
}

/// Per-process access generator with its own RNG stream.
#[derive(Clone, Debug)]
pub struct Generator {
	spec: PatternSpec,
	page_size: u64,
	pages: u64,
	sampler: Sampler,
	rng: ChaCha8Rng,
}

/// RNG for process `pid` under scenario seed `seed`.
pub fn process_rng(seed: u64, pid: Pid) -> ChaCha8Rng {
	let mut rng = ChaCha8Rng::seed_from_u64(seed);
	rng.set_stream(pid as u64);
	rng
}

impl Generator {
	pub fn new(
		spec: PatternSpec,
		working_set: u64,
		page_size: u64,
		rng: ChaCha8Rng,
	) -> Result<Self, WorkloadError> {
		let pages = working_set / page_size;
		if pages == 0 {
			return Err(WorkloadError::EmptyWorkingSet);
		}
		spec.validate(working_set)?;
		let sampler = Self::build(&spec, pages, page_size)?;
		Ok(Self {
			spec,
			page_size,
			pages,
			sampler,
			rng,
		})
	}

	fn build(spec: &PatternSpec, pages: u64, page_size: u64) -> Result<Sampler, WorkloadError> {
		let to_pages = |b: Bytes| (b.get() / page_size).min(pages);
		let raw = match *spec {
			PatternSpec::Zipf { exponent } => {
				let zipf = Zipf::new(pages, exponent)
					.map_err(|_| WorkloadError::ZipfExponent(exponent))?;
				return Ok(Sampler::Zipf(zipf));
			}
			PatternSpec::Uniform => vec![Segment {
				start: 0,
				pages,
				weight: 1.0,
			}],
			PatternSpec::HotSet { hot, hot_frac } => {
				let h = to_pages(hot);
				vec![
					Segment {
						start: 0,
						pages: h,
						weight: hot_frac,
					},
					Segment {
						start: h,
						pages: pages - h,
						weight: 1.0 - hot_frac,
					},
				]
			}
			PatternSpec::HotWarm {
				hot,
				warm,
				hot_frac,
				warm_frac,
			} => {
				let h = to_pages(hot);
				let w = to_pages(warm).max(h);
				vec![
					Segment {
						start: 0,
						pages: h,
						weight: hot_frac,
					},
					Segment {
						start: h,
						pages: w - h,
						weight: warm_frac,
					},
					Segment {
						start: w,
						pages: pages - w,
						weight: (1.0 - hot_frac - warm_frac).max(0.0),
					},
				]
			}
		};

		let mut segments = raw
			.into_iter()
			.filter(|s| s.pages > 0 && s.weight > 0.0)
			.collect::<Vec<_>>();
		if segments.is_empty() {
			segments.push(Segment {
				start: 0,
				pages,
				weight: 1.0,
			});
		}
		let total: f64 = segments.iter().map(|s| s.weight).sum();
		let mut acc = 0.0;
		let mut bounds = Vec::with_capacity(segments.len());
		for s in &mut segments {
			s.weight /= total;
			acc += s.weight;
			bounds.push(acc);
		}
		*bounds.last_mut().expect("non-empty") = 1.0;
		Ok(Sampler::Segments { bounds, segments })
	}

	pub fn spec(&self) -> &PatternSpec {
		&self.spec
	}

	/// Pages in the working set.
	pub fn pages(&self) -> u64 {
		self.pages
	}

	/// Effective segments after normalization; empty for Zipf.
	pub fn segments(&self) -> &[Segment] {
		match &self.sampler {
			Sampler::Segments { segments, .. } => segments,
			Sampler::Zipf(_) => &[],
		}
	}

	/// Changes the hot set size. A warm set that would end up smaller than the
	/// hot set grows with it.
	pub fn resize_hot(&mut self, bytes: u64) -> Result<(), WorkloadError> {
		let spec = match self.spec.clone() {
			PatternSpec::HotSet { hot_frac, .. } => PatternSpec::HotSet {
				hot: Bytes(bytes),
				hot_frac,
			},
			PatternSpec::HotWarm {
				warm,
				hot_frac,
				warm_frac,
				..
			} => PatternSpec::HotWarm {
				hot: Bytes(bytes),
				warm: warm.max(Bytes(bytes)),
				hot_frac,
				warm_frac,
			},
			other => return Err(WorkloadError::NoHotSet(other.name())),
		};
		spec.validate(self.pages * self.page_size)?;
		self.sampler = Self::build(&spec, self.pages, self.page_size)?;
		self.spec = spec;
		Ok(())
	}

	/// Probability that an access lands on a page satisfying `pred`.
	pub fn share_where(&self, mut pred: impl FnMut(PageId) -> bool) -> f64 {
		match &self.sampler {
			Sampler::Segments { segments, .. } => segments
				.iter()
				.map(|s| {
					let hits = (s.start..s.start + s.pages).filter(|&p| pred(p)).count();
					s.weight * hits as f64 / s.pages as f64
				})
				.sum(),
			Sampler::Zipf(_) => {
				let PatternSpec::Zipf { exponent } = self.spec else {
					unreachable!("zipf sampler without zipf spec")
				};
				let (mut hit, mut total) = (0.0, 0.0);
				for page in 0..self.pages {
					let w = ((page + 1) as f64).powf(-exponent);
					total += w;
					if pred(page) {
						hit += w;
					}
				}
				hit / total
			}
		}
	}

	/// Draws one page.
	#[inline]
	pub fn next_page(&mut self) -> PageId {
		match &self.sampler {
			Sampler::Zipf(zipf) => (zipf.sample(&mut self.rng) as u64 - 1).min(self.pages - 1),
			Sampler::Segments { bounds, segments } => {
				let seg = if segments.len() == 1 {
					&segments[0]
				} else {
					let u: f64 = self.rng.gen();
					&segments[bounds
						.iter()
						.position(|&b| u < b)
						.unwrap_or(segments.len() - 1)]
				};
				seg.start + self.rng.gen_range(0..seg.pages)
			}
		}
	}

	/// Appends `n` accesses to `out`.
	pub fn fill(&mut self, n: u64, out: &mut Vec<PageId>) {
		out.reserve(n as usize);
		for _ in 0..n {
			out.push(self.next_page());
		}
	}

	pub fn next_accesses(&mut self, n: u64) -> Vec<PageId> {
		let mut out = Vec::new();
		self.fill(n, &mut out);
		out
	}
}
