//! Identifiers, tiers and byte quantities shared by every module.

use {
	serde::{de, Deserialize, Deserializer, Serialize, Serializer},
	std::{fmt, str::FromStr},
};

/// Process identifier.
pub type Pid = u32;

/// Virtual page index inside one process's address space (page-size granularity).
pub type PageId = u64;

pub const KIB: u64 = 1 << 10;
pub const MIB: u64 = 1 << 20;
pub const GIB: u64 = 1 << 30;

/// Memory tier a page resides in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
	Fast,
	Slow,
}

impl Tier {
	pub fn other(self) -> Self {
		match self {
			Tier::Fast => Tier::Slow,
			Tier::Slow => Tier::Fast,
		}
	}
}

impl fmt::Display for Tier {
	fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
		match self {
			Tier::Fast => f.write_str("fast"),
			Tier::Slow => f.write_str("slow"),
		}
	}
}

/// A byte count that deserializes from either an integer or a string with a
/// binary unit suffix (`"16MiB"`, `"2 GiB"`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bytes(pub u64);

impl Bytes {
	pub const fn get(self) -> u64 {
		self.0
	}

	/// Number of pages needed to hold this many bytes, rounding up.
	pub fn pages(self, page_size: u64) -> u64 {
		self.0.div_ceil(page_size)
	}
}

impl From<u64> for Bytes {
	fn from(value: u64) -> Self {
		Self(value)
	}
}

impl FromStr for Bytes {
	type Err = String;

	fn from_str(s: &str) -> Result<Self, Self::Err> {
		let s = s.trim();
		if let Ok(n) = s.parse::<u64>() {
			return Ok(Self(n));
		}
		s.parse::<bytesize::ByteSize>()
			.map(|b| Self(b.as_u64()))
			.map_err(|err| format!("invalid byte size {s:?}: {err}"))
	}
}

impl fmt::Display for Bytes {
	fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
		let n = self.0;
		for (unit, name) in [(GIB, "GiB"), (MIB, "MiB"), (KIB, "KiB")] {
			if n >= unit && n.is_multiple_of(unit) {
				return write!(f, "{}{name}", n / unit);
			}
		}
		write!(f, "{n}")
	}
}

impl Serialize for Bytes {
	fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
		serializer.serialize_str(&self.to_string())
	}
}

impl<'de> Deserialize<'de> for Bytes {
	fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
		struct Visitor;

		impl de::Visitor<'_> for Visitor {
			type Value = Bytes;

			fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
				f.write_str("a byte count or a size string such as \"16MiB\"")
			}

			fn visit_u64<E: de::Error>(self, v: u64) -> Result<Bytes, E> {
				Ok(Bytes(v))
			}

			fn visit_i64<E: de::Error>(self, v: i64) -> Result<Bytes, E> {
				u64::try_from(v)
					.map(Bytes)
					.map_err(|_| E::custom("byte size must not be negative"))
			}

			fn visit_str<E: de::Error>(self, v: &str) -> Result<Bytes, E> {
				v.parse().map_err(E::custom)
			}
		}

		deserializer.deserialize_any(Visitor)
	}
}
