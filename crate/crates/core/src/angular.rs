//! Angular momentum algebra: half-integer quantum numbers and Wigner 6-j symbols.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A non-negative integer or half-integer angular momentum, stored as twice its value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HalfInt(u32);

impl HalfInt {
    pub const fn from_twice(twice: u32) -> Self {
        HalfInt(twice)
    }

    pub const fn integer(n: u32) -> Self {
        HalfInt(2 * n)
    }

    pub const fn twice(self) -> u32 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 2.0
    }

    /// Multiplicity `2j + 1`.
    pub fn multiplicity(self) -> f64 {
        f64::from(self.0 + 1)
    }

    /// All values `|a - b|, |a - b| + 1, ..., a + b` allowed by the triangle rule.
    pub fn couple(a: HalfInt, b: HalfInt) -> impl Iterator<Item = HalfInt> {
        let lo = a.0.abs_diff(b.0);
        let hi = a.0 + b.0;
        (lo..=hi).step_by(2).map(HalfInt)
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_multiple_of(2) {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

impl FromStr for HalfInt {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some((num, den)) = s.split_once('/') {
            let num: u32 = num
                .trim()
                .parse()
                .map_err(|_| format!("bad angular momentum `{s}`"))?;
            match den.trim() {
                "2" => Ok(HalfInt(num)),
                _ => Err(format!("angular momentum `{s}` must have denominator 2")),
            }
        } else {
            let v: f64 = s
                .parse()
                .map_err(|_| format!("bad angular momentum `{s}`"))?;
            let twice = 2.0 * v;
            if v < 0.0 || (twice - twice.round()).abs() > 1e-9 {
                return Err(format!("`{s}` is not a non-negative multiple of 1/2"));
            }
            Ok(HalfInt(twice.round() as u32))
        }
    }
}

impl Serialize for HalfInt {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HalfInt {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Num(v) => v.to_string().parse().map_err(serde::de::Error::custom),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * f64::from(k))
}

/// Triangle coefficient Δ(abc), with arguments given as doubled values.
/// Returns `None` when the triad violates the triangle rule or has odd perimeter.
fn triangle(a: u32, b: u32, c: u32) -> Option<f64> {
    let (a, b, c) = (a as i64, b as i64, c as i64);
    if (a + b + c) % 2 != 0 || c < (a - b).abs() || c > a + b {
        return None;
    }
    let f = |x: i64| factorial((x / 2) as u32);
    Some((f(a + b - c) * f(a - b + c) * f(-a + b + c) / f(a + b + c + 2)).sqrt())
}

/// Wigner 6-j symbol `{j1 j2 j3; j4 j5 j6}` by the Racah single-sum formula.
pub fn wigner_6j(
    j1: HalfInt,
    j2: HalfInt,
    j3: HalfInt,
    j4: HalfInt,
    j5: HalfInt,
    j6: HalfInt,
) -> f64 {
    let [a, b, c, d, e, f] = [j1, j2, j3, j4, j5, j6].map(|j| j.twice());
    let triads = [(a, b, c), (a, e, f), (d, b, f), (d, e, c)];
    let mut prefactor = 1.0;
    for &(x, y, z) in &triads {
        match triangle(x, y, z) {
            Some(t) => prefactor *= t,
            None => return 0.0,
        }
    }
    // All sums below are even by the triangle parity checks; work in whole units.
    let sums = triads.map(|(x, y, z)| ((x + y + z) / 2) as i64);
    let pairs = [
        (a + b + d + e) / 2,
        (a + c + d + f) / 2,
        (b + c + e + f) / 2,
    ]
    .map(|v| v as i64);
    let t_min = *sums.iter().max().unwrap();
    let t_max = *pairs.iter().min().unwrap();

    let mut total = 0.0;
    for t in t_min..=t_max {
        let mut denom = 1.0;
        for s in sums {
            denom *= factorial((t - s) as u32);
        }
        for p in pairs {
            denom *= factorial((p - t) as u32);
        }
        let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * factorial((t + 1) as u32) / denom;
    }
    prefactor * total
}
