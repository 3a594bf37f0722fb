use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Multiset of exact fractions.
///
/// Means are evaluated by walking the reduced fractions in key order, so the
/// result depends only on the multiset, never on insertion or merge order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FracSum {
    #[serde(with = "pairs")]
    counts: BTreeMap<(u64, u64), u64>,
}

impl FracSum {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `num / den`; `den` must be non-zero.
    pub fn add(&mut self, num: u64, den: u64) {
        assert!(den > 0, "zero denominator");
        let g = gcd(num, den).max(1);
        *self.counts.entry((num / g, den / g)).or_insert(0) += 1;
    }

    pub fn merge(&mut self, other: &FracSum) {
        for (k, c) in &other.counts {
            *self.counts.entry(*k).or_insert(0) += c;
        }
    }

    pub fn count(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.counts
            .iter()
            .map(|(&(n, d), &c)| c as f64 * (n as f64 / d as f64))
            .sum()
    }

    /// `None` when empty.
    pub fn mean(&self) -> Option<f64> {
        let n = self.count();
        (n > 0).then(|| self.total() / n as f64)
    }

    /// Population standard deviation.
    pub fn pop_stdev(&self) -> Option<f64> {
        let m = self.mean()?;
        let n = self.count() as f64;
        let ss: f64 = self
            .counts
            .iter()
            .map(|(&(a, b), &c)| {
                let d = a as f64 / b as f64 - m;
                c as f64 * d * d
            })
            .sum();
        Some((ss / n).sqrt())
    }
}

mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<(u64, u64), u64>, s: S) -> Result<S::Ok, S::Error> {
        m.iter().map(|(&(n, d), &c)| [n, d, c]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(u64, u64), u64>, D::Error> {
        let v: Vec<[u64; 3]> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|[n, d, c]| ((n, d), c)).collect())
    }
}
