//! Named, shaped parameter storage with gradient accumulators.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
}

impl Entry {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A set of named, shaped arrays of trainable reals.
///
/// Names are unique; iteration is lexicographic (BTreeMap order), which makes
/// checkpoints and optimizer sweeps deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: BTreeMap<String, Entry>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<()> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::argument(alloc::format!("entry {name}: zero dimension in shape")));
        }
        if values.len() != n {
            return Err(Error::dimension(alloc::format!(
                "entry {name}: shape product {n} != value count {}",
                values.len()
            )));
        }
        if self.entries.contains_key(name) {
            return Err(Error::argument(alloc::format!("duplicate entry name {name}")));
        }
        let grads = vec![0.0; n];
        self.entries.insert(name.to_string(), Entry { shape: shape.to_vec(), values, grads });
        Ok(())
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        let n: usize = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    /// Xavier-uniform initialization, bound sqrt(6 / (fan_in + fan_out)),
    /// drawn from an RNG stream named after the entry.
    pub fn add_xavier(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        seed: u64,
    ) -> Result<()> {
        let n: usize = shape.iter().product();
        let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        let mut stream = rng::named_stream(seed, name);
        let values: Vec<f64> = (0..n).map(|_| stream.gen_range(-bound..bound)).collect();
        self.add(name, shape, values)
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Entry> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Entry)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Entry)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar parameter count.
    pub fn n_params(&self) -> usize {
        self.entries.values().map(|e| e.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grads.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Hash of all value bit patterns; used to assert a set was not mutated.
    pub fn checksum(&self) -> u64 {
        let mut text = String::new();
        for (name, e) in &self.entries {
            let _ = write!(text, "{name}:");
            for v in &e.values {
                let _ = write!(text, "{:016x}", v.to_bits());
            }
        }
        rng::fnv1a64(text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_rejects_length_mismatch() {
        let mut ps = ParameterSet::new();
        assert!(matches!(ps.add("w", &[2, 3], vec![0.0; 5]), Err(Error::Dimension(_))));
    }

    #[test]
    fn add_rejects_duplicates() {
        let mut ps = ParameterSet::new();
        ps.add("w", &[2], vec![1.0, 2.0]).unwrap();
        assert!(ps.add("w", &[2], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn iteration_is_lexicographic() {
        let mut ps = ParameterSet::new();
        ps.add_zeros("b", &[1]).unwrap();
        ps.add_zeros("a", &[1]).unwrap();
        ps.add_zeros("c", &[1]).unwrap();
        let names: Vec<_> = ps.names().cloned().collect();
        assert_eq!(names, vec!["a", "b", "c"]);
    }

    #[test]
    fn xavier_is_seed_deterministic_and_bounded() {
        let mut a = ParameterSet::new();
        let mut b = ParameterSet::new();
        a.add_xavier("w", &[4, 4], 4, 4, 9).unwrap();
        b.add_xavier("w", &[4, 4], 4, 4, 9).unwrap();
        assert_eq!(a.get("w").unwrap().values, b.get("w").unwrap().values);
        let bound = (6.0f64 / 8.0).sqrt();
        assert!(a.get("w").unwrap().values.iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn checksum_tracks_values() {
        let mut ps = ParameterSet::new();
        ps.add("w", &[2], vec![1.0, 2.0]).unwrap();
        let c0 = ps.checksum();
        ps.get_mut("w").unwrap().grads[0] = 5.0;
        assert_eq!(c0, ps.checksum(), "grads must not affect checksum");
        ps.get_mut("w").unwrap().values[0] = 1.5;
        assert_ne!(c0, ps.checksum());
    }
}
