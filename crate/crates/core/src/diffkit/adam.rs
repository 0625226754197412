//! Adam optimizer with bias correction.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use super::params::ParameterSet;

/// Per-parameter-set Adam state. Moment arrays are keyed by entry name and
/// must stay aligned with the set they were created for.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        Self::with_lr(params, 1e-3)
    }

    pub fn with_lr(params: &ParameterSet, learning_rate: f64) -> Self {
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for (name, e) in params.iter() {
            first.insert(name.clone(), vec![0.0; e.len()]);
            second.insert(name.clone(), vec![0.0; e.len()]);
        }
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first,
            second,
        }
    }

    /// One bias-corrected update from the accumulated gradients; zeroes the
    /// gradient buffers afterwards.
    pub fn step(&mut self, params: &mut ParameterSet) -> Result<()> {
        for (name, e) in params.iter() {
            match self.first.get(name.as_str()) {
                Some(m) if m.len() == e.len() => {}
                _ => {
                    return Err(Error::dimension(alloc::format!(
                        "adam state does not match entry {name}"
                    )))
                }
            }
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        for (name, e) in params.iter_mut() {
            let m = self.first.get_mut(name.as_str()).unwrap();
            let v = self.second.get_mut(name.as_str()).unwrap();
            for k in 0..e.values.len() {
                let g = e.grads[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                e.values[k] -= self.learning_rate * m_hat / (libm::sqrt(v_hat) + self.epsilon);
                e.grads[k] = 0.0;
            }
        }
        Ok(())
    }

    /// Serialize moments and step count as checkpoint entries under `prefix`.
    pub fn export_entries(&self, prefix: &str) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        out.push((alloc::format!("{prefix}.t"), vec![1], vec![self.step_count as f64]));
        for (name, m) in &self.first {
            out.push((alloc::format!("{prefix}.m.{name}"), vec![m.len()], m.clone()));
        }
        for (name, v) in &self.second {
            out.push((alloc::format!("{prefix}.v.{name}"), vec![v.len()], v.clone()));
        }
        out
    }

    /// Restore moments previously written by `export_entries`.
    pub fn restore_entries(
        &mut self,
        prefix: &str,
        entries: &BTreeMap<String, (Vec<usize>, Vec<f64>)>,
    ) -> Result<()> {
        let t_key = alloc::format!("{prefix}.t");
        if let Some((_, v)) = entries.get(&t_key) {
            self.step_count = v[0] as u64;
        } else {
            return Err(Error::argument(alloc::format!("missing checkpoint entry {t_key}")));
        }
        for (name, m) in self.first.iter_mut() {
            let key = alloc::format!("{prefix}.m.{name}");
            let (_, vals) = entries
                .get(&key)
                .ok_or_else(|| Error::argument(alloc::format!("missing checkpoint entry {key}")))?;
            if vals.len() != m.len() {
                return Err(Error::dimension(alloc::format!("checkpoint entry {key} length")));
            }
            m.copy_from_slice(vals);
        }
        for (name, v) in self.second.iter_mut() {
            let key = alloc::format!("{prefix}.v.{name}");
            let (_, vals) = entries
                .get(&key)
                .ok_or_else(|| Error::argument(alloc::format!("missing checkpoint entry {key}")))?;
            if vals.len() != v.len() {
                return Err(Error::dimension(alloc::format!("checkpoint entry {key} length")));
            }
            v.copy_from_slice(vals);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffkit::tape::Tape;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut ps = ParameterSet::new();
        ps.add("p", &[2], vec![1.0, -1.0]).unwrap();
        ps.get_mut("p").unwrap().grads.copy_from_slice(&[0.5, -2.0]);
        let mut opt = AdamState::new(&ps);
        opt.step(&mut ps).unwrap();
        let v = &ps.get("p").unwrap().values;
        // First Adam step: Δ = -lr * g / (|g| + ε·√bc2/bc1 scaling) ≈ -lr·sign(g).
        assert!((v[0] - (1.0 - 1e-3)).abs() < 1e-6);
        assert!((v[1] - (-1.0 + 1e-3)).abs() < 1e-6);
        assert_eq!(opt.step_count, 1);
    }

    #[test]
    fn zero_gradient_is_noop_on_values() {
        let mut ps = ParameterSet::new();
        ps.add("p", &[3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut opt = AdamState::new(&ps);
        for _ in 0..5 {
            opt.step(&mut ps).unwrap();
        }
        assert_eq!(ps.get("p").unwrap().values, vec![1.0, 2.0, 3.0]);
        assert_eq!(opt.step_count, 5);
    }

    #[test]
    fn quadratic_loss_decreases_monotonically() {
        let mut ps = ParameterSet::new();
        ps.add("p", &[3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut opt = AdamState::with_lr(&ps, 0.05);
        let loss_of = |ps: &ParameterSet| -> f64 {
            ps.get("p").unwrap().values.iter().map(|v| v * v).sum()
        };
        let mut prev = loss_of(&ps);
        for _ in 0..10 {
            let mut tape = Tape::new();
            let set = tape.register_set();
            let p = tape.leaf(set, &ps, "p").unwrap();
            let loss = tape.dot(p, p).unwrap();
            tape.backward(loss, &mut [&mut ps]).unwrap();
            opt.step(&mut ps).unwrap();
            let now = loss_of(&ps);
            assert!(now < prev, "loss must strictly decrease: {now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut a = ParameterSet::new();
        a.add_zeros("p", &[2]).unwrap();
        let opt_src = ParameterSet::new();
        let mut opt = AdamState::new(&opt_src);
        assert!(opt.step(&mut a).is_err());
    }

    #[test]
    fn moments_roundtrip_through_entries() {
        let mut ps = ParameterSet::new();
        ps.add("p", &[2], vec![1.0, -1.0]).unwrap();
        ps.get_mut("p").unwrap().grads.copy_from_slice(&[0.3, 0.7]);
        let mut opt = AdamState::new(&ps);
        opt.step(&mut ps).unwrap();

        let entries = opt.export_entries("adam");
        let map: BTreeMap<String, (Vec<usize>, Vec<f64>)> =
            entries.into_iter().map(|(n, s, v)| (n, (s, v))).collect();
        let mut restored = AdamState::new(&ps);
        restored.restore_entries("adam", &map).unwrap();
        assert_eq!(restored.step_count, opt.step_count);
        assert_eq!(restored.first, opt.first);
        assert_eq!(restored.second, opt.second);
    }
}
