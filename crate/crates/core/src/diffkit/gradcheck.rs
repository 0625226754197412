//! Central finite-difference verification of analytic gradients.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use super::params::ParameterSet;
use super::tape::{NodeId, SetId, Tape};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
}

pub const DEFAULT_STEP: f64 = 1e-5;

fn eval_loss<F>(forward: &F, sets: &[&mut ParameterSet]) -> Result<f64>
where
    F: Fn(&mut Tape, &[SetId], &[&ParameterSet]) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let ids: Vec<SetId> = (0..sets.len()).map(|_| tape.register_set()).collect();
    let refs: Vec<&ParameterSet> = sets.iter().map(|s| &**s).collect();
    let loss = forward(&mut tape, &ids, &refs)?;
    if tape.value(loss).len() != 1 {
        return Err(Error::dimension("grad check closure must return a scalar".to_string()));
    }
    Ok(tape.scalar_value(loss))
}

/// Compare analytic gradients against central finite differences for every
/// scalar in every set. The closure must be deterministic in the parameter
/// values. Returns the maximum relative error over all parameters.
pub fn grad_check<F>(sets: &mut [&mut ParameterSet], h: f64, forward: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[SetId], &[&ParameterSet]) -> Result<NodeId>,
{
    // Analytic pass.
    for s in sets.iter_mut() {
        s.zero_grads();
    }
    {
        let mut tape = Tape::new();
        let ids: Vec<SetId> = (0..sets.len()).map(|_| tape.register_set()).collect();
        let refs: Vec<&ParameterSet> = sets.iter().map(|s| &**s).collect();
        let loss = forward(&mut tape, &ids, &refs)?;
        if tape.value(loss).len() != 1 {
            return Err(Error::dimension("grad check closure must return a scalar".to_string()));
        }
        tape.backward(loss, sets)?;
    }
    let analytic: Vec<Vec<(String, Vec<f64>)>> = sets
        .iter()
        .map(|s| s.iter().map(|(n, e)| (n.clone(), e.grads.clone())).collect())
        .collect();

    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut checked = 0usize;
    for si in 0..sets.len() {
        let names: Vec<String> = sets[si].names().cloned().collect();
        for name in names {
            let len = sets[si].get(&name).unwrap().len();
            for k in 0..len {
                let orig = sets[si].get(&name).unwrap().values[k];
                sets[si].get_mut(&name).unwrap().values[k] = orig + h;
                let up = eval_loss(&forward, sets)?;
                sets[si].get_mut(&name).unwrap().values[k] = orig - h;
                let down = eval_loss(&forward, sets)?;
                sets[si].get_mut(&name).unwrap().values[k] = orig;

                let numeric = (up - down) / (2.0 * h);
                let a = analytic[si]
                    .iter()
                    .find(|(n, _)| n == &name)
                    .map(|(_, g)| g[k])
                    .unwrap();
                if !numeric.is_finite() || !a.is_finite() {
                    return Err(Error::numeric(alloc::format!(
                        "non-finite gradient for parameter {name}[{k}]"
                    )));
                }
                let denom = a.abs().max(numeric.abs()).max(1.0);
                let rel = (a - numeric).abs() / denom;
                if rel > max_rel {
                    max_rel = rel;
                    worst = alloc::format!("set{si}:{name}[{k}]");
                }
                checked += 1;
            }
        }
    }
    Ok(GradCheckReport { max_rel_error: max_rel, worst_param: worst, checked })
}
