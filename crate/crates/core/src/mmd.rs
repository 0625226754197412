//! Gaussian-kernel maximum mean discrepancy and the pairwise task-separation
//! losses built on it.
//!
//! The estimator is the biased one with complete double sums (diagonal terms
//! included). The bandwidth is either fixed or the median of pooled pairwise
//! distances, recomputed per batch and treated as a constant during
//! differentiation.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::diffkit::tape::{NodeId, Tape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub bandwidth: Bandwidth,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { bandwidth: Bandwidth::Median }
    }
}

impl KernelConfig {
    pub fn fixed(sigma: f64) -> Self {
        KernelConfig { bandwidth: Bandwidth::Fixed(sigma) }
    }

    fn validate(&self) -> Result<()> {
        if let Bandwidth::Fixed(s) = self.bandwidth {
            if !(s > 0.0) {
                return Err(Error::argument("kernel bandwidth must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeparationSign {
    /// Minimizing the loss pushes groups apart (negated MMD sum).
    Separate,
    /// Minimizing the loss pulls groups together.
    Attract,
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `exp(-||x - y||^2 / (2 sigma^2))`.
pub fn gaussian_kernel(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dimension(alloc::format!(
            "gaussian kernel: lengths {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::argument("gaussian kernel: sigma must be positive"));
    }
    Ok(libm::exp(-sq_dist(x, y) / (2.0 * sigma * sigma)))
}

/// Median of pairwise Euclidean distances over the pooled vectors. Falls back
/// to 1.0 when all points coincide.
pub fn median_bandwidth(pooled: &[&[f64]]) -> f64 {
    let mut dists = Vec::new();
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            dists.push(libm::sqrt(sq_dist(pooled[i], pooled[j])));
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

fn resolve_sigma(cfg: &KernelConfig, pooled: &[&[f64]]) -> Result<f64> {
    cfg.validate()?;
    Ok(match cfg.bandwidth {
        Bandwidth::Fixed(s) => s,
        Bandwidth::Median => median_bandwidth(pooled),
    })
}

/// Biased MMD^2 estimator (complete double sums with diagonals):
///
/// ```text
/// (1/n^2) Σ k(x_i, x_i') - (2/nm) Σ k(x_i, y_j) + (1/m^2) Σ k(y_j, y_j')
/// ```
pub fn mmd2(xs: &[Vec<f64>], ys: &[Vec<f64>], cfg: &KernelConfig) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::argument("mmd2: empty sample set".to_string()));
    }
    let pooled: Vec<&[f64]> = xs.iter().chain(ys.iter()).map(|v| v.as_slice()).collect();
    let sigma = resolve_sigma(cfg, &pooled)?;
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let mut xx = 0.0;
    for a in xs {
        for b in xs {
            xx += gaussian_kernel(a, b, sigma)?;
        }
    }
    let mut xy = 0.0;
    for a in xs {
        for b in ys {
            xy += gaussian_kernel(a, b, sigma)?;
        }
    }
    let mut yy = 0.0;
    for a in ys {
        for b in ys {
            yy += gaussian_kernel(a, b, sigma)?;
        }
    }
    Ok(xx / (n * n) - 2.0 * xy / (n * m) + yy / (m * m))
}

/// Gaussian kernel between two tape nodes with a fixed sigma; differentiable
/// through both vectors.
pub fn gaussian_kernel_on_tape(
    tape: &mut Tape,
    x: NodeId,
    y: NodeId,
    sigma: f64,
) -> Result<NodeId> {
    let diff = tape.sub(x, y)?;
    let sq = tape.dot(diff, diff)?;
    let scaled = tape.scale(sq, -1.0 / (2.0 * sigma * sigma));
    Ok(tape.exp(scaled))
}

/// MMD^2 on the tape; sigma is resolved from the current node values and then
/// treated as a constant.
pub fn mmd2_on_tape(
    tape: &mut Tape,
    xs: &[NodeId],
    ys: &[NodeId],
    cfg: &KernelConfig,
) -> Result<NodeId> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::argument("mmd2: empty sample set".to_string()));
    }
    let sigma = {
        let pooled: Vec<&[f64]> = xs.iter().chain(ys.iter()).map(|&id| tape.value(id)).collect();
        resolve_sigma(cfg, &pooled)?
    };
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let mut terms: Vec<(f64, NodeId)> = Vec::new();
    for &a in xs {
        for &b in xs {
            terms.push((1.0 / (n * n), gaussian_kernel_on_tape(tape, a, b, sigma)?));
        }
    }
    for &a in xs {
        for &b in ys {
            terms.push((-2.0 / (n * m), gaussian_kernel_on_tape(tape, a, b, sigma)?));
        }
    }
    for &a in ys {
        for &b in ys {
            terms.push((1.0 / (m * m), gaussian_kernel_on_tape(tape, a, b, sigma)?));
        }
    }
    let mut acc = tape.scalar(0.0);
    for (w, k) in terms {
        let t = tape.scale(k, w);
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// Sum over ordered pairs i != j of +/- MMD^2(G_i, G_j). `Separate` negates
/// the sum so that minimization drives the groups apart.
pub fn pairwise_separation_loss(
    groups: &[Vec<Vec<f64>>],
    sign: SeparationSign,
    cfg: &KernelConfig,
) -> Result<f64> {
    check_groups(groups.len(), groups.iter().map(|g| g.len()))?;
    let mut total = 0.0;
    for i in 0..groups.len() {
        for j in 0..groups.len() {
            if i != j {
                total += mmd2(&groups[i], &groups[j], cfg)?;
            }
        }
    }
    Ok(apply_sign(total, sign))
}

/// Tape version of [`pairwise_separation_loss`].
pub fn pairwise_separation_on_tape(
    tape: &mut Tape,
    groups: &[Vec<NodeId>],
    sign: SeparationSign,
    cfg: &KernelConfig,
) -> Result<NodeId> {
    check_groups(groups.len(), groups.iter().map(|g| g.len()))?;
    let mut acc = tape.scalar(0.0);
    for i in 0..groups.len() {
        for j in 0..groups.len() {
            if i != j {
                let term = mmd2_on_tape(tape, &groups[i], &groups[j], cfg)?;
                acc = tape.add(acc, term)?;
            }
        }
    }
    Ok(match sign {
        SeparationSign::Separate => tape.scale(acc, -1.0),
        SeparationSign::Attract => acc,
    })
}

fn check_groups(count: usize, sizes: impl Iterator<Item = usize>) -> Result<()> {
    if count < 2 {
        return Err(Error::argument("separation loss needs at least 2 groups"));
    }
    for (i, s) in sizes.enumerate() {
        if s == 0 {
            return Err(Error::argument(alloc::format!("separation loss: group {i} is empty")));
        }
    }
    Ok(())
}

fn apply_sign(total: f64, sign: SeparationSign) -> f64 {
    match sign {
        SeparationSign::Separate => -total,
        SeparationSign::Attract => total,
    }
}
