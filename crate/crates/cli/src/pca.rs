//! Principal components for embedding plots.

use anyhow::{bail, Result};
use nalgebra::{DMatrix, DVector};

/// Top-`k` principal components of the row set.
///
/// Returns (components, mean): `components` has `k` orthonormal rows of
/// dimension d, ordered by decreasing eigenvalue; signs are fixed so each
/// component's largest-magnitude entry is positive.
pub fn components(rows: &[Vec<f64>], k: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if rows.is_empty() {
        bail!("pca needs at least one row");
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        bail!("pca rows must share a positive dimension");
    }
    if k == 0 || k > d {
        bail!("pca component count must lie in [1, {d}]");
    }
    let n = rows.len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = cov.symmetric_eigen();

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap()
    });

    let mut comps = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let col: DVector<f64> = eig.eigenvectors.column(idx).into_owned();
        let mut c: Vec<f64> = col.iter().copied().collect();
        let max_idx = c
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if c[max_idx] < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        comps.push(c);
    }
    Ok((comps, mean))
}

/// Project a row onto the components after centering.
pub fn project(row: &[f64], comps: &[Vec<f64>], mean: &[f64]) -> Vec<f64> {
    comps
        .iter()
        .map(|c| {
            row.iter()
                .zip(mean)
                .zip(c)
                .map(|((x, m), w)| (x - m) * w)
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn components_are_orthonormal() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let t = i as f64 * 0.37;
                vec![t.sin(), 2.0 * t.cos(), 0.1 * t, (t * 1.7).sin() * 0.5]
            })
            .collect();
        let (comps, _) = components(&rows, 3).unwrap();
        for i in 0..comps.len() {
            for j in 0..comps.len() {
                let dot: f64 = comps[i].iter().zip(&comps[j]).map(|(a, b)| a * b).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-10, "gram[{i}][{j}] = {dot}");
            }
        }
    }

    #[test]
    fn first_component_finds_the_dominant_axis() {
        // Points on a line along (1, 1)/sqrt(2) plus tiny noise-free spread.
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, i as f64]).collect();
        let (comps, mean) = components(&rows, 1).unwrap();
        let inv = 1.0 / 2.0f64.sqrt();
        assert!((comps[0][0] - inv).abs() < 1e-10);
        assert!((comps[0][1] - inv).abs() < 1e-10);
        let p = project(&[10.0, 10.0], &comps, &mean);
        assert!((p[0] - (10.0 - mean[0]) * 2.0 * inv).abs() < 1e-10);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(components(&[], 1).is_err());
        assert!(components(&[vec![1.0, 2.0]], 3).is_err());
        assert!(components(&[vec![1.0], vec![1.0, 2.0]], 1).is_err());
    }
}
