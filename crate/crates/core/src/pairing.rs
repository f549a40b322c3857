//! Cross-domain source-target pairing in latent space: hard mining by
//! maximum L2 distance, plus the random baseline for the ablation.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// One source index per target index, covering every target exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    /// pairs[j] = i pairs target j with source i.
    pub source_for_target: Vec<usize>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.source_for_target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_for_target.is_empty()
    }
}

/// For each target latent, pick the source latent at maximal Euclidean
/// distance; ties break to the smallest source index. Latents are the
/// concatenated per-channel rows, one flat row per sample.
pub fn mine_pairs(source: &[Vec<f64>], target: &[Vec<f64>]) -> Result<PairSet> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Config("mine_pairs needs nonempty latent sets".into()));
    }
    let width = source[0].len();
    for (i, z) in source.iter().chain(target.iter()).enumerate() {
        if z.len() != width {
            return Err(Error::Config(format!(
                "latent width mismatch at row {i}: {} vs {width}",
                z.len()
            )));
        }
    }
    let pairs = target
        .iter()
        .map(|t| {
            let mut best = 0usize;
            let mut best_d = f64::NEG_INFINITY;
            for (i, s) in source.iter().enumerate() {
                let d: f64 = s.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                if d > best_d {
                    best_d = d;
                    best = i;
                }
            }
            best
        })
        .collect();
    Ok(PairSet { source_for_target: pairs })
}

/// Uniform i.i.d. source index per target.
pub fn random_pairs(n_source: usize, n_target: usize, seed: u64) -> Result<PairSet> {
    if n_source == 0 || n_target == 0 {
        return Err(Error::Config("random_pairs needs nonempty sets".into()));
    }
    let mut rng = Rng::new(seed).derive("random_pairs");
    Ok(PairSet {
        source_for_target: (0..n_target).map(|_| rng.below(n_source)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_source_pairs_everything() {
        let source = vec![vec![0.0, 0.0]];
        let target = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 3.0]];
        let p = mine_pairs(&source, &target).unwrap();
        assert_eq!(p.source_for_target, vec![0, 0, 0]);
    }

    #[test]
    fn matches_brute_force_argmax() {
        let source = vec![vec![0.0, 0.0], vec![5.0, 0.0], vec![0.0, 5.0]];
        let target = vec![vec![4.0, 0.0], vec![0.0, 4.0]];
        // target 0 is farthest from source 2 (d² = 16+25=41);
        // target 1 is farthest from source 1 (41).
        let p = mine_pairs(&source, &target).unwrap();
        assert_eq!(p.source_for_target, vec![2, 1]);
    }

    #[test]
    fn ties_break_to_smallest_index() {
        let source = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![1.0, 0.0]];
        let target = vec![vec![0.0, 0.0]];
        // sources 0, 1, 2 all at distance 1
        let p = mine_pairs(&source, &target).unwrap();
        assert_eq!(p.source_for_target, vec![0]);
    }

    #[test]
    fn permutation_equivariant_in_targets() {
        let mut rng = Rng::new(5);
        let source: Vec<Vec<f64>> =
            (0..6).map(|_| (0..4).map(|_| rng.range_f64(-1.0, 1.0)).collect()).collect();
        let target: Vec<Vec<f64>> =
            (0..5).map(|_| (0..4).map(|_| rng.range_f64(-1.0, 1.0)).collect()).collect();
        let p = mine_pairs(&source, &target).unwrap();
        let perm = [3usize, 0, 4, 1, 2];
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&j| target[j].clone()).collect();
        let q = mine_pairs(&source, &permuted).unwrap();
        for (pos, &j) in perm.iter().enumerate() {
            assert_eq!(q.source_for_target[pos], p.source_for_target[j]);
        }
    }

    #[test]
    fn width_mismatch_rejected() {
        let source = vec![vec![0.0, 0.0]];
        let target = vec![vec![1.0]];
        assert!(matches!(mine_pairs(&source, &target), Err(Error::Config(_))));
    }

    #[test]
    fn random_pairs_deterministic_and_in_bounds() {
        let a = random_pairs(7, 20, 42).unwrap();
        let b = random_pairs(7, 20, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.source_for_target.iter().all(|&i| i < 7));
        let c = random_pairs(7, 20, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_pairs_marginal_is_uniform() {
        // χ² goodness-of-fit over 10⁴ draws, 8 bins, p > 0.01
        // (χ²₇ critical value at 0.01 is 18.475).
        let n_source = 8;
        let draws = 10_000;
        let p = random_pairs(n_source, draws, 7).unwrap();
        let mut counts = vec![0usize; n_source];
        for &i in &p.source_for_target {
            counts[i] += 1;
        }
        let expect = draws as f64 / n_source as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        assert!(chi2 < 18.475, "chi2 {chi2:.2}");
    }
}
