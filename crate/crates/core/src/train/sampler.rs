//! Inverse-label-frequency sampling without replacement.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Per-label track counts, clamped to at least 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelStats {
    pub freq: Vec<u64>,
}

impl LabelStats {
    pub fn from_label_sets<S: AsRef<[u32]>>(sets: &[S], n_labels: usize) -> Result<Self> {
        let mut freq = vec![0u64; n_labels];
        for s in sets {
            for &l in s.as_ref() {
                let slot = freq.get_mut(l as usize).ok_or_else(|| {
                    Error::Index(format!("label {l} outside a {n_labels}-label vocabulary"))
                })?;
                *slot += 1;
            }
        }
        for f in &mut freq {
            *f = (*f).max(1);
        }
        Ok(Self { freq })
    }

    /// `Σ 1/freq(l)` over the track's labels.
    pub fn track_weight(&self, labels: &[u32]) -> f64 {
        labels
            .iter()
            .map(|&l| self.freq.get(l as usize).map_or(0.0, |&f| 1.0 / f as f64))
            .sum()
    }
}

/// Draws `n` distinct track positions with probability proportional to their
/// weight, one at a time without replacement. Tracks with zero weight come
/// last, in random order.
pub fn balanced_sample<S: AsRef<[u32]>, R: Rng + ?Sized>(
    labels: &[S],
    stats: &LabelStats,
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if n > labels.len() {
        return Err(Error::Config(format!(
            "cannot sample {n} of {} tracks",
            labels.len()
        )));
    }
    let weights: Vec<f64> = labels
        .iter()
        .map(|l| stats.track_weight(l.as_ref()))
        .collect();
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::Config(format!("sample weight {w}")));
    }
    // Efraimidis–Spirakis keys u^(1/w); descending key order is the draw order
    let mut keyed: Vec<(f64, usize)> = (0..labels.len())
        .filter(|&i| weights[i] > 0.0)
        .map(|i| (rng.random::<f64>().ln() / weights[i], i))
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut picked: Vec<usize> = keyed.into_iter().take(n).map(|(_, i)| i).collect();
    if picked.len() < n {
        let mut rest: Vec<usize> = (0..labels.len()).filter(|&i| weights[i] <= 0.0).collect();
        rest.shuffle(rng);
        picked.extend(rest.into_iter().take(n - picked.len()));
    }
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stats_and_weights() {
        let sets = vec![vec![0u32], vec![0, 1], vec![0]];
        let s = LabelStats::from_label_sets(&sets, 3).unwrap();
        assert_eq!(s.freq, vec![3, 1, 1]);
        assert!((s.track_weight(&[0, 1]) - (1.0 / 3.0 + 1.0)).abs() < 1e-15);
        assert!(LabelStats::from_label_sets(&[vec![5u32]], 3).is_err());
    }

    #[test]
    fn exhausts_corpus_without_repeats() {
        let sets = vec![vec![0u32], vec![], vec![1], vec![0, 1], vec![]];
        let s = LabelStats::from_label_sets(&sets, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut all = balanced_sample(&sets, &s, 5, &mut rng).unwrap();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        assert!(balanced_sample(&sets, &s, 6, &mut rng).is_err());
    }

    #[test]
    fn symmetric_tracks_equal_odds() {
        let sets = vec![vec![0u32], vec![1]];
        let s = LabelStats::from_label_sets(&sets, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trials = 10_000;
        let first = (0..trials)
            .filter(|_| balanced_sample(&sets, &s, 1, &mut rng).unwrap()[0] == 0)
            .count();
        assert!((first as f64 / trials as f64 - 0.5).abs() < 0.02);
    }
}
