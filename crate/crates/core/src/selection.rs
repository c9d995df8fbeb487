//! One provider per segment: by MI score, by lowest injected noise, or at
//! random.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::NoiseProfile;
use crate::error::{Error, Result};
use crate::rng::{rng_from, stream};

/// K×N provider scores with the seeds and sample count behind them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub scores: Vec<Vec<f64>>,
    pub scoring_seeds: Vec<u64>,
    pub samples: usize,
}

impl ScoreTable {
    pub fn new(scores: Vec<Vec<f64>>, scoring_seeds: Vec<u64>, samples: usize) -> Result<Self> {
        let n = scores.first().map_or(0, Vec::len);
        if scores.is_empty() || n == 0 {
            return Err(Error::Config("score table needs at least one segment and one provider".into()));
        }
        for (k, row) in scores.iter().enumerate() {
            if row.len() != n {
                return Err(Error::dim(format!("score row {k}"), n, row.len()));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("score[{k}][{j}] is not finite")));
            }
        }
        Ok(Self {
            scores,
            scoring_seeds,
            samples,
        })
    }

    pub fn segments(&self) -> usize {
        self.scores.len()
    }

    pub fn providers(&self) -> usize {
        self.scores[0].len()
    }
}

/// Binary K×N assignment with exactly one provider per segment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMatrix {
    a: Vec<Vec<u8>>,
}

impl SelectionMatrix {
    pub fn from_choices(choices: &[usize], providers: usize) -> Result<Self> {
        if choices.is_empty() || providers == 0 {
            return Err(Error::Config("selection needs K ≥ 1 and N ≥ 1".into()));
        }
        let a = choices
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                if n >= providers {
                    return Err(Error::Config(format!("segment {k} selects provider {n} of {providers}")));
                }
                let mut row = vec![0u8; providers];
                row[n] = 1;
                Ok(row)
            })
            .collect::<Result<_>>()?;
        Ok(Self { a })
    }

    pub fn from_matrix(a: Vec<Vec<u8>>) -> Result<Self> {
        let n = a.first().map_or(0, Vec::len);
        for (k, row) in a.iter().enumerate() {
            if row.len() != n || row.iter().any(|&v| v > 1) || row.iter().map(|&v| v as usize).sum::<usize>() != 1 {
                return Err(Error::Validation(format!("selection row {k} must be binary with exactly one 1")));
            }
        }
        if a.is_empty() || n == 0 {
            return Err(Error::Validation("selection matrix is empty".into()));
        }
        Ok(Self { a })
    }

    pub fn matrix(&self) -> &[Vec<u8>] {
        &self.a
    }

    pub fn segments(&self) -> usize {
        self.a.len()
    }

    pub fn providers(&self) -> usize {
        self.a[0].len()
    }

    pub fn chosen(&self, k: usize) -> usize {
        self.a[k].iter().position(|&v| v == 1).expect("row has exactly one selection")
    }

    pub fn choices(&self) -> Vec<usize> {
        (0..self.segments()).map(|k| self.chosen(k)).collect()
    }

    /// P2 objective: Σ_k Σ_n a[k][n] · score[k][n].
    pub fn objective(&self, scores: &ScoreTable) -> f64 {
        self.a
            .iter()
            .zip(&scores.scores)
            .map(|(row, s)| row.iter().zip(s).map(|(&a, v)| a as f64 * v).sum::<f64>())
            .sum()
    }

    /// Rows `segment,provider,score`.
    pub fn to_csv(&self, scores: Option<&ScoreTable>) -> String {
        let mut out = String::from("segment,provider,score\n");
        for k in 0..self.segments() {
            let n = self.chosen(k);
            let s = scores.map_or(String::new(), |t| format!("{:.8e}", t.scores[k][n]));
            out.push_str(&format!("{k},{n},{s}\n"));
        }
        out
    }

    pub fn write_files(&self, scores: Option<&ScoreTable>, csv_path: &Path, json_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv(scores)).map_err(|e| Error::io(csv_path, e))?;
        let json = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(json_path, json).map_err(|e| Error::io(json_path, e))
    }
}

fn first_max(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Row-wise argmax, lowest index on ties.
pub fn solve_p2(scores: &ScoreTable) -> SelectionMatrix {
    let choices: Vec<usize> = scores.scores.iter().map(|r| first_max(r)).collect();
    SelectionMatrix::from_choices(&choices, scores.providers()).expect("argmax is in range")
}

/// Lowest (mu, sigma) per row, compared lexicographically; lowest index on ties.
pub fn oracle_selection(profiles: &[Vec<NoiseProfile>]) -> Result<SelectionMatrix> {
    let n = profiles.first().map_or(0, Vec::len);
    let choices = profiles
        .iter()
        .enumerate()
        .map(|(k, row)| {
            if row.len() != n {
                return Err(Error::dim(format!("noise profile row {k}"), n, row.len()));
            }
            let mut best = 0;
            for (j, p) in row.iter().enumerate().skip(1) {
                let b = &row[best];
                if (p.mu, p.sigma) < (b.mu, b.sigma) {
                    best = j;
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?;
    SelectionMatrix::from_choices(&choices, n)
}

pub fn random_selection(segments: usize, providers: usize, seed: u64) -> Result<SelectionMatrix> {
    if segments == 0 || providers == 0 {
        return Err(Error::Config("random selection needs K ≥ 1 and N ≥ 1".into()));
    }
    let mut rng = rng_from(seed, &[stream::SELECTION]);
    let choices: Vec<usize> = (0..segments).map(|_| rng.random_range(0..providers)).collect();
    SelectionMatrix::from_choices(&choices, providers)
}

/// Fraction of segments on which two selections agree.
pub fn agreement(a: &SelectionMatrix, b: &SelectionMatrix) -> f64 {
    let same = a.choices().iter().zip(b.choices()).filter(|(x, y)| **x == *y).count();
    same as f64 / a.segments() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(rows: Vec<Vec<f64>>) -> ScoreTable {
        ScoreTable::new(rows, vec![0], 50).unwrap()
    }

    fn profile(mu: f64, sigma: f64) -> NoiseProfile {
        NoiseProfile { mu, sigma, seed: 0 }
    }

    fn brute_force(scores: &ScoreTable) -> f64 {
        let (k, n) = (scores.segments(), scores.providers());
        let mut best = f64::NEG_INFINITY;
        for code in 0..n.pow(k as u32) {
            let mut c = code;
            let choices: Vec<usize> = (0..k)
                .map(|_| {
                    let v = c % n;
                    c /= n;
                    v
                })
                .collect();
            let m = SelectionMatrix::from_choices(&choices, n).unwrap();
            best = best.max(m.objective(scores));
        }
        best
    }

    #[test]
    fn argmax_and_ties() {
        assert_eq!(solve_p2(&table(vec![vec![1.0, 0.5, -0.2]])).choices(), vec![0]);
        assert_eq!(solve_p2(&table(vec![vec![0.3; 4]])).choices(), vec![0]);
        assert_eq!(solve_p2(&table(vec![vec![-1.0, 2.0, 2.0]])).choices(), vec![1]);
    }

    #[test]
    fn non_finite_scores_rejected() {
        assert!(ScoreTable::new(vec![vec![1.0, f64::NAN]], vec![], 50).is_err());
    }

    #[test]
    fn oracle_rules() {
        let m = oracle_selection(&[vec![profile(0.0, 0.01), profile(0.0, 0.0), profile(0.1, 0.0)]]).unwrap();
        assert_eq!(m.choices(), vec![1]);
        let m = oracle_selection(&[vec![profile(0.01, 0.0), profile(0.0, 0.05)]]).unwrap();
        assert_eq!(m.choices(), vec![1]);
        let m = oracle_selection(&[vec![profile(0.0, 0.0); 3]]).unwrap();
        assert_eq!(m.choices(), vec![0]);
    }

    #[test]
    fn single_provider_is_forced() {
        let m = random_selection(5, 1, 3).unwrap();
        assert_eq!(m.choices(), vec![0; 5]);
        assert_eq!(random_selection(5, 6, 9).unwrap(), random_selection(5, 6, 9).unwrap());
    }

    #[test]
    fn random_selection_is_uniform() {
        let n = 4;
        let mut counts = vec![0usize; n];
        let trials = 10_000;
        for seed in 0..trials {
            counts[random_selection(1, n, seed).unwrap().chosen(0)] += 1;
        }
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - 0.25).abs() < 0.02, "frequency {f}");
        }
    }

    #[test]
    fn rows_must_hold_one_selection() {
        assert!(SelectionMatrix::from_matrix(vec![vec![1, 1, 0]]).is_err());
        assert!(SelectionMatrix::from_matrix(vec![vec![0, 0, 0]]).is_err());
        assert!(SelectionMatrix::from_matrix(vec![vec![0, 1, 0]]).is_ok());
    }

    #[test]
    fn csv_lists_choice_and_score() {
        let t = table(vec![vec![0.1, 0.9], vec![0.5, 0.2]]);
        let csv = solve_p2(&t).to_csv(Some(&t));
        assert_eq!(csv, "segment,provider,score\n0,1,9.00000000e-1\n1,0,5.00000000e-1\n");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn argmax_matches_exhaustive_search(v in prop::collection::vec(-5.0f64..5.0, 30)) {
            let rows: Vec<Vec<f64>> = v.chunks(6).map(<[f64]>::to_vec).collect();
            let t = table(rows);
            let m = solve_p2(&t);
            prop_assert_eq!(m.objective(&t), brute_force(&t));
        }

        #[test]
        fn every_selection_is_feasible(k in 1usize..8, n in 1usize..8, seed in 0u64..1000) {
            let m = random_selection(k, n, seed).unwrap();
            prop_assert!(SelectionMatrix::from_matrix(m.matrix().to_vec()).is_ok());
        }
    }
}
