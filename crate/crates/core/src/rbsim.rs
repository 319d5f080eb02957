//! Monte-Carlo check of the query-mean estimator on Gaussian clusters.
//!
//! Each group has a center drawn from `N(0, center_scale² I)` and `m` query
//! vectors drawn from `N(center, sigma² I)`. The first query plays the corpus
//! embedding. Group `i` uses its own ChaCha stream `i` under the model seed,
//! so results do not depend on the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid group model: {0}")]
    InvalidModel(String),
    #[error("w0 grid value {0} outside [0, 1]")]
    W0(f64),
    #[error("empty w0 grid")]
    EmptyGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupModel {
    pub n_groups: usize,
    pub dim: usize,
    pub m: usize,
    pub sigma: f64,
    pub center_scale: f64,
    pub seed: u64,
}

impl GroupModel {
    pub fn new(
        n_groups: usize,
        dim: usize,
        m: usize,
        sigma: f64,
        center_scale: f64,
        seed: u64,
    ) -> Result<Self, SimError> {
        let model = Self {
            n_groups,
            dim,
            m,
            sigma,
            center_scale,
            seed,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.n_groups == 0 || self.dim == 0 || self.m == 0 {
            return Err(SimError::InvalidModel(
                "n_groups, dim and m must be positive".into(),
            ));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(SimError::InvalidModel(format!("sigma {}", self.sigma)));
        }
        if !(self.center_scale.is_finite() && self.center_scale > 0.0) {
            return Err(SimError::InvalidModel(format!(
                "center_scale {}",
                self.center_scale
            )));
        }
        Ok(())
    }

    fn rng(&self, group: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(group as u64);
        rng
    }

    /// Center followed by `draws` noisy samples around it.
    fn draw_group(&self, group: usize, draws: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut rng = self.rng(group);
        let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
        let center: Vec<f64> = (0..self.dim).map(|_| self.center_scale * gauss()).collect();
        let samples = (0..draws)
            .map(|_| center.iter().map(|c| c + self.sigma * gauss()).collect())
            .collect();
        (center, samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMse {
    pub mse_single: f64,
    pub mse_mean: f64,
}

impl EstimatorMse {
    pub fn ratio(&self) -> f64 {
        self.mse_mean / self.mse_single
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_of(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for r in rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Mean squared error against the group center of one sample versus the
/// mean of all `m` samples.
pub fn simulate_estimators(model: &GroupModel) -> Result<EstimatorMse, SimError> {
    simulate_estimators_with(model, Exec::default())
}

pub fn simulate_estimators_with(model: &GroupModel, exec: Exec) -> Result<EstimatorMse, SimError> {
    model.validate()?;
    let per_group = exec.map_range(model.n_groups, |g| {
        let (center, q) = model.draw_group(g, model.m);
        (
            sq_dist(&q[0], &center),
            sq_dist(&mean_of(&q, model.dim), &center),
        )
    });
    let n = model.n_groups as f64;
    let (single, mean) = per_group
        .iter()
        .fold((0.0, 0.0), |(s, m), (a, b)| (s + a, m + b));
    Ok(EstimatorMse {
        mse_single: single / n,
        mse_mean: mean / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallPoint {
    pub w0: f64,
    pub recall_at_1: f64,
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Recall@1 of a held-out probe query per group against representations
/// `w0·C + (1 − w0)·mean(Q_2..Q_m)`, one point per grid value.
pub fn simulate_retrieval(model: &GroupModel, w0_grid: &[f64]) -> Result<Vec<RecallPoint>, SimError> {
    simulate_retrieval_with(model, w0_grid, Exec::default())
}

pub fn simulate_retrieval_with(
    model: &GroupModel,
    w0_grid: &[f64],
    exec: Exec,
) -> Result<Vec<RecallPoint>, SimError> {
    model.validate()?;
    if model.m < 2 {
        return Err(SimError::InvalidModel("m must be at least 2".into()));
    }
    if w0_grid.is_empty() {
        return Err(SimError::EmptyGrid);
    }
    if let Some(&w) = w0_grid.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(SimError::W0(w));
    }
    // m queries plus one probe per group
    let groups = exec.map_range(model.n_groups, |g| {
        let (_, mut q) = model.draw_group(g, model.m + 1);
        let probe = unit(&q.pop().expect("m + 1 draws"));
        let rest = mean_of(&q[1..], model.dim);
        (q.swap_remove(0), rest, probe)
    });
    let mut out = Vec::with_capacity(w0_grid.len());
    for &w0 in w0_grid {
        let reps: Vec<Vec<f64>> = groups
            .iter()
            .map(|(c, rest, _)| {
                let r: Vec<f64> = c
                    .iter()
                    .zip(rest)
                    .map(|(a, b)| w0 * a + (1.0 - w0) * b)
                    .collect();
                unit(&r)
            })
            .collect();
        let hits = exec.map_range(model.n_groups, |g| {
            let probe = &groups[g].2;
            let mut best = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for (i, r) in reps.iter().enumerate() {
                let s = dot(probe, r);
                if s > best_score {
                    best = i;
                    best_score = s;
                }
            }
            best == g
        });
        let correct = hits.iter().filter(|&&h| h).count();
        out.push(RecallPoint {
            w0,
            recall_at_1: correct as f64 / model.n_groups as f64,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(sigma: f64, m: usize, seed: u64) -> GroupModel {
        GroupModel::new(2000, 16, m, sigma, 1.0, seed).unwrap()
    }

    #[test]
    fn zero_noise_is_exact() {
        let r = simulate_estimators(&model(0.0, 4, 1)).unwrap();
        assert_eq!(r.mse_single, 0.0);
        assert_eq!(r.mse_mean, 0.0);
    }

    #[test]
    fn single_query_estimators_coincide() {
        let r = simulate_estimators(&model(1.0, 1, 2)).unwrap();
        assert_eq!(r.mse_single, r.mse_mean);
    }

    #[test]
    fn ratio_is_one_over_m() {
        // closed form: E|Q_1 - c|² = σ²d, E|mean - c|² = σ²d/m
        let r = simulate_estimators(&model(1.0, 4, 3)).unwrap();
        assert!((r.mse_single - 16.0).abs() < 0.8, "{r:?}");
        assert!((r.mse_mean - 4.0).abs() < 0.2, "{r:?}");
        assert!((r.ratio() - 0.25).abs() <= 0.05);
    }

    #[test]
    fn separated_clusters_recall_one() {
        let m = GroupModel::new(300, 16, 4, 1e-6, 1.0, 5).unwrap();
        let pts = simulate_retrieval(&m, &[0.0, 0.25, 1.0]).unwrap();
        assert!(pts.iter().all(|p| p.recall_at_1 == 1.0));
    }

    #[test]
    fn deterministic_across_exec() {
        let m = GroupModel::new(400, 16, 4, 0.5, 1.0, 9).unwrap();
        let grid = [0.25, 1.0];
        let a = simulate_retrieval_with(&m, &grid, Exec::Sequential).unwrap();
        let b = simulate_retrieval_with(&m, &grid, Exec::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            simulate_estimators_with(&m, Exec::Sequential).unwrap(),
            simulate_estimators_with(&m, Exec::default()).unwrap()
        );
        assert_ne!(
            simulate_retrieval(&m.with_seed(10), &grid).unwrap(),
            a
        );
    }

    #[test]
    fn corpus_only_row_matches_first_query() {
        // w0 = 1 ignores the other queries entirely
        let m = GroupModel::new(200, 8, 4, 0.7, 1.0, 4).unwrap();
        let a = simulate_retrieval(&m, &[1.0]).unwrap();
        let b = simulate_retrieval(&m, &[0.5, 1.0]).unwrap();
        assert_eq!(a[0], b[1]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(GroupModel::new(0, 16, 4, 1.0, 1.0, 0).is_err());
        assert!(GroupModel::new(10, 16, 4, -1.0, 1.0, 0).is_err());
        assert!(GroupModel::new(10, 16, 4, 1.0, 0.0, 0).is_err());
        let m = GroupModel::new(10, 16, 1, 1.0, 1.0, 0).unwrap();
        assert!(simulate_retrieval(&m, &[0.5]).is_err());
        let m = GroupModel::new(10, 16, 4, 1.0, 1.0, 0).unwrap();
        assert_eq!(simulate_retrieval(&m, &[]), Err(SimError::EmptyGrid));
        assert_eq!(simulate_retrieval(&m, &[1.5]), Err(SimError::W0(1.5)));
    }
}
