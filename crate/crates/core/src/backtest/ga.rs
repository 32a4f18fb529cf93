use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::BacktestError;
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    /// Generation 0 is the random initial population.
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-gene mutation probability.
    pub mutation_rate: f64,
    /// Initial mutation standard deviation as a fraction of each gene's range;
    /// it shrinks linearly to a tenth of that by the last generation.
    pub mutation_scale: f64,
    pub elite_count: usize,
    pub tournament_size: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 32,
            generations: 50,
            crossover_rate: 0.9,
            mutation_rate: 0.2,
            mutation_scale: 0.1,
            elite_count: 2,
            tournament_size: 3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaOutcome {
    pub best: Vec<f64>,
    pub best_fitness: f64,
    /// Best fitness seen up to and including each generation.
    pub history: Vec<f64>,
    pub evaluations: usize,
}

/// Inclusive search range of one gene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub low: f64,
    pub high: f64,
}

impl Bounds {
    pub fn new(low: f64, high: f64) -> Self {
        Bounds { low, high }
    }

    fn clip(&self, x: f64) -> f64 {
        x.clamp(self.low, self.high)
    }
}

fn validate(bounds: &[Bounds], cfg: &GaConfig) -> Result<(), BacktestError> {
    if bounds.is_empty() {
        return Err(BacktestError::InvalidBounds("no genes".into()));
    }
    if let Some(b) = bounds.iter().find(|b| !(b.low.is_finite() && b.high.is_finite() && b.low <= b.high)) {
        return Err(BacktestError::InvalidBounds(format!("[{}, {}]", b.low, b.high)));
    }
    if cfg.population < 4 || cfg.elite_count == 0 || cfg.elite_count >= cfg.population {
        return Err(BacktestError::InvalidParams("need population >= 4 and 1 <= elite_count < population".into()));
    }
    if cfg.generations == 0 || cfg.tournament_size == 0 {
        return Err(BacktestError::InvalidParams("generations and tournament_size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.crossover_rate)
        || !(0.0..=1.0).contains(&cfg.mutation_rate)
        || !(cfg.mutation_scale >= 0.0)
    {
        return Err(BacktestError::InvalidParams("rates must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Real-coded GA maximizing `objective`.
///
/// Tournament selection, uniform crossover, clipped Gaussian mutation and
/// elitism. All random draws happen on the calling thread in a fixed order;
/// only objective evaluations are dispatched through `exec`, so results depend
/// on the seed alone. Non-finite fitness counts as `-inf`.
pub fn ga_optimize<F>(
    objective: F,
    bounds: &[Bounds],
    cfg: &GaConfig,
    exec: Execution,
) -> Result<GaOutcome, BacktestError>
where
    F: Fn(&[f64]) -> Result<f64, BacktestError> + Sync + Send,
{
    validate(bounds, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let evaluate = |pop: &[Vec<f64>]| -> Result<Vec<f64>, BacktestError> {
        exec.map(pop, |genes| {
            objective(genes)
                .map(|f| if f.is_finite() { f } else { f64::NEG_INFINITY })
                .map_err(|e| BacktestError::ObjectiveFailure { candidate: genes.clone(), message: e.to_string() })
        })
        .into_iter()
        .collect()
    };

    let mut population: Vec<Vec<f64>> = (0..cfg.population)
        .map(|_| {
            bounds.iter().map(|b| if b.low == b.high { b.low } else { rng.random_range(b.low..=b.high) }).collect()
        })
        .collect();
    let mut fitness = evaluate(&population)?;
    let mut evaluations = population.len();
    let mut history = Vec::with_capacity(cfg.generations);

    let rank = |fit: &[f64]| {
        let mut idx: Vec<usize> = (0..fit.len()).collect();
        // stable: ties keep the earlier individual
        idx.sort_by(|&a, &b| fit[b].total_cmp(&fit[a]));
        idx
    };
    history.push(fitness[rank(&fitness)[0]]);

    for g in 1..cfg.generations {
        let order = rank(&fitness);
        let progress = g as f64 / (cfg.generations.max(2) - 1) as f64;
        let sigma_frac = cfg.mutation_scale * (1.0 - 0.9 * progress);

        let mut next: Vec<Vec<f64>> = order[..cfg.elite_count].iter().map(|&i| population[i].clone()).collect();
        let mut next_fitness: Vec<f64> = order[..cfg.elite_count].iter().map(|&i| fitness[i]).collect();

        let tournament = |rng: &mut ChaCha8Rng| {
            let mut best = rng.random_range(0..population.len());
            for _ in 1..cfg.tournament_size {
                let c = rng.random_range(0..population.len());
                if fitness[c] > fitness[best] {
                    best = c;
                }
            }
            best
        };
        let mut children = Vec::with_capacity(cfg.population - cfg.elite_count);
        while children.len() < cfg.population - cfg.elite_count {
            let a = tournament(&mut rng);
            let b = tournament(&mut rng);
            let mut child = population[a].clone();
            if rng.random_bool(cfg.crossover_rate) {
                for (gene, &other) in child.iter_mut().zip(&population[b]) {
                    if rng.random_bool(0.5) {
                        *gene = other;
                    }
                }
            }
            for (gene, b) in child.iter_mut().zip(bounds) {
                if rng.random_bool(cfg.mutation_rate) {
                    let sd = sigma_frac * (b.high - b.low);
                    if sd > 0.0 {
                        let step: f64 = Normal::new(0.0, sd).expect("positive sd").sample(&mut rng);
                        *gene = b.clip(*gene + step);
                    }
                }
            }
            children.push(child);
        }
        let child_fitness = evaluate(&children)?;
        evaluations += children.len();
        next.extend(children);
        next_fitness.extend(child_fitness);
        population = next;
        fitness = next_fitness;
        history.push(fitness[rank(&fitness)[0]]);
    }

    let best_idx = rank(&fitness)[0];
    Ok(GaOutcome { best: population[best_idx].clone(), best_fitness: fitness[best_idx], history, evaluations })
}
