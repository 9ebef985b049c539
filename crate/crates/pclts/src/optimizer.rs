//! Derivative-free global minimization.
//!
//! The robust training objective is non-smooth, so the first training stage
//! relies on evaluation-only methods: a restarted Nelder-Mead simplex search
//! (the default) and differential evolution. Both run under a hard evaluation
//! budget, split evenly across restarts, with one independent RNG stream per
//! restart so results do not depend on scheduling.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// The available minimization methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerMethod {
    NelderMeadRestart,
    DifferentialEvolution,
}

impl std::str::FromStr for OptimizerMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nelder_mead_restart" => Ok(Self::NelderMeadRestart),
            "differential_evolution" => Ok(Self::DifferentialEvolution),
            other => Err(Error::Config(format!(
                "unknown optimizer method '{other}' (expected nelder_mead_restart or differential_evolution)"
            ))),
        }
    }
}

impl std::fmt::Display for OptimizerMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::NelderMeadRestart => "nelder_mead_restart",
            Self::DifferentialEvolution => "differential_evolution",
        })
    }
}

/// Settings for [`minimize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub method: OptimizerMethod,
    /// Independent random starts; the budget is split evenly across them.
    pub restarts: usize,
    /// Total evaluation budget over all restarts.
    pub budget: usize,
    /// Start points (and DE populations) are drawn uniformly from
    /// `[-init_box, init_box]` per coordinate.
    pub init_box: f64,
    pub seed: u64,
    /// Nelder-Mead stops a restart once the simplex f-spread falls below this.
    pub tolerance: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self {
            method: OptimizerMethod::NelderMeadRestart,
            restarts: 20,
            budget: 100_000,
            init_box: 0.5,
            seed: 0,
            tolerance: 1e-9,
        }
    }
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::OptimizerConfig("restarts must be >= 1".into()));
        }
        if self.budget < self.restarts {
            return Err(Error::OptimizerConfig(format!(
                "budget {} cannot cover {} restarts",
                self.budget, self.restarts
            )));
        }
        if !(self.init_box > 0.0) {
            return Err(Error::OptimizerConfig(format!(
                "init_box must be > 0, got {}",
                self.init_box
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::OptimizerConfig(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// A black-box objective with a dimension, an evaluation counter and an
/// optional progress stream. Non-finite objective values are mapped to
/// `+inf` so a single overflowing trial point cannot abort a run.
pub struct ObjectiveHandle<'f> {
    dim: usize,
    budget: usize,
    evals: AtomicUsize,
    progress: Option<Mutex<f64>>,
    f: Box<dyn Fn(&[f64]) -> f64 + Sync + 'f>,
}

impl<'f> ObjectiveHandle<'f> {
    pub fn new(dim: usize, budget: usize, f: impl Fn(&[f64]) -> f64 + Sync + 'f) -> Self {
        Self { dim, budget, evals: AtomicUsize::new(0), progress: None, f: Box::new(f) }
    }

    /// Streams `eval_index best_f` lines to stderr whenever the running best
    /// improves, for convergence plotting.
    pub fn with_progress(mut self) -> Self {
        self.progress = Some(Mutex::new(f64::INFINITY));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn evals_used(&self) -> usize {
        self.evals.load(Ordering::Relaxed)
    }

    /// Evaluates the objective, counting the call.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let index = self.evals.fetch_add(1, Ordering::Relaxed) + 1;
        debug_assert!(index <= self.budget, "evaluation budget exceeded");
        let raw = (self.f)(x);
        let value = if raw.is_finite() { raw } else { f64::INFINITY };
        if let Some(best) = &self.progress {
            let mut best = best.lock().unwrap();
            if value < *best {
                *best = value;
                eprintln!("{index} {value}");
            }
        }
        value
    }
}

/// Outcome of one restart.
#[derive(Debug, Clone)]
pub struct RestartRecord {
    pub start: Vec<f64>,
    pub final_value: f64,
}

/// Best point over all restarts.
#[derive(Debug, Clone)]
pub struct OptResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub evals_used: usize,
    pub restarts: Vec<RestartRecord>,
}

/// Minimizes `obj` according to `spec`, returning the best point over all
/// restarts. Deterministic given the seed; never exceeds the budget.
pub fn minimize(obj: &ObjectiveHandle, spec: &OptimizerSpec) -> Result<OptResult> {
    spec.validate()?;
    if obj.dim() == 0 {
        return Err(Error::OptimizerConfig("objective dimension must be >= 1".into()));
    }
    let slice = obj.budget().min(spec.budget) / spec.restarts;
    if slice == 0 {
        return Err(Error::OptimizerConfig(format!(
            "budget {} does not allow one evaluation per restart",
            spec.budget
        )));
    }

    let runs: Vec<(Vec<f64>, f64, Vec<f64>)> = (0..spec.restarts)
        .into_par_iter()
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::fold(spec.seed, &[index as u64]));
            let start: Vec<f64> =
                (0..obj.dim()).map(|_| rng.gen_range(-spec.init_box..spec.init_box)).collect();
            let (x, f) = match spec.method {
                OptimizerMethod::NelderMeadRestart => {
                    nelder_mead(obj, &start, slice, spec.tolerance)
                }
                OptimizerMethod::DifferentialEvolution => {
                    de_from_start(obj, &start, slice, spec.init_box, &mut rng)
                }
            };
            (start, f, x)
        })
        .collect();

    let mut best_index = 0;
    for i in 1..runs.len() {
        if f64::total_cmp(&runs[i].1, &runs[best_index].1).is_lt() {
            best_index = i;
        }
    }
    let best_value = runs[best_index].1;
    let best_point = runs[best_index].2.clone();
    let restarts = runs
        .into_iter()
        .map(|(start, final_value, _)| RestartRecord { start, final_value })
        .collect();
    Ok(OptResult { best_point, best_value, evals_used: obj.evals_used(), restarts })
}

/// Standard Nelder-Mead simplex search from `start`, capped at `budget`
/// evaluations. Stops when the simplex f-spread drops below `tolerance`.
/// The returned value never exceeds `f(start)`; with a budget too small for
/// a full simplex, the best vertex evaluated so far is returned.
pub fn nelder_mead(
    obj: &ObjectiveHandle,
    start: &[f64],
    budget: usize,
    tolerance: f64,
) -> (Vec<f64>, f64) {
    const ALPHA: f64 = 1.0; // reflection
    const GAMMA: f64 = 2.0; // expansion
    const RHO: f64 = 0.5; // contraction
    const SIGMA: f64 = 0.5; // shrink

    let d = start.len();
    let mut spent = 0usize;
    let mut try_eval = |x: &[f64], spent: &mut usize| -> Option<f64> {
        if *spent >= budget {
            return None;
        }
        *spent += 1;
        Some(obj.eval(x))
    };

    let f0 = match try_eval(start, &mut spent) {
        Some(f) => f,
        None => return (start.to_vec(), f64::INFINITY),
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(start.to_vec(), f0)];
    for i in 0..d {
        let mut v = start.to_vec();
        v[i] += 0.1 * (1.0 + v[i].abs());
        match try_eval(&v, &mut spent) {
            Some(f) => simplex.push((v, f)),
            None => break,
        }
    }

    let best_of = |simplex: &[(Vec<f64>, f64)]| {
        let mut bi = 0;
        for i in 1..simplex.len() {
            if f64::total_cmp(&simplex[i].1, &simplex[bi].1).is_lt() {
                bi = i;
            }
        }
        (simplex[bi].0.clone(), simplex[bi].1)
    };

    if simplex.len() < d + 1 {
        return best_of(&simplex);
    }

    loop {
        simplex.sort_by(|a, b| f64::total_cmp(&a.1, &b.1));
        if simplex[d].1 - simplex[0].1 < tolerance {
            break;
        }

        // Centroid of all vertices but the worst.
        let mut centroid = vec![0.0; d];
        for (v, _) in &simplex[..d] {
            for k in 0..d {
                centroid[k] += v[k] / d as f64;
            }
        }
        let worst = simplex[d].clone();
        let lerp = |t: f64| -> Vec<f64> {
            (0..d).map(|k| centroid[k] + t * (centroid[k] - worst.0[k])).collect()
        };

        let reflected = lerp(ALPHA);
        let fr = match try_eval(&reflected, &mut spent) {
            Some(f) => f,
            None => break,
        };

        if fr < simplex[0].1 {
            // Try to expand past the reflection.
            let expanded = lerp(GAMMA);
            match try_eval(&expanded, &mut spent) {
                Some(fe) if fe < fr => simplex[d] = (expanded, fe),
                Some(_) => simplex[d] = (reflected, fr),
                None => {
                    simplex[d] = (reflected, fr);
                    break;
                }
            }
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (reflected, fr);
        } else {
            // Contract: outside if the reflection improved on the worst.
            let contracted = if fr < worst.1 { lerp(RHO) } else { lerp(-RHO) };
            let fc = match try_eval(&contracted, &mut spent) {
                Some(f) => f,
                None => break,
            };
            if fc < fr.min(worst.1) {
                simplex[d] = (contracted, fc);
            } else {
                // Shrink every vertex towards the best.
                let best = simplex[0].0.clone();
                let mut exhausted = false;
                for i in 1..=d {
                    let v: Vec<f64> = (0..d)
                        .map(|k| best[k] + SIGMA * (simplex[i].0[k] - best[k]))
                        .collect();
                    match try_eval(&v, &mut spent) {
                        Some(f) => simplex[i] = (v, f),
                        None => {
                            exhausted = true;
                            break;
                        }
                    }
                }
                if exhausted {
                    break;
                }
            }
        }
    }
    best_of(&simplex)
}

fn de_population_size(dim: usize) -> usize {
    (4 * dim).clamp(8, 40)
}

/// DE/rand/1/bin with `F = 0.7`, `CR = 0.9` and greedy one-to-one selection
/// (the best member is never lost). `start` joins the initial population so
/// the result is never worse than the sampled start point.
fn de_from_start(
    obj: &ObjectiveHandle,
    start: &[f64],
    budget: usize,
    init_box: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, f64) {
    let d = start.len();
    let pop = de_population_size(d).min(budget.max(1));
    let mut population = vec![start.to_vec()];
    for _ in 1..pop {
        population.push((0..d).map(|_| rng.gen_range(-init_box..init_box)).collect());
    }
    de_evolve_with_rng(obj, population, budget, rng)
}

/// Runs differential evolution with the full spec budget as a single run,
/// seeded from `spec.seed`. The population is sampled from the init box.
pub fn differential_evolution(obj: &ObjectiveHandle, spec: &OptimizerSpec) -> Result<(Vec<f64>, f64)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let start: Vec<f64> =
        (0..obj.dim()).map(|_| rng.gen_range(-spec.init_box..spec.init_box)).collect();
    Ok(de_from_start(obj, &start, spec.budget, spec.init_box, &mut rng))
}

/// Evolves an explicit initial population under `budget` evaluations.
/// Exposed so callers (and tests) can control the starting population.
pub fn de_evolve(
    obj: &ObjectiveHandle,
    population: Vec<Vec<f64>>,
    budget: usize,
    seed_value: u64,
) -> Result<(Vec<f64>, f64)> {
    if population.len() < 4 {
        return Err(Error::OptimizerConfig(format!(
            "differential evolution needs a population of at least 4, got {}",
            population.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed_value);
    Ok(de_evolve_with_rng(obj, population, budget, &mut rng))
}

fn de_evolve_with_rng(
    obj: &ObjectiveHandle,
    mut population: Vec<Vec<f64>>,
    budget: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, f64) {
    const F_WEIGHT: f64 = 0.7;
    const CROSSOVER: f64 = 0.9;

    let pop = population.len();
    let d = population[0].len();
    let mut spent = 0usize;
    let mut values = Vec::with_capacity(pop);
    for member in &population {
        if spent >= budget {
            values.push(f64::INFINITY); // unevaluated members never win
            continue;
        }
        spent += 1;
        values.push(obj.eval(member));
    }

    if pop >= 4 {
        'generations: loop {
            for i in 0..pop {
                if spent >= budget {
                    break 'generations;
                }
                // Three distinct donors, all different from i.
                let mut pick = || loop {
                    let j = rng.gen_range(0..pop);
                    if j != i {
                        return j;
                    }
                };
                let (a, b, c) = loop {
                    let (a, b, c) = (pick(), pick(), pick());
                    if a != b && b != c && a != c {
                        break (a, b, c);
                    }
                };
                let forced = rng.gen_range(0..d);
                let mut trial = population[i].clone();
                for k in 0..d {
                    if k == forced || rng.gen_range(0.0..1.0) < CROSSOVER {
                        trial[k] =
                            population[a][k] + F_WEIGHT * (population[b][k] - population[c][k]);
                    }
                }
                spent += 1;
                let trial_value = obj.eval(&trial);
                if trial_value <= values[i] {
                    population[i] = trial;
                    values[i] = trial_value;
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..pop {
        if f64::total_cmp(&values[i], &values[best]).is_lt() {
            best = i;
        }
    }
    (population[best].clone(), values[best])
}
