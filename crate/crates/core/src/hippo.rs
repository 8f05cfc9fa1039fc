//! The ER-HO metaheuristic: a hippopotamus-behavior swarm over continuous
//! positions in [lb, ub]^d, decoded into lists of d distinct candidate
//! exercises. List fitness (pairwise concept-vector distance, summed) is
//! MAXIMIZED: the source formulation mixes a minimization-style acceptance
//! test with "diversity increases in line with fitness", and diversity is the
//! quantity we want more of. All greedy rules below are written in that
//! orientation. Acceptance compares against the individual's own incumbent
//! fitness, not the global best.
//!
//! Per-individual updates draw from RNG streams split off the master seed,
//! and commits happen in index order, so a fixed seed reproduces the run
//! bit-for-bit regardless of evaluation strategy.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::Exercise;
use crate::seed::sub_seed;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct HoConfig {
    /// Swarm size N; behaviors partition at N/2.
    pub population: usize,
    /// Iteration budget T.
    pub iterations: usize,
    /// Position dimensionality d = recommendation list length.
    pub dimension: usize,
    pub lower: f64,
    pub upper: f64,
    /// Sine chaotic map gain α ∈ (0, 1].
    pub chaotic_alpha: f64,
    pub seed: u64,
}

impl Default for HoConfig {
    fn default() -> Self {
        HoConfig {
            population: 50,
            iterations: 200,
            dimension: 5,
            lower: 0.0,
            upper: 1.0,
            chaotic_alpha: 1.0,
            seed: 0,
        }
    }
}

impl HoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::InvalidConfig("swarm needs at least 2 hippos".into()));
        }
        if self.iterations == 0 || self.dimension == 0 {
            return Err(Error::InvalidConfig("iterations and dimension must be positive".into()));
        }
        if !(self.lower < self.upper) {
            return Err(Error::InvalidConfig("lower bound must be below upper bound".into()));
        }
        if !(self.chaotic_alpha > 0.0 && self.chaotic_alpha <= 1.0) {
            return Err(Error::InvalidConfig("chaotic alpha must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HippoPopulation {
    /// N×d row-major positions, always inside [lower, upper].
    pub positions: Vec<f64>,
    pub fitness: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecommendationList {
    pub exercise_ids: Vec<u32>,
}

/// Sine chaotic stream μ_{n+1} = α·sin(π/μ_n), re-drawing whenever |μ| drops
/// below 1e−6 so the reciprocal never blows up.
pub struct SineChaos {
    alpha: f64,
    mu: f64,
    rng: ChaCha8Rng,
}

impl SineChaos {
    pub fn new(alpha: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu = Self::fresh(&mut rng);
        SineChaos { alpha, mu, rng }
    }

    fn fresh(rng: &mut ChaCha8Rng) -> f64 {
        loop {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v.abs() >= 1e-6 {
                return v;
            }
        }
    }

    /// Next raw value in [−α, α].
    pub fn next_raw(&mut self) -> f64 {
        let out = self.alpha * (std::f64::consts::PI / self.mu).sin();
        self.mu = if out.abs() < 1e-6 { Self::fresh(&mut self.rng) } else { out };
        out
    }

    /// Next value mapped affinely from [−α, α] into [lo, hi].
    pub fn next_in(&mut self, lo: f64, hi: f64) -> f64 {
        let raw = self.next_raw();
        lo + (raw + self.alpha) / (2.0 * self.alpha) * (hi - lo)
    }
}

/// Initial swarm positions from the chaotic stream.
pub fn sine_chaotic_init(config: &HoConfig) -> Vec<f64> {
    let mut chaos = SineChaos::new(config.chaotic_alpha, sub_seed(config.seed, "ho-chaos"));
    (0..config.population * config.dimension)
        .map(|_| chaos.next_in(config.lower, config.upper))
        .collect()
}

/// Mantegna Lévy step with β = 1.5.
pub fn levy_step(rng: &mut impl Rng) -> f64 {
    const BETA: f64 = 1.5;
    // σ_u = [Γ(1+β)·sin(πβ/2) / (Γ((1+β)/2)·β·2^((β−1)/2))]^(1/β)
    let num = libm::tgamma(1.0 + BETA) * (std::f64::consts::PI * BETA / 2.0).sin();
    let den = libm::tgamma((1.0 + BETA) / 2.0) * BETA * 2f64.powf((BETA - 1.0) / 2.0);
    let sigma = (num / den).powf(1.0 / BETA);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let u: f64 = normal.sample(rng) * sigma;
    let v: f64 = normal.sample(rng);
    u / v.abs().powf(1.0 / BETA)
}

/// Euclidean distance between two exercises' concept vectors.
pub fn pair_fitness(a: &Exercise, b: &Exercise) -> Result<f64> {
    if a.kc_vector.len() != b.kc_vector.len() {
        return Err(Error::ShapeMismatch(format!(
            "kc vectors of length {} vs {}",
            a.kc_vector.len(),
            b.kc_vector.len()
        )));
    }
    let sq: f64 = a
        .kc_vector
        .iter()
        .zip(&b.kc_vector)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sq.sqrt())
}

/// Sum of pair_fitness over all unordered pairs of the decoded list.
pub fn list_fitness(list: &[&Exercise]) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..list.len() {
        for j in i + 1..list.len() {
            total += pair_fitness(list[i], list[j])?;
        }
    }
    Ok(total)
}

/// Map a continuous position to d distinct candidate indices: floor-scale
/// each coordinate into [0, n), then resolve collisions by advancing
/// cyclically to the next unused index.
pub fn decode_position(position: &[f64], n_candidates: usize, lower: f64, upper: f64) -> Result<Vec<usize>> {
    let d = position.len();
    if n_candidates < d {
        return Err(Error::CandidateSetTooSmall { have: n_candidates, need: d });
    }
    let mut used = vec![false; n_candidates];
    let mut out = Vec::with_capacity(d);
    for &x in position {
        let unit = ((x - lower) / (upper - lower)).clamp(0.0, 1.0);
        let mut idx = ((unit * n_candidates as f64).floor() as usize).min(n_candidates - 1);
        while used[idx] {
            idx = (idx + 1) % n_candidates;
        }
        used[idx] = true;
        out.push(idx);
    }
    Ok(out)
}

/// Anything the swarm can score; lets the same loop drive both exercise
/// lists and continuous benchmark functions.
pub trait Objective {
    fn fitness(&self, position: &[f64]) -> f64;
}

/// Diversity of the decoded exercise list.
pub struct ListObjective<'a> {
    pub candidates: &'a [&'a Exercise],
    pub lower: f64,
    pub upper: f64,
}

impl Objective for ListObjective<'_> {
    fn fitness(&self, position: &[f64]) -> f64 {
        let idx = decode_position(position, self.candidates.len(), self.lower, self.upper)
            .expect("candidate count checked before the run");
        let list: Vec<&Exercise> = idx.iter().map(|&i| self.candidates[i]).collect();
        list_fitness(&list).expect("uniform kc width checked at load")
    }
}

#[derive(Debug, Clone)]
pub struct HoOutcome {
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
    /// Best fitness after init and after each iteration: T+1 entries,
    /// monotone non-decreasing.
    pub trace: Vec<f64>,
    /// Per-iteration clamping audit: count of position components found
    /// outside [lower, upper] after any phase. Always 0 for a correct run.
    pub bounds_violations: usize,
}

fn clamp_into(position: &mut [f64], lo: f64, hi: f64) {
    for v in position.iter_mut() {
        *v = v.clamp(lo, hi);
    }
}

/// Run the swarm against an arbitrary objective (maximization).
pub fn run_ho(objective: &impl Objective, config: &HoConfig) -> Result<HoOutcome> {
    config.validate()?;
    let (n, d) = (config.population, config.dimension);
    let (lo, hi) = (config.lower, config.upper);
    let mut positions = sine_chaotic_init(config);
    let mut fitness: Vec<f64> = (0..n).map(|i| objective.fitness(&positions[i * d..(i + 1) * d])).collect();
    let (mut best_fitness, best_idx) = fitness
        .iter()
        .cloned()
        .zip(0..)
        .fold((f64::NEG_INFINITY, 0), |acc, (f, i)| if f > acc.0 { (f, i) } else { acc });
    let mut best_position = positions[best_idx * d..(best_idx + 1) * d].to_vec();
    let mut trace = Vec::with_capacity(config.iterations + 1);
    trace.push(best_fitness);
    let mut bounds_violations = 0usize;

    let try_accept = |positions: &mut Vec<f64>,
                          fitness: &mut Vec<f64>,
                          best_position: &mut Vec<f64>,
                          best_fitness: &mut f64,
                          i: usize,
                          candidate: &[f64]| {
        let f = objective.fitness(candidate);
        if f > fitness[i] {
            fitness[i] = f;
            positions[i * d..(i + 1) * d].copy_from_slice(candidate);
            if f > *best_fitness {
                *best_fitness = f;
                best_position.copy_from_slice(candidate);
            }
        }
    };

    for t in 1..=config.iterations {
        // river phase: first half chases the incumbent best
        for i in 0..n / 2 {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(
                config.seed,
                &format!("ho-river-{t}-{i}"),
            ));
            let gamma: f64 = rng.random_range(0.0..1.0);
            let eta = if rng.random_bool(0.5) { 1.0 } else { 2.0 };
            // υ_i: mean position over a random subset of 5 individuals
            let mut subset_mean = vec![0.0; d];
            for _ in 0..5 {
                let pick = rng.random_range(0..n);
                for (s, v) in subset_mean.iter_mut().zip(&positions[pick * d..(pick + 1) * d]) {
                    *s += v / 5.0;
                }
            }
            let x = positions[i * d..(i + 1) * d].to_vec();
            let mut omega = vec![0.0; d];
            let mut beta = vec![0.0; d];
            for j in 0..d {
                omega[j] = x[j] + gamma * (best_position[j] - eta * x[j]);
                beta[j] = x[j] + gamma * (best_position[j] - eta * subset_mean[j]);
            }
            clamp_into(&mut omega, lo, hi);
            clamp_into(&mut beta, lo, hi);
            try_accept(&mut positions, &mut fitness, &mut best_position, &mut best_fitness, i, &omega);
            try_accept(&mut positions, &mut fitness, &mut best_position, &mut best_fitness, i, &beta);
        }
        // defense phase: second half reacts to a simulated predator
        for i in n / 2..n {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(
                config.seed,
                &format!("ho-defense-{t}-{i}"),
            ));
            let gamma: f64 = rng.random_range(0.0..1.0);
            let predator: Vec<f64> = (0..d).map(|_| lo - gamma * (hi - lo)).collect();
            let x = positions[i * d..(i + 1) * d].to_vec();
            let dist = x
                .iter()
                .zip(&predator)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                .max(1e-9);
            let phi: f64 = rng.random_range(-2.0..2.0);
            let r4: f64 = rng.random_range(0.0..1.0);
            let near = rng.random_bool(0.5);
            let mut delta = vec![0.0; d];
            for j in 0..d {
                let l = levy_step(&mut rng);
                let base = l * predator[j];
                delta[j] = if near { base + phi / dist } else { base + phi / (2.0 * dist + r4) };
            }
            clamp_into(&mut delta, lo, hi);
            try_accept(&mut positions, &mut fitness, &mut best_position, &mut best_fitness, i, &delta);
        }
        // escape phase: everyone probes a local region that shrinks as 1/t
        let local_radius = (hi - lo) / t as f64;
        for i in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(
                config.seed,
                &format!("ho-escape-{t}-{i}"),
            ));
            let gamma: f64 = rng.random_range(0.0..1.0);
            let x = positions[i * d..(i + 1) * d].to_vec();
            let mut theta = vec![0.0; d];
            for j in 0..d {
                let phi: f64 = rng.random_range(-1.0..1.0);
                let ud = local_radius;
                let ld = -local_radius;
                theta[j] = x[j] + gamma * (ud - phi * (ud - ld));
            }
            clamp_into(&mut theta, lo, hi);
            try_accept(&mut positions, &mut fitness, &mut best_position, &mut best_fitness, i, &theta);
        }
        bounds_violations += positions.iter().filter(|v| **v < lo || **v > hi).count();
        trace.push(best_fitness);
    }
    Ok(HoOutcome { best_position, best_fitness, trace, bounds_violations })
}

/// Full recommendation run: optimize list diversity over the candidate set
/// and decode the best position.
pub fn run_er_ho(candidates: &[&Exercise], config: &HoConfig) -> Result<(RecommendationList, HoOutcome)> {
    if candidates.len() < config.dimension {
        return Err(Error::CandidateSetTooSmall { have: candidates.len(), need: config.dimension });
    }
    let objective = ListObjective { candidates, lower: config.lower, upper: config.upper };
    let outcome = run_ho(&objective, config)?;
    let idx = decode_position(&outcome.best_position, candidates.len(), config.lower, config.upper)?;
    let exercise_ids = idx.iter().map(|&i| candidates[i].id).collect();
    Ok((RecommendationList { exercise_ids }, outcome))
}
