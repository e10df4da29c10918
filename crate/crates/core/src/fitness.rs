//! Idealized selection/mutation model on bitstrings.
//!
//! Innovations are bitstrings whose fitness is the number of set bits. Each
//! generation an agent sees the market window of recent strings, selects the
//! fittest with probability one half (otherwise popularity or chance decides,
//! gated by the cumulative-advantage weight `C`), and mutates the selection.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{sample_categorical, sample_distinct, sample_index, RngLedger};

/// A fixed-length bitstring.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Bitstring {
    words: Vec<u64>,
    len: usize,
}

impl Bitstring {
    pub fn zeroed(len: usize) -> Self {
        Bitstring {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    /// Each bit set independently with probability `fill`.
    pub fn random<R: Rng + ?Sized>(len: usize, fill: f64, rng: &mut R) -> Self {
        let mut bits = Bitstring::zeroed(len);
        for i in 0..len {
            if rng.random::<f64>() < fill {
                bits.set(i, true);
            }
        }
        bits
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i >> 6] >> (i & 63) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, on: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i & 63);
        if on {
            self.words[i >> 6] |= mask;
        } else {
            self.words[i >> 6] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i >> 6] ^= 1u64 << (i & 63);
    }

    pub fn hamming(&self, other: &Bitstring) -> u32 {
        debug_assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(other.words.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}

/// Number of set bits.
pub fn fitness(bits: &Bitstring) -> u32 {
    bits.words.iter().map(|w| w.count_ones()).sum()
}

/// Mutation rate: a fixed number of distinct flips, or an independent
/// per-bit flip probability.
#[derive(Clone, Copy, PartialEq, Debug)]
pub enum MutationRate {
    Flips(u32),
    PerBit(f64),
}

/// How the cumulative-advantage branch treats popularity.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum AdvantageMode {
    /// With probability `C`, a uniform member of the most-popular set.
    #[default]
    Gate,
    /// With probability `C`, an entry drawn proportionally to its counts.
    Proportional,
}

impl AdvantageMode {
    pub fn label(self) -> &'static str {
        match self {
            AdvantageMode::Gate => "gate",
            AdvantageMode::Proportional => "proportional",
        }
    }

    pub fn parse(s: &str) -> Result<AdvantageMode> {
        match s {
            "gate" => Ok(AdvantageMode::Gate),
            "proportional" => Ok(AdvantageMode::Proportional),
            other => Err(Error::InvalidArgument(format!(
                "unknown advantage mode `{other}`"
            ))),
        }
    }
}

/// Parameters of one bitstring run.
#[derive(Clone, Debug)]
pub struct BitstringConfig {
    /// Bits per string (N).
    pub bits: usize,
    pub mutation: MutationRate,
    /// Cumulative-advantage weight in [0, 1].
    pub cumulative_advantage: f64,
    pub window: u32,
    pub generations: u32,
    pub chains: u32,
    /// Fill probability of the generation-0 strings.
    pub initial_fill: f64,
    pub advantage_mode: AdvantageMode,
}

impl BitstringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 {
            return Err(Error::InvalidArgument("bits must be at least 1".into()));
        }
        match self.mutation {
            MutationRate::Flips(0) => {
                return Err(Error::InvalidArgument(
                    "mutation flips must be at least 1".into(),
                ))
            }
            MutationRate::Flips(k) if k as usize > self.bits => {
                return Err(Error::InvalidArgument(format!(
                    "mutation flips {k} exceed string length {}",
                    self.bits
                )))
            }
            MutationRate::PerBit(p) if !(p > 0.0 && p <= 1.0) => {
                return Err(Error::InvalidArgument(format!(
                    "per-bit flip probability {p} outside (0, 1]"
                )))
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.cumulative_advantage) {
            return Err(Error::InvalidArgument(format!(
                "cumulative-advantage weight {} outside [0, 1]",
                self.cumulative_advantage
            )));
        }
        if self.window == 0 || self.generations == 0 || self.chains == 0 {
            return Err(Error::InvalidArgument(
                "window, generations, and chains must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.initial_fill) {
            return Err(Error::InvalidArgument(format!(
                "initial fill {} outside [0, 1]",
                self.initial_fill
            )));
        }
        Ok(())
    }
}

/// Flips `mu` distinct positions (integer mode) or each bit independently
/// with probability `mu` (probability mode).
pub fn mutate<R: Rng + ?Sized>(bits: &Bitstring, rate: MutationRate, rng: &mut R) -> Bitstring {
    let mut child = bits.clone();
    match rate {
        MutationRate::Flips(k) => {
            for idx in sample_distinct(bits.len(), k as usize, rng) {
                child.flip(idx);
            }
        }
        MutationRate::PerBit(p) => {
            for i in 0..bits.len() {
                if rng.random::<f64>() < p {
                    child.flip(i);
                }
            }
        }
    }
    child
}

/// Selects a window index: with probability one half, a uniform member of
/// the argmax-fitness set; otherwise with probability `c` a popularity-based
/// pick, else a uniform draw.
pub fn model_select<R: Rng + ?Sized>(
    fitnesses: &[u32],
    popularity: &[u32],
    c: f64,
    mode: AdvantageMode,
    rng: &mut R,
) -> usize {
    debug_assert!(!fitnesses.is_empty());
    debug_assert_eq!(fitnesses.len(), popularity.len());
    if rng.random::<f64>() < 0.5 {
        let best = *fitnesses.iter().max().unwrap();
        let leaders: Vec<usize> = (0..fitnesses.len())
            .filter(|&i| fitnesses[i] == best)
            .collect();
        return leaders[sample_index(leaders.len(), rng)];
    }
    if rng.random::<f64>() < c {
        match mode {
            AdvantageMode::Gate => {
                let best = *popularity.iter().max().unwrap();
                let leaders: Vec<usize> = (0..popularity.len())
                    .filter(|&i| popularity[i] == best)
                    .collect();
                return leaders[sample_index(leaders.len(), rng)];
            }
            AdvantageMode::Proportional => {
                let total: u64 = popularity.iter().map(|&p| p as u64).sum();
                if total > 0 {
                    let weights: Vec<f64> =
                        popularity.iter().map(|&p| p as f64 / total as f64).collect();
                    return sample_categorical(&weights, rng);
                }
                // All counts zero: proportional degenerates to uniform.
            }
        }
    }
    sample_index(fitnesses.len(), rng)
}

/// Per-generation fitness trajectory of one parameterization.
#[derive(Clone, Debug)]
pub struct FitnessSeries {
    pub label: String,
    /// Mean fitness of the image created at each generation, index 0..=G.
    pub mean_fitness: Vec<f64>,
    pub se_fitness: Vec<f64>,
    /// Mean child-minus-parent fitness difference; index g-1 holds generation g.
    pub mean_delta: Vec<f64>,
    pub se_delta: Vec<f64>,
}

/// Runs `config.chains` independent chains and aggregates mean fitness and
/// fitness deltas per generation. Bit-reproducible given `(config, seed)`.
pub fn run_fitness_experiment(config: &BitstringConfig, seed: u64) -> Result<FitnessSeries> {
    config.validate()?;
    let ledger = RngLedger::new(seed);
    let generations = config.generations as usize;

    let per_chain: Vec<(Vec<u32>, Vec<i64>)> = (0..config.chains)
        .into_par_iter()
        .map(|chain_idx| {
            let mut rng = ledger.stream("fitness_chain", chain_idx as u64);
            let mut lineage: Vec<Bitstring> =
                vec![Bitstring::random(config.bits, config.initial_fill, &mut rng)];
            let mut counts: Vec<u32> = vec![0];
            let mut fitness_by_gen = vec![fitness(&lineage[0])];
            let mut delta_by_gen = Vec::with_capacity(generations);
            for g in 1..=generations {
                let oldest = g.saturating_sub(config.window as usize);
                let window_fit: Vec<u32> = (oldest..g).map(|i| fitness_by_gen[i]).collect();
                let window_pop: Vec<u32> = (oldest..g).map(|i| counts[i]).collect();
                let pick = oldest
                    + model_select(
                        &window_fit,
                        &window_pop,
                        config.cumulative_advantage,
                        config.advantage_mode,
                        &mut rng,
                    );
                counts[pick] += 1;
                let child = mutate(&lineage[pick], config.mutation, &mut rng);
                let child_fit = fitness(&child);
                delta_by_gen.push(child_fit as i64 - fitness_by_gen[pick] as i64);
                fitness_by_gen.push(child_fit);
                lineage.push(child);
                counts.push(0);
            }
            (fitness_by_gen, delta_by_gen)
        })
        .collect();

    let mut mean_fitness = Vec::with_capacity(generations + 1);
    let mut se_fitness = Vec::with_capacity(generations + 1);
    for g in 0..=generations {
        let values: Vec<f64> = per_chain.iter().map(|(f, _)| f[g] as f64).collect();
        let (mean, se) = mean_se(&values);
        mean_fitness.push(mean);
        se_fitness.push(se);
    }
    let mut mean_delta = Vec::with_capacity(generations);
    let mut se_delta = Vec::with_capacity(generations);
    for g in 0..generations {
        let values: Vec<f64> = per_chain.iter().map(|(_, d)| d[g] as f64).collect();
        let (mean, se) = mean_se(&values);
        mean_delta.push(mean);
        se_delta.push(se);
    }

    let label = match config.mutation {
        MutationRate::Flips(k) => format!("mu{}_c{}", k, config.cumulative_advantage),
        MutationRate::PerBit(p) => format!("mu{}_c{}", p, config.cumulative_advantage),
    };
    Ok(FitnessSeries {
        label,
        mean_fitness,
        se_fitness,
        mean_delta,
        se_delta,
    })
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngLedger;

    fn bits_from(slice: &[u8]) -> Bitstring {
        let mut b = Bitstring::zeroed(slice.len());
        for (i, &v) in slice.iter().enumerate() {
            b.set(i, v == 1);
        }
        b
    }

    #[test]
    fn fitness_counts_set_bits() {
        assert_eq!(fitness(&bits_from(&[1, 1, 0, 1])), 3);
        assert_eq!(fitness(&Bitstring::zeroed(100)), 0);
    }

    #[test]
    fn random_strings_have_binomial_mean_fitness() {
        let mut rng = RngLedger::new(1).stream("fitness", 0);
        let n = 10_000;
        let total: u64 = (0..n)
            .map(|_| fitness(&Bitstring::random(64, 0.5, &mut rng)) as u64)
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 32.0).abs() < 0.5, "mean fitness {mean}");
    }

    #[test]
    fn integer_mutation_flips_exactly_mu_bits() {
        let mut rng = RngLedger::new(2).stream("fitness", 0);
        let parent = bits_from(&[0, 1, 0, 1]);
        let child = mutate(&parent, MutationRate::Flips(1), &mut rng);
        assert_eq!(parent.hamming(&child), 1);
        let full = mutate(&parent, MutationRate::Flips(4), &mut rng);
        assert_eq!(parent.hamming(&full), 4);
        assert_eq!(fitness(&full), 2);
    }

    #[test]
    fn per_bit_mutation_has_binomial_mean_flips() {
        let mut rng = RngLedger::new(3).stream("fitness", 0);
        let parent = Bitstring::zeroed(64);
        let trials = 10_000;
        let total: u64 = (0..trials)
            .map(|_| parent.hamming(&mutate(&parent, MutationRate::PerBit(0.5), &mut rng)) as u64)
            .sum();
        let mean = total as f64 / trials as f64;
        assert!((mean - 32.0).abs() < 1.0, "mean flips {mean}");
    }

    #[test]
    fn select_mixes_fitness_and_chance() {
        // C = 0, fitnesses [5,1,1]: P(index 0) = 0.5 + 0.5/3.
        let mut rng = RngLedger::new(4).stream("fitness", 0);
        let n = 100_000;
        let mut hits = 0;
        for _ in 0..n {
            if model_select(&[5, 1, 1], &[0, 0, 0], 0.0, AdvantageMode::Gate, &mut rng) == 0 {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        let want = 0.5 + 0.5 / 3.0;
        assert!((freq - want).abs() < 0.01, "frequency {freq}, want {want}");
    }

    #[test]
    fn select_mixes_fitness_and_popularity() {
        // C = 1, equal fitness, popularity [9,0,0]: P(index 0) = 0.5/3 + 0.5.
        let mut rng = RngLedger::new(5).stream("fitness", 0);
        let n = 100_000;
        let mut hits = 0;
        for _ in 0..n {
            if model_select(&[3, 3, 3], &[9, 0, 0], 1.0, AdvantageMode::Gate, &mut rng) == 0 {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        let want = 0.5 / 3.0 + 0.5;
        assert!((freq - want).abs() < 0.01, "frequency {freq}, want {want}");
    }

    #[test]
    fn single_entry_window_always_selected() {
        let mut rng = RngLedger::new(6).stream("fitness", 0);
        for _ in 0..100 {
            assert_eq!(
                model_select(&[7], &[2], 0.7, AdvantageMode::Gate, &mut rng),
                0
            );
        }
    }

    #[test]
    fn mutation_delta_matches_closed_form_expectation() {
        // E[fitness(mutate(x)) - fitness(x)] = (N - 2 f) * mu / N in integer mode.
        let mut rng = RngLedger::new(7).stream("fitness", 0);
        let n_bits = 64;
        let mut parent = Bitstring::zeroed(n_bits);
        for i in 0..20 {
            parent.set(i, true);
        }
        let f0 = fitness(&parent) as f64;
        let mu = 8u32;
        let trials = 200_000;
        let total: i64 = (0..trials)
            .map(|_| {
                let child = mutate(&parent, MutationRate::Flips(mu), &mut rng);
                fitness(&child) as i64 - f0 as i64
            })
            .sum();
        let mean = total as f64 / trials as f64;
        let want = (n_bits as f64 - 2.0 * f0) * mu as f64 / n_bits as f64;
        assert!((mean - want).abs() < 0.05, "mean {mean}, want {want}");
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let base = BitstringConfig {
            bits: 64,
            mutation: MutationRate::Flips(2),
            cumulative_advantage: 0.0,
            window: 12,
            generations: 10,
            chains: 4,
            initial_fill: 0.5,
            advantage_mode: AdvantageMode::Gate,
        };
        assert!(base.validate().is_ok());
        assert!(BitstringConfig {
            mutation: MutationRate::Flips(0),
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(BitstringConfig {
            mutation: MutationRate::Flips(65),
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(BitstringConfig {
            mutation: MutationRate::PerBit(0.0),
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(BitstringConfig {
            cumulative_advantage: 1.5,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(BitstringConfig {
            bits: 0,
            ..base
        }
        .validate()
        .is_err());
    }

    #[test]
    fn experiment_is_bit_reproducible() {
        let config = BitstringConfig {
            bits: 64,
            mutation: MutationRate::Flips(2),
            cumulative_advantage: 1.0,
            window: 12,
            generations: 20,
            chains: 8,
            initial_fill: 0.5,
            advantage_mode: AdvantageMode::Gate,
        };
        let a = run_fitness_experiment(&config, 99).unwrap();
        let b = run_fitness_experiment(&config, 99).unwrap();
        assert_eq!(a.mean_fitness, b.mean_fitness);
        assert_eq!(a.mean_delta, b.mean_delta);
    }

    #[test]
    fn unselected_random_walk_converges_to_half_fitness() {
        // Selection disabled by a single-entry window; per-bit mu = 0.5 keeps
        // every generation an unbiased coin flip per bit.
        let config = BitstringConfig {
            bits: 64,
            mutation: MutationRate::PerBit(0.5),
            cumulative_advantage: 0.0,
            window: 1,
            generations: 200,
            chains: 64,
            initial_fill: 0.0,
            advantage_mode: AdvantageMode::Gate,
        };
        let series = run_fitness_experiment(&config, 11).unwrap();
        let tail: Vec<f64> = series.mean_fitness[150..].to_vec();
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!(
            (mean - 32.0).abs() / 32.0 < 0.02,
            "tail mean fitness {mean}"
        );
    }
}
