//! Scalar analyses over chains and markets: diversity, autocorrelation,
//! inequality, paired permutation tests, and odds-ratio posteriors.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::chain::{Chain, MarketView, PixelGrid, PIXEL_COUNT};
use crate::error::{Error, Result};
use crate::rng::RngLedger;

/// Where an embedding table came from.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EmbeddingSource {
    /// Pixels mapped to +/-1, used as a 256-dimensional vector.
    PixelDerived,
    /// Loaded from an external embedding file.
    External,
}

/// Map from image id to a fixed-dimension real vector.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    source: EmbeddingSource,
    vectors: HashMap<u64, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, source: EmbeddingSource) -> Self {
        EmbeddingTable {
            dim,
            source,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, image_id: u64, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "embedding for image {image_id} has dimension {}, table expects {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "embedding for image {image_id} contains non-finite entries"
            )));
        }
        self.vectors.insert(image_id, vector);
        Ok(())
    }

    pub fn get(&self, image_id: u64) -> Option<&[f64]> {
        self.vectors.get(&image_id).map(|v| v.as_slice())
    }

    /// Pixel embedding of every image in the given chains: each pixel maps to
    /// +1 (set) or -1 (unset).
    pub fn from_chains(chains: &[Chain]) -> Self {
        let mut table = EmbeddingTable::new(PIXEL_COUNT, EmbeddingSource::PixelDerived);
        for chain in chains {
            for node in chain.nodes() {
                table
                    .insert(node.image.id, pixel_embedding(&node.image.pixels))
                    .expect("pixel embeddings are always well-formed");
            }
        }
        table
    }
}

/// +/-1 vector view of a grid.
pub fn pixel_embedding(pixels: &PixelGrid) -> Vec<f64> {
    (0..PIXEL_COUNT)
        .map(|i| if pixels.get(i) { 1.0 } else { -1.0 })
        .collect()
}

/// One point of a per-generation (or per-lag) metric series.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricPoint {
    pub condition: String,
    pub metric: String,
    pub index: u32,
    pub value: f64,
    pub se: f64,
    pub n: u32,
}

/// Fraction of pixels that differ between two images.
pub fn hamming_fraction(a: &PixelGrid, b: &PixelGrid) -> f64 {
    a.hamming(b) as f64 / PIXEL_COUNT as f64
}

/// Distance notion used by [`market_diversity`].
#[derive(Clone, Copy)]
pub enum DiversityMetric<'a> {
    Hamming,
    Phylogenetic(&'a Chain),
    EmbeddingCosine(&'a EmbeddingTable),
}

impl DiversityMetric<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            DiversityMetric::Hamming => "hamming",
            DiversityMetric::Phylogenetic(_) => "phylogenetic",
            DiversityMetric::EmbeddingCosine(_) => "cosine",
        }
    }
}

/// Mean distance over all unordered pairs of market entries.
pub fn market_diversity(view: &MarketView, metric: DiversityMetric) -> Result<f64> {
    if view.len() < 2 {
        return Err(Error::UndefinedDiversity);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..view.len() {
        for j in (i + 1)..view.len() {
            let a = &view.entries[i];
            let b = &view.entries[j];
            total += match metric {
                DiversityMetric::Hamming => hamming_fraction(&a.image.pixels, &b.image.pixels),
                DiversityMetric::Phylogenetic(chain) => {
                    chain.phylo_distance(a.node_id, b.node_id)? as f64
                }
                DiversityMetric::EmbeddingCosine(table) => {
                    let va = table.get(a.node_id).ok_or_else(|| {
                        Error::InvalidArgument(format!("no embedding for image {}", a.node_id))
                    })?;
                    let vb = table.get(b.node_id).ok_or_else(|| {
                        Error::InvalidArgument(format!("no embedding for image {}", b.node_id))
                    })?;
                    cosine_distance(va, vb)?
                }
            };
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector);
    }
    Ok(1.0 - dot / (na * nb))
}

/// Average chain autocorrelation at lag `tau`.
///
/// All embeddings are centered on their grand mean; the numerator sums
/// `x'_{c,t} . x'_{c,t+tau}` over every valid pair while the denominator sums
/// `x'_{c,t} . x'_{c,t}` over every image, so the lag-0 value is exactly one
/// when the index ranges coincide.
pub fn chain_autocorrelation(chains: &[Vec<Vec<f64>>], tau: usize) -> Result<f64> {
    let dim = chains
        .iter()
        .flat_map(|c| c.iter())
        .map(|v| v.len())
        .next()
        .ok_or_else(|| Error::InvalidArgument("no embeddings supplied".into()))?;
    let count = chains.iter().map(|c| c.len()).sum::<usize>();
    if chains
        .iter()
        .flat_map(|c| c.iter())
        .any(|v| v.len() != dim || v.iter().any(|x| !x.is_finite()))
    {
        return Err(Error::InvalidArgument(
            "embeddings must share one dimension and be finite".into(),
        ));
    }
    if !chains.iter().any(|c| c.len() > tau) {
        return Err(Error::InvalidArgument(format!(
            "no chain has more than {tau} images; lag {tau} is undefined"
        )));
    }

    let mut mean = vec![0.0; dim];
    for vector in chains.iter().flat_map(|c| c.iter()) {
        for (m, x) in mean.iter_mut().zip(vector) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= count as f64;
    }

    let centered_dot = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(mean.iter())
            .map(|((x, y), m)| (x - m) * (y - m))
            .sum()
    };

    let mut denominator = 0.0;
    let mut numerator = 0.0;
    for chain in chains {
        for t in 0..chain.len() {
            denominator += centered_dot(&chain[t], &chain[t]);
            if t + tau < chain.len() {
                numerator += centered_dot(&chain[t], &chain[t + tau]);
            }
        }
    }
    if denominator == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok(numerator / denominator)
}

/// Gini coefficient of non-negative counts.
///
/// Computed with the sorted-rank identity, algebraically equal to the mean
/// absolute pairwise difference over `2 n^2 mean`.
pub fn gini(counts: &[f64]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::InvalidArgument("gini of an empty list".into()));
    }
    if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::InvalidArgument(
            "gini requires finite non-negative counts".into(),
        ));
    }
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Err(Error::UndefinedGini);
    }
    let mut sorted = counts.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (i as f64 + 1.0) * x)
        .sum();
    Ok(2.0 * weighted / (n * total) - (n + 1.0) / n)
}

/// Two-sided paired permutation test on per-pair statistics.
///
/// The statistic is `mean(a - b)`; the null distribution flips the sign of
/// each pair difference independently. All `2^n` assignments are enumerated
/// when `n <= 20`, otherwise `n_resamples` Monte-Carlo draws are used with
/// the observed assignment counted in.
pub fn paired_permutation_test(
    values_a: &[f64],
    values_b: &[f64],
    n_resamples: u32,
    seed: u64,
) -> Result<f64> {
    if values_a.is_empty() || values_a.len() != values_b.len() {
        return Err(Error::InvalidArgument(format!(
            "needs equally many paired values, got {} and {}",
            values_a.len(),
            values_b.len()
        )));
    }
    let diffs: Vec<f64> = values_a.iter().zip(values_b).map(|(a, b)| a - b).collect();
    let n = diffs.len();
    let observed = diffs.iter().sum::<f64>().abs();
    // Tolerance so sign-flipped sums that equal the observed one are not
    // dropped by floating-point jitter.
    let threshold = observed - 1e-9 * (1.0 + observed);

    if n <= 20 {
        let mut hits = 0u64;
        for mask in 0u64..(1u64 << n) {
            let mut sum = 0.0;
            for (i, d) in diffs.iter().enumerate() {
                sum += if mask >> i & 1 == 1 { -d } else { *d };
            }
            if sum.abs() >= threshold {
                hits += 1;
            }
        }
        Ok(hits as f64 / (1u64 << n) as f64)
    } else {
        if n_resamples == 0 {
            return Err(Error::InvalidArgument(
                "n_resamples must be positive for Monte-Carlo resampling".into(),
            ));
        }
        let mut rng = RngLedger::new(seed).stream("paired_permutation", 0);
        let mut hits = 0u64;
        for _ in 0..n_resamples {
            let sum: f64 = diffs
                .iter()
                .map(|d| if rng.random::<bool>() { -d } else { *d })
                .sum();
            if sum.abs() >= threshold {
                hits += 1;
            }
        }
        Ok((hits + 1) as f64 / (n_resamples as f64 + 1.0))
    }
}

/// Two-sided bootstrap test on per-pair statistics, resampling pairs with
/// replacement; an alternative to [`paired_permutation_test`] for the same
/// inputs. The p-value is twice the smaller tail mass of the resampled mean
/// difference around zero, capped at one.
pub fn paired_bootstrap_test(
    values_a: &[f64],
    values_b: &[f64],
    n_resamples: u32,
    seed: u64,
) -> Result<f64> {
    if values_a.is_empty() || values_a.len() != values_b.len() {
        return Err(Error::InvalidArgument(format!(
            "needs equally many paired values, got {} and {}",
            values_a.len(),
            values_b.len()
        )));
    }
    if n_resamples == 0 {
        return Err(Error::InvalidArgument("n_resamples must be positive".into()));
    }
    let diffs: Vec<f64> = values_a.iter().zip(values_b).map(|(a, b)| a - b).collect();
    let n = diffs.len();
    let mut rng = RngLedger::new(seed).stream("paired_bootstrap", 0);
    let mut at_or_below = 0u64;
    let mut at_or_above = 0u64;
    for _ in 0..n_resamples {
        let mean: f64 = (0..n)
            .map(|_| diffs[rng.random_range(0..n)])
            .sum::<f64>()
            / n as f64;
        if mean <= 0.0 {
            at_or_below += 1;
        }
        if mean >= 0.0 {
            at_or_above += 1;
        }
    }
    let lo = (at_or_below + 1) as f64 / (n_resamples as f64 + 1.0);
    let hi = (at_or_above + 1) as f64 / (n_resamples as f64 + 1.0);
    Ok((2.0 * lo.min(hi)).min(1.0))
}

/// Posterior summary of an odds ratio between two binomial proportions.
#[derive(Clone, Debug)]
pub struct OddsRatioSummary {
    /// Posterior median.
    pub point: f64,
    pub ci68: (f64, f64),
    pub ci95: (f64, f64),
    /// Probability that the posterior includes the null (OR = 1): twice the
    /// smaller tail mass at 1, capped at one.
    pub p_null: f64,
}

impl fmt::Display for OddsRatioSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "OR={:.2}, CI95=[{:.2}, {:.2}]",
            self.point, self.ci95.0, self.ci95.1
        )
    }
}

/// Samples the posterior odds ratio between `s1/n1` and `s2/n2` under uniform
/// priors: `p_i ~ Beta(s_i + 1, n_i - s_i + 1)`, OR = odds(p1) / odds(p2).
pub fn odds_ratio_posterior(
    successes_1: u32,
    n_1: u32,
    successes_2: u32,
    n_2: u32,
    n_samples: u32,
    seed: u64,
) -> Result<OddsRatioSummary> {
    for (s, n) in [(successes_1, n_1), (successes_2, n_2)] {
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be positive".into()));
        }
        if s > n {
            return Err(Error::InvalidArgument(format!(
                "successes {s} exceed sample size {n}"
            )));
        }
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let beta_1 = Beta::new(successes_1 as f64 + 1.0, (n_1 - successes_1) as f64 + 1.0)
        .expect("parameters are positive");
    let beta_2 = Beta::new(successes_2 as f64 + 1.0, (n_2 - successes_2) as f64 + 1.0)
        .expect("parameters are positive");
    let mut rng = RngLedger::new(seed).stream("odds_ratio", 0);
    let mut samples: Vec<f64> = (0..n_samples)
        .map(|_| {
            let p1: f64 = beta_1.sample(&mut rng);
            let p2: f64 = beta_2.sample(&mut rng);
            (p1 / (1.0 - p1)) / (p2 / (1.0 - p2))
        })
        .collect();
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantile = |q: f64| -> f64 {
        let idx = ((samples.len() - 1) as f64 * q).round() as usize;
        samples[idx]
    };
    let below = samples.iter().filter(|&&x| x <= 1.0).count() as f64 / samples.len() as f64;
    let above = samples.iter().filter(|&&x| x >= 1.0).count() as f64 / samples.len() as f64;
    Ok(OddsRatioSummary {
        point: quantile(0.5),
        ci68: (quantile(0.16), quantile(0.84)),
        ci95: (quantile(0.025), quantile(0.975)),
        p_null: (2.0 * below.min(above)).min(1.0),
    })
}
