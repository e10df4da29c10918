//! Experiment orchestration: paired-chain simulation and the derived metric
//! bundle.
//!
//! Chains are simulated on independent RNG streams keyed by chain index, so
//! results are bit-identical at any worker-thread count. Metric computation
//! is a pure function of the chains plus the master seed (resampling draws
//! come from dedicated streams).

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::chain::{Chain, Condition, Image, PixelGrid};
use crate::creation::{apply_strategy, edit_size_stats, sample_strategy, EditStrategy};
use crate::error::{Error, Result};
use crate::io::config::ExperimentConfig;
use crate::metrics::{
    chain_autocorrelation, gini, market_diversity, paired_permutation_test, pixel_embedding,
    DiversityMetric, EmbeddingTable, MetricPoint,
};
use crate::policies::{mixture_select_with, Policy, UtilityModel};
use crate::rng::RngLedger;

/// One committed edit, for the run log.
#[derive(Clone, Debug)]
pub struct EditRecord {
    pub chain_id: u32,
    pub generation: u32,
    pub parent_id: u64,
    pub child_id: u64,
    pub policy: Policy,
    pub strategy: EditStrategy,
    pub changed_pixels: u32,
}

/// Chains plus the per-generation edit log of one simulation run.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub chains: Vec<Chain>,
    pub edits: Vec<EditRecord>,
}

/// Simulates `2 * config.chains` chains: pair `p` couples a PI chain (id
/// `2p`) and an NPI chain (id `2p + 1`) grown from the same seed image when
/// pairing is on.
pub fn run_market_experiment(config: &ExperimentConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let ledger = RngLedger::new(config.seed);
    let total_chains = config.chains * 2;

    let results: Vec<Result<(Chain, Vec<EditRecord>)>> = (0..total_chains)
        .into_par_iter()
        .map(|chain_id| {
            let pair_id = chain_id / 2;
            let condition = if chain_id % 2 == 0 {
                Condition::Pi
            } else {
                Condition::Npi
            };
            let seed_stream_index = if config.paired {
                pair_id as u64
            } else {
                // Unpaired runs give every chain its own seed image.
                u64::from(config.chains) + chain_id as u64
            };
            let seed_pixels = PixelGrid::random(
                &mut ledger.stream("seed_image", seed_stream_index),
                config.seed_image_fill,
            );
            simulate_chain(config, &ledger, chain_id, pair_id, condition, seed_pixels)
        })
        .collect();

    let mut chains = Vec::with_capacity(total_chains as usize);
    let mut edits = Vec::with_capacity((total_chains * config.generations) as usize);
    for result in results {
        let (chain, chain_edits) = result?;
        chains.push(chain);
        edits.extend(chain_edits);
    }
    debug_assert!(chains
        .iter()
        .all(|c| c.total_selections() == config.generations));
    Ok(RunArtifacts { chains, edits })
}

fn simulate_chain(
    config: &ExperimentConfig,
    ledger: &RngLedger,
    chain_id: u32,
    pair_id: u32,
    condition: Condition,
    seed_pixels: PixelGrid,
) -> Result<(Chain, Vec<EditRecord>)> {
    let mut rng = ledger.stream("chain", chain_id as u64);
    let first_id = chain_id as u64 * (config.generations as u64 + 1);
    let seed_image = Image::new(first_id, seed_pixels);

    let mut model = UtilityModel::new(config.beta);
    model.insert_scores(seed_image.id, draw_scores(&mut rng));

    let mut chain = Chain::new(chain_id, pair_id, condition, config.seed, seed_image);
    let mixture = config.mixtures.get(condition);
    let profile = config.profiles.get(condition);
    let mut edits = Vec::with_capacity(config.generations as usize);

    for g in 1..=config.generations {
        let view = chain.market_window(g, config.window, condition.shows_popularity())?;
        let (parent_id, policy) =
            mixture_select_with(&view, mixture, &model, config.attachment, &mut rng)?;
        let parent_pixels = chain
            .node(parent_id)
            .expect("selected node exists")
            .image
            .pixels;
        let strategy = sample_strategy(profile, &mut rng);
        let (child_pixels, changed_pixels) = apply_strategy(&parent_pixels, strategy, &mut rng);
        let child = Image::new(first_id + g as u64, child_pixels);
        chain.record_choice(g, parent_id, child, config.window)?;
        model.insert_scores(child.id, draw_scores(&mut rng));
        edits.push(EditRecord {
            chain_id,
            generation: g,
            parent_id,
            child_id: child.id,
            policy,
            strategy,
            changed_pixels,
        });
    }
    Ok((chain, edits))
}

/// Latent criterion scores of a freshly created image.
fn draw_scores<R: Rng + ?Sized>(rng: &mut R) -> [f64; 4] {
    [
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ]
}

/// Result of one paired comparison.
#[derive(Clone, Debug)]
pub struct PairedTest {
    pub metric: String,
    pub mean_pi: f64,
    pub mean_npi: f64,
    pub p_value: f64,
}

/// Inequality summary in the report format `G(PI)=x, G(NPI)=y`.
#[derive(Clone, Debug)]
pub struct GiniReport {
    pub g_pi: f64,
    pub g_npi: f64,
    pub p_value: f64,
}

impl GiniReport {
    pub fn delta(&self) -> f64 {
        self.g_pi - self.g_npi
    }
}

/// Everything the analysis stage derives from a set of chains.
#[derive(Clone, Debug)]
pub struct MetricsBundle {
    pub points: Vec<MetricPoint>,
    pub tests: Vec<PairedTest>,
    pub gini: GiniReport,
}

/// Maximum autocorrelation lag reported by the analysis stage.
pub const MAX_LAG: usize = 10;

/// Recomputes every metric from stored chains. Pure in its inputs: the same
/// chains, seed, window, and embeddings give byte-identical results.
pub fn compute_metrics(
    chains: &[Chain],
    window: u32,
    resamples: u32,
    seed: u64,
    external_embeddings: Option<&EmbeddingTable>,
) -> Result<MetricsBundle> {
    if chains.is_empty() {
        return Err(Error::InvalidArgument("no chains to analyze".into()));
    }
    let pixel_table;
    let table = match external_embeddings {
        Some(table) => table,
        None => {
            pixel_table = EmbeddingTable::from_chains(chains);
            &pixel_table
        }
    };
    let generations = chains.iter().map(|c| c.len() as u32 - 1).max().unwrap();
    let mut points = Vec::new();
    let mut tests = Vec::new();

    // Per-generation market diversity, one series per metric and condition;
    // markets need at least two entries, so the series starts at g = 2.
    type DiversityEval = fn(&Chain, u32, u32, &EmbeddingTable) -> Result<f64>;
    let metric_kinds: [(&str, DiversityEval); 3] = [
        ("diversity_hamming", |chain, g, window, _table| {
            market_diversity(
                &chain.market_window(g, window, false)?,
                DiversityMetric::Hamming,
            )
        }),
        ("diversity_phylogenetic", |chain, g, window, _table| {
            market_diversity(
                &chain.market_window(g, window, false)?,
                DiversityMetric::Phylogenetic(chain),
            )
        }),
        ("diversity_cosine", |chain, g, window, table| {
            market_diversity(
                &chain.market_window(g, window, false)?,
                DiversityMetric::EmbeddingCosine(table),
            )
        }),
    ];

    for (name, eval) in metric_kinds {
        let mut chain_means: Vec<(u32, Condition, f64)> = Vec::new();
        for condition in Condition::ALL {
            let members: Vec<&Chain> = chains
                .iter()
                .filter(|c| c.condition == condition)
                .collect();
            if members.is_empty() {
                continue;
            }
            // The market at generation g is what the agent creating image g
            // observed, so g only runs over committed generations.
            for g in 2..=generations {
                let values: Vec<f64> = members
                    .iter()
                    .filter(|c| c.len() as u32 > g)
                    .map(|c| eval(c, g, window, table))
                    .collect::<Result<_>>()?;
                if values.is_empty() {
                    continue;
                }
                let (mean, se) = mean_se(&values);
                points.push(MetricPoint {
                    condition: condition.label().into(),
                    metric: name.into(),
                    index: g,
                    value: mean,
                    se,
                    n: values.len() as u32,
                });
            }
            for chain in &members {
                let per_gen: Vec<f64> = (2..=(chain.len() as u32 - 1))
                    .map(|g| eval(chain, g, window, table))
                    .collect::<Result<_>>()?;
                if !per_gen.is_empty() {
                    let mean = per_gen.iter().sum::<f64>() / per_gen.len() as f64;
                    chain_means.push((chain.pair_id, condition, mean));
                }
            }
        }
        if let Some((pi, npi)) = paired_values(&chain_means) {
            let p_value =
                paired_permutation_test(&pi, &npi, resamples, test_seed(seed, name))?;
            tests.push(PairedTest {
                metric: name.into(),
                mean_pi: mean_se(&pi).0,
                mean_npi: mean_se(&npi).0,
                p_value,
            });
        }
    }

    // Chain autocorrelation per lag and condition over image embeddings.
    for condition in Condition::ALL {
        let members: Vec<&Chain> = chains
            .iter()
            .filter(|c| c.condition == condition)
            .collect();
        if members.is_empty() {
            continue;
        }
        let embedded: Vec<Vec<Vec<f64>>> = members
            .iter()
            .map(|chain| {
                chain
                    .nodes()
                    .iter()
                    .map(|node| match table.get(node.image.id) {
                        Some(v) => Ok(v.to_vec()),
                        None if external_embeddings.is_some() => Err(Error::InvalidArgument(
                            format!("no embedding for image {}", node.image.id),
                        )),
                        None => Ok(pixel_embedding(&node.image.pixels)),
                    })
                    .collect::<Result<_>>()
            })
            .collect::<Result<_>>()?;
        for tau in 0..=MAX_LAG.min(generations as usize) {
            match chain_autocorrelation(&embedded, tau) {
                Ok(value) => points.push(MetricPoint {
                    condition: condition.label().into(),
                    metric: "autocorrelation".into(),
                    index: tau as u32,
                    value,
                    se: 0.0,
                    n: members.len() as u32,
                }),
                Err(Error::DegenerateVariance) => {}
                Err(e) => return Err(e),
            }
        }
    }

    // Edit sizes, recomputed from parent links.
    let mut edit_chain_means: Vec<(u32, Condition, f64)> = Vec::new();
    for stats in edit_size_stats(chains) {
        points.push(MetricPoint {
            condition: stats.condition.label().into(),
            metric: "edit_size".into(),
            index: 0,
            value: stats.mean,
            se: stats.se,
            n: stats.n as u32,
        });
    }
    for chain in chains {
        let sizes: Vec<f64> = chain
            .nodes()
            .iter()
            .filter_map(|node| {
                let parent = chain.node(node.parent?)?;
                Some(node.image.pixels.hamming(&parent.image.pixels) as f64)
            })
            .collect();
        if !sizes.is_empty() {
            edit_chain_means.push((
                chain.pair_id,
                chain.condition,
                sizes.iter().sum::<f64>() / sizes.len() as f64,
            ));
        }
    }
    if let Some((pi, npi)) = paired_values(&edit_chain_means) {
        let p_value =
            paired_permutation_test(&pi, &npi, resamples, test_seed(seed, "edit_size"))?;
        tests.push(PairedTest {
            metric: "edit_size".into(),
            mean_pi: mean_se(&pi).0,
            mean_npi: mean_se(&npi).0,
            p_value,
        });
    }

    // Inequality of selection counts: pooled per condition for the report,
    // per chain for the paired test.
    let pooled = |condition: Condition| -> Result<f64> {
        let counts: Vec<f64> = chains
            .iter()
            .filter(|c| c.condition == condition)
            .flat_map(|c| c.nodes().iter().map(|n| n.selection_count as f64))
            .collect();
        gini(&counts)
    };
    let g_pi = pooled(Condition::Pi)?;
    let g_npi = pooled(Condition::Npi)?;
    for (condition, value) in [(Condition::Pi, g_pi), (Condition::Npi, g_npi)] {
        let n = chains.iter().filter(|c| c.condition == condition).count() as u32;
        points.push(MetricPoint {
            condition: condition.label().into(),
            metric: "gini".into(),
            index: 0,
            value,
            se: 0.0,
            n,
        });
    }
    let gini_chain_means: Vec<(u32, Condition, f64)> = chains
        .iter()
        .map(|chain| {
            let counts: Vec<f64> = chain
                .nodes()
                .iter()
                .map(|n| n.selection_count as f64)
                .collect();
            Ok((chain.pair_id, chain.condition, gini(&counts)?))
        })
        .collect::<Result<_>>()?;
    let (pi, npi) = paired_values(&gini_chain_means).ok_or_else(|| {
        Error::InvalidArgument("gini report needs at least one PI/NPI pair".into())
    })?;
    let gini_p = paired_permutation_test(&pi, &npi, resamples, test_seed(seed, "gini"))?;
    tests.push(PairedTest {
        metric: "gini".into(),
        mean_pi: mean_se(&pi).0,
        mean_npi: mean_se(&npi).0,
        p_value: gini_p,
    });

    Ok(MetricsBundle {
        points,
        tests,
        gini: GiniReport {
            g_pi,
            g_npi,
            p_value: gini_p,
        },
    })
}

/// Aligns per-chain values into (PI, NPI) vectors matched on pair id.
fn paired_values(rows: &[(u32, Condition, f64)]) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut pairs: std::collections::BTreeMap<u32, (Option<f64>, Option<f64>)> =
        std::collections::BTreeMap::new();
    for &(pair_id, condition, value) in rows {
        let slot = pairs.entry(pair_id).or_default();
        match condition {
            Condition::Pi => slot.0 = Some(value),
            Condition::Npi => slot.1 = Some(value),
        }
    }
    let complete: Vec<(f64, f64)> = pairs
        .values()
        .filter_map(|&(pi, npi)| Some((pi?, npi?)))
        .collect();
    if complete.is_empty() {
        return None;
    }
    Some(complete.into_iter().unzip())
}

/// Stable per-metric seed for resampling streams.
fn test_seed(master: u64, metric: &str) -> u64 {
    let mut seed = master;
    for b in metric.bytes() {
        seed = seed.wrapping_mul(0x100).wrapping_add(b as u64) ^ seed >> 7;
    }
    seed
}

pub(crate) fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-generation phylogenetic diversity series, the summary used when
/// comparing simulated conditions against each other.
pub fn phylo_diversity_series(chains: &[Chain], window: u32) -> Result<Vec<MetricPoint>> {
    let generations = chains.iter().map(|c| c.len() as u32 - 1).max().unwrap_or(0);
    let mut points = Vec::new();
    for condition in Condition::ALL {
        let members: Vec<&Chain> = chains
            .iter()
            .filter(|c| c.condition == condition)
            .collect();
        if members.is_empty() {
            continue;
        }
        for g in 2..=generations {
            let values: Vec<f64> = members
                .iter()
                .filter(|c| c.len() as u32 > g)
                .map(|c| {
                    market_diversity(
                        &c.market_window(g, window, false)?,
                        DiversityMetric::Phylogenetic(c),
                    )
                })
                .collect::<Result<_>>()?;
            if values.is_empty() {
                continue;
            }
            let (mean, se) = mean_se(&values);
            points.push(MetricPoint {
                condition: condition.label().into(),
                metric: "diversity_phylogenetic".into(),
                index: g,
                value: mean,
                se,
                n: values.len() as u32,
            });
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            chains: 4,
            generations: 12,
            resamples: 200,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn run_produces_paired_chains_of_full_length() {
        let config = tiny_config();
        let artifacts = run_market_experiment(&config).unwrap();
        assert_eq!(artifacts.chains.len(), 8);
        for chain in &artifacts.chains {
            assert_eq!(chain.len(), 13);
            assert_eq!(chain.total_selections(), 12);
        }
        // Paired chains share the seed image pixel-for-pixel.
        for pair in artifacts.chains.chunks(2) {
            assert_eq!(pair[0].pair_id, pair[1].pair_id);
            assert_eq!(pair[0].condition, Condition::Pi);
            assert_eq!(pair[1].condition, Condition::Npi);
            assert_eq!(
                pair[0].nodes()[0].image.pixels,
                pair[1].nodes()[0].image.pixels
            );
        }
        assert_eq!(artifacts.edits.len(), 8 * 12);
    }

    #[test]
    fn run_is_reproducible() {
        let config = tiny_config();
        let a = run_market_experiment(&config).unwrap();
        let b = run_market_experiment(&config).unwrap();
        for (x, y) in a.chains.iter().zip(b.chains.iter()) {
            for (nx, ny) in x.nodes().iter().zip(y.nodes()) {
                assert_eq!(nx.image.pixels, ny.image.pixels);
                assert_eq!(nx.parent, ny.parent);
                assert_eq!(nx.selection_count, ny.selection_count);
            }
        }
    }

    #[test]
    fn unpaired_chains_use_distinct_seed_images() {
        let config = ExperimentConfig {
            paired: false,
            ..tiny_config()
        };
        let artifacts = run_market_experiment(&config).unwrap();
        let first = artifacts.chains[0].nodes()[0].image.pixels;
        let second = artifacts.chains[1].nodes()[0].image.pixels;
        assert_ne!(first, second);
    }

    #[test]
    fn metrics_bundle_covers_expected_series() {
        let config = tiny_config();
        let artifacts = run_market_experiment(&config).unwrap();
        let bundle = compute_metrics(&artifacts.chains, config.window, 200, config.seed, None)
            .unwrap();
        let metrics: std::collections::BTreeSet<&str> = bundle
            .points
            .iter()
            .map(|p| p.metric.as_str())
            .collect();
        for name in [
            "diversity_hamming",
            "diversity_phylogenetic",
            "diversity_cosine",
            "autocorrelation",
            "edit_size",
            "gini",
        ] {
            assert!(metrics.contains(name), "missing series {name}");
        }
        assert_eq!(bundle.tests.len(), 5);
        assert!(bundle.gini.g_pi > 0.0);
        // Lag-0 autocorrelation is exactly one.
        for point in bundle
            .points
            .iter()
            .filter(|p| p.metric == "autocorrelation" && p.index == 0)
        {
            assert!((point.value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn default_profiles_make_pi_edits_smaller() {
        let config = ExperimentConfig {
            chains: 64,
            generations: 40,
            resamples: 500,
            seed: 17,
            ..ExperimentConfig::default()
        };
        let artifacts = run_market_experiment(&config).unwrap();
        let stats = crate::creation::edit_size_stats(&artifacts.chains);
        let mean_of = |condition: Condition| {
            stats
                .iter()
                .find(|s| s.condition == condition)
                .unwrap()
                .mean
        };
        assert!(
            mean_of(Condition::Pi) < mean_of(Condition::Npi),
            "PI {} vs NPI {}",
            mean_of(Condition::Pi),
            mean_of(Condition::Npi)
        );
    }

    #[test]
    fn external_embeddings_override_the_pixel_default() {
        let config = tiny_config();
        let artifacts = run_market_experiment(&config).unwrap();
        // Two clusters on orthogonal axes: even ids vs odd ids.
        let mut table =
            crate::metrics::EmbeddingTable::new(2, crate::metrics::EmbeddingSource::External);
        for chain in &artifacts.chains {
            for node in chain.nodes() {
                let v = if node.image.id % 2 == 0 {
                    vec![1.0, 0.0]
                } else {
                    vec![0.0, 1.0]
                };
                table.insert(node.image.id, v).unwrap();
            }
        }
        let bundle =
            compute_metrics(&artifacts.chains, config.window, 200, config.seed, Some(&table))
                .unwrap();
        // Cosine distances are now exactly 0 or 1, so every diversity value
        // sits inside [0, 1] and differs from the pixel-derived run.
        let pixel_bundle =
            compute_metrics(&artifacts.chains, config.window, 200, config.seed, None).unwrap();
        let cosine = |bundle: &MetricsBundle| -> Vec<f64> {
            bundle
                .points
                .iter()
                .filter(|p| p.metric == "diversity_cosine")
                .map(|p| p.value)
                .collect()
        };
        assert_ne!(cosine(&bundle), cosine(&pixel_bundle));

        // A table that misses an image id is rejected.
        let sparse =
            crate::metrics::EmbeddingTable::new(2, crate::metrics::EmbeddingSource::External);
        assert!(compute_metrics(
            &artifacts.chains,
            config.window,
            200,
            config.seed,
            Some(&sparse)
        )
        .is_err());
    }

    #[test]
    fn metrics_are_pure_in_their_inputs() {
        let config = tiny_config();
        let artifacts = run_market_experiment(&config).unwrap();
        let a = compute_metrics(&artifacts.chains, config.window, 200, config.seed, None).unwrap();
        let b = compute_metrics(&artifacts.chains, config.window, 200, config.seed, None).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.gini.p_value, b.gini.p_value);
    }
}
