//! Recovery of policy-mixture weights from observed choices.
//!
//! A point-estimate EM fit stands in for a full hierarchical Bayesian model:
//! expectations assign each record soft responsibilities over the four
//! policies, maximization re-estimates the mixture weights (and optionally
//! ascends the image-driven log-likelihood in beta). Uncertainty comes from a
//! nonparametric bootstrap over records.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::chain::Condition;
use crate::error::{Error, Result};
use crate::experiment::{phylo_diversity_series, run_market_experiment, RunArtifacts};
use crate::io::config::ExperimentConfig;
use crate::metrics::MetricPoint;
use crate::policies::{softmax_probs, Policy, PolicyMixture};
use crate::rng::{sample_categorical, sample_index, RngLedger};

/// One observed selection: the market snapshot and the index chosen.
#[derive(Clone, Debug)]
pub struct ChoiceRecord {
    pub condition: Condition,
    /// Per-entry selection counts; absent for NPI records.
    pub popularity: Option<Vec<u32>>,
    /// Per-entry criterion ratings, one quadruple per market slot.
    pub ratings: Vec<[f64; 4]>,
    pub chosen: usize,
}

impl ChoiceRecord {
    pub fn market_size(&self) -> usize {
        self.ratings.len()
    }

    fn validate(&self) -> Result<()> {
        if self.ratings.is_empty() {
            return Err(Error::InvalidArgument("record has an empty market".into()));
        }
        if self.chosen >= self.ratings.len() {
            return Err(Error::InvalidArgument(format!(
                "chosen index {} outside market of size {}",
                self.chosen,
                self.ratings.len()
            )));
        }
        if let Some(pops) = &self.popularity {
            if pops.len() != self.ratings.len() {
                return Err(Error::InvalidArgument(
                    "popularity and rating lengths differ".into(),
                ));
            }
        }
        if self
            .ratings
            .iter()
            .any(|r| r.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::InvalidArgument("ratings must be finite".into()));
        }
        Ok(())
    }
}

/// Per-policy probability of the observed choice.
///
/// Image-driven: softmax over `u_i = sum_c beta_c r_ic`. Cumulative
/// advantage and balancing: uniform over the argmax/argmin popularity set,
/// zero if the choice fell outside it, and structurally zero for NPI
/// records. Random: one over the market size.
pub fn policy_likelihoods(record: &ChoiceRecord, beta: &[f64; 4]) -> [f64; 4] {
    let m = record.market_size();
    let utilities: Vec<f64> = record
        .ratings
        .iter()
        .map(|r| r.iter().zip(beta).map(|(x, b)| x * b).sum())
        .collect();
    let softmax = softmax_probs(&utilities).expect("ratings are finite and non-empty");
    let image_driven = softmax[record.chosen];

    let (cum_adv, balancing) = match &record.popularity {
        None => (0.0, 0.0),
        Some(pops) => {
            let best = *pops.iter().max().expect("market is non-empty");
            let worst = *pops.iter().min().expect("market is non-empty");
            let leaders = pops.iter().filter(|&&p| p == best).count();
            let trailers = pops.iter().filter(|&&p| p == worst).count();
            let cum = if pops[record.chosen] == best {
                1.0 / leaders as f64
            } else {
                0.0
            };
            let bal = if pops[record.chosen] == worst {
                1.0 / trailers as f64
            } else {
                0.0
            };
            (cum, bal)
        }
    };
    [image_driven, cum_adv, balancing, 1.0 / m as f64]
}

/// EM options.
#[derive(Clone, Debug)]
pub struct FitOptions {
    pub max_iter: u32,
    pub tol: f64,
    pub fit_beta: bool,
    /// Initial (or fixed, when `fit_beta` is off) beta coefficients.
    pub beta: [f64; 4],
    pub n_starts: u32,
    pub n_bootstrap: u32,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 500,
            tol: 1e-8,
            fit_beta: false,
            beta: [1.0; 4],
            n_starts: 5,
            n_bootstrap: 200,
            seed: 0,
        }
    }
}

/// Fitted mixture for one condition.
#[derive(Clone, Debug)]
pub struct ConditionFit {
    pub condition: Condition,
    pub weights: [f64; 4],
    /// Bootstrap standard errors; zero when bootstrapping is disabled.
    pub weight_se: [f64; 4],
    pub beta: [f64; 4],
    pub log_likelihood: f64,
    pub iterations: u32,
    pub final_delta: f64,
    /// Log-likelihood after each EM iteration of the winning start.
    pub ll_trace: Vec<f64>,
    pub n_records: usize,
}

impl ConditionFit {
    pub fn mixture(&self) -> PolicyMixture {
        PolicyMixture::new(self.weights).expect("EM weights form a simplex")
    }
}

/// Fit results per condition present in the record set.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub fits: Vec<ConditionFit>,
}

impl FitResult {
    pub fn fit_for(&self, condition: Condition) -> Option<&ConditionFit> {
        self.fits.iter().find(|f| f.condition == condition)
    }
}

/// Expected image-driven log-likelihood under responsibilities `resp`.
pub fn image_driven_objective(
    records: &[ChoiceRecord],
    resp: &[f64],
    beta: &[f64; 4],
) -> f64 {
    records
        .iter()
        .zip(resp)
        .map(|(record, &weight)| {
            let utilities: Vec<f64> = record
                .ratings
                .iter()
                .map(|r| r.iter().zip(beta).map(|(x, b)| x * b).sum())
                .collect();
            let probs = softmax_probs(&utilities).expect("finite ratings");
            weight * probs[record.chosen].max(f64::MIN_POSITIVE).ln()
        })
        .sum()
}

/// Gradient of [`image_driven_objective`] in beta:
/// `sum_r resp_r (r_chosen,c - sum_i p_i r_i,c)`.
pub fn image_driven_gradient(
    records: &[ChoiceRecord],
    resp: &[f64],
    beta: &[f64; 4],
) -> [f64; 4] {
    let mut grad = [0.0; 4];
    for (record, &weight) in records.iter().zip(resp) {
        let utilities: Vec<f64> = record
            .ratings
            .iter()
            .map(|r| r.iter().zip(beta).map(|(x, b)| x * b).sum())
            .collect();
        let probs = softmax_probs(&utilities).expect("finite ratings");
        for c in 0..4 {
            let expected: f64 = record
                .ratings
                .iter()
                .zip(&probs)
                .map(|(r, p)| p * r[c])
                .sum();
            grad[c] += weight * (record.ratings[record.chosen][c] - expected);
        }
    }
    grad
}

struct EmState {
    weights: [f64; 4],
    beta: [f64; 4],
    log_likelihood: f64,
    iterations: u32,
    final_delta: f64,
    ll_trace: Vec<f64>,
}

fn likelihood_matrix(records: &[ChoiceRecord], beta: &[f64; 4]) -> Vec<[f64; 4]> {
    records
        .iter()
        .map(|r| policy_likelihoods(r, beta))
        .collect()
}

fn total_log_likelihood(lik: &[[f64; 4]], weights: &[f64; 4]) -> f64 {
    lik.iter()
        .map(|row| {
            let mix: f64 = row.iter().zip(weights).map(|(l, w)| l * w).sum();
            mix.max(f64::MIN_POSITIVE).ln()
        })
        .sum()
}

/// One EM run from the given initial weights. Log-likelihood is monotone
/// non-decreasing; a decrease beyond slack is an internal error.
fn run_em(
    records: &[ChoiceRecord],
    init_weights: [f64; 4],
    options: &FitOptions,
) -> Result<EmState> {
    let mut weights = init_weights;
    let mut beta = options.beta;
    let mut lik = likelihood_matrix(records, &beta);
    let mut ll = total_log_likelihood(&lik, &weights);
    let mut trace = vec![ll];
    let mut iterations = 0;
    let mut final_delta = f64::INFINITY;

    for iter in 0..options.max_iter {
        // E-step: responsibilities per record.
        let resp: Vec<[f64; 4]> = lik
            .iter()
            .map(|row| {
                let mut r = [0.0; 4];
                let total: f64 = row.iter().zip(&weights).map(|(l, w)| l * w).sum();
                debug_assert!(total > 0.0, "random policy keeps totals positive");
                for z in 0..4 {
                    r[z] = row[z] * weights[z] / total;
                }
                r
            })
            .collect();

        // M-step: mean responsibilities.
        let n = records.len() as f64;
        for z in 0..4 {
            weights[z] = resp.iter().map(|r| r[z]).sum::<f64>() / n;
        }

        if options.fit_beta {
            let image_resp: Vec<f64> = resp.iter().map(|r| r[0]).collect();
            beta = ascend_beta(records, &image_resp, beta);
            lik = likelihood_matrix(records, &beta);
        }

        let new_ll = total_log_likelihood(&lik, &weights);
        if new_ll < ll - 1e-9 {
            return Err(Error::Internal(format!(
                "EM log-likelihood decreased from {ll} to {new_ll}"
            )));
        }
        final_delta = new_ll - ll;
        ll = new_ll;
        trace.push(ll);
        iterations = iter + 1;
        if final_delta < options.tol {
            break;
        }
    }
    Ok(EmState {
        weights,
        beta,
        log_likelihood: ll,
        iterations,
        final_delta,
        ll_trace: trace,
    })
}

/// A few guarded gradient-ascent steps on the expected image-driven
/// log-likelihood; never accepts a step that lowers the objective.
fn ascend_beta(records: &[ChoiceRecord], resp: &[f64], beta: [f64; 4]) -> [f64; 4] {
    let mut current = beta;
    let mut objective = image_driven_objective(records, resp, &current);
    let resp_mass: f64 = resp.iter().sum::<f64>().max(1.0);
    for _ in 0..5 {
        let grad = image_driven_gradient(records, resp, &current);
        let mut step = 1.0 / resp_mass;
        let mut improved = false;
        for _ in 0..30 {
            let candidate = [
                current[0] + step * grad[0],
                current[1] + step * grad[1],
                current[2] + step * grad[2],
                current[3] + step * grad[3],
            ];
            let value = image_driven_objective(records, resp, &candidate);
            if value > objective {
                current = candidate;
                objective = value;
                improved = true;
                break;
            }
            step /= 2.0;
        }
        if !improved {
            break;
        }
    }
    current
}

fn dirichlet_uniform<R: Rng + ?Sized>(rng: &mut R) -> [f64; 4] {
    let mut draws = [0.0; 4];
    for d in &mut draws {
        *d = -(rng.random::<f64>().max(f64::MIN_POSITIVE)).ln();
    }
    let total: f64 = draws.iter().sum();
    draws.map(|d| d / total)
}

/// Fits mixture weights per condition by multi-start EM, with bootstrap
/// standard errors over records.
pub fn fit_mixture(records: &[ChoiceRecord], options: &FitOptions) -> Result<FitResult> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no choice records to fit".into()));
    }
    for record in records {
        record.validate()?;
    }
    let ledger = RngLedger::new(options.seed);
    let mut fits = Vec::new();

    for condition in Condition::ALL {
        let subset: Vec<ChoiceRecord> = records
            .iter()
            .filter(|r| r.condition == condition)
            .cloned()
            .collect();
        if subset.is_empty() {
            continue;
        }

        let mut best: Option<EmState> = None;
        for start in 0..options.n_starts.max(1) {
            let init = if start == 0 {
                [0.25; 4]
            } else {
                dirichlet_uniform(&mut ledger.stream("em_start", start as u64))
            };
            let state = run_em(&subset, init, options)?;
            if best
                .as_ref()
                .is_none_or(|b| state.log_likelihood > b.log_likelihood)
            {
                best = Some(state);
            }
        }
        let best = best.expect("at least one start ran");

        let weight_se = if options.n_bootstrap > 0 {
            bootstrap_se(&subset, &best, options, &ledger)?
        } else {
            [0.0; 4]
        };

        fits.push(ConditionFit {
            condition,
            weights: best.weights,
            weight_se,
            beta: best.beta,
            log_likelihood: best.log_likelihood,
            iterations: best.iterations,
            final_delta: best.final_delta,
            ll_trace: best.ll_trace,
            n_records: subset.len(),
        });
    }
    Ok(FitResult { fits })
}

fn bootstrap_se(
    records: &[ChoiceRecord],
    point: &EmState,
    options: &FitOptions,
    ledger: &RngLedger,
) -> Result<[f64; 4]> {
    // Resampled refits start at the point estimate with beta frozen there;
    // only the weights are re-estimated.
    let refit_options = FitOptions {
        fit_beta: false,
        beta: point.beta,
        n_bootstrap: 0,
        ..options.clone()
    };
    let mut samples: Vec<[f64; 4]> = Vec::with_capacity(options.n_bootstrap as usize);
    for b in 0..options.n_bootstrap {
        let mut rng = ledger.stream("em_bootstrap", b as u64);
        let resample: Vec<ChoiceRecord> = (0..records.len())
            .map(|_| records[sample_index(records.len(), &mut rng)].clone())
            .collect();
        samples.push(run_em(&resample, point.weights, &refit_options)?.weights);
    }
    let mut se = [0.0; 4];
    let n = samples.len() as f64;
    for z in 0..4 {
        let mean = samples.iter().map(|s| s[z]).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s[z] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        se[z] = var.sqrt();
    }
    Ok(se)
}

/// Generates synthetic choice records from known ground-truth weights, for
/// generate-and-recover checks.
pub fn synthesize_records(
    weights: &PolicyMixture,
    beta: &[f64; 4],
    condition: Condition,
    n_records: usize,
    market_size: usize,
    seed: u64,
) -> Result<Vec<ChoiceRecord>> {
    weights.validate_for(condition)?;
    if market_size == 0 {
        return Err(Error::InvalidArgument("market size must be positive".into()));
    }
    let mut rng = RngLedger::new(seed).stream("synthesize", 0);
    let mut records = Vec::with_capacity(n_records);
    for _ in 0..n_records {
        let ratings: Vec<[f64; 4]> = (0..market_size)
            .map(|_| {
                [
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ]
            })
            .collect();
        let popularity: Option<Vec<u32>> = condition
            .shows_popularity()
            .then(|| (0..market_size).map(|_| rng.random_range(0..=4)).collect());
        let policy = Policy::ALL[sample_categorical(&weights.weights(), &mut rng)];
        let chosen = match policy {
            Policy::ImageDriven => {
                let utilities: Vec<f64> = ratings
                    .iter()
                    .map(|r| r.iter().zip(beta).map(|(x, b)| x * b).sum())
                    .collect();
                sample_categorical(&softmax_probs(&utilities)?, &mut rng)
            }
            Policy::CumulativeAdvantage | Policy::Balancing => {
                let pops = popularity.as_ref().expect("validated for condition");
                let target = if policy == Policy::CumulativeAdvantage {
                    *pops.iter().max().unwrap()
                } else {
                    *pops.iter().min().unwrap()
                };
                let members: Vec<usize> =
                    (0..market_size).filter(|&i| pops[i] == target).collect();
                members[sample_index(members.len(), &mut rng)]
            }
            Policy::Random => sample_index(market_size, &mut rng),
        };
        records.push(ChoiceRecord {
            condition,
            popularity,
            ratings,
            chosen,
        });
    }
    Ok(records)
}

/// Runs the market simulator under fitted (or otherwise supplied) mixtures
/// and returns the chains and the per-generation phylogenetic-diversity
/// series per condition.
pub fn simulate_from_fit(
    fit: &FitResult,
    base_config: &ExperimentConfig,
    seed: u64,
) -> Result<(RunArtifacts, Vec<MetricPoint>)> {
    let mut config = base_config.clone();
    config.seed = seed;
    for condition in Condition::ALL {
        if let Some(condition_fit) = fit.fit_for(condition) {
            *config.mixtures.get_mut(condition) = condition_fit.mixture();
        }
    }
    let artifacts = run_market_experiment(&config)?;
    let series = phylo_diversity_series(&artifacts.chains, config.window)?;
    Ok((artifacts, series))
}
