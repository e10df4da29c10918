//! Selection policies and their mixture.
//!
//! Four policies turn a market view into a chosen node: image-driven
//! (softmax over latent utilities), cumulative advantage (argmax popularity),
//! balancing (argmin popularity), and uniformly random. A `PolicyMixture`
//! draws one policy per selection and delegates.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;

use crate::chain::{Condition, MarketView};
use crate::error::{Error, Result};
use crate::rng::{sample_categorical, sample_index};

/// Number of latent utility criteria per image.
pub const CRITERIA: usize = 4;
/// Criterion labels, in storage order.
pub const CRITERION_LABELS: [&str; CRITERIA] =
    ["appeal", "editing_potential", "originality", "recognizability"];

/// The four selection policies, in mixture-weight order.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum Policy {
    ImageDriven,
    CumulativeAdvantage,
    Balancing,
    Random,
}

impl Policy {
    pub const ALL: [Policy; 4] = [
        Policy::ImageDriven,
        Policy::CumulativeAdvantage,
        Policy::Balancing,
        Policy::Random,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Policy::ImageDriven => "image_driven",
            Policy::CumulativeAdvantage => "cumulative_advantage",
            Policy::Balancing => "balancing",
            Policy::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Policy> {
        Policy::ALL
            .into_iter()
            .find(|p| p.label() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown policy label `{s}`")))
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// How the cumulative-advantage policy treats popularity: choose uniformly
/// among the most popular entries, or proportionally to counts.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum AttachmentMode {
    #[default]
    Argmax,
    Proportional,
}

/// Non-negative weights over the four policies, normalized to sum to one.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct PolicyMixture {
    weights: [f64; 4],
}

impl PolicyMixture {
    pub fn new(weights: [f64; 4]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(
                "policy weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument(
                "policy weights must not all be zero".into(),
            ));
        }
        Ok(PolicyMixture {
            weights: weights.map(|w| w / total),
        })
    }

    /// Default PI mixture: image-driven 0.50, cumulative advantage 0.25,
    /// balancing 0, random 0.25.
    pub fn pi_default() -> Self {
        PolicyMixture::new([0.50, 0.25, 0.0, 0.25]).expect("static weights are valid")
    }

    /// Default NPI mixture: image-driven 0.50, random 0.50. Popularity-based
    /// policies are unobservable without popularity information.
    pub fn npi_default() -> Self {
        PolicyMixture::new([0.50, 0.0, 0.0, 0.50]).expect("static weights are valid")
    }

    pub fn default_for(condition: Condition) -> Self {
        match condition {
            Condition::Pi => PolicyMixture::pi_default(),
            Condition::Npi => PolicyMixture::npi_default(),
        }
    }

    pub fn weights(&self) -> [f64; 4] {
        self.weights
    }

    pub fn weight(&self, policy: Policy) -> f64 {
        self.weights[Policy::ALL.iter().position(|p| *p == policy).unwrap()]
    }

    /// Popularity-dependent weights must be zero when popularity is hidden.
    pub fn validate_for(&self, condition: Condition) -> Result<()> {
        if condition == Condition::Npi
            && (self.weight(Policy::CumulativeAdvantage) > 0.0
                || self.weight(Policy::Balancing) > 0.0)
        {
            return Err(Error::InvalidArgument(
                "popularity-dependent policy weights must be zero under NPI".into(),
            ));
        }
        Ok(())
    }
}

/// Latent utility model: per-criterion coefficients and per-image scores.
#[derive(Clone, Debug)]
pub struct UtilityModel {
    beta: [f64; CRITERIA],
    scores: HashMap<u64, [f64; CRITERIA]>,
}

impl UtilityModel {
    pub fn new(beta: [f64; CRITERIA]) -> Self {
        UtilityModel {
            beta,
            scores: HashMap::new(),
        }
    }

    pub fn beta(&self) -> [f64; CRITERIA] {
        self.beta
    }

    pub fn insert_scores(&mut self, image_id: u64, scores: [f64; CRITERIA]) {
        self.scores.insert(image_id, scores);
    }

    pub fn scores(&self, image_id: u64) -> Option<&[f64; CRITERIA]> {
        self.scores.get(&image_id)
    }

    /// Combined utility `u = sum_c beta_c * u_ic`, if scores are known.
    pub fn utility(&self, image_id: u64) -> Option<f64> {
        self.scores.get(&image_id).map(|s| {
            s.iter()
                .zip(self.beta.iter())
                .map(|(score, beta)| score * beta)
                .sum()
        })
    }
}

/// Softmax with max-subtraction; order-preserving and overflow-safe.
pub fn softmax_probs(utilities: &[f64]) -> Result<Vec<f64>> {
    if utilities.is_empty() {
        return Err(Error::InvalidArgument(
            "softmax requires at least one utility".into(),
        ));
    }
    if utilities.iter().any(|u| !u.is_finite()) {
        return Err(Error::InvalidArgument(
            "softmax requires finite utilities".into(),
        ));
    }
    let max = utilities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = utilities.iter().map(|u| (u - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Samples an entry from `softmax(u)` over the window's combined utilities.
pub fn image_driven_select<R: Rng + ?Sized>(
    view: &MarketView,
    model: &UtilityModel,
    rng: &mut R,
) -> Result<u64> {
    let utilities = view
        .entries
        .iter()
        .map(|e| {
            model.utility(e.node_id).ok_or_else(|| {
                Error::InvalidArgument(format!("no criterion scores for node {}", e.node_id))
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let probs = softmax_probs(&utilities)?;
    let k = sample_categorical(&probs, rng);
    Ok(view.entries[k].node_id)
}

fn visible_popularity(view: &MarketView) -> Result<Vec<u32>> {
    view.entries
        .iter()
        .map(|e| {
            e.popularity.ok_or_else(|| {
                Error::PolicyUnavailable(
                    "popularity is hidden in this view; redraw the policy".into(),
                )
            })
        })
        .collect()
}

/// Uniformly random member of the most-popular set.
pub fn cumulative_advantage_select<R: Rng + ?Sized>(
    view: &MarketView,
    rng: &mut R,
) -> Result<u64> {
    let pops = visible_popularity(view)?;
    let best = *pops.iter().max().expect("view is non-empty");
    let leaders: Vec<usize> = (0..pops.len()).filter(|&i| pops[i] == best).collect();
    Ok(view.entries[leaders[sample_index(leaders.len(), rng)]].node_id)
}

/// Popularity-proportional variant of cumulative advantage; falls back to
/// uniform when every count is zero.
pub fn cumulative_advantage_select_proportional<R: Rng + ?Sized>(
    view: &MarketView,
    rng: &mut R,
) -> Result<u64> {
    let pops = visible_popularity(view)?;
    let total: u64 = pops.iter().map(|&p| p as u64).sum();
    if total == 0 {
        return random_select(view, rng);
    }
    let weights: Vec<f64> = pops.iter().map(|&p| p as f64 / total as f64).collect();
    let k = sample_categorical(&weights, rng);
    Ok(view.entries[k].node_id)
}

/// Uniformly random member of the least-popular set.
pub fn balancing_select<R: Rng + ?Sized>(view: &MarketView, rng: &mut R) -> Result<u64> {
    let pops = visible_popularity(view)?;
    let worst = *pops.iter().min().expect("view is non-empty");
    let trailers: Vec<usize> = (0..pops.len()).filter(|&i| pops[i] == worst).collect();
    Ok(view.entries[trailers[sample_index(trailers.len(), rng)]].node_id)
}

/// Uniform draw over the window.
pub fn random_select<R: Rng + ?Sized>(view: &MarketView, rng: &mut R) -> Result<u64> {
    if view.is_empty() {
        return Err(Error::InvalidArgument("market view is empty".into()));
    }
    Ok(view.entries[sample_index(view.len(), rng)].node_id)
}

/// Draws a policy from the mixture and delegates to it, returning both the
/// chosen node and the policy that fired (the label is the ground truth for
/// synthetic inference runs).
pub fn mixture_select<R: Rng + ?Sized>(
    view: &MarketView,
    mixture: &PolicyMixture,
    model: &UtilityModel,
    rng: &mut R,
) -> Result<(u64, Policy)> {
    mixture_select_with(view, mixture, model, AttachmentMode::Argmax, rng)
}

pub fn mixture_select_with<R: Rng + ?Sized>(
    view: &MarketView,
    mixture: &PolicyMixture,
    model: &UtilityModel,
    attachment: AttachmentMode,
    rng: &mut R,
) -> Result<(u64, Policy)> {
    let policy = Policy::ALL[sample_categorical(&mixture.weights(), rng)];
    let node = match policy {
        Policy::ImageDriven => image_driven_select(view, model, rng)?,
        Policy::CumulativeAdvantage => match attachment {
            AttachmentMode::Argmax => cumulative_advantage_select(view, rng)?,
            AttachmentMode::Proportional => {
                cumulative_advantage_select_proportional(view, rng)?
            }
        },
        Policy::Balancing => balancing_select(view, rng)?,
        Policy::Random => random_select(view, rng)?,
    };
    Ok((node, policy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{Image, MarketEntry, PixelGrid};
    use crate::rng::RngLedger;
    use approx::assert_relative_eq;

    fn view_with_popularity(pops: &[u32]) -> MarketView {
        let entries = pops
            .iter()
            .enumerate()
            .map(|(i, &p)| MarketEntry {
                node_id: i as u64,
                image: Image::new(i as u64, PixelGrid::empty()),
                popularity: Some(p),
            })
            .collect();
        MarketView {
            entries,
            generation: 1,
            window: 12,
        }
    }

    fn hidden_view(n: usize) -> MarketView {
        let entries = (0..n)
            .map(|i| MarketEntry {
                node_id: i as u64,
                image: Image::new(i as u64, PixelGrid::empty()),
                popularity: None,
            })
            .collect();
        MarketView {
            entries,
            generation: 1,
            window: 12,
        }
    }

    fn model_with_utilities(utilities: &[f64]) -> UtilityModel {
        let mut model = UtilityModel::new([1.0, 0.0, 0.0, 0.0]);
        for (i, &u) in utilities.iter().enumerate() {
            model.insert_scores(i as u64, [u, 0.0, 0.0, 0.0]);
        }
        model
    }

    #[test]
    fn softmax_of_equal_utilities_is_uniform() {
        let p = softmax_probs(&[0.0, 0.0, 0.0]).unwrap();
        for &x in &p {
            assert_relative_eq!(x, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn softmax_matches_hand_computation() {
        let p = softmax_probs(&[2.0_f64.ln(), 0.0]).unwrap();
        assert_relative_eq!(p[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(p[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn softmax_survives_huge_utilities() {
        let p = softmax_probs(&[1000.0, 0.0]).unwrap();
        assert!(p[0] > 1.0 - 1e-12);
        assert!(p[1] < 1e-12);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax_probs(&[]).is_err());
        assert!(softmax_probs(&[f64::NAN]).is_err());
        assert!(softmax_probs(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax_probs(&[0.3, -1.2, 2.0]).unwrap();
        let b = softmax_probs(&[100.3, 98.8, 102.0]).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn image_driven_single_entry_is_deterministic() {
        let view = view_with_popularity(&[0]);
        let model = model_with_utilities(&[0.7]);
        let mut rng = RngLedger::new(1).stream("test", 0);
        for _ in 0..20 {
            assert_eq!(image_driven_select(&view, &model, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn image_driven_frequencies_match_softmax() {
        let view = view_with_popularity(&[0, 0]);
        let model = model_with_utilities(&[9.0_f64.ln(), 0.0]);
        let mut rng = RngLedger::new(2).stream("test", 0);
        let n = 100_000;
        let mut hits = 0;
        for _ in 0..n {
            if image_driven_select(&view, &model, &mut rng).unwrap() == 0 {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.9).abs() < 0.01, "frequency {freq} not near 0.9");
    }

    #[test]
    fn image_driven_requires_scores() {
        let view = view_with_popularity(&[0, 0]);
        let model = model_with_utilities(&[0.0]); // entry 1 missing
        let mut rng = RngLedger::new(3).stream("test", 0);
        assert!(image_driven_select(&view, &model, &mut rng).is_err());
    }

    #[test]
    fn cumulative_advantage_picks_unique_leader() {
        let view = view_with_popularity(&[3, 1, 0]);
        let mut rng = RngLedger::new(4).stream("test", 0);
        for _ in 0..50 {
            assert_eq!(cumulative_advantage_select(&view, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn cumulative_advantage_splits_ties_evenly() {
        let view = view_with_popularity(&[2, 2, 0]);
        let mut rng = RngLedger::new(5).stream("test", 0);
        let n = 100_000;
        let mut first = 0;
        for _ in 0..n {
            match cumulative_advantage_select(&view, &mut rng).unwrap() {
                0 => first += 1,
                1 => {}
                other => panic!("chose non-leader {other}"),
            }
        }
        let freq = first as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.01);
    }

    #[test]
    fn cumulative_advantage_on_all_zero_counts_is_uniform() {
        let view = view_with_popularity(&[0, 0, 0, 0]);
        let mut rng = RngLedger::new(6).stream("test", 0);
        let n = 100_000;
        let mut counts = [0u32; 4];
        for _ in 0..n {
            counts[cumulative_advantage_select(&view, &mut rng).unwrap() as usize] += 1;
        }
        for &c in &counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn cumulative_advantage_needs_popularity() {
        let view = hidden_view(3);
        let mut rng = RngLedger::new(7).stream("test", 0);
        assert!(matches!(
            cumulative_advantage_select(&view, &mut rng),
            Err(Error::PolicyUnavailable(_))
        ));
    }

    #[test]
    fn balancing_mirrors_cumulative_advantage() {
        let view = view_with_popularity(&[3, 1, 0]);
        let mut rng = RngLedger::new(8).stream("test", 0);
        for _ in 0..50 {
            assert_eq!(balancing_select(&view, &mut rng).unwrap(), 2);
        }

        let tied = view_with_popularity(&[0, 0, 5]);
        let n = 100_000;
        let mut first = 0;
        for _ in 0..n {
            match balancing_select(&tied, &mut rng).unwrap() {
                0 => first += 1,
                1 => {}
                other => panic!("chose non-trailer {other}"),
            }
        }
        assert!((first as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn random_select_is_uniform_over_twelve() {
        let view = view_with_popularity(&[0; 12]);
        let mut rng = RngLedger::new(9).stream("test", 0);
        let n = 1_200_000;
        let mut counts = [0u32; 12];
        for _ in 0..n {
            counts[random_select(&view, &mut rng).unwrap() as usize] += 1;
        }
        for &c in &counts {
            assert!((c as f64 / n as f64 - 1.0 / 12.0).abs() < 0.005);
        }
    }

    #[test]
    fn degenerate_mixture_equals_image_driven() {
        let view = view_with_popularity(&[0, 0, 0]);
        let model = model_with_utilities(&[5.0, 0.0, 0.0]);
        let mixture = PolicyMixture::new([1.0, 0.0, 0.0, 0.0]).unwrap();
        let mut rng = RngLedger::new(10).stream("test", 0);
        for _ in 0..200 {
            let (_, policy) = mixture_select(&view, &mixture, &model, &mut rng).unwrap();
            assert_eq!(policy, Policy::ImageDriven);
        }
    }

    #[test]
    fn pure_cumulative_mixture_always_picks_a_leader() {
        let view = view_with_popularity(&[1, 4, 4]);
        let model = model_with_utilities(&[0.0, 0.0, 0.0]);
        let mixture = PolicyMixture::new([0.0, 1.0, 0.0, 0.0]).unwrap();
        let mut rng = RngLedger::new(11).stream("test", 0);
        for _ in 0..200 {
            let (node, policy) = mixture_select(&view, &mixture, &model, &mut rng).unwrap();
            assert_eq!(policy, Policy::CumulativeAdvantage);
            assert!(node == 1 || node == 2);
        }
    }

    #[test]
    fn mixture_policy_frequencies_match_weights() {
        let view = view_with_popularity(&[0, 1, 2]);
        let model = model_with_utilities(&[0.0, 0.0, 0.0]);
        let mixture = PolicyMixture::new([0.5, 0.25, 0.0, 0.25]).unwrap();
        let mut rng = RngLedger::new(12).stream("test", 0);
        let n = 100_000;
        let mut counts = [0u32; 4];
        for _ in 0..n {
            let (_, policy) = mixture_select(&view, &mixture, &model, &mut rng).unwrap();
            counts[Policy::ALL.iter().position(|p| *p == policy).unwrap()] += 1;
        }
        let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        for (freq, want) in freqs.iter().zip([0.5, 0.25, 0.0, 0.25]) {
            assert!((freq - want).abs() < 0.01, "freqs {freqs:?}");
        }
    }

    #[test]
    fn mixture_rejects_negative_weights_and_normalizes() {
        assert!(PolicyMixture::new([-0.1, 0.5, 0.3, 0.3]).is_err());
        assert!(PolicyMixture::new([0.0, 0.0, 0.0, 0.0]).is_err());
        let m = PolicyMixture::new([2.0, 1.0, 0.0, 1.0]).unwrap();
        assert_relative_eq!(m.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.weight(Policy::ImageDriven), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn npi_mixture_validation_rejects_popularity_weights() {
        let m = PolicyMixture::new([0.5, 0.25, 0.0, 0.25]).unwrap();
        assert!(m.validate_for(Condition::Npi).is_err());
        assert!(m.validate_for(Condition::Pi).is_ok());
        assert!(PolicyMixture::npi_default()
            .validate_for(Condition::Npi)
            .is_ok());
    }

    /// PI-default selections should land on more popular entries than
    /// NPI-default selections do on the same views.
    #[test]
    fn pi_defaults_prefer_popular_entries() {
        let mut rng = RngLedger::new(13).stream("test", 0);
        let model = model_with_utilities(&[0.0, 0.0, 0.0, 0.0, 0.0]);
        let pi = PolicyMixture::pi_default();
        let npi = PolicyMixture::npi_default();
        let view = view_with_popularity(&[4, 2, 1, 0, 0]);
        let n = 50_000;
        let (mut pop_pi, mut pop_npi) = (0u64, 0u64);
        for _ in 0..n {
            let (node, _) = mixture_select(&view, &pi, &model, &mut rng).unwrap();
            pop_pi += view.entries[node as usize].popularity.unwrap() as u64;
            let (node, _) = mixture_select(&view, &npi, &model, &mut rng).unwrap();
            pop_npi += view.entries[node as usize].popularity.unwrap() as u64;
        }
        assert!(
            pop_pi as f64 / n as f64 > pop_npi as f64 / n as f64,
            "expected PI mean popularity above NPI"
        );
    }
}
