//! Editing strategies: stochastic operators that derive a child image from a
//! selected parent while always changing between 1 and 24 pixels.
//!
//! Operators that cannot act on a degenerate parent (blank grid, saturated
//! grid) fall back along addition -> pattern growth -> refinement, so every
//! call yields a legal edit.

use rand::Rng;

use crate::chain::{Chain, Condition, PixelGrid, GRID_SIDE, PIXEL_COUNT};
use crate::error::{Error, Result};
use crate::rng::{sample_categorical, sample_distinct, sample_index};

/// The five editing strategies, in profile-weight order.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum EditStrategy {
    Disruption,
    Addition,
    PatternGrowth,
    Removal,
    Refinement,
}

impl EditStrategy {
    pub const ALL: [EditStrategy; 5] = [
        EditStrategy::Disruption,
        EditStrategy::Addition,
        EditStrategy::PatternGrowth,
        EditStrategy::Removal,
        EditStrategy::Refinement,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EditStrategy::Disruption => "disruption",
            EditStrategy::Addition => "addition",
            EditStrategy::PatternGrowth => "pattern_growth",
            EditStrategy::Removal => "removal",
            EditStrategy::Refinement => "refinement",
        }
    }

    pub fn parse(s: &str) -> Result<EditStrategy> {
        EditStrategy::ALL
            .into_iter()
            .find(|e| e.label() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy label `{s}`")))
    }
}

/// Probabilities over the five strategies, one profile per condition.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct StrategyProfile {
    probs: [f64; 5],
}

impl StrategyProfile {
    pub fn new(probs: [f64; 5]) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument(
                "strategy probabilities must be finite and non-negative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument(
                "strategy probabilities must not all be zero".into(),
            ));
        }
        Ok(StrategyProfile {
            probs: probs.map(|p| p / total),
        })
    }

    /// Default PI profile. Chosen together with [`StrategyProfile::npi_default`]
    /// so the PI/NPI odds ratios are roughly 0.84 for disruption, 1.18 for
    /// pattern growth, and 0.82 for removal.
    pub fn pi_default() -> Self {
        StrategyProfile::new([0.17, 0.25, 0.23, 0.085, 0.265]).expect("static probs are valid")
    }

    pub fn npi_default() -> Self {
        StrategyProfile::new([0.20, 0.25, 0.20, 0.10, 0.25]).expect("static probs are valid")
    }

    pub fn default_for(condition: Condition) -> Self {
        match condition {
            Condition::Pi => StrategyProfile::pi_default(),
            Condition::Npi => StrategyProfile::npi_default(),
        }
    }

    pub fn probs(&self) -> [f64; 5] {
        self.probs
    }

    pub fn prob(&self, strategy: EditStrategy) -> f64 {
        self.probs[EditStrategy::ALL.iter().position(|s| *s == strategy).unwrap()]
    }
}

/// Categorical draw over the profile.
pub fn sample_strategy<R: Rng + ?Sized>(profile: &StrategyProfile, rng: &mut R) -> EditStrategy {
    EditStrategy::ALL[sample_categorical(&profile.probs(), rng)]
}

/// Applies a strategy to the parent, returning the child and the number of
/// changed pixels (always within `[1, 24]`).
pub fn apply_strategy<R: Rng + ?Sized>(
    parent: &PixelGrid,
    strategy: EditStrategy,
    rng: &mut R,
) -> (PixelGrid, u32) {
    match strategy {
        EditStrategy::Disruption => flip_random(parent, 16, 24, rng),
        EditStrategy::Refinement => flip_random(parent, 1, 4, rng),
        EditStrategy::PatternGrowth => pattern_growth(parent, rng),
        EditStrategy::Addition => addition(parent, rng),
        EditStrategy::Removal => removal(parent, rng),
    }
}

fn flip_random<R: Rng + ?Sized>(
    parent: &PixelGrid,
    lo: usize,
    hi: usize,
    rng: &mut R,
) -> (PixelGrid, u32) {
    let k = rng.random_range(lo..=hi);
    let mut child = *parent;
    for idx in sample_distinct(PIXEL_COUNT, k, rng) {
        child.flip(idx);
    }
    (child, k as u32)
}

fn neighbors4(idx: usize) -> impl Iterator<Item = usize> {
    let (row, col) = (idx / GRID_SIDE, idx % GRID_SIDE);
    [
        (row.wrapping_sub(1), col),
        (row + 1, col),
        (row, col.wrapping_sub(1)),
        (row, col + 1),
    ]
    .into_iter()
    .filter(|&(r, c)| r < GRID_SIDE && c < GRID_SIDE)
    .map(|(r, c)| r * GRID_SIDE + c)
}

/// Sets up to k in [4, 12] unset pixels, each 4-adjacent to a set pixel at
/// the moment it is placed, so growth extends existing features. Falls back
/// to refinement when nothing can grow (blank or saturated grid).
fn pattern_growth<R: Rng + ?Sized>(parent: &PixelGrid, rng: &mut R) -> (PixelGrid, u32) {
    let mut frontier: Vec<usize> = (0..PIXEL_COUNT)
        .filter(|&i| !parent.get(i) && neighbors4(i).any(|n| parent.get(n)))
        .collect();
    if frontier.is_empty() {
        return flip_random(parent, 1, 4, rng);
    }
    let k = rng.random_range(4..=12);
    let mut child = *parent;
    let mut grown = 0u32;
    while grown < k && !frontier.is_empty() {
        let pick = sample_index(frontier.len(), rng);
        let idx = frontier.swap_remove(pick);
        child.set(idx, true);
        grown += 1;
        for n in neighbors4(idx) {
            if !child.get(n) && !frontier.contains(&n) {
                frontier.push(n);
            }
        }
    }
    (child, grown)
}

/// Sets a fresh 2x2..3x3 block placed at Chebyshev distance >= 2 from every
/// set pixel; falls back to pattern growth when no placement exists.
fn addition<R: Rng + ?Sized>(parent: &PixelGrid, rng: &mut R) -> (PixelGrid, u32) {
    // Cells within Chebyshev distance 1 of any set pixel are off-limits.
    let mut blocked = *parent;
    for idx in parent.set_indices() {
        let (row, col) = (idx / GRID_SIDE, idx % GRID_SIDE);
        for r in row.saturating_sub(1)..=(row + 1).min(GRID_SIDE - 1) {
            for c in col.saturating_sub(1)..=(col + 1).min(GRID_SIDE - 1) {
                blocked.set(r * GRID_SIDE + c, true);
            }
        }
    }
    let sizes = [(2, 2), (2, 3), (3, 2), (3, 3)];
    let placements: Vec<Vec<(usize, usize)>> = sizes
        .iter()
        .map(|&(h, w)| {
            let mut spots = Vec::new();
            for row in 0..=(GRID_SIDE - h) {
                for col in 0..=(GRID_SIDE - w) {
                    let free = (0..h)
                        .all(|dr| (0..w).all(|dc| !blocked.get((row + dr) * GRID_SIDE + col + dc)));
                    if free {
                        spots.push((row, col));
                    }
                }
            }
            spots
        })
        .collect();
    let feasible: Vec<usize> = (0..sizes.len())
        .filter(|&s| !placements[s].is_empty())
        .collect();
    if feasible.is_empty() {
        return pattern_growth(parent, rng);
    }
    let s = feasible[sample_index(feasible.len(), rng)];
    let (h, w) = sizes[s];
    let (row, col) = placements[s][sample_index(placements[s].len(), rng)];
    let mut child = *parent;
    for dr in 0..h {
        for dc in 0..w {
            child.set((row + dr) * GRID_SIDE + col + dc, true);
        }
    }
    (child, (h * w) as u32)
}

/// Connected components of set pixels, 4-connectivity.
fn components(grid: &PixelGrid) -> Vec<Vec<usize>> {
    let mut seen = [false; PIXEL_COUNT];
    let mut comps = Vec::new();
    for start in 0..PIXEL_COUNT {
        if !grid.get(start) || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(idx) = stack.pop() {
            comp.push(idx);
            for n in neighbors4(idx) {
                if grid.get(n) && !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        comps.push(comp);
    }
    comps
}

/// Clears k in [4, 12] pixels from the boundary of a random connected
/// component. Falls back to refinement when fewer than 5 pixels are set or
/// the chosen component has no boundary (saturated grid).
fn removal<R: Rng + ?Sized>(parent: &PixelGrid, rng: &mut R) -> (PixelGrid, u32) {
    if parent.count_set() < 5 {
        return flip_random(parent, 1, 4, rng);
    }
    let comps = components(parent);
    let comp = &comps[sample_index(comps.len(), rng)];
    let boundary: Vec<usize> = comp
        .iter()
        .copied()
        .filter(|&i| neighbors4(i).any(|n| !parent.get(n)))
        .collect();
    if boundary.is_empty() {
        return flip_random(parent, 1, 4, rng);
    }
    let k = rng.random_range(4..=12).min(boundary.len());
    let mut child = *parent;
    for &offset in sample_distinct(boundary.len(), k, rng).iter() {
        child.set(boundary[offset], false);
    }
    (child, k as u32)
}

/// Per-condition mean and standard error of parent-to-child edit sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct EditSizeStats {
    pub condition: Condition,
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

/// Edit magnitudes recomputed directly from chains (pixels changed between
/// each node and its parent).
pub fn edit_size_stats(chains: &[Chain]) -> Vec<EditSizeStats> {
    Condition::ALL
        .iter()
        .filter_map(|&condition| {
            let sizes: Vec<f64> = chains
                .iter()
                .filter(|c| c.condition == condition)
                .flat_map(|c| {
                    c.nodes().iter().filter_map(|node| {
                        let parent = node.parent?;
                        let parent_pixels = c.node(parent)?.image.pixels;
                        Some(node.image.pixels.hamming(&parent_pixels) as f64)
                    })
                })
                .collect();
            if sizes.is_empty() {
                return None;
            }
            let n = sizes.len();
            let mean = sizes.iter().sum::<f64>() / n as f64;
            let se = if n > 1 {
                let var =
                    sizes.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
                (var / n as f64).sqrt()
            } else {
                0.0
            };
            Some(EditSizeStats {
                condition,
                mean,
                se,
                n,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Image;
    use crate::rng::RngLedger;

    fn single_pixel_grid(idx: usize) -> PixelGrid {
        let mut g = PixelGrid::empty();
        g.set(idx, true);
        g
    }

    #[test]
    fn growth_on_blank_grid_falls_back_to_refinement() {
        let mut rng = RngLedger::new(1).stream("creation", 0);
        for _ in 0..200 {
            let (child, changed) =
                apply_strategy(&PixelGrid::empty(), EditStrategy::PatternGrowth, &mut rng);
            assert!((1..=4).contains(&changed));
            assert_eq!(child.hamming(&PixelGrid::empty()), changed);
        }
    }

    #[test]
    fn growth_extends_from_a_single_pixel() {
        let mut rng = RngLedger::new(2).stream("creation", 0);
        let parent = single_pixel_grid(5 * GRID_SIDE + 5);
        for _ in 0..200 {
            let (child, changed) = apply_strategy(&parent, EditStrategy::PatternGrowth, &mut rng);
            assert!((4..=12).contains(&changed));
            // Growth never clears, and every new pixel connects to the
            // original component.
            assert!(child.get(5 * GRID_SIDE + 5));
            assert_eq!(child.count_set(), 1 + changed);
            assert_eq!(components(&child).len(), 1);
        }
    }

    #[test]
    fn disruption_changes_16_to_24_pixels() {
        let mut rng = RngLedger::new(3).stream("creation", 0);
        for i in 0..200 {
            let parent = PixelGrid::random(&mut rng, (i % 10) as f64 / 10.0);
            let (child, changed) = apply_strategy(&parent, EditStrategy::Disruption, &mut rng);
            assert!((16..=24).contains(&changed));
            assert_eq!(parent.hamming(&child), changed);
        }
    }

    #[test]
    fn addition_keeps_chebyshev_clearance() {
        let mut rng = RngLedger::new(4).stream("creation", 0);
        let parent = single_pixel_grid(0);
        for _ in 0..200 {
            let (child, changed) = apply_strategy(&parent, EditStrategy::Addition, &mut rng);
            assert!((4..=9).contains(&changed));
            // No new pixel 8-adjacent to (or on top of) the existing one.
            for idx in child.set_indices() {
                if idx == 0 {
                    continue;
                }
                let (r, c) = (idx / GRID_SIDE, idx % GRID_SIDE);
                assert!(r.max(c) >= 2, "pixel ({r},{c}) too close to origin");
            }
        }
    }

    #[test]
    fn addition_on_crowded_grid_falls_back() {
        let mut rng = RngLedger::new(5).stream("creation", 0);
        // Saturate every third row/column so no 2x2 block has clearance.
        let mut parent = PixelGrid::empty();
        for row in (0..GRID_SIDE).step_by(3) {
            for col in 0..GRID_SIDE {
                parent.set_rc(row, col, true);
            }
        }
        for _ in 0..100 {
            let (child, changed) = apply_strategy(&parent, EditStrategy::Addition, &mut rng);
            assert!((1..=24).contains(&changed));
            assert_eq!(parent.hamming(&child), changed);
        }
    }

    #[test]
    fn removal_clears_only_boundary_pixels() {
        let mut rng = RngLedger::new(6).stream("creation", 0);
        // 6x6 block: boundary is its 20-pixel rim.
        let mut parent = PixelGrid::empty();
        for r in 4..10 {
            for c in 4..10 {
                parent.set_rc(r, c, true);
            }
        }
        for _ in 0..200 {
            let (child, changed) = apply_strategy(&parent, EditStrategy::Removal, &mut rng);
            assert!((4..=12).contains(&changed));
            for idx in 0..PIXEL_COUNT {
                if parent.get(idx) && !child.get(idx) {
                    assert!(
                        neighbors4(idx).any(|n| !parent.get(n)),
                        "cleared interior pixel {idx}"
                    );
                }
                // Removal never sets.
                assert!(!(!parent.get(idx) && child.get(idx)));
            }
        }
    }

    #[test]
    fn removal_on_sparse_grid_falls_back() {
        let mut rng = RngLedger::new(7).stream("creation", 0);
        let parent = single_pixel_grid(100);
        for _ in 0..100 {
            let (_, changed) = apply_strategy(&parent, EditStrategy::Removal, &mut rng);
            assert!((1..=4).contains(&changed));
        }
    }

    #[test]
    fn every_strategy_respects_edit_bounds_on_degenerate_grids() {
        let mut rng = RngLedger::new(8).stream("creation", 0);
        for parent in [PixelGrid::empty(), PixelGrid::full()] {
            for strategy in EditStrategy::ALL {
                for _ in 0..100 {
                    let (child, changed) = apply_strategy(&parent, strategy, &mut rng);
                    assert!(
                        (1..=24).contains(&changed),
                        "{strategy:?} changed {changed} pixels"
                    );
                    assert_eq!(parent.hamming(&child), changed);
                }
            }
        }
    }

    #[test]
    fn degenerate_profile_always_yields_disruption() {
        let profile = StrategyProfile::new([1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let mut rng = RngLedger::new(9).stream("creation", 0);
        for _ in 0..100 {
            assert_eq!(sample_strategy(&profile, &mut rng), EditStrategy::Disruption);
        }
    }

    #[test]
    fn uniform_profile_frequencies() {
        let profile = StrategyProfile::new([0.2; 5]).unwrap();
        let mut rng = RngLedger::new(10).stream("creation", 0);
        let n = 100_000;
        let mut counts = [0u32; 5];
        for _ in 0..n {
            let s = sample_strategy(&profile, &mut rng);
            counts[EditStrategy::ALL.iter().position(|x| *x == s).unwrap()] += 1;
        }
        for &c in &counts {
            assert!((c as f64 / n as f64 - 0.2).abs() < 0.01);
        }
    }

    #[test]
    fn empirical_disruption_odds_ratio_matches_profiles() {
        let pi = StrategyProfile::pi_default();
        let npi = StrategyProfile::npi_default();
        let configured_or = (pi.prob(EditStrategy::Disruption)
            / (1.0 - pi.prob(EditStrategy::Disruption)))
            / (npi.prob(EditStrategy::Disruption) / (1.0 - npi.prob(EditStrategy::Disruption)));
        let mut rng = RngLedger::new(11).stream("creation", 0);
        let n = 100_000;
        let mut hits_pi = 0u32;
        let mut hits_npi = 0u32;
        for _ in 0..n {
            if sample_strategy(&pi, &mut rng) == EditStrategy::Disruption {
                hits_pi += 1;
            }
            if sample_strategy(&npi, &mut rng) == EditStrategy::Disruption {
                hits_npi += 1;
            }
        }
        let p1 = hits_pi as f64 / n as f64;
        let p2 = hits_npi as f64 / n as f64;
        let empirical_or = (p1 / (1.0 - p1)) / (p2 / (1.0 - p2));
        assert!(
            (empirical_or - configured_or).abs() / configured_or < 0.05,
            "empirical OR {empirical_or}, configured {configured_or}"
        );
    }

    #[test]
    fn edit_size_stats_match_hand_computation() {
        let seed = Image::new(0, PixelGrid::empty());
        let mut chain = Chain::new(0, 0, Condition::Pi, 1, seed);
        let mut two = PixelGrid::empty();
        two.flip(0);
        two.flip(1);
        chain.record_choice(1, 0, Image::new(1, two), 12).unwrap();
        let mut six = two;
        for i in 2..6 {
            six.flip(i);
        }
        chain.record_choice(2, 1, Image::new(2, six), 12).unwrap();

        let stats = edit_size_stats(&[chain]);
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].condition, Condition::Pi);
        assert!((stats[0].mean - 3.0).abs() < 1e-12);
        assert_eq!(stats[0].n, 2);
    }

    #[test]
    fn uniform_edit_sizes_have_zero_se() {
        let seed = Image::new(0, PixelGrid::empty());
        let mut chain = Chain::new(0, 0, Condition::Npi, 1, seed);
        let mut prev = PixelGrid::empty();
        for g in 1..=5 {
            let mut next = prev;
            next.flip(g as usize);
            chain
                .record_choice(g, (g - 1) as u64, Image::new(g as u64, next), 12)
                .unwrap();
            prev = next;
        }
        let stats = edit_size_stats(&[chain]);
        assert!((stats[0].mean - 1.0).abs() < 1e-12);
        assert!(stats[0].se.abs() < 1e-12);
    }
}
