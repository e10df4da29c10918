//! Images, chains, markets, and phylogeny bookkeeping.
//!
//! A chain is an isolated lineage: one new image per generation, each derived
//! from a predecessor picked out of a sliding market window. Selection counts
//! (popularity) are chain-local and never leak across chains.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Side length of the square pixel grid.
pub const GRID_SIDE: usize = 16;
/// Number of pixels in an image.
pub const PIXEL_COUNT: usize = GRID_SIDE * GRID_SIDE;

/// A 16x16 binary raster stored as four 64-bit words, row-major.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PixelGrid {
    words: [u64; 4],
}

impl PixelGrid {
    pub fn empty() -> Self {
        PixelGrid::default()
    }

    pub fn full() -> Self {
        PixelGrid {
            words: [u64::MAX; 4],
        }
    }

    /// Each pixel set independently with probability `fill`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, fill: f64) -> Self {
        let mut grid = PixelGrid::empty();
        for idx in 0..PIXEL_COUNT {
            if rng.random::<f64>() < fill {
                grid.set(idx, true);
            }
        }
        grid
    }

    #[inline]
    pub fn get(&self, idx: usize) -> bool {
        debug_assert!(idx < PIXEL_COUNT);
        self.words[idx >> 6] >> (idx & 63) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, idx: usize, on: bool) {
        debug_assert!(idx < PIXEL_COUNT);
        let mask = 1u64 << (idx & 63);
        if on {
            self.words[idx >> 6] |= mask;
        } else {
            self.words[idx >> 6] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, idx: usize) {
        debug_assert!(idx < PIXEL_COUNT);
        self.words[idx >> 6] ^= 1u64 << (idx & 63);
    }

    #[inline]
    pub fn get_rc(&self, row: usize, col: usize) -> bool {
        self.get(row * GRID_SIDE + col)
    }

    #[inline]
    pub fn set_rc(&mut self, row: usize, col: usize, on: bool) {
        self.set(row * GRID_SIDE + col, on);
    }

    pub fn count_set(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Number of pixels that differ between the two grids.
    pub fn hamming(&self, other: &PixelGrid) -> u32 {
        self.words
            .iter()
            .zip(other.words.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    /// Indices of set pixels, ascending.
    pub fn set_indices(&self) -> Vec<usize> {
        (0..PIXEL_COUNT).filter(|&i| self.get(i)).collect()
    }

    /// Row-major string of 256 `0`/`1` digits.
    pub fn to_digits(&self) -> String {
        (0..PIXEL_COUNT)
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect()
    }

    pub fn from_digits(digits: &str) -> Result<Self> {
        if digits.len() != PIXEL_COUNT {
            return Err(Error::InvalidArgument(format!(
                "pixel string has {} characters, expected {PIXEL_COUNT}",
                digits.len()
            )));
        }
        let mut grid = PixelGrid::empty();
        for (i, ch) in digits.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => grid.set(i, true),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "pixel string contains `{other}` at position {i}"
                    )))
                }
            }
        }
        Ok(grid)
    }
}

impl fmt::Debug for PixelGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in 0..GRID_SIDE {
            for col in 0..GRID_SIDE {
                f.write_str(if self.get_rc(row, col) { "#" } else { "." })?;
            }
            f.write_str("\n")?;
        }
        Ok(())
    }
}

/// A pixel grid plus its experiment-wide id.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Image {
    pub id: u64,
    pub pixels: PixelGrid,
}

impl Image {
    pub fn new(id: u64, pixels: PixelGrid) -> Self {
        Image { id, pixels }
    }
}

/// Experimental condition: with or without popularity information.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash, PartialOrd, Ord)]
pub enum Condition {
    Pi,
    Npi,
}

impl Condition {
    pub const ALL: [Condition; 2] = [Condition::Pi, Condition::Npi];

    pub fn label(self) -> &'static str {
        match self {
            Condition::Pi => "PI",
            Condition::Npi => "NPI",
        }
    }

    pub fn parse(s: &str) -> Result<Condition> {
        match s {
            "PI" => Ok(Condition::Pi),
            "NPI" => Ok(Condition::Npi),
            other => Err(Error::InvalidArgument(format!(
                "unknown condition label `{other}`"
            ))),
        }
    }

    /// Popularity counts are shown during selection only under PI.
    pub fn shows_popularity(self) -> bool {
        matches!(self, Condition::Pi)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One generation of a chain.
#[derive(Clone, Debug)]
pub struct ChainNode {
    pub image: Image,
    pub generation: u32,
    /// Id of the selected ancestor; absent only for the generation-0 seed.
    pub parent: Option<u64>,
    /// Times this node was chosen as a parent by later generations.
    pub selection_count: u32,
}

/// A market entry as presented to the selecting agent.
#[derive(Clone, Debug)]
pub struct MarketEntry {
    pub node_id: u64,
    pub image: Image,
    /// Present under PI, hidden under NPI.
    pub popularity: Option<u32>,
}

/// The at-most-`window` most recent images visible at generation `generation`.
#[derive(Clone, Debug)]
pub struct MarketView {
    pub entries: Vec<MarketEntry>,
    pub generation: u32,
    pub window: u32,
}

impl MarketView {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn popularity_visible(&self) -> bool {
        self.entries.iter().all(|e| e.popularity.is_some())
    }

    pub fn node_ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.node_id).collect()
    }
}

/// An isolated lineage of images, one per generation.
#[derive(Clone, Debug)]
pub struct Chain {
    pub chain_id: u32,
    pub pair_id: u32,
    pub condition: Condition,
    pub seed: u64,
    nodes: Vec<ChainNode>,
}

impl Chain {
    pub fn new(chain_id: u32, pair_id: u32, condition: Condition, seed: u64, seed_image: Image) -> Self {
        Chain {
            chain_id,
            pair_id,
            condition,
            seed,
            nodes: vec![ChainNode {
                image: seed_image,
                generation: 0,
                parent: None,
                selection_count: 0,
            }],
        }
    }

    /// Rebuilds a chain from already-validated nodes (CSV import path).
    pub(crate) fn from_nodes(
        chain_id: u32,
        pair_id: u32,
        condition: Condition,
        seed: u64,
        nodes: Vec<ChainNode>,
    ) -> Self {
        Chain {
            chain_id,
            pair_id,
            condition,
            seed,
            nodes,
        }
    }

    pub fn nodes(&self) -> &[ChainNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: u64) -> Option<&ChainNode> {
        self.nodes.iter().find(|n| n.image.id == id)
    }

    pub fn last(&self) -> &ChainNode {
        self.nodes.last().expect("chain holds at least the seed")
    }

    /// The market an agent observes at generation `g`: nodes with generations
    /// in `[max(0, g - window), g - 1]`, newest first. Popularity fields are
    /// populated iff `show_popularity`, frozen at their current values.
    pub fn market_window(&self, g: u32, window: u32, show_popularity: bool) -> Result<MarketView> {
        if g == 0 {
            return Err(Error::InvalidArgument(
                "no market exists at generation 0".into(),
            ));
        }
        if g as usize > self.nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "generation {g} exceeds chain length {}",
                self.nodes.len()
            )));
        }
        if window == 0 {
            return Err(Error::InvalidArgument("window must be at least 1".into()));
        }
        let oldest = g.saturating_sub(window);
        let entries = (oldest..g)
            .rev()
            .map(|gen| {
                let node = &self.nodes[gen as usize];
                MarketEntry {
                    node_id: node.image.id,
                    image: node.image,
                    popularity: show_popularity.then_some(node.selection_count),
                }
            })
            .collect();
        Ok(MarketView {
            entries,
            generation: g,
            window,
        })
    }

    /// Commits one generation: appends `child` as generation `g` with
    /// `parent_id` as ancestor and increments the parent's selection count.
    ///
    /// The parent must be inside the generation-`g` market and the edit must
    /// change between 1 and 24 pixels.
    pub fn record_choice(&mut self, g: u32, parent_id: u64, child: Image, window: u32) -> Result<()> {
        if g as usize != self.nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "generation {g} cannot be committed; next generation is {}",
                self.nodes.len()
            )));
        }
        let view = self.market_window(g, window, false)?;
        let parent = view
            .entries
            .iter()
            .find(|e| e.node_id == parent_id)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "node {parent_id} is not in the generation-{g} market"
                ))
            })?;
        let edits = parent.image.pixels.hamming(&child.pixels);
        if !(1..=24).contains(&edits) {
            return Err(Error::ConstraintViolation(format!(
                "edit changes {edits} pixels, outside [1, 24]"
            )));
        }
        if self.node(child.id).is_some() {
            return Err(Error::InvalidArgument(format!(
                "image id {} already exists in chain {}",
                child.id, self.chain_id
            )));
        }
        let parent_idx = self
            .nodes
            .iter()
            .position(|n| n.image.id == parent_id)
            .expect("parent came from the window");
        self.nodes[parent_idx].selection_count += 1;
        self.nodes.push(ChainNode {
            image: child,
            generation: g,
            parent: Some(parent_id),
            selection_count: 0,
        });
        Ok(())
    }

    /// Number of edges on the unique tree path between two nodes.
    pub fn phylo_distance(&self, id_a: u64, id_b: u64) -> Result<u32> {
        let path_a = self.path_to_root(id_a)?;
        if id_a == id_b {
            return Ok(0);
        }
        let mut steps_b = 0u32;
        let mut cursor = Some(id_b);
        while let Some(id) = cursor {
            if let Some(depth_a) = path_a.iter().position(|&x| x == id) {
                return Ok(depth_a as u32 + steps_b);
            }
            cursor = self
                .node(id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown node id {id}")))?
                .parent;
            steps_b += 1;
        }
        // Both nodes live in the same chain, so the walk always meets the
        // root before running out of parents.
        Err(Error::Internal(format!(
            "nodes {id_a} and {id_b} share no ancestor in chain {}",
            self.chain_id
        )))
    }

    fn path_to_root(&self, id: u64) -> Result<Vec<u64>> {
        let mut path = Vec::new();
        let mut cursor = Some(id);
        while let Some(current) = cursor {
            let node = self
                .node(current)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown node id {current}")))?;
            path.push(current);
            cursor = node.parent;
        }
        Ok(path)
    }

    /// Newick serialization with `n<node_id>` labels and unit branch lengths.
    pub fn to_newick(&self) -> String {
        let mut children: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        let mut root = None;
        for node in &self.nodes {
            match node.parent {
                Some(parent) => children.entry(parent).or_default().push(node.image.id),
                None => root = Some(node.image.id),
            }
        }
        let root = root.expect("chain holds a generation-0 seed");
        let mut out = String::new();
        write_newick(root, &children, &mut out);
        out.push(';');
        out
    }

    /// Total selections recorded across the chain; equals the number of
    /// committed generations.
    pub fn total_selections(&self) -> u32 {
        self.nodes.iter().map(|n| n.selection_count).sum()
    }
}

fn write_newick(id: u64, children: &BTreeMap<u64, Vec<u64>>, out: &mut String) {
    if let Some(kids) = children.get(&id) {
        out.push('(');
        for (i, &kid) in kids.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write_newick(kid, children, out);
            out.push_str(":1");
        }
        out.push(')');
    }
    out.push('n');
    out.push_str(&id.to_string());
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed_chain() -> Chain {
        Chain::new(0, 0, Condition::Pi, 1, Image::new(0, PixelGrid::empty()))
    }

    /// Linear chain: each generation edits the previous node by one pixel.
    fn linear_chain(generations: u32) -> Chain {
        let mut chain = seed_chain();
        for g in 1..=generations {
            let parent = chain.last().image;
            let mut pixels = parent.pixels;
            pixels.flip((g as usize - 1) % PIXEL_COUNT);
            chain
                .record_choice(g, parent.id, Image::new(g as u64, pixels), 12)
                .unwrap();
        }
        chain
    }

    #[test]
    fn window_on_seed_only_chain() {
        let chain = seed_chain();
        let view = chain.market_window(1, 12, true).unwrap();
        assert_eq!(view.len(), 1);
        assert_eq!(view.entries[0].node_id, 0);
        assert_eq!(view.entries[0].popularity, Some(0));
    }

    #[test]
    fn window_excludes_seed_once_full() {
        let chain = linear_chain(60);
        assert_eq!(chain.len(), 61);
        let view = chain.market_window(13, 12, false).unwrap();
        let gens: Vec<u32> = view
            .entries
            .iter()
            .map(|e| chain.node(e.node_id).unwrap().generation)
            .collect();
        assert_eq!(gens, (1..=12).rev().collect::<Vec<_>>());
    }

    #[test]
    fn window_is_short_in_early_generations() {
        let chain = linear_chain(60);
        let view = chain.market_window(5, 12, false).unwrap();
        let gens: Vec<u32> = view
            .entries
            .iter()
            .map(|e| chain.node(e.node_id).unwrap().generation)
            .collect();
        assert_eq!(gens, vec![4, 3, 2, 1, 0]);
    }

    #[test]
    fn window_rejects_generation_zero() {
        let chain = seed_chain();
        assert!(matches!(
            chain.market_window(0, 12, false),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn record_choice_accepts_minimum_edit_and_counts_it() {
        let mut chain = seed_chain();
        let mut pixels = PixelGrid::empty();
        pixels.flip(0);
        chain
            .record_choice(1, 0, Image::new(1, pixels), 12)
            .unwrap();
        assert_eq!(chain.node(0).unwrap().selection_count, 1);
        assert_eq!(chain.node(1).unwrap().parent, Some(0));
    }

    #[test]
    fn record_choice_rejects_zero_edit() {
        let mut chain = seed_chain();
        let err = chain
            .record_choice(1, 0, Image::new(1, PixelGrid::empty()), 12)
            .unwrap_err();
        assert!(matches!(err, Error::ConstraintViolation(_)));
    }

    #[test]
    fn record_choice_rejects_25_pixel_edit() {
        let mut chain = seed_chain();
        let mut pixels = PixelGrid::empty();
        for i in 0..25 {
            pixels.flip(i);
        }
        let err = chain
            .record_choice(1, 0, Image::new(1, pixels), 12)
            .unwrap_err();
        assert!(matches!(err, Error::ConstraintViolation(_)));
    }

    #[test]
    fn record_choice_rejects_parent_outside_window() {
        let mut chain = linear_chain(13);
        // Seed (gen 0) has already aged out of the window at g = 14.
        let mut pixels = chain.node(0).unwrap().image.pixels;
        pixels.flip(200);
        let err = chain
            .record_choice(14, 0, Image::new(99, pixels), 12)
            .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn selection_counts_sum_to_committed_generations() {
        let chain = linear_chain(17);
        assert_eq!(chain.total_selections(), 17);
    }

    #[test]
    fn phylo_distance_identity_edge_and_siblings() {
        let mut chain = seed_chain();
        let mut a = PixelGrid::empty();
        a.flip(0);
        chain.record_choice(1, 0, Image::new(1, a), 12).unwrap();
        let mut b = PixelGrid::empty();
        b.flip(1);
        chain.record_choice(2, 0, Image::new(2, b), 12).unwrap();

        assert_eq!(chain.phylo_distance(1, 1).unwrap(), 0);
        assert_eq!(chain.phylo_distance(0, 1).unwrap(), 1);
        assert_eq!(chain.phylo_distance(1, 2).unwrap(), 2);
        assert!(chain.phylo_distance(1, 99).is_err());
    }

    #[test]
    fn newick_serializes_branching_lineage() {
        let mut chain = seed_chain();
        let mut a = PixelGrid::empty();
        a.flip(0);
        chain.record_choice(1, 0, Image::new(1, a), 12).unwrap();
        let mut b = PixelGrid::empty();
        b.flip(1);
        chain.record_choice(2, 0, Image::new(2, b), 12).unwrap();
        let mut c = b;
        c.flip(2);
        chain.record_choice(3, 2, Image::new(3, c), 12).unwrap();

        assert_eq!(chain.to_newick(), "(n1:1,(n3:1)n2:1)n0;");
    }

    #[test]
    fn pixel_digits_round_trip() {
        let mut rng = crate::rng::RngLedger::new(3).stream("pixels", 0);
        for _ in 0..50 {
            let grid = PixelGrid::random(&mut rng, 0.5);
            assert_eq!(PixelGrid::from_digits(&grid.to_digits()).unwrap(), grid);
        }
    }
}
