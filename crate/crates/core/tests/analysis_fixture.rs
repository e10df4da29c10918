//! Analysis of a hand-written two-chain CSV fixture, checked against values
//! computed by hand.
//!
//! PI chain (pair 0): node 1 and node 2 both edit the seed, node 3 edits
//! node 1, so selection counts are [2, 1, 0, 0]. NPI chain: a straight line
//! of one-pixel edits, counts [1, 1, 1, 0].

use pixelmarkets::experiment::compute_metrics;
use pixelmarkets::io::formats::parse_chains_csv;

fn pixels(set: &[usize]) -> String {
    let mut digits = vec!['0'; 256];
    for &idx in set {
        digits[idx] = '1';
    }
    digits.into_iter().collect()
}

fn fixture_csv() -> String {
    let mut rows = vec![
        "chain_id,pair_id,condition,generation,node_id,parent_id,selection_count,pixels".to_string(),
    ];
    // PI chain 0: branching lineage.
    rows.push(format!("0,0,PI,0,0,,2,{}", pixels(&[])));
    rows.push(format!("0,0,PI,1,1,0,1,{}", pixels(&[0])));
    rows.push(format!("0,0,PI,2,2,0,0,{}", pixels(&[1])));
    rows.push(format!("0,0,PI,3,3,1,0,{}", pixels(&[0, 2, 3])));
    // NPI chain 1: straight line.
    rows.push(format!("1,0,NPI,0,10,,1,{}", pixels(&[])));
    rows.push(format!("1,0,NPI,1,11,10,1,{}", pixels(&[0])));
    rows.push(format!("1,0,NPI,2,12,11,1,{}", pixels(&[0, 1])));
    rows.push(format!("1,0,NPI,3,13,12,0,{}", pixels(&[0, 1, 2])));
    rows.join("\n") + "\n"
}

fn point(bundle: &pixelmarkets::experiment::MetricsBundle, metric: &str, condition: &str, index: u32) -> f64 {
    bundle
        .points
        .iter()
        .find(|p| p.metric == metric && p.condition == condition && p.index == index)
        .unwrap_or_else(|| panic!("missing {metric}/{condition}/{index}"))
        .value
}

#[test]
fn fixture_metrics_match_hand_computations() {
    let chains = parse_chains_csv(&fixture_csv()).unwrap();
    assert_eq!(chains.len(), 2);
    let bundle = compute_metrics(&chains, 12, 100, 1, None).unwrap();

    // Gini of [2,1,0,0] = 7/12; of [1,1,1,0] = 1/4.
    assert!((bundle.gini.g_pi - 7.0 / 12.0).abs() < 1e-12, "PI {}", bundle.gini.g_pi);
    assert!((bundle.gini.g_npi - 0.25).abs() < 1e-12, "NPI {}", bundle.gini.g_npi);

    // PI hamming diversity: g=2 market {seed, node1} -> 1/256; g=3 market
    // {node2, node1, seed} -> (2 + 1 + 1) / (3 * 256).
    assert!((point(&bundle, "diversity_hamming", "PI", 2) - 1.0 / 256.0).abs() < 1e-12);
    assert!((point(&bundle, "diversity_hamming", "PI", 3) - 4.0 / (3.0 * 256.0)).abs() < 1e-12);

    // PI phylogenetic diversity at g=3: siblings at distance 2, each one
    // edge from the seed -> mean 4/3.
    assert!((point(&bundle, "diversity_phylogenetic", "PI", 3) - 4.0 / 3.0).abs() < 1e-12);

    // NPI line: every market pair differs by its generation gap.
    // g=3 market {node12, node11, node10}: hamming (1 + 1 + 2)/(3*256).
    assert!((point(&bundle, "diversity_hamming", "NPI", 3) - 4.0 / (3.0 * 256.0)).abs() < 1e-12);
    // Phylogenetic distances on a line equal the generation gaps.
    assert!((point(&bundle, "diversity_phylogenetic", "NPI", 3) - 4.0 / 3.0).abs() < 1e-12);

    // Edit sizes: PI edits changed {1, 1, 2} pixels, NPI {1, 1, 1}.
    assert!((point(&bundle, "edit_size", "PI", 0) - 4.0 / 3.0).abs() < 1e-12);
    assert!((point(&bundle, "edit_size", "NPI", 0) - 1.0).abs() < 1e-12);
}
