//! Flat-file formats: CSV writers/readers, PBM images, Newick trees.
//!
//! Every writer is a deterministic function of its input: floats use the
//! shortest round-trip decimal form, lines end in LF, and no timestamps or
//! environment data appear anywhere.

use std::collections::BTreeMap;

use crate::chain::{Chain, ChainNode, Condition, Image, PixelGrid, GRID_SIDE};
use crate::error::{Error, Result};
use crate::experiment::{EditRecord, GiniReport, PairedTest};
use crate::fitness::FitnessSeries;
use crate::inference::{ChoiceRecord, FitResult};
use crate::metrics::{EmbeddingSource, EmbeddingTable, MetricPoint};
use crate::policies::Policy;

pub const CHAINS_HEADER: &str =
    "chain_id,pair_id,condition,generation,node_id,parent_id,selection_count,pixels";

/// One CSV row per node, ordered by chain then generation.
pub fn write_chains_csv(chains: &[Chain]) -> String {
    let mut out = String::from(CHAINS_HEADER);
    out.push('\n');
    for chain in chains {
        for node in chain.nodes() {
            let parent = node
                .parent
                .map(|p| p.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                chain.chain_id,
                chain.pair_id,
                chain.condition,
                node.generation,
                node.image.id,
                parent,
                node.selection_count,
                node.image.pixels.to_digits()
            ));
        }
    }
    out
}

/// Parses a chains CSV, validating structure per line: generations must be
/// contiguous from 0 within each chain, parents must exist at an earlier
/// generation of the same chain, and selection counts must equal the number
/// of children naming the node.
pub fn parse_chains_csv(text: &str) -> Result<Vec<Chain>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CHAINS_HEADER => {}
        Some((_, header)) => {
            return Err(Error::data_format(
                1,
                format!("unexpected header `{header}`"),
            ))
        }
        None => return Err(Error::data_format(1, "empty file")),
    }

    struct Row {
        line: usize,
        pair_id: u32,
        condition: Condition,
        generation: u32,
        node_id: u64,
        parent: Option<u64>,
        selection_count: u32,
        pixels: PixelGrid,
    }

    let mut grouped: BTreeMap<u32, Vec<Row>> = BTreeMap::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::data_format(
                line,
                format!("expected 8 fields, got {}", fields.len()),
            ));
        }
        let parse_u32 = |field: &str, name: &str| -> Result<u32> {
            field
                .parse()
                .map_err(|_| Error::data_format(line, format!("bad {name} `{field}`")))
        };
        let chain_id = parse_u32(fields[0], "chain_id")?;
        let row = Row {
            line,
            pair_id: parse_u32(fields[1], "pair_id")?,
            condition: Condition::parse(fields[2])
                .map_err(|e| Error::data_format(line, e.to_string()))?,
            generation: parse_u32(fields[3], "generation")?,
            node_id: fields[4]
                .parse()
                .map_err(|_| Error::data_format(line, format!("bad node_id `{}`", fields[4])))?,
            parent: if fields[5].is_empty() {
                None
            } else {
                Some(fields[5].parse().map_err(|_| {
                    Error::data_format(line, format!("bad parent_id `{}`", fields[5]))
                })?)
            },
            selection_count: parse_u32(fields[6], "selection_count")?,
            pixels: PixelGrid::from_digits(fields[7])
                .map_err(|e| Error::data_format(line, e.to_string()))?,
        };
        grouped.entry(chain_id).or_default().push(row);
    }
    if grouped.is_empty() {
        return Err(Error::data_format(2, "no node rows"));
    }

    let mut chains = Vec::with_capacity(grouped.len());
    let mut seen_ids = std::collections::HashSet::new();
    for (chain_id, mut rows) in grouped {
        rows.sort_by_key(|r| r.generation);
        for row in &rows {
            if !seen_ids.insert(row.node_id) {
                return Err(Error::data_format(
                    row.line,
                    format!("duplicate node_id {}", row.node_id),
                ));
            }
        }
        let mut nodes = Vec::with_capacity(rows.len());
        for (expect_gen, row) in rows.iter().enumerate() {
            if row.generation as usize != expect_gen {
                return Err(Error::data_format(
                    row.line,
                    format!(
                        "chain {chain_id} generations are not contiguous: expected {expect_gen}, got {}",
                        row.generation
                    ),
                ));
            }
            match row.parent {
                None if row.generation != 0 => {
                    return Err(Error::data_format(
                        row.line,
                        "only the generation-0 seed may omit a parent",
                    ))
                }
                Some(_) if row.generation == 0 => {
                    return Err(Error::data_format(
                        row.line,
                        "the generation-0 seed cannot have a parent",
                    ))
                }
                Some(parent_id) => {
                    let parent = rows.iter().find(|r| r.node_id == parent_id);
                    match parent {
                        None => {
                            return Err(Error::data_format(
                                row.line,
                                format!("parent {parent_id} not found in chain {chain_id}"),
                            ))
                        }
                        Some(p) if p.generation >= row.generation => {
                            return Err(Error::data_format(
                                row.line,
                                format!(
                                    "parent {parent_id} is not older than node {}",
                                    row.node_id
                                ),
                            ))
                        }
                        Some(_) => {}
                    }
                }
                None => {}
            }
            nodes.push(ChainNode {
                image: Image::new(row.node_id, row.pixels),
                generation: row.generation,
                parent: row.parent,
                selection_count: row.selection_count,
            });
        }
        for row in &rows {
            let children = rows.iter().filter(|r| r.parent == Some(row.node_id)).count() as u32;
            if children != row.selection_count {
                return Err(Error::data_format(
                    row.line,
                    format!(
                        "node {} has selection_count {} but {children} children",
                        row.node_id, row.selection_count
                    ),
                ));
            }
        }
        let (pair_id, condition) = (rows[0].pair_id, rows[0].condition);
        if rows.iter().any(|r| r.pair_id != pair_id || r.condition != condition) {
            return Err(Error::data_format(
                rows[0].line,
                format!("chain {chain_id} mixes pair ids or conditions"),
            ));
        }
        chains.push(Chain::from_nodes(chain_id, pair_id, condition, 0, nodes));
    }
    Ok(chains)
}

pub const EDITS_HEADER: &str =
    "chain_id,generation,parent_id,child_id,policy,strategy,changed_pixels";

pub fn write_edits_csv(edits: &[EditRecord]) -> String {
    let mut out = String::from(EDITS_HEADER);
    out.push('\n');
    for edit in edits {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            edit.chain_id,
            edit.generation,
            edit.parent_id,
            edit.child_id,
            edit.policy.label(),
            edit.strategy.label(),
            edit.changed_pixels
        ));
    }
    out
}

pub const METRICS_HEADER: &str = "condition,metric,index,value,se,n";

pub fn write_metrics_csv(points: &[MetricPoint]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.condition, p.metric, p.index, p.value, p.se, p.n
        ));
    }
    out
}

pub const TESTS_HEADER: &str = "metric,mean_pi,mean_npi,delta,p_value";

pub fn write_tests_csv(tests: &[PairedTest]) -> String {
    let mut out = String::from(TESTS_HEADER);
    out.push('\n');
    for t in tests {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            t.metric,
            t.mean_pi,
            t.mean_npi,
            t.mean_pi - t.mean_npi,
            t.p_value
        ));
    }
    out
}

pub const FITNESS_HEADER: &str =
    "parameterization,generation,mean_fitness,se_fitness,mean_delta,se_delta";

/// Fitness trajectories; the generation-0 row has no delta.
pub fn write_fitness_csv(series: &[FitnessSeries]) -> String {
    let mut out = String::from(FITNESS_HEADER);
    out.push('\n');
    for s in series {
        for (g, (mean, se)) in s.mean_fitness.iter().zip(&s.se_fitness).enumerate() {
            if g == 0 {
                out.push_str(&format!("{},0,{},{},,\n", s.label, mean, se));
            } else {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    s.label,
                    g,
                    mean,
                    se,
                    s.mean_delta[g - 1],
                    s.se_delta[g - 1]
                ));
            }
        }
    }
    out
}

/// Inequality report: simulated values in the two-decimal display format,
/// with reference values included for side-by-side comparison.
pub fn write_gini_report(report: &GiniReport) -> String {
    format!(
        "G(PI)={:.2}, G(NPI)={:.2}, delta={:.2}, p={}\n\
         reference: G(PI)=0.69, G(NPI)=0.61, delta=0.08\n",
        report.g_pi,
        report.g_npi,
        report.delta(),
        report.p_value
    )
}

/// One Newick tree per line, ordered by chain id.
pub fn write_newick(chains: &[Chain]) -> String {
    let mut out = String::new();
    for chain in chains {
        out.push_str(&chain.to_newick());
        out.push('\n');
    }
    out
}

/// Plain PBM: `P1`, dimensions, then one row of digits per grid row.
pub fn write_image_pbm(pixels: &PixelGrid) -> String {
    let mut out = format!("P1\n{GRID_SIDE} {GRID_SIDE}\n");
    let digits = pixels.to_digits();
    for row in 0..GRID_SIDE {
        out.push_str(&digits[row * GRID_SIDE..(row + 1) * GRID_SIDE]);
        out.push('\n');
    }
    out
}

pub fn read_image_pbm(text: &str) -> Result<PixelGrid> {
    let mut tokens = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| l.split_whitespace());
    if tokens.next() != Some("P1") {
        return Err(Error::data_format(1, "missing P1 magic"));
    }
    let dims: Vec<&str> = tokens.by_ref().take(2).collect();
    if dims != [GRID_SIDE.to_string().as_str(); 2] {
        return Err(Error::data_format(
            2,
            format!("expected {GRID_SIDE} {GRID_SIDE} dimensions, got {dims:?}"),
        ));
    }
    let digits: String = tokens.collect::<Vec<&str>>().concat();
    PixelGrid::from_digits(&digits).map_err(|e| Error::data_format(3, e.to_string()))
}

/// Embedding CSV: header `image_id,v0..v{D-1}`, one vector per row.
pub fn parse_embeddings_csv(text: &str) -> Result<EmbeddingTable> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::data_format(1, "empty file"))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 2 || columns[0] != "image_id" {
        return Err(Error::data_format(
            1,
            format!("expected header `image_id,v0,..`, got `{header}`"),
        ));
    }
    for (i, name) in columns[1..].iter().enumerate() {
        if *name != format!("v{i}") {
            return Err(Error::data_format(
                1,
                format!("expected column `v{i}`, got `{name}`"),
            ));
        }
    }
    let dim = columns.len() - 1;
    let mut table = EmbeddingTable::new(dim, EmbeddingSource::External);
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::data_format(
                line,
                format!("expected {} fields, got {}", dim + 1, fields.len()),
            ));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|_| Error::data_format(line, format!("bad image_id `{}`", fields[0])))?;
        let vector: Vec<f64> = fields[1..]
            .iter()
            .map(|f| {
                f.parse()
                    .map_err(|_| Error::data_format(line, format!("bad value `{f}`")))
            })
            .collect::<Result<_>>()?;
        table
            .insert(id, vector)
            .map_err(|e| Error::data_format(line, e.to_string()))?;
    }
    Ok(table)
}

/// Market slots per choice-record row.
pub const RECORD_SLOTS: usize = 12;

pub fn choice_records_header() -> String {
    let mut columns = vec!["record_id".to_string(), "condition".into(), "chosen_index".into()];
    for slot in 0..RECORD_SLOTS {
        columns.push(format!("popularity_{slot}"));
    }
    for group in ["r_appeal", "r_edit", "r_orig", "r_recog"] {
        for slot in 0..RECORD_SLOTS {
            columns.push(format!("{group}_{slot}"));
        }
    }
    columns.join(",")
}

/// Choice records with unused market slots left blank; popularity columns
/// are blank for NPI records.
pub fn write_choice_records_csv(records: &[ChoiceRecord]) -> String {
    let mut out = choice_records_header();
    out.push('\n');
    for (record_id, record) in records.iter().enumerate() {
        let m = record.market_size();
        let mut fields: Vec<String> = vec![
            record_id.to_string(),
            record.condition.to_string(),
            record.chosen.to_string(),
        ];
        for slot in 0..RECORD_SLOTS {
            match &record.popularity {
                Some(pops) if slot < m => fields.push(pops[slot].to_string()),
                _ => fields.push(String::new()),
            }
        }
        for criterion in 0..4 {
            for slot in 0..RECORD_SLOTS {
                if slot < m {
                    fields.push(record.ratings[slot][criterion].to_string());
                } else {
                    fields.push(String::new());
                }
            }
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_choice_records_csv(text: &str) -> Result<Vec<ChoiceRecord>> {
    let expected_header = choice_records_header();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == expected_header => {}
        Some((_, header)) => {
            return Err(Error::data_format(
                1,
                format!("unexpected header `{header}`"),
            ))
        }
        None => return Err(Error::data_format(1, "empty file")),
    }
    let n_columns = 3 + 5 * RECORD_SLOTS;
    let mut records = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != n_columns {
            return Err(Error::data_format(
                line,
                format!("expected {n_columns} fields, got {}", fields.len()),
            ));
        }
        let condition = Condition::parse(fields[1])
            .map_err(|e| Error::data_format(line, e.to_string()))?;
        let chosen: usize = fields[2]
            .parse()
            .map_err(|_| Error::data_format(line, format!("bad chosen_index `{}`", fields[2])))?;

        // Market size = number of filled rating slots (first criterion block).
        let rating_start = 3 + RECORD_SLOTS;
        let m = fields[rating_start..rating_start + RECORD_SLOTS]
            .iter()
            .take_while(|f| !f.is_empty())
            .count();
        if m == 0 {
            return Err(Error::data_format(line, "record has no market entries"));
        }
        if chosen >= m {
            return Err(Error::data_format(
                line,
                format!("chosen_index {chosen} outside market of size {m}"),
            ));
        }
        let mut ratings = vec![[0.0; 4]; m];
        for criterion in 0..4 {
            for slot in 0..RECORD_SLOTS {
                let field = fields[3 + RECORD_SLOTS * (criterion + 1) + slot];
                if slot < m {
                    ratings[slot][criterion] = field.parse().map_err(|_| {
                        Error::data_format(line, format!("bad rating `{field}`"))
                    })?;
                } else if !field.is_empty() {
                    return Err(Error::data_format(
                        line,
                        format!("rating in slot {slot} beyond market size {m}"),
                    ));
                }
            }
        }
        let popularity_fields = &fields[3..3 + RECORD_SLOTS];
        let filled = popularity_fields.iter().filter(|f| !f.is_empty()).count();
        let popularity = match (condition, filled) {
            (Condition::Npi, 0) => None,
            (Condition::Npi, _) => {
                return Err(Error::data_format(
                    line,
                    "NPI records must leave popularity blank",
                ))
            }
            (Condition::Pi, n) if n == m => Some(
                popularity_fields[..m]
                    .iter()
                    .map(|f| {
                        f.parse().map_err(|_| {
                            Error::data_format(line, format!("bad popularity `{f}`"))
                        })
                    })
                    .collect::<Result<Vec<u32>>>()?,
            ),
            (Condition::Pi, n) => {
                return Err(Error::data_format(
                    line,
                    format!("PI record fills {n} popularity slots for a market of {m}"),
                ))
            }
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

pub const FIT_HEADER: &str = "condition,policy,weight,se";

pub fn write_fit_csv(fit: &FitResult) -> String {
    let mut out = String::from(FIT_HEADER);
    out.push('\n');
    for condition_fit in &fit.fits {
        for (i, policy) in Policy::ALL.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                condition_fit.condition,
                policy.label(),
                condition_fit.weights[i],
                condition_fit.weight_se[i]
            ));
        }
    }
    out
}

pub fn write_fit_summary(fit: &FitResult) -> String {
    let mut out = String::new();
    for condition_fit in &fit.fits {
        out.push_str(&format!(
            "condition {} ({} records)\n",
            condition_fit.condition, condition_fit.n_records
        ));
        for (i, policy) in Policy::ALL.iter().enumerate() {
            out.push_str(&format!(
                "  {:<22} {:.4} +/- {:.4}\n",
                policy.label(),
                condition_fit.weights[i],
                condition_fit.weight_se[i]
            ));
        }
        out.push_str(&format!(
            "  beta = [{}]\n  log-likelihood = {:.4}\n  iterations = {}, final delta = {:.3e}\n",
            condition_fit
                .beta
                .iter()
                .map(|b| format!("{b:.4}"))
                .collect::<Vec<_>>()
                .join(", "),
            condition_fit.log_likelihood,
            condition_fit.iterations,
            condition_fit.final_delta
        ));
    }
    out
}
