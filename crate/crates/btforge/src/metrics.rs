//! Per-tree structure metrics and corpus-level aggregates.

use serde::Serialize;
use thiserror::Error;

use crate::model::BTNode;
use crate::validate::ValidationReport;

/// Structural measurements of a single tree. Depth counts the root as
/// level 1; node density is composites per leaf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TreeMetrics {
    pub depth: usize,
    pub leaf_count: usize,
    pub composite_count: usize,
    pub node_density: f64,
    pub total_nodes: usize,
}

/// Computes depth, leaf/composite counts, and node density in one pass.
pub fn tree_metrics(bt: &BTNode) -> TreeMetrics {
    fn visit(node: &BTNode, level: usize, depth: &mut usize, leaves: &mut usize, comps: &mut usize) {
        *depth = (*depth).max(level);
        match node {
            BTNode::Leaf { .. } => *leaves += 1,
            BTNode::Composite { children, .. } => {
                *comps += 1;
                for child in children {
                    visit(child, level + 1, depth, leaves, comps);
                }
            }
        }
    }
    let (mut depth, mut leaves, mut comps) = (0usize, 0usize, 0usize);
    visit(bt, 1, &mut depth, &mut leaves, &mut comps);
    TreeMetrics {
        depth,
        leaf_count: leaves,
        composite_count: comps,
        node_density: comps as f64 / leaves as f64,
        total_nodes: leaves + comps,
    }
}

/// Everything the aggregator needs to know about one evaluated sample.
///
/// Execution is only ever attempted for samples that parsed with zero
/// key errors, so `task_success` is `None` for anything that failed
/// earlier in the pipeline (and counts as a task failure).
#[derive(Debug, Clone, Serialize)]
pub struct SampleOutcome {
    pub id: String,
    pub parse_ok: bool,
    pub key_errors: usize,
    pub validation: Option<ValidationReport>,
    pub tree: Option<TreeMetrics>,
    pub task_success: Option<bool>,
}

impl SampleOutcome {
    pub fn lowered(&self) -> bool {
        self.parse_ok && self.key_errors == 0
    }

    pub fn succeeded(&self) -> bool {
        self.task_success == Some(true)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("cannot aggregate an empty corpus")]
pub struct EmptyCorpus;

/// Corpus-level metric aggregates, all percentages in [0, 100].
///
/// Conditioning follows the metric definitions: the key-error rate is
/// computed over the JSON-valid subset only, schema compliance over the
/// lowered subset, structure means over the lowered subset, and mean
/// execution nodes over task-successful samples. A mean over an empty
/// subset is reported as 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub jvr: f64,
    pub ker: f64,
    pub tsr: f64,
    pub sc: f64,
    pub mean_td: f64,
    pub mean_lc: f64,
    pub mean_nd: f64,
    pub men: f64,
}

impl MetricsReport {
    /// CSV with the canonical column order.
    pub fn csv_header() -> &'static str {
        "id,tsr,jvr,ker,td,lc,nd,men,sc"
    }

    pub fn csv_row(&self, id: &str) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            id, self.tsr, self.jvr, self.ker, self.mean_td, self.mean_lc, self.mean_nd, self.men,
            self.sc
        )
    }

    /// Aligned plain-text table.
    pub fn text_table(&self, id: &str) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "id", "TSR", "JVR", "KER", "TD", "LC", "ND", "MEN", "SC"
        ));
        out.push_str(&format!(
            "{:<12} {:>8.1} {:>8.1} {:>8.1} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.1}\n",
            id, self.tsr, self.jvr, self.ker, self.mean_td, self.mean_lc, self.mean_nd, self.men,
            self.sc
        ));
        out
    }
}

fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 * 100.0 / total as f64
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Aggregates per-sample outcomes into a corpus report.
///
/// Samples are processed in id order internally, so the result is
/// exactly invariant to the ordering of the input slice.
pub fn aggregate(corpus: &[SampleOutcome]) -> Result<MetricsReport, EmptyCorpus> {
    if corpus.is_empty() {
        return Err(EmptyCorpus);
    }
    let mut ordered: Vec<&SampleOutcome> = corpus.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));

    let n = ordered.len();
    let parsed: Vec<&&SampleOutcome> = ordered.iter().filter(|s| s.parse_ok).collect();
    let keyed = parsed.iter().filter(|s| s.key_errors > 0).count();
    let lowered: Vec<&&SampleOutcome> = ordered.iter().filter(|s| s.lowered()).collect();
    let compliant = lowered
        .iter()
        .filter(|s| {
            s.validation
                .as_ref()
                .is_some_and(|r| r.schema_compliant())
        })
        .count();
    let successes = ordered.iter().filter(|s| s.succeeded()).count();

    let tds: Vec<f64> = lowered
        .iter()
        .filter_map(|s| s.tree.map(|t| t.depth as f64))
        .collect();
    let lcs: Vec<f64> = lowered
        .iter()
        .filter_map(|s| s.tree.map(|t| t.leaf_count as f64))
        .collect();
    let nds: Vec<f64> = lowered
        .iter()
        .filter_map(|s| s.tree.map(|t| t.node_density))
        .collect();
    let men_nodes: Vec<f64> = ordered
        .iter()
        .filter(|s| s.succeeded())
        .filter_map(|s| s.tree.map(|t| t.total_nodes as f64))
        .collect();

    Ok(MetricsReport {
        n_samples: n,
        jvr: percent(parsed.len(), n),
        ker: percent(keyed, parsed.len()),
        tsr: percent(successes, n),
        sc: percent(compliant, lowered.len()),
        mean_td: mean(&tds),
        mean_lc: mean(&lcs),
        mean_nd: mean(&nds),
        men: mean(&men_nodes),
    })
}
