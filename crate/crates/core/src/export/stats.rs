use std::collections::{BTreeSet, HashSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::hierarchy::{normalize_name, ConceptHierarchy, ConceptId};
use crate::llm_backend::CostLedger;
use crate::verification::RejectionRecord;

/// Outdegree buckets 0..=9; everything larger lands in the `10+` bucket.
pub const OUTDEGREE_BUCKETS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrawlStats {
    pub seed: String,
    /// `None` for an unbounded crawl.
    pub exploration_depth: Option<usize>,
    pub ft: usize,
    pub n_c: usize,
    pub n_d: usize,
    pub n_sub: usize,
    pub n_sub_ins: usize,
    pub requests: u64,
    pub prompts_per_concept: f64,
    pub cost_dollars: f64,
    pub concepts_at_or_below_cutoff: usize,
    pub concepts_above_cutoff: usize,
    /// `depth_histogram[d]` concepts at depth `d`; index 0 is the seed.
    pub depth_histogram: Vec<usize>,
    /// Buckets 0..=9 followed by the `10+` bucket.
    pub outdegree_histogram: Vec<usize>,
    pub max_outdegree: usize,
    pub avg_outdegree: f64,
}

impl CrawlStats {
    /// `listed` holds the `(child, parent)` pairs that came straight out of a
    /// listing; every other surviving edge was found during insertion.
    pub fn compute(
        h: &ConceptHierarchy,
        exploration_depth: Option<usize>,
        ft: usize,
        ledger: &CostLedger,
        rejections: &[RejectionRecord],
        listed: &BTreeSet<(ConceptId, ConceptId)>,
    ) -> CrawlStats {
        let edges = h.edges();
        let n_c = h.len();
        let n_sub = edges.len();
        let n_sub_ins = edges.iter().filter(|e| !listed.contains(e)).count();

        let mut depth_histogram = Vec::new();
        let mut outdegrees = Vec::with_capacity(n_c);
        for c in h.concepts() {
            let d = h.depth_of(c.id).unwrap_or(c.depth);
            if depth_histogram.len() <= d {
                depth_histogram.resize(d + 1, 0);
            }
            depth_histogram[d] += 1;
            outdegrees.push(h.direct_children(c.id).map_or(0, |ch| ch.len()));
        }
        let concepts_at_or_below_cutoff = match exploration_depth {
            None => n_c,
            Some(cut) => depth_histogram.iter().take(cut + 1).sum(),
        };

        let kept: HashSet<String> = h.concepts().flat_map(|c| c.names().map(normalize_name).collect::<Vec<_>>()).collect();
        let n_d = rejections
            .iter()
            .map(|r| normalize_name(&r.name))
            .filter(|n| !kept.contains(n))
            .collect::<HashSet<_>>()
            .len();

        let mut stats = CrawlStats {
            seed: h.name_of(h.seed()).unwrap_or_default().to_string(),
            exploration_depth,
            ft,
            n_c,
            n_d,
            n_sub,
            n_sub_ins,
            requests: ledger.requests,
            prompts_per_concept: ledger.requests as f64 / n_c as f64,
            cost_dollars: ledger.dollars,
            concepts_at_or_below_cutoff,
            concepts_above_cutoff: n_c - concepts_at_or_below_cutoff,
            depth_histogram,
            outdegree_histogram: Vec::new(),
            max_outdegree: 0,
            avg_outdegree: 0.0,
        };
        stats.set_outdegrees(&outdegrees);
        stats
    }

    pub fn set_outdegrees(&mut self, outdegrees: &[usize]) {
        let mut hist = vec![0; OUTDEGREE_BUCKETS + 1];
        for &o in outdegrees {
            hist[o.min(OUTDEGREE_BUCKETS)] += 1;
        }
        self.outdegree_histogram = hist;
        self.max_outdegree = outdegrees.iter().copied().max().unwrap_or(0);
        let total: usize = outdegrees.iter().sum();
        self.avg_outdegree = if outdegrees.is_empty() { 0.0 } else { total as f64 / outdegrees.len() as f64 };
    }

    fn depth_label(&self) -> String {
        self.exploration_depth.map_or_else(|| "none".to_string(), |d| d.to_string())
    }

    fn summary_cells(&self) -> Vec<String> {
        vec![
            self.seed.clone(),
            self.depth_label(),
            self.ft.to_string(),
            self.n_c.to_string(),
            self.n_d.to_string(),
            self.n_sub.to_string(),
            self.n_sub_ins.to_string(),
            format!("{:.2}", self.prompts_per_concept),
            format!("{:.2}", self.cost_dollars),
            self.concepts_at_or_below_cutoff.to_string(),
            self.concepts_above_cutoff.to_string(),
        ]
    }

    /// Header and row of the summary table.
    pub fn summary_table(&self) -> String {
        let header = ["Seed", "co_d", "ft", "n_C", "n_D", "n_sub", "n_sub'", "p/C", "cost($)", "<=co_d", ">co_d"];
        table(&header.map(String::from), &[self.summary_cells()])
    }

    /// Concept counts per depth, starting at depth 1; at least nine columns.
    pub fn depth_table(&self) -> String {
        let width = self.depth_histogram.len().saturating_sub(1).max(9);
        let mut header = vec!["Seed".to_string()];
        let mut row = vec![self.seed.clone()];
        for d in 1..=width {
            header.push(d.to_string());
            row.push(self.depth_histogram.get(d).copied().unwrap_or(0).to_string());
        }
        table(&header, &[row])
    }

    pub fn outdegree_table(&self) -> String {
        let mut header = vec!["Seed".to_string()];
        let mut row = vec![self.seed.clone()];
        for (o, n) in self.outdegree_histogram.iter().enumerate() {
            header.push(if o == OUTDEGREE_BUCKETS { format!("{o}+") } else { o.to_string() });
            row.push(n.to_string());
        }
        header.extend(["max o".to_string(), "avg o".to_string()]);
        row.extend([self.max_outdegree.to_string(), format!("{:.2}", self.avg_outdegree)]);
        table(&header, &[row])
    }

    pub fn to_text(&self) -> String {
        format!(
            "Summary\n{}\nDepth distribution\n{}\nOutdegree distribution\n{}",
            self.summary_table(),
            self.depth_table(),
            self.outdegree_table()
        )
    }
}

// First column left-aligned, the rest right-aligned.
fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).chain([header[i].chars().count()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        let mut cells = Vec::with_capacity(line.len());
        for (i, cell) in line.iter().enumerate() {
            cells.push(if i == 0 { format!("{cell:<w$}", w = widths[i]) } else { format!("{cell:>w$}", w = widths[i]) });
        }
        writeln!(out, "{}", cells.join("  ").trim_end()).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn goats_row() -> CrawlStats {
        let mut s = CrawlStats {
            seed: "Goats".into(),
            exploration_depth: None,
            ft: 20,
            n_c: 24,
            n_d: 15,
            n_sub: 24,
            n_sub_ins: 1,
            requests: 534,
            prompts_per_concept: 534.0 / 24.0,
            cost_dollars: 0.11,
            concepts_at_or_below_cutoff: 24,
            concepts_above_cutoff: 0,
            depth_histogram: vec![1, 7, 14, 2],
            outdegree_histogram: vec![],
            max_outdegree: 0,
            avg_outdegree: 0.0,
        };
        let mut outdegrees = vec![0; 17];
        outdegrees.extend([1, 1, 2, 4, 4, 5, 7]);
        s.set_outdegrees(&outdegrees);
        s
    }

    fn cells(table: &str) -> Vec<Vec<String>> {
        table.lines().map(|l| l.split_whitespace().map(String::from).collect()).collect()
    }

    #[test]
    fn goats_summary_row() {
        let rows = cells(&goats_row().summary_table());
        assert_eq!(rows[1].join(" "), "Goats none 20 24 15 24 1 22.25 0.11 24 0");
    }

    #[test]
    fn goats_depth_and_outdegree_rows() {
        let s = goats_row();
        assert_eq!(cells(&s.depth_table())[1].join(" "), "Goats 7 14 2 0 0 0 0 0 0");
        assert_eq!(cells(&s.outdegree_table())[1].join(" "), "Goats 17 2 1 0 2 1 0 1 0 0 0 7 1.00");
    }

    #[test]
    fn singleton() {
        let h = ConceptHierarchy::new("Goats").unwrap();
        let s = CrawlStats::compute(&h, None, 20, &CostLedger::default(), &[], &BTreeSet::new());
        assert_eq!((s.n_c, s.n_sub, s.n_sub_ins), (1, 0, 0));
        assert_eq!(s.avg_outdegree, 0.0);
        assert_eq!(s.depth_histogram, vec![1]);
    }

    #[test]
    fn five_node_hand_count() {
        // A -> B, A -> C, B -> D, C -> D, D -> E
        let mut h = ConceptHierarchy::new("A").unwrap();
        let a = h.seed();
        let b = h.add_concept("B", None, &[a]).unwrap();
        let c = h.add_concept("C", None, &[a]).unwrap();
        let d = h.add_concept("D", None, &[b, c]).unwrap();
        let e = h.add_concept("E", None, &[d]).unwrap();
        let listed = BTreeSet::from([(b, a), (c, a), (d, b), (e, d)]);
        let rejections = vec![
            RejectionRecord { name: "X".into(), parent: "A".into(), reason: crate::verification::RejectReason::Part, inconclusive: false, transcript: vec![] },
            RejectionRecord { name: "x".into(), parent: "B".into(), reason: crate::verification::RejectReason::Part, inconclusive: false, transcript: vec![] },
            RejectionRecord { name: "e".into(), parent: "B".into(), reason: crate::verification::RejectReason::Part, inconclusive: false, transcript: vec![] },
        ];
        let ledger = CostLedger { requests: 25, ..CostLedger::default() };
        let s = CrawlStats::compute(&h, Some(2), 20, &ledger, &rejections, &listed);
        assert_eq!(s.depth_histogram, vec![1, 2, 1, 1]);
        assert_eq!(s.outdegree_histogram[..3], [1, 3, 1]);
        assert_eq!(s.max_outdegree, 2);
        assert_eq!(s.n_sub, 5);
        assert_eq!(s.n_sub_ins, 1);
        assert_eq!(s.n_d, 1);
        assert_eq!((s.concepts_at_or_below_cutoff, s.concepts_above_cutoff), (4, 1));
        assert_eq!(s.prompts_per_concept, 5.0);
        assert_eq!(s.avg_outdegree, 1.0);
    }
}
