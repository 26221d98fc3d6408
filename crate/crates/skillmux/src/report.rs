//! Aligned text tables for metric, ablation, decomposition and latency reports.
//!
//! Metric cells use three decimals without a leading zero (`.740`). `E`, `H`
//! and `A` prefixes denote the `easy` tier, the `hard` tier and the
//! unweighted mean of tier means. `--` marks a cell that is undefined: a tier
//! that was not evaluated, or R@K over rankings shorter than K.

use std::fmt;

use skillmux_core::eval::{
    AblationTable, Decomposition, DecompositionCounts, MetricSet, MetricsReport, QuartileStrata,
};
use skillmux_core::latency::LatencyReport;

pub const EASY: &str = "easy";
pub const HARD: &str = "hard";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<S: Into<String>>(&mut self, row: impl IntoIterator<Item = S>) {
        self.rows.push(row.into_iter().map(Into::into).collect());
    }

    /// Cell in row `r` under column `name`.
    pub fn cell(&self, r: usize, name: &str) -> Option<&str> {
        let c = self.header.iter().position(|h| h == name)?;
        self.rows.get(r)?.get(c).map(String::as_str)
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cols = self.header.len();
        let mut width: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (i, c) in row.iter().enumerate().take(cols) {
                width[i] = width[i].max(c.chars().count());
            }
        }
        let line = |f: &mut fmt::Formatter<'_>, cells: &[String]| -> fmt::Result {
            let mut out = String::new();
            for (i, c) in cells.iter().enumerate().take(cols) {
                if i > 0 {
                    out.push_str("  ");
                }
                let pad = width[i] - c.chars().count();
                if i == 0 {
                    out.push_str(c);
                    out.extend(std::iter::repeat_n(' ', pad));
                } else {
                    out.extend(std::iter::repeat_n(' ', pad));
                    out.push_str(c);
                }
            }
            writeln!(f, "{}", out.trim_end())
        };
        line(f, &self.header)?;
        let rule: usize = width.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
        writeln!(f, "{}", "-".repeat(rule))?;
        for row in &self.rows {
            line(f, row)?;
        }
        Ok(())
    }
}

/// `.740`, `1.000`.
pub fn fmt3(x: f64) -> String {
    let s = format!("{x:.3}");
    match s.strip_prefix("0.") {
        Some(rest) => format!(".{rest}"),
        None => s,
    }
}

fn recall_cell(m: &MetricSet, k: usize) -> String {
    if m.depth_limited(k) {
        return "--".into();
    }
    fmt3(match k {
        10 => m.recall_at_10,
        20 => m.recall_at_20,
        _ => m.recall_at_50,
    })
}

fn tier<'a>(r: &'a MetricsReport, name: &str) -> Option<&'a MetricSet> {
    r.tiers.get(name)
}

fn opt(m: Option<&MetricSet>, f: impl Fn(&MetricSet) -> String) -> String {
    m.map_or_else(|| "--".to_string(), f)
}

/// Main results shape: E/H/A Hit@1 plus averaged MRR@10, R@K and FC@10.
pub fn metrics_table(label: &str, rows: &[(&str, &MetricsReport)]) -> Table {
    let mut t = Table::new([
        label, "E-Hit@1", "H-Hit@1", "A-Hit@1", "A-MRR@10", "A-R@10", "A-R@20", "A-R@50", "A-FC@10", "n",
    ]);
    for (name, r) in rows {
        let a = &r.tier_average;
        t.push([
            name.to_string(),
            opt(tier(r, EASY), |m| fmt3(m.hit_at_1)),
            opt(tier(r, HARD), |m| fmt3(m.hit_at_1)),
            fmt3(a.hit_at_1),
            fmt3(a.mrr_at_10),
            recall_cell(a, 10),
            recall_cell(a, 20),
            recall_cell(a, 50),
            fmt3(a.fc_at_10),
            a.queries.to_string(),
        ]);
    }
    t
}

/// Per-tier grid: Hit@1 and R@20 for each tier.
pub fn tier_table(label: &str, rows: &[(&str, &MetricsReport)]) -> Table {
    let mut t = Table::new([label, "E-Hit@1", "E-R@20", "H-Hit@1", "H-R@20"]);
    for (name, r) in rows {
        let (e, h) = (tier(r, EASY), tier(r, HARD));
        t.push([
            name.to_string(),
            opt(e, |m| fmt3(m.hit_at_1)),
            opt(e, |m| recall_cell(m, 20)),
            opt(h, |m| fmt3(m.hit_at_1)),
            opt(h, |m| recall_cell(m, 20)),
        ]);
    }
    t
}

/// Hit@1, R@10 and FC@10 per label of one strata dimension (e.g.
/// `cardinality` gives the single/multi calibration shape).
pub fn strata_table(label: &str, dimension: &str, rows: &[(&str, &MetricsReport)]) -> Table {
    let mut labels: Vec<&String> = rows
        .iter()
        .filter_map(|(_, r)| r.strata.get(dimension))
        .flat_map(|m| m.keys())
        .collect();
    labels.sort();
    labels.dedup();
    let mut header = vec![label.to_string()];
    for l in &labels {
        for m in ["Hit@1", "R@10", "FC@10", "n"] {
            header.push(format!("{l} {m}"));
        }
    }
    let mut t = Table::new(header);
    for (name, r) in rows {
        let mut row = vec![name.to_string()];
        for l in &labels {
            match r.strata.get(dimension).and_then(|m| m.get(*l)) {
                Some(m) => row.extend([
                    fmt3(m.hit_at_1),
                    recall_cell(m, 10),
                    fmt3(m.fc_at_10),
                    m.queries.to_string(),
                ]),
                None => row.extend(["--".to_string(), "--".into(), "--".into(), "0".into()]),
            }
        }
        t.push(row);
    }
    t
}

/// Hit@1 per candidate depth, per tier and averaged.
pub fn ablation_table(label: &str, rows: &[(&str, &AblationTable)]) -> Table {
    let ks: Vec<usize> = rows
        .first()
        .map(|(_, a)| a.rows.iter().map(|r| r.k).collect())
        .unwrap_or_default();
    let mut header = vec![label.to_string()];
    for prefix in ["E", "H", "A"] {
        for k in &ks {
            header.push(format!("{prefix}@{k}"));
        }
    }
    let mut t = Table::new(header);
    for (name, a) in rows {
        let mut row = vec![name.to_string()];
        for which in [Some(EASY), Some(HARD), None] {
            for r in &a.rows {
                row.push(match which {
                    Some(tn) => opt(tier(&r.report, tn), |m| fmt3(m.hit_at_1)),
                    None => fmt3(r.report.tier_average.hit_at_1),
                });
            }
        }
        t.push(row);
    }
    t
}

/// Retriever coverage curve at selected depths.
pub fn recall_curve_table(a: &AblationTable, ks: &[usize]) -> Table {
    let mut t = Table::new(["K", "R@K", "Any-GT@K"]);
    for p in a.recall_curve.iter().filter(|p| ks.is_empty() || ks.contains(&p.k)) {
        t.push([p.k.to_string(), fmt3(p.recall), fmt3(p.any_hit)]);
    }
    t
}

fn pct(n: usize, total: usize) -> String {
    if total == 0 {
        "--".into()
    } else {
        format!("{:.1}", 100.0 * n as f64 / total as f64)
    }
}

/// Per-query Hit@1 transitions with `n` and `%` per tier and overall.
pub fn decomposition_table(d: &Decomposition) -> Table {
    let mut groups: Vec<(&str, DecompositionCounts)> = Vec::new();
    for tn in [EASY, HARD] {
        if let Some(c) = d.tiers.get(tn) {
            groups.push((if tn == EASY { "Easy" } else { "Hard" }, *c));
        }
    }
    for (tn, c) in &d.tiers {
        if tn != EASY && tn != HARD {
            groups.push((tn.as_str(), *c));
        }
    }
    groups.push(("All", d.all));
    let mut header = vec!["Category".to_string()];
    for (g, _) in &groups {
        header.push(format!("{g} n"));
        header.push(format!("{g} %"));
    }
    let mut t = Table::new(header);
    type Line = (&'static str, fn(&DecompositionCounts) -> usize);
    let lines: [Line; 6] = [
        ("Both correct", |c| c.both_correct),
        ("Reranker fixed", |c| c.fixed),
        ("Reranker degraded", |c| c.degraded),
        ("Both missed", |c| c.both_missed),
        ("Encoder Hit@1", DecompositionCounts::encoder_hits),
        ("Pipeline Hit@1", DecompositionCounts::pipeline_hits),
    ];
    for (name, f) in lines {
        let mut row = vec![name.to_string()];
        for (_, c) in &groups {
            row.push(f(c).to_string());
            row.push(pct(f(c), c.total()));
        }
        t.push(row);
    }
    t
}

/// Serving table: p50, p95 and QPS, with the drive mode per row.
pub fn latency_table(rows: &[(&str, &LatencyReport)]) -> Table {
    let mut t = Table::new(["System", "p50 (ms)", "p95 (ms)", "QPS", "n", "failures", "drive"]);
    for (name, r) in rows {
        t.push([
            name.to_string(),
            format!("{:.3}", r.p50_ms),
            format!("{:.3}", r.p95_ms),
            format!("{:.2}", r.qps),
            r.n_queries.to_string(),
            r.failures.to_string(),
            format!("{} x{}", r.mode, r.concurrency),
        ]);
    }
    t
}

/// Hit@1 and MRR@10 per description-length quartile.
pub fn quartile_table(label: &str, rows: &[(&str, &MetricsReport)]) -> Table {
    let mut header = vec![label.to_string()];
    for q in ["Q1", "Q2", "Q3", "Q4"] {
        header.push(format!("{q} Hit@1"));
        header.push(format!("{q} n"));
    }
    let mut t = Table::new(header);
    for (name, r) in rows {
        let mut row = vec![name.to_string()];
        for q in ["Q1", "Q2", "Q3", "Q4"] {
            match r.strata.get("desc_quartile").and_then(|m| m.get(q)) {
                Some(m) => row.extend([fmt3(m.hit_at_1), m.queries.to_string()]),
                None => row.extend(["--".to_string(), "0".into()]),
            }
        }
        t.push(row);
    }
    t
}

/// One-line description of the quartile cut points.
pub fn quartile_cuts(strata: &QuartileStrata) -> String {
    let [a, b, c] = strata.cuts;
    let note = if strata.degenerate {
        " (degenerate: cut points coincide)"
    } else {
        ""
    };
    format!("description quartile cuts (words): Q1 <= {a}, Q2 <= {b}, Q3 <= {c}{note}")
}
