// SPDX-License-Identifier: Apache-2.0

//! Library-level metrics: legality ratio and complexity-pair diversity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drc::{check, DesignRules};
use crate::squish::{encode, LayoutPattern, SquishError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("diversity of an empty library is undefined")]
    Empty,
    #[error(transparent)]
    Pattern(#[from] SquishError),
}

/// Scan-line counts minus one along x and y. Both canvas borders count as
/// scan lines, so an empty pattern is `(1, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComplexityPair {
    pub cx: usize,
    pub cy: usize,
}

pub fn complexity(pattern: &LayoutPattern) -> Result<ComplexityPair, SquishError> {
    let (t, _) = encode(pattern)?;
    Ok(ComplexityPair {
        cx: t.cols(),
        cy: t.rows(),
    })
}

/// Shannon entropy, in bits, of the empirical distribution of exact pairs.
pub fn diversity(pairs: &[ComplexityPair]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hist = histogram(pairs);
    let n = pairs.len() as f64;
    Ok(hist
        .values()
        .map(|&count| {
            let p = count as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0))
}

fn histogram(pairs: &[ComplexityPair]) -> BTreeMap<ComplexityPair, usize> {
    let mut hist = BTreeMap::new();
    for &p in pairs {
        *hist.entry(p).or_insert(0) += 1;
    }
    hist
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramEntry {
    pub cx: usize,
    pub cy: usize,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LibraryReport {
    pub patterns: usize,
    pub legal: usize,
    pub legality: f64,
    /// Complexity distribution of the legal patterns.
    pub histogram: Vec<HistogramEntry>,
    /// Diversity of the legal patterns in bits (0 when none are legal).
    pub diversity: f64,
}

impl LibraryReport {
    pub fn from_pairs(total: usize, legal_pairs: &[ComplexityPair]) -> Self {
        let n = legal_pairs.len();
        let histogram = histogram(legal_pairs)
            .into_iter()
            .map(|(p, count)| HistogramEntry {
                cx: p.cx,
                cy: p.cy,
                probability: count as f64 / n as f64,
            })
            .collect();
        Self {
            patterns: total,
            legal: n,
            legality: if total == 0 { 0.0 } else { n as f64 / total as f64 },
            histogram,
            diversity: diversity(legal_pairs).unwrap_or(0.0),
        }
    }
}

/// Checks every pattern and measures diversity over the legal ones.
pub fn evaluate_library(
    patterns: &[LayoutPattern],
    rules: &DesignRules,
) -> Result<LibraryReport, MetricsError> {
    if patterns.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut legal = Vec::new();
    for p in patterns {
        if check(p, rules)?.is_clean() {
            legal.push(complexity(p)?);
        }
    }
    Ok(LibraryReport::from_pairs(patterns.len(), &legal))
}

/// Renders reports as a table with one row per label.
pub fn render_table(rows: &[(String, LibraryReport)]) -> String {
    let mut out = format!("{:<12} {:>8} {:>8} {:>10} {:>10}\n", "set", "count", "legal", "legality", "diversity");
    for (name, r) in rows {
        out.push_str(&format!(
            "{:<12} {:>8} {:>8} {:>9.2}% {:>10.3}\n",
            name,
            r.patterns,
            r.legal,
            100.0 * r.legality,
            r.diversity
        ));
    }
    out
}
