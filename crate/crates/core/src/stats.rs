//! Paired method comparison: Wilcoxon signed-rank test, Benjamini–Hochberg
//! FDR adjustment, and per-organ comparison tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::metrics::{self, by_label, DiceRecord, SummaryStats};

/// Largest effective sample size for which the exact null distribution is used.
pub const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Pairs left after dropping zero differences.
    pub n_effective: usize,
    /// Sum of ranks of the positive differences.
    pub statistic: f64,
    pub p_two_sided: f64,
    pub method: WilcoxonMethod,
}

/// Mid-ranks (1-based) of `values`, plus the sizes of tied groups.
fn mid_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j share the mean of ranks i+1..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Exact two-sided p for the signed-rank sum `w` given the ranks in play.
///
/// Mid-ranks are multiples of 1/2, so the null distribution is built over
/// doubled ranks by counting subset sums. The two-sided p counts every sign
/// assignment whose sum lies at least as far from the null mean as `w`.
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let w2 = (w * 2.0).round() as i64;
    let observed = (2 * w2 - total as i64).abs();
    let extreme: u64 = counts
        .iter()
        .enumerate()
        .filter(|&(s, _)| (2 * s as i64 - total as i64).abs() >= observed)
        .map(|(_, &c)| c)
        .sum();
    extreme as f64 / (1u64 << ranks.len()) as f64
}

/// Normal approximation with tie-corrected variance and continuity correction.
fn normal_p(n: usize, w: f64, ties: &[usize]) -> f64 {
    let n = n as f64;
    let mean = n * (n + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let std_normal = Normal::standard();
    (2.0 * std_normal.sf(z)).min(1.0)
}

/// Two-sided Wilcoxon signed-rank test on paired samples `a` and `b`.
///
/// Zero differences are dropped. With at most [`EXACT_MAX_N`] remaining
/// pairs the p-value is exact; beyond that a normal approximation is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::DimsMismatch(vec![a.len()], vec![b.len()]));
    }
    if a.is_empty() {
        return Err(Error::Empty("paired samples"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidParameter("paired samples must be finite".into()));
    }
    let nonzero: Vec<f64> = diffs.into_iter().filter(|&d| d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::AllZeroDifferences);
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = mid_ranks(&abs);
    let statistic: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let n = nonzero.len();
    let (p, method) = if n <= EXACT_MAX_N {
        (exact_p(&ranks, statistic), WilcoxonMethod::Exact)
    } else {
        (normal_p(n, statistic, &ties), WilcoxonMethod::NormalApprox)
    };
    Ok(WilcoxonResult {
        n_effective: n,
        statistic,
        p_two_sided: p,
        method,
    })
}

/// Benjamini–Hochberg adjusted p-values with `m` total comparisons.
///
/// `m` may exceed the number of p-values passed in, when the remaining
/// comparisons of the family are not part of this call.
pub fn fdr_bh(p_values: &[f64], m: usize) -> Result<Vec<f64>> {
    if let Some(&bad) = p_values.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::InvalidPValue(bad));
    }
    if m < p_values.len() {
        return Err(Error::ComparisonCount { m, len: p_values.len() });
    }
    let mut order: Vec<usize> = (0..p_values.len()).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let mut adjusted = vec![0.0; p_values.len()];
    let mut running = 1.0f64;
    for (rank0, &i) in order.iter().enumerate().rev() {
        let q = p_values[i] * m as f64 / (rank0 + 1) as f64;
        running = running.min(q);
        // p * m / i >= p in exact arithmetic; keep it so under rounding
        adjusted[i] = running.min(1.0).max(p_values[i]);
    }
    Ok(adjusted)
}

/// Direction marker of a comparison row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Symbol {
    /// Not significant.
    #[serde(rename = "—")]
    NotSignificant,
    #[serde(rename = "↑")]
    Higher,
    #[serde(rename = "↓")]
    Lower,
    /// The reference method itself.
    #[serde(rename = "Ref.")]
    Reference,
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Symbol::NotSignificant => "—",
            Symbol::Higher => "↑",
            Symbol::Lower => "↓",
            Symbol::Reference => "Ref.",
        })
    }
}

/// One organ × method line of a comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub organ: String,
    pub label_id: u8,
    pub method: String,
    pub reference: String,
    pub summary: SummaryStats,
    /// Signed-rank statistic; `None` for the reference row or when every
    /// paired difference is zero.
    pub statistic: Option<f64>,
    pub p_raw: Option<f64>,
    pub p_fdr: Option<f64>,
    pub symbol: Symbol,
    /// The `*` marker: FDR-adjusted p below alpha.
    pub fdr_significant: bool,
    /// Highest median / mean among all methods for this organ (bold in tables).
    pub best_median: bool,
    pub best_mean: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareSettings {
    pub alpha: f64,
    /// Comparison count used for FDR within each organ.
    pub m: usize,
}

impl Default for CompareSettings {
    fn default() -> Self {
        CompareSettings { alpha: 0.05, m: 12 }
    }
}

fn direction(method: &SummaryStats, reference: &SummaryStats, organ: &str, name: &str) -> Symbol {
    let by = |a: f64, b: f64| a.partial_cmp(&b).unwrap_or(std::cmp::Ordering::Equal);
    match by(method.median, reference.median).then(by(method.mean, reference.mean)) {
        std::cmp::Ordering::Greater => Symbol::Higher,
        std::cmp::Ordering::Less => Symbol::Lower,
        std::cmp::Ordering::Equal => {
            warn!("{organ}: {name} differs significantly from the reference but median and mean are equal");
            Symbol::NotSignificant
        }
    }
}

/// Compare every method's per-subject Dice against `reference`, organ by organ.
///
/// Rows come out grouped by organ (ascending label id); within an organ the
/// reference row is first, then the other methods in name order.
pub fn compare_methods(
    tables: &BTreeMap<String, Vec<DiceRecord>>,
    reference: &str,
    settings: CompareSettings,
) -> Result<Vec<ComparisonRow>> {
    let CompareSettings { alpha, m } = settings;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let ref_table = tables
        .get(reference)
        .ok_or_else(|| Error::Config(format!("reference method `{reference}` has no table")))?;
    let ref_by_label = by_label(ref_table);
    let grouped: BTreeMap<&str, BTreeMap<(u8, String), BTreeMap<String, f64>>> =
        tables.iter().map(|(k, v)| (k.as_str(), by_label(v))).collect();

    let mut methods: Vec<&str> = vec![reference];
    methods.extend(tables.keys().map(String::as_str).filter(|&k| k != reference));

    // every method must cover exactly the reference organs
    for (&name, labels) in &grouped {
        let ours: BTreeSet<_> = labels.keys().collect();
        let theirs: BTreeSet<_> = ref_by_label.keys().collect();
        if ours != theirs {
            let organ = ours
                .symmetric_difference(&theirs)
                .next()
                .map(|(_, n)| n.clone())
                .unwrap_or_default();
            return Err(Error::SubjectMismatch {
                method: name.to_string(),
                reference: reference.to_string(),
                organ,
            });
        }
    }

    let mut rows = Vec::new();
    for ((label_id, organ), ref_scores) in &ref_by_label {
        let ref_values: Vec<f64> = ref_scores.values().copied().collect();
        let ref_summary = metrics::summarize(&ref_values)?;
        let mut organ_rows = Vec::with_capacity(methods.len());
        for &name in &methods {
            let scores = &grouped[name][&(*label_id, organ.clone())];
            if !scores.keys().eq(ref_scores.keys()) {
                return Err(Error::SubjectMismatch {
                    method: name.to_string(),
                    reference: reference.to_string(),
                    organ: organ.clone(),
                });
            }
            let values: Vec<f64> = scores.values().copied().collect();
            let summary = metrics::summarize(&values)?;
            let mut row = ComparisonRow {
                organ: organ.clone(),
                label_id: *label_id,
                method: name.to_string(),
                reference: reference.to_string(),
                summary,
                statistic: None,
                p_raw: None,
                p_fdr: None,
                symbol: Symbol::Reference,
                fdr_significant: false,
                best_median: false,
                best_mean: false,
            };
            if name != reference {
                row.symbol = Symbol::NotSignificant;
                match wilcoxon_signed_rank(&values, &ref_values) {
                    Ok(t) => {
                        row.statistic = Some(t.statistic);
                        row.p_raw = Some(t.p_two_sided);
                        if t.p_two_sided < alpha {
                            row.symbol = direction(&summary, &ref_summary, organ, name);
                        }
                    }
                    Err(Error::AllZeroDifferences) => {}
                    Err(e) => return Err(e),
                }
            }
            organ_rows.push(row);
        }

        let tested: Vec<usize> = (0..organ_rows.len()).filter(|&i| organ_rows[i].p_raw.is_some()).collect();
        let raw: Vec<f64> = tested.iter().map(|&i| organ_rows[i].p_raw.unwrap()).collect();
        let adjusted = fdr_bh(&raw, m)?;
        for (&i, q) in tested.iter().zip(adjusted) {
            let row = &mut organ_rows[i];
            row.p_fdr = Some(q);
            row.fdr_significant = q < alpha && matches!(row.symbol, Symbol::Higher | Symbol::Lower);
        }

        let best_median = organ_rows.iter().map(|r| r.summary.median).fold(f64::NEG_INFINITY, f64::max);
        let best_mean = organ_rows.iter().map(|r| r.summary.mean).fold(f64::NEG_INFINITY, f64::max);
        for r in &mut organ_rows {
            r.best_median = r.summary.median == best_median;
            r.best_mean = r.summary.mean == best_mean;
        }
        rows.extend(organ_rows);
    }
    Ok(rows)
}

/// CSV line layout of a [`ComparisonRow`].
#[derive(Debug, Serialize, Deserialize)]
struct ComparisonCsvRow {
    organ: String,
    method: String,
    reference: String,
    n: usize,
    median: f64,
    mean: f64,
    std: f64,
    #[serde(rename = "W")]
    w: Option<f64>,
    p_raw: Option<f64>,
    p_fdr: Option<f64>,
    symbol: Symbol,
    fdr_significant: bool,
    best_median: bool,
    best_mean: bool,
}

/// Settings recorded next to a comparison table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ComparisonMetadata {
    pub alpha: f64,
    pub m: usize,
    pub fdr_method: String,
    pub wilcoxon_mode: String,
    pub zero_differences: String,
    pub reference: String,
}

impl ComparisonMetadata {
    pub fn new(reference: &str, settings: CompareSettings) -> Self {
        ComparisonMetadata {
            alpha: settings.alpha,
            m: settings.m,
            fdr_method: "benjamini-hochberg (assumed)".into(),
            wilcoxon_mode: format!("two-sided; exact enumeration for n <= {EXACT_MAX_N}, normal approximation with tie and continuity correction above"),
            zero_differences: "dropped".into(),
            reference: reference.to_string(),
        }
    }
}

/// Path of the JSON sidecar for a comparison CSV (`<csv>.meta.json`).
pub fn metadata_path(csv_path: &Path) -> std::path::PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".meta.json");
    s.into()
}

/// Write a comparison table and its metadata sidecar.
pub fn write_comparison_csv(path: impl AsRef<Path>, rows: &[ComparisonRow], meta: &ComparisonMetadata) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| metrics::csv_io(path, e))?;
    for r in rows {
        w.serialize(ComparisonCsvRow {
            organ: r.organ.clone(),
            method: r.method.clone(),
            reference: r.reference.clone(),
            n: r.summary.n,
            median: r.summary.median,
            mean: r.summary.mean,
            std: r.summary.std,
            w: r.statistic,
            p_raw: r.p_raw,
            p_fdr: r.p_fdr,
            symbol: r.symbol,
            fdr_significant: r.fdr_significant,
            best_median: r.best_median,
            best_mean: r.best_mean,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta_path = metadata_path(path);
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
}
