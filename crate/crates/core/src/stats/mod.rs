//! Per-team normalization, one-way repeated-measures ANOVA and paired
//! post-hoc tests with Bonferroni adjustment.

pub mod special;

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("matrix must have at least 2 rows and 2 columns, got {rows}x{cols}")]
    TooSmall { rows: usize, cols: usize },
    #[error("row {row} has {got} cells, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("non-finite cell at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("row {row} ({label}) has non-positive mean {mean}")]
    NonPositiveRowMean { row: usize, label: String, mean: f64 },
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("label count mismatch: {0}")]
    Labels(String),
    #[error("invalid degrees of freedom d1={0}, d2={1}")]
    InvalidDf(u64, u64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot parse cell {value:?} at line {line}: not a number")]
    Parse { line: usize, value: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Subjects (rows) by conditions (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMatrix {
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    data: Vec<Vec<f64>>,
}

impl TrialMatrix {
    pub fn new(
        row_labels: Vec<String>,
        col_labels: Vec<String>,
        data: Vec<Vec<f64>>,
    ) -> Result<Self, StatsError> {
        let rows = data.len();
        let cols = col_labels.len();
        if rows < 2 || cols < 2 {
            return Err(StatsError::TooSmall { rows, cols });
        }
        if row_labels.len() != rows {
            return Err(StatsError::Labels(format!(
                "{} row labels for {rows} rows",
                row_labels.len()
            )));
        }
        for (r, row) in data.iter().enumerate() {
            if row.len() != cols {
                return Err(StatsError::Ragged {
                    row: r,
                    got: row.len(),
                    expected: cols,
                });
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(StatsError::NonFinite { row: r, col: c });
            }
        }
        Ok(Self {
            row_labels,
            col_labels,
            data,
        })
    }

    /// Header row holds the condition labels after a leading id column; each
    /// following record is `id, value, value, ...`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, StatsError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col_labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut row_labels = Vec::new();
        let mut data = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let mut it = rec.iter();
            row_labels.push(it.next().unwrap_or_default().to_string());
            let row = it
                .map(|v| {
                    v.parse::<f64>().map_err(|_| StatsError::Parse {
                        line,
                        value: v.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            data.push(row);
        }
        Self::new(row_labels, col_labels, data)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, StatsError> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W, id_header: &str) -> Result<(), StatsError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![id_header.to_string()];
        header.extend(self.col_labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.row_labels.iter().zip(&self.data) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.data.len()
    }

    pub fn n_cols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.data.iter().map(|r| r[c]).collect()
    }

    /// Sub-matrix with the named columns, in the given order.
    pub fn select<S: AsRef<str>>(&self, labels: &[S]) -> Result<Self, StatsError> {
        let idx = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                self.col_labels
                    .iter()
                    .position(|c| c == l)
                    .ok_or_else(|| StatsError::UnknownColumn(l.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(
            self.row_labels.clone(),
            idx.iter().map(|&i| self.col_labels[i].clone()).collect(),
            self.data
                .iter()
                .map(|r| idx.iter().map(|&i| r[i]).collect())
                .collect(),
        )
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            data: self
                .data
                .iter()
                .map(|r| r.iter().map(|v| v * c).collect())
                .collect(),
            ..self.clone()
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Divides every cell by its row mean.
pub fn normalize_rows(raw: &TrialMatrix) -> Result<TrialMatrix, StatsError> {
    let data = raw
        .data
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let m = mean(row);
            if m.is_nan() || m <= 0.0 {
                return Err(StatsError::NonPositiveRowMean {
                    row: r,
                    label: raw.row_labels[r].clone(),
                    mean: m,
                });
            }
            Ok(row.iter().map(|v| v / m).collect())
        })
        .collect::<Result<Vec<Vec<f64>>, _>>()?;
    TrialMatrix::new(raw.row_labels.clone(), raw.col_labels.clone(), data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub label: String,
    pub mean: f64,
    pub sd: f64,
}

pub fn summarize(m: &TrialMatrix) -> Vec<ColumnSummary> {
    (0..m.n_cols())
        .map(|c| {
            let col = m.column(c);
            ColumnSummary {
                label: m.col_labels[c].clone(),
                mean: mean(&col),
                sd: sample_sd(&col),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub n_subjects: usize,
    pub n_conditions: usize,
    pub ss_total: f64,
    pub ss_between: f64,
    pub ss_within: f64,
    pub ss_subjects: f64,
    pub ss_error: f64,
    pub df_between: u64,
    pub df_within: u64,
    pub df_subjects: u64,
    pub df_error: u64,
    pub ms_between: f64,
    pub ms_within: f64,
    pub ms_error: f64,
    /// `+inf` when the error variance vanishes but conditions differ.
    pub f_stat: f64,
    pub p_value: f64,
    /// Error sum of squares is zero (relative to the total variation).
    pub degenerate: bool,
}

const DEGENERATE_REL: f64 = 1e-12;

/// One-way repeated-measures ANOVA, no sphericity correction.
pub fn rm_anova(m: &TrialMatrix) -> AnovaResult {
    let n = m.n_rows();
    let k = m.n_cols();
    let grand = m.data.iter().flatten().sum::<f64>() / (n * k) as f64;
    let ss_total: f64 = m.data.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let ss_between: f64 = (0..k)
        .map(|c| (mean(&m.column(c)) - grand).powi(2))
        .sum::<f64>()
        * n as f64;
    let ss_subjects: f64 = m
        .data
        .iter()
        .map(|r| (mean(r) - grand).powi(2))
        .sum::<f64>()
        * k as f64;
    let ss_within = ss_total - ss_between;
    let ss_error = (ss_within - ss_subjects).max(0.0);

    let df_between = (k - 1) as u64;
    let df_within = (k * (n - 1)) as u64;
    let df_subjects = (n - 1) as u64;
    let df_error = ((k - 1) * (n - 1)) as u64;
    let ms_between = ss_between / df_between as f64;
    let ms_within = ss_within / df_within as f64;
    let ms_error = ss_error / df_error as f64;

    let scale = ss_total.max(f64::MIN_POSITIVE);
    let degenerate = ss_error <= DEGENERATE_REL * scale;
    let (f_stat, p_value) = if degenerate {
        if ss_between <= DEGENERATE_REL * scale {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else {
        let f = ms_between / ms_error;
        (f, special::f_upper_tail(f, df_between as f64, df_error as f64))
    };

    AnovaResult {
        n_subjects: n,
        n_conditions: k,
        ss_total,
        ss_between,
        ss_within,
        ss_subjects,
        ss_error,
        df_between,
        df_within,
        df_subjects,
        df_error,
        ms_between,
        ms_within,
        ms_error,
        f_stat,
        p_value,
        degenerate,
    }
}

/// `P(F(d1, d2) > f)`.
pub fn f_sf(f: f64, d1: u64, d2: u64) -> Result<f64, StatsError> {
    if d1 == 0 || d2 == 0 {
        return Err(StatsError::InvalidDf(d1, d2));
    }
    Ok(special::f_upper_tail(f.max(0.0), d1 as f64, d2 as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub a: String,
    pub b: String,
    /// Mean of `a - b` over subjects.
    pub mean_diff: f64,
    pub t_stat: f64,
    pub df: u64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub significant_raw: bool,
    pub significant_adjusted: bool,
    /// Row-wise differences have zero variance.
    pub degenerate: bool,
}

struct DiffTest {
    mean: f64,
    sd: f64,
    t: f64,
    p: f64,
    degenerate: bool,
}

fn paired_from_diffs(diffs: &[f64]) -> DiffTest {
    let n = diffs.len();
    let md = mean(diffs);
    let sd = sample_sd(diffs);
    let scale = diffs.iter().map(|d| d.abs()).fold(0.0, f64::max).max(md.abs());
    let degenerate = sd <= 1e-12 * scale.max(f64::MIN_POSITIVE);
    let (t, p) = if degenerate {
        if md.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) || md == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(md), 0.0)
        }
    } else {
        let t = md / (sd / (n as f64).sqrt());
        (t, special::t_two_sided(t, (n - 1) as f64))
    };
    DiffTest {
        mean: md,
        sd,
        t,
        p,
        degenerate,
    }
}

/// Two-sided paired t-test of `a` against `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_diff: f64,
    /// `None` with fewer than two pairs, as are the fields below.
    pub sd_diff: Option<f64>,
    pub t_stat: Option<f64>,
    pub df: Option<u64>,
    pub p_value: Option<f64>,
    pub degenerate: bool,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::Labels(format!("{} vs {} paired samples", a.len(), b.len())));
    }
    if let Some(i) = a.iter().chain(b).position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite {
            row: i % a.len().max(1),
            col: i / a.len().max(1),
        });
    }
    let n = a.len();
    if n == 0 {
        return Err(StatsError::TooSmall { rows: 0, cols: 2 });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let base = PairedTest {
        n,
        mean_a: mean(a),
        mean_b: mean(b),
        mean_diff: mean(&diffs),
        sd_diff: None,
        t_stat: None,
        df: None,
        p_value: None,
        degenerate: false,
    };
    if n < 2 {
        return Ok(base);
    }
    let d = paired_from_diffs(&diffs);
    Ok(PairedTest {
        sd_diff: Some(d.sd),
        t_stat: Some(d.t),
        df: Some((n - 1) as u64),
        p_value: Some(d.p),
        degenerate: d.degenerate,
        ..base
    })
}

/// Paired t-tests over every condition pair `(i, j)`, `i < j`.
pub fn bonferroni_pairwise(m: &TrialMatrix, alpha: f64) -> Vec<PairwiseComparison> {
    let k = m.n_cols();
    let n = m.n_rows();
    let n_pairs = k * (k - 1) / 2;
    let mut out = Vec::with_capacity(n_pairs);
    for i in 0..k {
        for j in (i + 1)..k {
            let diffs: Vec<f64> = m.data.iter().map(|r| r[i] - r[j]).collect();
            let d = paired_from_diffs(&diffs);
            let (md, t, p, degenerate) = (d.mean, d.t, d.p, d.degenerate);
            let df = (n - 1) as u64;
            let p_adj = (p * n_pairs as f64).min(1.0);
            out.push(PairwiseComparison {
                a: m.col_labels[i].clone(),
                b: m.col_labels[j].clone(),
                mean_diff: md,
                t_stat: t,
                df,
                p_raw: p,
                p_adjusted: p_adj,
                significant_raw: p < alpha,
                significant_adjusted: p_adj < alpha,
                degenerate,
            });
        }
    }
    out
}

/// Everything the statistics commands print or serialize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaReport {
    pub columns: Vec<String>,
    pub alpha: f64,
    pub summary: Vec<ColumnSummary>,
    pub anova: AnovaResult,
    pub pairwise: Vec<PairwiseComparison>,
    pub notes: Vec<String>,
}

impl AnovaReport {
    pub fn build(m: &TrialMatrix, alpha: f64) -> Self {
        let mut notes = vec!["uncorrected repeated-measures ANOVA (no sphericity correction)".to_string()];
        let anova = rm_anova(m);
        if anova.degenerate {
            notes.push("zero error variance: F/p reported by convention".to_string());
        }
        let pairwise = bonferroni_pairwise(m, alpha);
        if pairwise.iter().any(|p| p.degenerate) {
            notes.push("some pairwise differences have zero variance".to_string());
        }
        Self {
            columns: m.col_labels.clone(),
            alpha,
            summary: summarize(m),
            anova,
            pairwise,
            notes,
        }
    }

    pub fn render_text(&self) -> String {
        let a = &self.anova;
        let mut s = String::new();
        let _ = writeln!(s, "Conditions: {}  (n = {})", self.columns.join(", "), a.n_subjects);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<12} {:>10} {:>10}", "Condition", "Mean", "S.D.");
        for c in &self.summary {
            let _ = writeln!(s, "{:<12} {:>10.4} {:>10.4}", c.label, c.mean, c.sd);
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<16} {:>4} {:>14} {:>12} {:>10} {:>10}",
            "Source", "DF", "Sum of Sq.", "Mean Sq.", "F", "p"
        );
        let _ = writeln!(
            s,
            "{:<16} {:>4} {:>14.4} {:>12.4} {:>10.4} {:>10.4}",
            "Between groups", a.df_between, a.ss_between, a.ms_between, a.f_stat, a.p_value
        );
        let _ = writeln!(
            s,
            "{:<16} {:>4} {:>14.4} {:>12.4}",
            "Within groups", a.df_within, a.ss_within, a.ms_within
        );
        let _ = writeln!(
            s,
            "{:<16} {:>4} {:>14.4} {:>12.4}",
            "Subjects", a.df_subjects, a.ss_subjects, a.ss_subjects / a.df_subjects as f64
        );
        let _ = writeln!(
            s,
            "{:<16} {:>4} {:>14.4} {:>12.4}",
            "Error", a.df_error, a.ss_error, a.ms_error
        );
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "Pairwise paired t-tests (alpha = {}, Bonferroni x{})",
            self.alpha,
            self.pairwise.len()
        );
        let _ = writeln!(
            s,
            "{:<14} {:>10} {:>9} {:>9} {:>9} {:>5} {:>5}",
            "Pair", "Mean diff", "t", "p raw", "p adj", "raw", "adj"
        );
        let mark = |b: bool| if b { "*" } else { "" };
        for p in &self.pairwise {
            let _ = writeln!(
                s,
                "{:<14} {:>10.4} {:>9.4} {:>9.4} {:>9.4} {:>5} {:>5}",
                format!("{} vs {}", p.a, p.b),
                p.mean_diff,
                p.t_stat,
                p.p_raw,
                p.p_adjusted,
                mark(p.significant_raw),
                mark(p.significant_adjusted)
            );
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}
