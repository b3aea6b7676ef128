//! Variant-level summary statistics and variant correlation matrices.
//!
//! Input CSV layout (header required):
//!
//! ```text
//! variant_id,effect_allele,other_allele,beta_<rf1>,se_<rf1>,...,beta_<rfK>,se_<rfK>,beta_y,se_y
//! ```
//!
//! Risk-factor names are taken from the `beta_<name>` columns. Correlation
//! files hold J lines of J comma-separated reals in dataset order, no header.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{MrError, Result};
use crate::linalg::{cholesky, PivotPolicy};
use crate::numfmt::{sig, DATA_DIGITS};

/// Tolerance for symmetry, unit diagonal and range checks on correlations.
pub const CORRELATION_TOL: f64 = 1e-8;
/// Smallest pivot accepted by the semidefiniteness check before clamping.
pub const PSD_PIVOT_TOL: f64 = 1e-10;

/// Associations of one variant with each risk factor and with the outcome,
/// all per copy of `effect_allele`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantRecord {
    pub variant_id: String,
    pub effect_allele: String,
    pub other_allele: String,
    pub beta_x: Vec<f64>,
    pub se_x: Vec<f64>,
    pub beta_y: f64,
    pub se_y: f64,
}

impl VariantRecord {
    fn validate(&self, k: usize, row: usize, names: &[String]) -> Result<()> {
        if self.variant_id.is_empty() {
            return Err(MrError::EmptyField { row, column: "variant_id".into() });
        }
        if self.effect_allele.is_empty() {
            return Err(MrError::EmptyField { row, column: "effect_allele".into() });
        }
        if self.other_allele.is_empty() {
            return Err(MrError::EmptyField { row, column: "other_allele".into() });
        }
        if self.beta_x.len() != k || self.se_x.len() != k {
            return Err(MrError::ColumnCountMismatch {
                row,
                expected: k,
                found: self.beta_x.len().min(self.se_x.len()),
            });
        }
        for (i, name) in names.iter().enumerate() {
            check_beta(self.beta_x[i], row, &format!("beta_{name}"))?;
            check_se(self.se_x[i], row, &format!("se_{name}"))?;
        }
        check_beta(self.beta_y, row, "beta_y")?;
        check_se(self.se_y, row, "se_y")?;
        Ok(())
    }

    /// Same variant reported per copy of the other allele.
    pub fn flipped(&self) -> VariantRecord {
        VariantRecord {
            variant_id: self.variant_id.clone(),
            effect_allele: self.other_allele.clone(),
            other_allele: self.effect_allele.clone(),
            beta_x: self.beta_x.iter().map(|b| -b).collect(),
            se_x: self.se_x.clone(),
            beta_y: -self.beta_y,
            se_y: self.se_y,
        }
    }
}

fn check_beta(x: f64, row: usize, column: &str) -> Result<()> {
    if !x.is_finite() {
        return Err(MrError::NonFinite { row, column: column.into() });
    }
    Ok(())
}

fn check_se(x: f64, row: usize, column: &str) -> Result<()> {
    if !x.is_finite() {
        return Err(MrError::NonFinite { row, column: column.into() });
    }
    if x <= 0.0 {
        return Err(MrError::NonPositiveSe { row, column: column.into() });
    }
    Ok(())
}

/// Symmetric, unit-diagonal, positive semi-definite variant correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    entries: DMatrix<f64>,
}

impl CorrelationMatrix {
    /// Validates and stores `entries`. Entries within tolerance of the bounds
    /// are symmetrized, the diagonal set to exactly one, and values clamped to
    /// `[-1, 1]`.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        if entries.ncols() != n {
            return Err(MrError::Correlation(format!(
                "matrix must be square, got {}x{}",
                n,
                entries.ncols()
            )));
        }
        if n == 0 {
            return Err(MrError::Correlation("empty matrix".into()));
        }
        for s in 0..n {
            for t in 0..n {
                let v = entries[(s, t)];
                if !v.is_finite() {
                    return Err(MrError::Correlation(format!("non-finite entry at ({}, {})", s + 1, t + 1)));
                }
                if s != t && v.abs() > 1.0 + CORRELATION_TOL {
                    return Err(MrError::Correlation(format!(
                        "correlation out of range at ({}, {}): {v}",
                        s + 1,
                        t + 1
                    )));
                }
            }
        }
        for s in 0..n {
            if (entries[(s, s)] - 1.0).abs() > CORRELATION_TOL {
                return Err(MrError::Correlation(format!(
                    "diagonal entry {} is {} (must be 1)",
                    s + 1,
                    entries[(s, s)]
                )));
            }
            for t in s + 1..n {
                if (entries[(s, t)] - entries[(t, s)]).abs() > CORRELATION_TOL {
                    return Err(MrError::Correlation(format!(
                        "asymmetric at ({}, {}): {} vs {}",
                        s + 1,
                        t + 1,
                        entries[(s, t)],
                        entries[(t, s)]
                    )));
                }
            }
        }
        let clean = DMatrix::from_fn(n, n, |s, t| {
            if s == t {
                1.0
            } else {
                (0.5 * (entries[(s, t)] + entries[(t, s)])).clamp(-1.0, 1.0)
            }
        });
        cholesky(&clean, PivotPolicy::Semidefinite { neg_tol: PSD_PIVOT_TOL }).map_err(|e| match e {
            MrError::NotPositiveDefinite { pivot, value } => MrError::Correlation(format!(
                "not positive semi-definite (factorization pivot {} = {value:e})",
                pivot + 1
            )),
            other => other,
        })?;
        Ok(CorrelationMatrix { entries: clean })
    }

    pub fn identity(n: usize) -> Self {
        CorrelationMatrix { entries: DMatrix::identity(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.entries[(s, t)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Correlation after re-expressing the variants with the given signs
    /// (`signs[s]` is +1 or -1).
    pub fn with_signs(&self, signs: &[f64]) -> Self {
        let n = self.dim();
        CorrelationMatrix {
            entries: DMatrix::from_fn(n, n, |s, t| self.entries[(s, t)] * signs[s] * signs[t]),
        }
    }

    /// Rows and columns restricted to `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        CorrelationMatrix {
            entries: DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.entries[(idx[a], idx[b])]),
        }
    }
}

/// Per-variant associations with K risk factors and one outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryDataset {
    risk_factor_names: Vec<String>,
    variants: Vec<VariantRecord>,
    correlation: Option<CorrelationMatrix>,
}

impl SummaryDataset {
    pub fn new(risk_factor_names: Vec<String>, variants: Vec<VariantRecord>) -> Result<Self> {
        if risk_factor_names.is_empty() {
            return Err(MrError::InvalidDataset("at least one risk factor is required".into()));
        }
        let mut seen_names = HashSet::new();
        for name in &risk_factor_names {
            if name.is_empty() {
                return Err(MrError::InvalidDataset("empty risk factor name".into()));
            }
            if !seen_names.insert(name.as_str()) {
                return Err(MrError::InvalidDataset(format!("duplicate risk factor name {name:?}")));
            }
        }
        if variants.is_empty() {
            return Err(MrError::InvalidDataset("no variants".into()));
        }
        let k = risk_factor_names.len();
        let mut ids = HashSet::with_capacity(variants.len());
        for (i, v) in variants.iter().enumerate() {
            v.validate(k, i + 1, &risk_factor_names)?;
            if !ids.insert(v.variant_id.as_str()) {
                return Err(MrError::DuplicateVariant { row: i + 1, id: v.variant_id.clone() });
            }
        }
        Ok(SummaryDataset { risk_factor_names, variants, correlation: None })
    }

    /// Attaches a correlation matrix whose rows follow variant order.
    pub fn with_correlation(mut self, correlation: CorrelationMatrix) -> Result<Self> {
        if correlation.dim() != self.j() {
            return Err(MrError::Correlation(format!(
                "dimension {} does not match J={}",
                correlation.dim(),
                self.j()
            )));
        }
        self.correlation = Some(correlation);
        Ok(self)
    }

    pub fn without_correlation(mut self) -> Self {
        self.correlation = None;
        self
    }

    pub fn risk_factor_names(&self) -> &[String] {
        &self.risk_factor_names
    }

    pub fn variants(&self) -> &[VariantRecord] {
        &self.variants
    }

    pub fn correlation(&self) -> Option<&CorrelationMatrix> {
        self.correlation.as_ref()
    }

    /// Number of variants.
    pub fn j(&self) -> usize {
        self.variants.len()
    }

    /// Number of risk factors.
    pub fn k(&self) -> usize {
        self.risk_factor_names.len()
    }

    pub fn risk_factor_index(&self, name: &str) -> Result<usize> {
        self.risk_factor_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| MrError::UnknownRiskFactor(name.to_string()))
    }

    pub fn beta_x_column(&self, k: usize) -> Vec<f64> {
        self.variants.iter().map(|v| v.beta_x[k]).collect()
    }

    pub fn beta_y(&self) -> Vec<f64> {
        self.variants.iter().map(|v| v.beta_y).collect()
    }

    pub fn se_y(&self) -> Vec<f64> {
        self.variants.iter().map(|v| v.se_y).collect()
    }

    /// Inverse-variance weights `se(beta_y)^-2`.
    pub fn weights(&self) -> Vec<f64> {
        self.variants.iter().map(|v| 1.0 / (v.se_y * v.se_y)).collect()
    }

    /// J x K matrix of risk-factor associations.
    pub fn beta_x_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.j(), self.k(), |j, k| self.variants[j].beta_x[k])
    }

    /// Keeps only the named risk factors, in the given order.
    pub fn select_risk_factors(&self, names: &[&str]) -> Result<SummaryDataset> {
        let idx = names
            .iter()
            .map(|n| self.risk_factor_index(n))
            .collect::<Result<Vec<_>>>()?;
        let variants = self
            .variants
            .iter()
            .map(|v| VariantRecord {
                beta_x: idx.iter().map(|&i| v.beta_x[i]).collect(),
                se_x: idx.iter().map(|&i| v.se_x[i]).collect(),
                ..v.clone()
            })
            .collect();
        let mut out = SummaryDataset::new(names.iter().map(|s| s.to_string()).collect(), variants)?;
        out.correlation = self.correlation.clone();
        Ok(out)
    }

    /// Replaces the variant list, keeping names and correlation.
    pub(crate) fn with_variants(&self, variants: Vec<VariantRecord>, correlation: Option<CorrelationMatrix>) -> Self {
        SummaryDataset { risk_factor_names: self.risk_factor_names.clone(), variants, correlation }
    }

    /// Writes the dataset in the input CSV layout, 12 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["variant_id".to_string(), "effect_allele".into(), "other_allele".into()];
        for name in &self.risk_factor_names {
            header.push(format!("beta_{name}"));
            header.push(format!("se_{name}"));
        }
        header.push("beta_y".into());
        header.push("se_y".into());
        w.write_record(&header)?;
        for v in &self.variants {
            let mut rec = vec![v.variant_id.clone(), v.effect_allele.clone(), v.other_allele.clone()];
            for (b, s) in v.beta_x.iter().zip(&v.se_x) {
                rec.push(sig(*b, DATA_DIGITS));
                rec.push(sig(*s, DATA_DIGITS));
            }
            rec.push(sig(v.beta_y, DATA_DIGITS));
            rec.push(sig(v.se_y, DATA_DIGITS));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_dataset(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }
}

/// Reads and validates a summary CSV with `k` risk factors.
pub fn load_dataset(path: &Path, k: usize) -> Result<SummaryDataset> {
    read_dataset(File::open(path)?, k)
}

/// Parses a summary CSV from any reader; see [`load_dataset`].
pub fn read_dataset<R: Read>(reader: R, k: usize) -> Result<SummaryDataset> {
    if k == 0 {
        return Err(MrError::InvalidArgument("k must be at least 1".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let expected = 3 + 2 * k + 2;
    if header.len() != expected {
        return Err(MrError::MalformedHeader(format!(
            "column count mismatch: header has {} columns, k={k} requires {expected}",
            header.len()
        )));
    }
    let fixed = ["variant_id", "effect_allele", "other_allele"];
    for (i, want) in fixed.iter().enumerate() {
        if &header[i] != *want {
            return Err(MrError::MalformedHeader(format!(
                "column {} must be {want}, found {:?}",
                i + 1,
                &header[i]
            )));
        }
    }
    let mut names = Vec::with_capacity(k);
    for f in 0..k {
        let b = &header[3 + 2 * f];
        let s = &header[4 + 2 * f];
        let name = b.strip_prefix("beta_").filter(|n| !n.is_empty()).ok_or_else(|| {
            MrError::MalformedHeader(format!("column {} must be beta_<name>, found {b:?}", 4 + 2 * f))
        })?;
        if s != format!("se_{name}") {
            return Err(MrError::MalformedHeader(format!(
                "column {} must be se_{name}, found {s:?}",
                5 + 2 * f
            )));
        }
        if name == "y" {
            return Err(MrError::MalformedHeader("risk factor may not be named y".into()));
        }
        names.push(name.to_string());
    }
    if &header[expected - 2] != "beta_y" || &header[expected - 1] != "se_y" {
        return Err(MrError::MalformedHeader(format!(
            "last two columns must be beta_y,se_y, found {:?},{:?}",
            &header[expected - 2],
            &header[expected - 1]
        )));
    }

    let mut variants = Vec::new();
    let mut ids = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() != expected {
            return Err(MrError::ColumnCountMismatch { row, expected, found: rec.len() });
        }
        let field = |c: usize| -> Result<f64> { parse_number(&rec[c], row, &header[c]) };
        let mut beta_x = Vec::with_capacity(k);
        let mut se_x = Vec::with_capacity(k);
        for f in 0..k {
            beta_x.push(field(3 + 2 * f)?);
            se_x.push(field(4 + 2 * f)?);
        }
        let v = VariantRecord {
            variant_id: rec[0].to_string(),
            effect_allele: rec[1].to_string(),
            other_allele: rec[2].to_string(),
            beta_x,
            se_x,
            beta_y: field(expected - 2)?,
            se_y: field(expected - 1)?,
        };
        v.validate(k, row, &names)?;
        if !ids.insert(v.variant_id.clone()) {
            return Err(MrError::DuplicateVariant { row, id: v.variant_id });
        }
        variants.push(v);
    }
    SummaryDataset::new(names, variants)
}

fn parse_number(s: &str, row: usize, column: &str) -> Result<f64> {
    if s.is_empty() {
        return Err(MrError::EmptyField { row, column: column.into() });
    }
    let x: f64 = s.parse().map_err(|_| MrError::NonNumeric {
        row,
        column: column.into(),
        value: s.into(),
    })?;
    if !x.is_finite() {
        return Err(MrError::NonFinite { row, column: column.into() });
    }
    Ok(x)
}

/// Reads a J x J correlation file matching `dataset`'s variant order.
pub fn load_correlation(path: &Path, dataset: &SummaryDataset) -> Result<CorrelationMatrix> {
    read_correlation(File::open(path)?, dataset.j())
}

pub fn read_correlation<R: Read>(reader: R, j: usize) -> Result<CorrelationMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::with_capacity(j * j);
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() != j {
            return Err(MrError::Correlation(format!(
                "row {row} has {} entries, expected {j}",
                rec.len()
            )));
        }
        for c in 0..j {
            values.push(parse_number(&rec[c], row, &format!("{}", c + 1))?);
        }
        rows += 1;
    }
    if rows != j {
        return Err(MrError::Correlation(format!("dimension mismatch: {rows} rows, expected {j}")));
    }
    CorrelationMatrix::new(DMatrix::from_row_slice(j, j, &values))
}
