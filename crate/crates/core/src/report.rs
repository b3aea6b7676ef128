//! Analysis reports. Text, CSV and JSON-lines renderings are all produced
//! from the same flat records.

use std::io::Write;

use serde::Serialize;
use serde_json::{json, Value};

use crate::data::SummaryDataset;
use crate::error::{MrError, Result};
use crate::estimators::{
    egger_correlated, egger_multivariable, egger_univariable, f_statistic, ivw_correlated, ivw_multivariable,
    ivw_univariable, MRResult, Model,
};
use crate::orientation::orient;
use crate::wls::WeightScheme;
use crate::numfmt::{report, round_sig, REPORT_DIGITS};
use crate::orientation::OrientationReport;

pub const UNITS_CAUSAL: &str = "log-OR per SD";
pub const UNITS_INTERCEPT: &str = "log-OR per allele";
pub const UNITS_RATIO: &str = "dimensionless";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub j: usize,
    pub k: usize,
    pub risk_factor_names: Vec<String>,
}

/// Sample size, variance explained and the resulting F-statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstrumentStrength {
    pub n: u64,
    pub k_variants: u64,
    pub r2: f64,
    pub f_statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub dataset: DatasetSummary,
    pub orientation: Option<OrientationReport>,
    pub results: Vec<MRResult>,
    pub strength: Option<InstrumentStrength>,
    pub notes: Vec<String>,
    pub warnings: Vec<String>,
}

/// One estimate or intercept row.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub method: String,
    pub model: String,
    pub scheme: String,
    pub correlated: bool,
    pub experimental: bool,
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub df: usize,
    pub odds_ratio: f64,
    pub or_low: f64,
    pub or_high: f64,
    pub units: &'static str,
    pub n_variants: usize,
    pub residual_scale: f64,
    pub level: f64,
}

pub const RECORD_FIELDS: [&str; 19] = [
    "method",
    "model",
    "scheme",
    "correlated",
    "experimental",
    "term",
    "estimate",
    "se",
    "ci_low",
    "ci_high",
    "p_value",
    "df",
    "odds_ratio",
    "or_low",
    "or_high",
    "units",
    "n_variants",
    "residual_scale",
    "level",
];

impl EstimateRecord {
    fn new(r: &MRResult, term: &str, est: [f64; 5], df: usize, units: &'static str) -> Self {
        let [estimate, se, ci_low, ci_high, p_value] = est;
        EstimateRecord {
            method: r.method.model.code().to_string(),
            model: r.method.model.description().to_string(),
            scheme: r.method.scheme.label().to_string(),
            correlated: r.method.correlated,
            experimental: r.experimental,
            term: term.to_string(),
            estimate,
            se,
            ci_low,
            ci_high,
            p_value,
            df,
            odds_ratio: estimate.exp(),
            or_low: ci_low.exp(),
            or_high: ci_high.exp(),
            units,
            n_variants: r.n_variants,
            residual_scale: r.residual_scale,
            level: r.level,
        }
    }

    /// Field values as text, in `RECORD_FIELDS` order.
    pub fn cells(&self) -> Vec<String> {
        vec![
            self.method.clone(),
            self.model.clone(),
            self.scheme.clone(),
            self.correlated.to_string(),
            self.experimental.to_string(),
            self.term.clone(),
            report(self.estimate),
            report(self.se),
            report(self.ci_low),
            report(self.ci_high),
            report(self.p_value),
            self.df.to_string(),
            report(self.odds_ratio),
            report(self.or_low),
            report(self.or_high),
            self.units.to_string(),
            self.n_variants.to_string(),
            report(self.residual_scale),
            report(self.level),
        ]
    }

    /// JSON object with the same fields; numbers rounded like the text cells.
    pub fn to_json(&self) -> Value {
        let n = |x: f64| {
            if x.is_finite() {
                json!(round_sig(x, REPORT_DIGITS))
            } else {
                json!(report(x))
            }
        };
        json!({
            "record": "estimate",
            "method": self.method,
            "model": self.model,
            "scheme": self.scheme,
            "correlated": self.correlated,
            "experimental": self.experimental,
            "term": self.term,
            "estimate": n(self.estimate),
            "se": n(self.se),
            "ci_low": n(self.ci_low),
            "ci_high": n(self.ci_high),
            "p_value": n(self.p_value),
            "df": self.df,
            "odds_ratio": n(self.odds_ratio),
            "or_low": n(self.or_low),
            "or_high": n(self.or_high),
            "units": self.units,
            "n_variants": self.n_variants,
            "residual_scale": n(self.residual_scale),
            "level": n(self.level),
        })
    }
}

pub const INTERCEPT_TERM: &str = "(intercept)";

/// Estimate rows of one result, followed by its intercept row if any.
pub fn result_records(r: &MRResult) -> Vec<EstimateRecord> {
    let mut out: Vec<EstimateRecord> = r
        .estimates
        .iter()
        .map(|e| {
            EstimateRecord::new(r, &e.risk_factor, [e.theta_hat, e.se, e.ci_low, e.ci_high, e.p_value], e.df, UNITS_CAUSAL)
        })
        .collect();
    if let Some(i) = &r.intercept {
        out.push(EstimateRecord::new(
            r,
            INTERCEPT_TERM,
            [i.theta_0, i.se, i.ci_low, i.ci_high, i.p_value],
            i.df,
            UNITS_INTERCEPT,
        ));
    }
    out
}

impl AnalysisReport {
    pub fn records(&self) -> Vec<EstimateRecord> {
        self.results.iter().flat_map(result_records).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(RECORD_FIELDS)?;
        for r in self.records() {
            w.write_record(r.cells())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = |v: Value| writeln!(out, "{v}");
        line(json!({
            "record": "dataset",
            "j": self.dataset.j,
            "k": self.dataset.k,
            "risk_factors": self.dataset.risk_factor_names,
        }))?;
        if let Some(o) = &self.orientation {
            line(json!({
                "record": "orientation",
                "reference": o.reference,
                "flipped": o.flipped_ids.len(),
                "flipped_ids": o.flipped_ids,
                "zero_ids": o.zero_ids,
            }))?;
        }
        if let Some(s) = &self.strength {
            line(json!({
                "record": "strength",
                "n": s.n,
                "k_variants": s.k_variants,
                "r2": round_sig(s.r2, REPORT_DIGITS),
                "f_statistic": round_sig(s.f_statistic, REPORT_DIGITS),
                "units": UNITS_RATIO,
            }))?;
        }
        for r in self.records() {
            line(r.to_json())?;
        }
        for n in &self.notes {
            line(json!({"record": "note", "message": n}))?;
        }
        for w in &self.warnings {
            line(json!({"record": "warning", "message": w}))?;
        }
        Ok(())
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let d = &self.dataset;
        writeln!(out, "Variants: J={}  Risk factors: K={} ({})", d.j, d.k, d.risk_factor_names.join(", "))?;
        if let Some(o) = &self.orientation {
            writeln!(
                out,
                "Orientation: reference {}; {} flipped; {} with zero association",
                o.reference,
                o.flipped_ids.len(),
                o.zero_ids.len()
            )?;
        }
        if let Some(s) = &self.strength {
            writeln!(
                out,
                "Instrument strength: N={} variants={} R2={} F={} ({})",
                s.n,
                s.k_variants,
                report(s.r2),
                report(s.f_statistic),
                UNITS_RATIO
            )?;
        }
        let head: Vec<String> = ["term", "estimate", "se", "ci_low", "ci_high", "p_value", "odds_ratio", "or_low", "or_high"]
            .map(String::from)
            .to_vec();
        for r in &self.results {
            let code = r.method.model.code();
            let mut title = format!(
                "\n{} ({}, {} effects), J={}, df={}, residual scale {}",
                r.method.model.description(),
                code,
                r.method.scheme.label(),
                r.n_variants,
                r.df,
                report(r.residual_scale)
            );
            if r.method.correlated {
                title.push_str(", correlated variants");
            }
            if r.experimental {
                title.push_str(" [experimental]");
            }
            writeln!(out, "{title}")?;
            let rows: Vec<Vec<String>> = result_records(r)
                .iter()
                .map(|x| {
                    let c = x.cells();
                    // term, estimate..p_value, odds ratios
                    vec![
                        c[5].clone(),
                        c[6].clone(),
                        c[7].clone(),
                        c[8].clone(),
                        c[9].clone(),
                        c[10].clone(),
                        c[12].clone(),
                        c[13].clone(),
                        c[14].clone(),
                    ]
                })
                .collect();
            let widths: Vec<usize> = (0..head.len())
                .map(|i| rows.iter().map(|r| r[i].len()).chain([head[i].len()]).max().unwrap_or(0))
                .collect();
            let fmt = |cells: &[String]| {
                cells
                    .iter()
                    .zip(&widths)
                    .enumerate()
                    .map(|(i, (c, w))| if i == 0 { format!("  {c:<w$}") } else { format!("{c:>w$}") })
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            writeln!(out, "{}", fmt(&head))?;
            for row in &rows {
                writeln!(out, "{}", fmt(row))?;
            }
        }
        writeln!(
            out,
            "\nUnits: estimates and CIs in {UNITS_CAUSAL} of the risk factor, intercept in {UNITS_INTERCEPT}; \
             odds ratios, p-values and F are {UNITS_RATIO}. CI level {}.",
            self.results.first().map(|r| report(r.level)).unwrap_or_else(|| "-".into())
        )?;
        for n in &self.notes {
            writeln!(out, "Note: {n}")?;
        }
        for w in &self.warnings {
            writeln!(out, "Warning: {w}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub methods: Vec<Model>,
    pub reference: Option<String>,
    pub scheme: WeightScheme,
    pub level: f64,
    /// Participants and variance explained, for the F-statistic block.
    pub n: Option<u64>,
    pub r2: Option<f64>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            methods: vec![Model::MI, Model::ME],
            reference: None,
            scheme: WeightScheme::MultiplicativeRandomEffect,
            level: crate::estimators::DEFAULT_LEVEL,
            n: None,
            r2: None,
        }
    }
}

/// Orients `ds` on the reference (when given) and runs the requested
/// estimators in order. A correlation matrix attached to `ds` switches every
/// method to its generalized-least-squares form.
pub fn run_analyze(ds: &SummaryDataset, opts: &AnalysisOptions) -> Result<AnalysisReport> {
    if opts.methods.is_empty() {
        return Err(MrError::InvalidArgument("no methods requested".into()));
    }
    if opts.reference.is_none() && opts.methods.iter().any(|m| m.is_egger()) {
        return Err(MrError::InvalidArgument(
            "MR-Egger (UE/ME) needs a reference risk factor for orientation (--ref)".into(),
        ));
    }
    let mut notes = Vec::new();
    let mut warnings = Vec::new();
    let (data, orientation) = match &opts.reference {
        Some(r) => {
            let (d, rep) = orient(ds, r)?;
            warnings.extend(rep.warnings());
            (d, Some(rep))
        }
        None => (ds.clone(), None),
    };
    let correlated = data.correlation().is_some();
    let univariable = || -> Result<SummaryDataset> {
        match (&opts.reference, data.k()) {
            (_, 1) => Ok(data.clone()),
            (Some(r), _) => data.select_risk_factors(&[r.as_str()]),
            (None, k) => Err(MrError::InvalidArgument(format!(
                "univariable methods on a K={k} dataset need --ref to pick the risk factor"
            ))),
        }
    };
    let reference = opts.reference.as_deref().unwrap_or_default();
    let mut results = Vec::new();
    for &m in &opts.methods {
        let (s, l) = (opts.scheme, opts.level);
        let r = match m {
            Model::UI if correlated => ivw_correlated(&univariable()?, s, l)?,
            Model::UI => ivw_univariable(&univariable()?, s, l)?,
            Model::UE if correlated => egger_correlated(&univariable()?, s, l, reference)?,
            Model::UE => egger_univariable(&univariable()?, s, l)?,
            Model::MI if correlated => ivw_correlated(&data, s, l)?,
            Model::MI => ivw_multivariable(&data, s, l)?,
            Model::ME if data.k() == 1 => {
                notes.push("ME with K=1 is univariable MR-Egger; reported as UE".to_string());
                if correlated {
                    egger_correlated(&data, s, l, reference)?
                } else {
                    egger_univariable(&data, s, l)?
                }
            }
            Model::ME if correlated => egger_correlated(&data, s, l, reference)?,
            Model::ME => egger_multivariable(&data, s, l, reference)?,
        };
        if r.experimental {
            warnings.push(format!(
                "{} for correlated variants is experimental; its properties have not been studied in detail",
                r.method.model.description()
            ));
        }
        if r.exact_fit {
            warnings.push(format!(
                "{} fits the data exactly (df={}); residual scale is not estimable",
                r.method.model.code(),
                r.df
            ));
        }
        results.push(r);
    }
    let strength = match (opts.n, opts.r2) {
        (Some(n), Some(r2)) => {
            let k = data.j() as u64;
            Some(InstrumentStrength { n, k_variants: k, r2, f_statistic: f_statistic(n, k, r2)? })
        }
        (None, None) => None,
        _ => return Err(MrError::InvalidArgument("--n and --r2 must be given together".into())),
    };
    Ok(AnalysisReport {
        dataset: DatasetSummary { j: data.j(), k: data.k(), risk_factor_names: data.risk_factor_names().to_vec() },
        orientation,
        results,
        strength,
        notes,
        warnings,
    })
}
