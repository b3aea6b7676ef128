//! IVW and MR-Egger estimators, univariable and multivariable, with t-based
//! inference and the MR-Egger intercept test.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::data::SummaryDataset;
use crate::error::{MrError, Result};
use crate::wls::{fit_gls, fit_wls, omega_from, scaled_se, weighted_cov, weighted_var, RegressionFit, WeightScheme};

pub const DEFAULT_LEVEL: f64 = 0.95;

/// Which of the four regression models produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Model {
    /// Univariable IVW.
    UI,
    /// Univariable MR-Egger.
    UE,
    /// Multivariable IVW.
    MI,
    /// Multivariable MR-Egger.
    ME,
}

impl Model {
    pub fn is_egger(self) -> bool {
        matches!(self, Model::UE | Model::ME)
    }

    pub fn is_multivariable(self) -> bool {
        matches!(self, Model::MI | Model::ME)
    }

    pub fn code(self) -> &'static str {
        match self {
            Model::UI => "UI",
            Model::UE => "UE",
            Model::MI => "MI",
            Model::ME => "ME",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Model::UI => "Univariable IVW",
            Model::UE => "Univariable MR-Egger",
            Model::MI => "Multivariable IVW",
            Model::ME => "Multivariable MR-Egger",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Model {
    type Err = MrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "UI" => Ok(Model::UI),
            "UE" => Ok(Model::UE),
            "MI" => Ok(Model::MI),
            "ME" => Ok(Model::ME),
            other => Err(MrError::InvalidArgument(format!("unknown method {other:?} (UI|UE|MI|ME)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct MethodTag {
    pub model: Model,
    pub scheme: WeightScheme,
    pub correlated: bool,
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.model, self.scheme)?;
        if self.correlated {
            f.write_str("/correlated")?;
        }
        Ok(())
    }
}

/// Causal effect of one risk factor (log odds ratio per SD for binary outcomes).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CausalEstimate {
    pub risk_factor: String,
    pub theta_hat: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    /// Residual degrees of freedom of the host regression; 0 means a normal reference.
    pub df: usize,
    pub method: MethodTag,
}

/// MR-Egger intercept: average direct effect per allele.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterceptTest {
    pub theta_0: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub df: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MRResult {
    pub method: MethodTag,
    pub estimates: Vec<CausalEstimate>,
    /// Present exactly for MR-Egger models.
    pub intercept: Option<InterceptTest>,
    pub residual_scale: f64,
    pub df: usize,
    pub exact_fit: bool,
    pub n_variants: usize,
    pub level: f64,
    pub orientation_reference: Option<String>,
    /// Correlated-variant MR-Egger has not been studied in detail.
    pub experimental: bool,
}

impl MRResult {
    pub fn estimate(&self, risk_factor: &str) -> Option<&CausalEstimate> {
        self.estimates.iter().find(|e| e.risk_factor == risk_factor)
    }
}

/// `(ci_low, ci_high, p_value)` for `estimate` with standard error `se`.
pub fn t_inference(estimate: f64, se: f64, df: usize, level: f64) -> (f64, f64, f64) {
    let stat = (estimate / se).abs();
    let upper = 0.5 + level / 2.0;
    let (q, p) = if df == 0 {
        let n = Normal::standard();
        (n.inverse_cdf(upper), 2.0 * n.sf(stat))
    } else {
        let t = StudentsT::new(0.0, 1.0, df as f64).expect("positive degrees of freedom");
        (t.inverse_cdf(upper), 2.0 * t.sf(stat))
    };
    let p = if stat.is_nan() { f64::NAN } else { p.clamp(0.0, 1.0) };
    (estimate - q * se, estimate + q * se, p)
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(MrError::InvalidArgument(format!("confidence level {level} must lie in (0, 1)")));
    }
    Ok(())
}

fn require_uncorrelated(ds: &SummaryDataset, method: &str) -> Result<()> {
    if ds.correlation().is_some() {
        return Err(MrError::InvalidArgument(format!(
            "dataset carries a variant correlation matrix; use the correlated {method} estimator"
        )));
    }
    Ok(())
}

fn require_oriented(ds: &SummaryDataset, reference: usize) -> Result<()> {
    if let Some(v) = ds.variants().iter().find(|v| v.beta_x[reference] < 0.0) {
        return Err(MrError::Orientation {
            reference: ds.risk_factor_names()[reference].clone(),
            variant_id: v.variant_id.clone(),
        });
    }
    Ok(())
}

struct Fitted<'a> {
    ds: &'a SummaryDataset,
    fit: RegressionFit,
    intercept: bool,
    tag: MethodTag,
    level: f64,
    reference: Option<String>,
    experimental: bool,
}

impl Fitted<'_> {
    fn into_result(self) -> MRResult {
        let se = scaled_se(&self.fit, self.tag.scheme);
        let df = self.fit.df_residual;
        let offset = usize::from(self.intercept);
        let estimates = self
            .ds
            .risk_factor_names()
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let theta = self.fit.coefficients[k + offset];
                let s = se[k + offset];
                let (lo, hi, p) = t_inference(theta, s, df, self.level);
                CausalEstimate {
                    risk_factor: name.clone(),
                    theta_hat: theta,
                    se: s,
                    ci_low: lo,
                    ci_high: hi,
                    p_value: p,
                    df,
                    method: self.tag,
                }
            })
            .collect();
        let intercept = self.intercept.then(|| {
            let (lo, hi, p) = t_inference(self.fit.coefficients[0], se[0], df, self.level);
            InterceptTest { theta_0: self.fit.coefficients[0], se: se[0], ci_low: lo, ci_high: hi, p_value: p, df }
        });
        MRResult {
            method: self.tag,
            estimates,
            intercept,
            residual_scale: self.fit.residual_scale,
            df,
            exact_fit: self.fit.exact_fit,
            n_variants: self.ds.j(),
            level: self.level,
            orientation_reference: self.reference,
            experimental: self.experimental,
        }
    }
}

fn design(ds: &SummaryDataset, intercept: bool) -> DMatrix<f64> {
    let off = usize::from(intercept);
    DMatrix::from_fn(ds.j(), ds.k() + off, |j, c| {
        if intercept && c == 0 {
            1.0
        } else {
            ds.variants()[j].beta_x[c - off]
        }
    })
}

fn fit_dataset(ds: &SummaryDataset, intercept: bool, correlated: bool) -> Result<RegressionFit> {
    let x = design(ds, intercept);
    let y = ds.beta_y();
    if correlated {
        let corr = ds
            .correlation()
            .ok_or_else(|| MrError::InvalidArgument("no variant correlation matrix attached".into()))?;
        fit_gls(&x, &y, &omega_from(&ds.se_y(), corr))
    } else {
        fit_wls(&x, &y, &ds.weights())
    }
    .map_err(|e| match e {
        MrError::RankDeficient(msg) => MrError::RankDeficient(describe_rank_failure(ds, intercept, msg)),
        other => other,
    })
}

fn describe_rank_failure(ds: &SummaryDataset, intercept: bool, msg: String) -> String {
    let zero: Vec<&str> = (0..ds.k())
        .filter(|&k| ds.variants().iter().all(|v| v.beta_x[k] == 0.0))
        .map(|k| ds.risk_factor_names()[k].as_str())
        .collect();
    if !zero.is_empty() {
        return format!("risk factor associations are all zero for {zero:?}; drop them explicitly ({msg})");
    }
    let what = if intercept { "intercept and risk-factor associations" } else { "risk-factor associations" };
    format!("{what} are collinear ({msg})")
}

/// Univariable IVW: zero-intercept weighted regression of `beta_y` on
/// `beta_x` with weights `se(beta_y)^-2`. Inference uses `df = J - 1`.
pub fn ivw_univariable(ds: &SummaryDataset, scheme: WeightScheme, level: f64) -> Result<MRResult> {
    check_level(level)?;
    if ds.k() != 1 {
        return Err(MrError::InvalidArgument(format!(
            "univariable IVW needs exactly one risk factor, dataset has {}",
            ds.k()
        )));
    }
    require_uncorrelated(ds, "IVW")?;
    let fit = fit_dataset(ds, false, false)?;
    let tag = MethodTag { model: Model::UI, scheme, correlated: false };
    Ok(Fitted { ds, fit, intercept: false, tag, level, reference: None, experimental: false }.into_result())
}

/// Univariable MR-Egger: as IVW with a free intercept. Requires `J >= 3`
/// and non-negative risk-factor associations.
pub fn egger_univariable(ds: &SummaryDataset, scheme: WeightScheme, level: f64) -> Result<MRResult> {
    check_level(level)?;
    if ds.k() != 1 {
        return Err(MrError::InvalidArgument(format!(
            "univariable MR-Egger needs exactly one risk factor, dataset has {}",
            ds.k()
        )));
    }
    require_uncorrelated(ds, "MR-Egger")?;
    if ds.j() < 3 {
        return Err(MrError::TooFewVariants { method: "MR-Egger", required: 3, found: ds.j() });
    }
    require_oriented(ds, 0)?;
    let fit = fit_dataset(ds, true, false)?;
    let tag = MethodTag { model: Model::UE, scheme, correlated: false };
    let reference = Some(ds.risk_factor_names()[0].clone());
    Ok(Fitted { ds, fit, intercept: true, tag, level, reference, experimental: false }.into_result())
}

/// Multivariable IVW over all K risk factors; `df = J - K`.
pub fn ivw_multivariable(ds: &SummaryDataset, scheme: WeightScheme, level: f64) -> Result<MRResult> {
    check_level(level)?;
    require_uncorrelated(ds, "IVW")?;
    if ds.j() <= ds.k() {
        return Err(MrError::TooFewVariants { method: "multivariable IVW", required: ds.k() + 1, found: ds.j() });
    }
    let fit = fit_dataset(ds, false, false)?;
    let tag = MethodTag { model: Model::MI, scheme, correlated: false };
    Ok(Fitted { ds, fit, intercept: false, tag, level, reference: None, experimental: false }.into_result())
}

/// Multivariable MR-Egger: intercept plus all K risk factors, with variants
/// oriented on `reference`; `df = J - (K + 1)`.
pub fn egger_multivariable(ds: &SummaryDataset, scheme: WeightScheme, level: f64, reference: &str) -> Result<MRResult> {
    check_level(level)?;
    require_uncorrelated(ds, "MR-Egger")?;
    let r = ds.risk_factor_index(reference)?;
    if ds.j() < ds.k() + 2 {
        return Err(MrError::TooFewVariants { method: "multivariable MR-Egger", required: ds.k() + 2, found: ds.j() });
    }
    require_oriented(ds, r)?;
    let fit = fit_dataset(ds, true, false)?;
    let tag = MethodTag { model: Model::ME, scheme, correlated: false };
    Ok(Fitted { ds, fit, intercept: true, tag, level, reference: Some(reference.to_string()), experimental: false }
        .into_result())
}

/// IVW for correlated variants: zero-intercept GLS with
/// `Omega_st = se(beta_Ys) se(beta_Yt) rho_st`. Univariable when K = 1.
pub fn ivw_correlated(ds: &SummaryDataset, scheme: WeightScheme, level: f64) -> Result<MRResult> {
    check_level(level)?;
    let model = if ds.k() == 1 { Model::UI } else { Model::MI };
    if ds.j() < ds.k() {
        return Err(MrError::TooFewVariants { method: "correlated IVW", required: ds.k(), found: ds.j() });
    }
    let fit = fit_dataset(ds, false, true)?;
    let tag = MethodTag { model, scheme, correlated: true };
    Ok(Fitted { ds, fit, intercept: false, tag, level, reference: None, experimental: false }.into_result())
}

/// MR-Egger for correlated variants (GLS with a free intercept). Flagged experimental.
pub fn egger_correlated(ds: &SummaryDataset, scheme: WeightScheme, level: f64, reference: &str) -> Result<MRResult> {
    check_level(level)?;
    let r = ds.risk_factor_index(reference)?;
    let model = if ds.k() == 1 { Model::UE } else { Model::ME };
    if ds.j() < ds.k() + 2 {
        return Err(MrError::TooFewVariants { method: "correlated MR-Egger", required: ds.k() + 2, found: ds.j() });
    }
    require_oriented(ds, r)?;
    let fit = fit_dataset(ds, true, true)?;
    let tag = MethodTag { model, scheme, correlated: true };
    Ok(Fitted { ds, fit, intercept: true, tag, level, reference: Some(reference.to_string()), experimental: true }
        .into_result())
}

/// Asymptotic MR-Egger bias for the `target` risk factor given the true
/// direct effects and associations: the weighted covariance/variance ratio
/// for one risk factor, or its two-factor generalization when the
/// associations of two risk factors are correlated.
pub fn inside_bias_oracle(true_alpha: &[f64], true_beta_x: &DMatrix<f64>, weights: &[f64], target: usize) -> Result<f64> {
    let (j, k) = true_beta_x.shape();
    if true_alpha.len() != j || weights.len() != j {
        return Err(MrError::LengthMismatch(format!(
            "alpha {} / weights {} vs {j} variants",
            true_alpha.len(),
            weights.len()
        )));
    }
    if target >= k {
        return Err(MrError::InvalidArgument(format!("target {target} out of range for K={k}")));
    }
    let col = |c: usize| true_beta_x.column(c).iter().copied().collect::<Vec<f64>>();
    let xt = col(target);
    match k {
        1 => {
            let var = weighted_var(&xt, weights)?;
            if var == 0.0 {
                return Err(MrError::ZeroVariance);
            }
            Ok(weighted_cov(true_alpha, &xt, weights)? / var)
        }
        2 => {
            let xo = col(1 - target);
            let var_t = weighted_var(&xt, weights)?;
            let var_o = weighted_var(&xo, weights)?;
            let cov_to = weighted_cov(&xt, &xo, weights)?;
            let denom = var_t * var_o - cov_to * cov_to;
            if denom == 0.0 {
                return Err(MrError::ZeroVariance);
            }
            let num = weighted_cov(true_alpha, &xt, weights)? * var_o - weighted_cov(true_alpha, &xo, weights)? * cov_to;
            Ok(num / denom)
        }
        _ => Err(MrError::Unsupported(format!("closed-form bias term only for K <= 2 (got K={k})"))),
    }
}

/// Instrument strength `((n - k - 1) / k) * (r2 / (1 - r2))`.
pub fn f_statistic(n: u64, k: u64, r2: f64) -> Result<f64> {
    if k == 0 {
        return Err(MrError::InvalidArgument("k must be positive".into()));
    }
    if n <= k + 1 {
        return Err(MrError::InvalidArgument(format!("n={n} must exceed k+1={}", k + 1)));
    }
    if !(0.0..1.0).contains(&r2) {
        return Err(MrError::InvalidArgument(format!("R^2={r2} must lie in [0, 1)")));
    }
    Ok(((n - k - 1) as f64 / k as f64) * (r2 / (1.0 - r2)))
}
