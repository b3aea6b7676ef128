//! Weighted and generalized least squares with the residual-scale
//! conventions used for summary-data Mendelian randomization.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::CorrelationMatrix;
use crate::error::{MrError, Result};
use crate::linalg::{cholesky, forward_solve, householder_qr, singular_values, solve_upper, upper_inverse, PivotPolicy};

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-10;
/// Residual scale below this fraction of the whitened response scale is an exact fit.
pub const EXACT_FIT_TOL: f64 = 1e-10;
/// Relative pivot tolerance when factorizing a GLS covariance matrix.
pub const OMEGA_PIVOT_TOL: f64 = 1e-12;

/// How the residual scale enters coefficient standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum WeightScheme {
    /// Residual standard error fixed at one.
    #[serde(rename = "fixed", alias = "fixed-effect")]
    FixedEffect,
    /// Standard errors inflated by the residual standard error when it exceeds one.
    #[default]
    #[serde(rename = "random", alias = "multiplicative-random-effect")]
    MultiplicativeRandomEffect,
}

impl WeightScheme {
    /// Multiplier applied to unscaled standard errors. An exact fit
    /// (`df_residual == 0`) is treated as `sigma_hat == 0`.
    pub fn multiplier(self, sigma_hat: f64, df_residual: usize) -> f64 {
        match self {
            WeightScheme::FixedEffect => 1.0,
            WeightScheme::MultiplicativeRandomEffect => {
                let sigma = if df_residual == 0 { 0.0 } else { sigma_hat };
                sigma.max(1.0)
            }
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            WeightScheme::FixedEffect => "fixed",
            WeightScheme::MultiplicativeRandomEffect => "random",
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for WeightScheme {
    type Err = MrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" | "fixed-effect" | "fe" => Ok(WeightScheme::FixedEffect),
            "random" | "multiplicative-random-effect" | "mre" | "re" => Ok(WeightScheme::MultiplicativeRandomEffect),
            other => Err(MrError::InvalidArgument(format!("unknown weight scheme {other:?} (fixed|random)"))),
        }
    }
}

/// Weighted regression setup: optional intercept, inverse-variance weights
/// and, for correlated variants, a correlation matrix.
#[derive(Debug, Clone)]
pub struct RegressionSpec {
    pub include_intercept: bool,
    pub weights: Vec<f64>,
    pub correlation: Option<CorrelationMatrix>,
}

impl RegressionSpec {
    pub fn new(include_intercept: bool, weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights)?;
        Ok(RegressionSpec { include_intercept, weights, correlation: None })
    }

    pub fn with_correlation(mut self, correlation: CorrelationMatrix) -> Result<Self> {
        if correlation.dim() != self.weights.len() {
            return Err(MrError::LengthMismatch(format!(
                "correlation dimension {} vs {} weights",
                correlation.dim(),
                self.weights.len()
            )));
        }
        self.correlation = Some(correlation);
        Ok(self)
    }

    /// Builds the design (prepending an intercept column when requested) and
    /// fits by WLS, or by GLS when a correlation matrix is present.
    pub fn fit(&self, covariates: &DMatrix<f64>, response: &[f64]) -> Result<RegressionFit> {
        let j = covariates.nrows();
        if self.weights.len() != j {
            return Err(MrError::LengthMismatch(format!("{} weights for {j} rows", self.weights.len())));
        }
        let design = if self.include_intercept {
            let mut d = DMatrix::from_element(j, covariates.ncols() + 1, 1.0);
            d.view_mut((0, 1), (j, covariates.ncols())).copy_from(covariates);
            d
        } else {
            covariates.clone()
        };
        match &self.correlation {
            None => fit_wls(&design, response, &self.weights),
            Some(corr) => {
                let se: Vec<f64> = self.weights.iter().map(|w| 1.0 / w.sqrt()).collect();
                fit_gls(&design, response, &omega_from(&se, corr))
            }
        }
    }
}

/// Output of a (generalized) weighted least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    /// Intercept first when the design has one.
    pub coefficients: Vec<f64>,
    /// Coefficient standard errors at unit residual variance.
    pub unscaled_se: Vec<f64>,
    /// `(X^T W X)^{-1}` (or `(X^T Omega^{-1} X)^{-1}`).
    pub unscaled_cov: DMatrix<f64>,
    /// Estimated residual standard error; zero when `df_residual == 0`.
    pub residual_scale: f64,
    pub df_residual: usize,
    pub weighted_rss: f64,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    /// No residual degrees of freedom, or residuals vanish to rounding.
    pub exact_fit: bool,
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
        return Err(MrError::InvalidArgument(format!("weight {} is {w}; weights must be positive and finite", i + 1)));
    }
    Ok(())
}

fn check_shapes(design: &DMatrix<f64>, response: &[f64]) -> Result<()> {
    let (n, p) = design.shape();
    if response.len() != n {
        return Err(MrError::LengthMismatch(format!("design has {n} rows, response {}", response.len())));
    }
    if p == 0 {
        return Err(MrError::InvalidArgument("design has no columns".into()));
    }
    if n < p {
        return Err(MrError::TooFewVariants { method: "regression", required: p, found: n });
    }
    if design.iter().chain(response).any(|x| !x.is_finite()) {
        return Err(MrError::InvalidArgument("non-finite value in design or response".into()));
    }
    Ok(())
}

/// Minimizes `sum_j w_j (y_j - x_j^T b)^2` through a QR factorization of the
/// weight-scaled design.
pub fn fit_wls(design: &DMatrix<f64>, response: &[f64], weights: &[f64]) -> Result<RegressionFit> {
    check_shapes(design, response)?;
    if weights.len() != design.nrows() {
        return Err(MrError::LengthMismatch(format!("{} weights for {} rows", weights.len(), design.nrows())));
    }
    check_weights(weights)?;
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let xw = DMatrix::from_fn(design.nrows(), design.ncols(), |i, j| design[(i, j)] * sw[i]);
    let yw = DVector::from_fn(response.len(), |i, _| response[i] * sw[i]);
    fit_whitened(xw, yw, design, response)
}

/// Generalized least squares `(X^T Omega^{-1} X)^{-1} X^T Omega^{-1} y`,
/// whitening by the Cholesky factor of `omega`.
pub fn fit_gls(design: &DMatrix<f64>, response: &[f64], omega: &DMatrix<f64>) -> Result<RegressionFit> {
    check_shapes(design, response)?;
    let n = design.nrows();
    if omega.shape() != (n, n) {
        return Err(MrError::LengthMismatch(format!(
            "omega is {}x{}, expected {n}x{n}",
            omega.nrows(),
            omega.ncols()
        )));
    }
    let l = cholesky(omega, PivotPolicy::PositiveDefinite { rel_tol: OMEGA_PIVOT_TOL })?;
    let xw = forward_solve(&l, design);
    let yw = forward_solve(&l, &DMatrix::from_column_slice(n, 1, response));
    fit_whitened(xw, DVector::from_column_slice(yw.as_slice()), design, response)
}

/// `Omega_st = se_s * se_t * rho_st`.
pub fn omega_from(se_y: &[f64], correlation: &CorrelationMatrix) -> DMatrix<f64> {
    let n = se_y.len();
    DMatrix::from_fn(n, n, |s, t| se_y[s] * se_y[t] * correlation.get(s, t))
}

fn fit_whitened(
    xw: DMatrix<f64>,
    yw: DVector<f64>,
    design: &DMatrix<f64>,
    response: &[f64],
) -> Result<RegressionFit> {
    let (n, p) = xw.shape();
    let red = householder_qr(xw.clone(), yw.clone());
    let sv = singular_values(&red.r);
    let largest = sv.first().copied().unwrap_or(0.0);
    let smallest = sv.last().copied().unwrap_or(0.0);
    if !(largest > 0.0) || smallest <= RANK_TOL * largest {
        let weakest = (0..p)
            .min_by(|&a, &b| red.r[(a, a)].abs().total_cmp(&red.r[(b, b)].abs()))
            .unwrap_or(0);
        return Err(MrError::RankDeficient(format!(
            "smallest singular value {smallest:e} vs largest {largest:e}; column {} is (nearly) a combination of the preceding columns or zero",
            weakest + 1
        )));
    }
    let beta = solve_upper(&red.r, &red.qtb.as_slice()[..p]);
    let rinv = upper_inverse(&red.r);
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            let mut s = 0.0;
            for k in 0..p {
                s += rinv[(i, k)] * rinv[(j, k)];
            }
            cov[(i, j)] = s;
        }
    }
    let unscaled_se = (0..p).map(|i| cov[(i, i)].sqrt()).collect();

    let mut fitted = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut rss = 0.0;
    let mut y_scale = 0.0;
    for i in 0..n {
        let mut f = 0.0;
        let mut fw = 0.0;
        for k in 0..p {
            f += design[(i, k)] * beta[k];
            fw += xw[(i, k)] * beta[k];
        }
        fitted.push(f);
        residuals.push(response[i] - f);
        let rw = yw[i] - fw;
        rss += rw * rw;
        y_scale += yw[i] * yw[i];
    }
    let df = n - p;
    let sigma = if df > 0 { (rss / df as f64).sqrt() } else { 0.0 };
    let y_scale = (y_scale / n as f64).sqrt();
    let exact_fit = df == 0 || sigma <= EXACT_FIT_TOL * y_scale;
    Ok(RegressionFit {
        coefficients: beta.iter().copied().collect(),
        unscaled_se,
        unscaled_cov: cov,
        residual_scale: sigma,
        df_residual: df,
        weighted_rss: rss,
        fitted,
        residuals,
        exact_fit,
    })
}

/// Coefficient standard errors under `scheme`.
pub fn scaled_se(fit: &RegressionFit, scheme: WeightScheme) -> Vec<f64> {
    let m = scheme.multiplier(fit.residual_scale, fit.df_residual);
    fit.unscaled_se.iter().map(|s| s * m).collect()
}

fn check_moment_args(lens: &[usize], weights: &[f64]) -> Result<()> {
    if lens.iter().any(|&l| l != weights.len()) {
        return Err(MrError::LengthMismatch(format!("vector lengths {lens:?} vs {} weights", weights.len())));
    }
    if weights.is_empty() {
        return Err(MrError::InvalidArgument("empty input".into()));
    }
    check_weights(weights)
}

/// `sum w v / sum w`.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> Result<f64> {
    check_moment_args(&[values.len()], weights)?;
    Ok(wmean(values, weights))
}

/// Weighted central second moment normalized by the weight total.
pub fn weighted_var(values: &[f64], weights: &[f64]) -> Result<f64> {
    check_moment_args(&[values.len()], weights)?;
    let m = wmean(values, weights);
    let total: f64 = weights.iter().sum();
    Ok(values.iter().zip(weights).map(|(v, w)| w * (v - m).powi(2)).sum::<f64>() / total)
}

/// `sum w (a - a_w)(b - b_w) / sum w`.
pub fn weighted_cov(a: &[f64], b: &[f64], weights: &[f64]) -> Result<f64> {
    check_moment_args(&[a.len(), b.len()], weights)?;
    let ma = wmean(a, weights);
    let mb = wmean(b, weights);
    let total: f64 = weights.iter().sum();
    let s: f64 = a
        .iter()
        .zip(b)
        .zip(weights)
        .map(|((x, y), w)| w * (x - ma) * (y - mb))
        .sum();
    Ok(s / total)
}

fn wmean(values: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
}
