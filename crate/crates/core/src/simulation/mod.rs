//! Monte Carlo engine for the three-risk-factor summary-data model
//!
//! `beta_Yj = alpha'_j + theta1 |beta_X1j| + theta2 beta_X2j + theta3 beta_X3j + eps_j`
//!
//! with `(beta_X1, beta_X2, beta_X3, alpha')` jointly normal and `eps ~ N(0, 1)`.
//! Under mediation the second covariate becomes `beta_X2 + gamma |beta_X1|`.

mod grid;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SummaryDataset, VariantRecord};
use crate::error::{MrError, Result};
use crate::estimators::{egger_multivariable, egger_univariable, ivw_multivariable, Model, DEFAULT_LEVEL};
use crate::linalg::{cholesky, PivotPolicy};
use crate::wls::WeightScheme;

pub use grid::{
    grid_settings, row_seed, run_grid, write_grid_csv, write_grid_text, write_scenario_csv, write_scenario_text,
    GridRow, GridSetting,
};

pub const DEFAULT_J: usize = 185;
pub const FULL_REPLICATES: usize = 10_000;
/// Desk-scale replicate count.
pub const DESK_REPLICATES: usize = 2_000;
pub const DEFAULT_SIGMA_ALPHA_SQ: f64 = 0.004;
pub const MEDIATION_GAMMA: f64 = 0.5;
pub const CORRELATED_RHOS: [f64; 3] = [0.2, -0.3, 0.1];
/// Correlation between `alpha'` and `beta_X1` when InSIDE is violated.
pub const INSIDE_CORRELATION: f64 = 0.3;
/// Placeholder standard error for the risk-factor associations; the
/// estimators never read it.
pub const NOMINAL_SE_X: f64 = 0.01;
pub const SIGNIFICANCE: f64 = 0.05;

const PSD_TOL: f64 = 1e-12;

/// How the outcome standard errors of a simulated dataset are set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// `se(beta_Yj)^2 = eps_j^2 + sigma_alpha^2 (+ univariable terms)`, with
    /// `eps_j` the realized draw.
    #[default]
    RealizedError,
    /// As above with `eps_j^2` replaced by its expectation, 1.
    VarianceComponent,
}

impl WeightMode {
    pub fn label(self) -> &'static str {
        match self {
            WeightMode::RealizedError => "realized-error",
            WeightMode::VarianceComponent => "variance-component",
        }
    }
}

/// The four pleiotropy scenarios of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    NoPleiotropy,
    Balanced,
    Directional,
    DirectionalViolated,
}

impl Scenario {
    pub fn number(self) -> u8 {
        match self {
            Scenario::NoPleiotropy => 1,
            Scenario::Balanced => 2,
            Scenario::Directional => 3,
            Scenario::DirectionalViolated => 4,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Scenario::NoPleiotropy),
            2 => Ok(Scenario::Balanced),
            3 => Ok(Scenario::Directional),
            4 => Ok(Scenario::DirectionalViolated),
            _ => Err(MrError::InvalidArgument(format!("scenario must be 1-4, got {n}"))),
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Scenario::NoPleiotropy => "No pleiotropy, InSIDE satisfied",
            Scenario::Balanced => "Balanced pleiotropy, InSIDE satisfied",
            Scenario::Directional => "Directional pleiotropy, InSIDE satisfied",
            Scenario::DirectionalViolated => "Directional pleiotropy, InSIDE violated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub theta: [f64; 3],
    pub mu: f64,
    pub sigma_alpha_sq: f64,
    pub inside_violated: bool,
    pub beta_means: [f64; 3],
    pub sigmas_sq: [f64; 3],
    /// `(rho12, rho13, rho23)`.
    pub rhos: [f64; 3],
    pub gamma: f64,
    pub j_variants: usize,
    pub replicates: usize,
    pub seed: u64,
    pub no_pleiotropy: bool,
    pub weight_mode: WeightMode,
    pub scheme: WeightScheme,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            theta: [0.0, 0.1, -0.3],
            mu: 0.0,
            sigma_alpha_sq: 0.0,
            inside_violated: false,
            beta_means: [0.08, 0.03, -0.05],
            sigmas_sq: [0.03, 0.02, 0.04],
            rhos: [0.0; 3],
            gamma: 0.0,
            j_variants: DEFAULT_J,
            replicates: DESK_REPLICATES,
            seed: 0,
            no_pleiotropy: true,
            weight_mode: WeightMode::default(),
            scheme: WeightScheme::MultiplicativeRandomEffect,
        }
    }
}

impl ScenarioConfig {
    /// One cell of the standard grid. `mu` is ignored for scenarios 1 and 2.
    pub fn grid_cell(scenario: Scenario, mu: f64, theta1: f64, correlated: bool, mediation: bool) -> Self {
        let mut c = ScenarioConfig { theta: [theta1, 0.1, -0.3], ..Default::default() };
        if correlated {
            c.rhos = CORRELATED_RHOS;
        }
        if mediation {
            c.gamma = MEDIATION_GAMMA;
        }
        match scenario {
            Scenario::NoPleiotropy => {}
            Scenario::Balanced => {
                c.no_pleiotropy = false;
                c.sigma_alpha_sq = DEFAULT_SIGMA_ALPHA_SQ;
            }
            Scenario::Directional | Scenario::DirectionalViolated => {
                c.no_pleiotropy = false;
                c.sigma_alpha_sq = DEFAULT_SIGMA_ALPHA_SQ;
                c.mu = mu;
                c.inside_violated = scenario == Scenario::DirectionalViolated;
            }
        }
        c
    }

    pub fn with_replicates(mut self, replicates: usize) -> Self {
        self.replicates = replicates;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn scenario(&self) -> Scenario {
        match (self.no_pleiotropy, self.inside_violated, self.mu != 0.0) {
            (true, _, _) => Scenario::NoPleiotropy,
            (false, true, _) => Scenario::DirectionalViolated,
            (false, false, true) => Scenario::Directional,
            (false, false, false) => Scenario::Balanced,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MrError::InvalidArgument(msg));
        let finite = self
            .theta
            .iter()
            .chain(&self.beta_means)
            .chain(&self.sigmas_sq)
            .chain(&self.rhos)
            .chain([&self.mu, &self.sigma_alpha_sq, &self.gamma])
            .all(|v| v.is_finite());
        if !finite {
            return bad("scenario parameters must be finite".into());
        }
        if self.sigmas_sq.iter().any(|&s| s <= 0.0) {
            return bad(format!("sigmas_sq must be positive, got {:?}", self.sigmas_sq));
        }
        if self.rhos.iter().any(|r| r.abs() > 1.0) {
            return bad(format!("rhos must lie in [-1, 1], got {:?}", self.rhos));
        }
        if self.sigma_alpha_sq < 0.0 {
            return bad(format!("sigma_alpha_sq must be non-negative, got {}", self.sigma_alpha_sq));
        }
        if self.no_pleiotropy && (self.mu != 0.0 || self.sigma_alpha_sq != 0.0 || self.inside_violated) {
            return bad("no_pleiotropy requires mu = 0, sigma_alpha_sq = 0 and inside_violated = false".into());
        }
        if self.inside_violated && self.sigma_alpha_sq == 0.0 {
            return bad("inside_violated needs sigma_alpha_sq > 0".into());
        }
        if self.j_variants < 5 {
            return bad(format!("j_variants = {} but multivariable MR-Egger with K=3 needs at least 5", self.j_variants));
        }
        if self.replicates == 0 {
            return bad("replicates must be positive".into());
        }
        self.covariance_factor().map(|_| ())
    }

    /// Covariance of `(beta_X1, beta_X2, beta_X3, alpha')`.
    ///
    /// When InSIDE is violated `alpha'` loads on `beta_X1` alone:
    /// `alpha' = mu + b (beta_X1 - m1) + noise` with `b` chosen so that
    /// `cor(alpha', beta_X1) = 0.3`. Its covariance with the other two
    /// factors then follows from their correlation with `beta_X1`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let s: Vec<f64> = self.sigmas_sq.iter().map(|v| v.sqrt()).collect();
        let [r12, r13, r23] = self.rhos;
        let mut c = DMatrix::zeros(4, 4);
        for k in 0..3 {
            c[(k, k)] = self.sigmas_sq[k];
        }
        c[(0, 1)] = r12 * s[0] * s[1];
        c[(0, 2)] = r13 * s[0] * s[2];
        c[(1, 2)] = r23 * s[1] * s[2];
        c[(3, 3)] = if self.no_pleiotropy { 0.0 } else { self.sigma_alpha_sq };
        if self.inside_violated {
            let b = INSIDE_CORRELATION * (self.sigma_alpha_sq / self.sigmas_sq[0]).sqrt();
            c[(0, 3)] = b * c[(0, 0)];
            c[(1, 3)] = b * c[(0, 1)];
            c[(2, 3)] = b * c[(0, 2)];
        }
        c.fill_lower_triangle_with_upper_triangle();
        c
    }

    fn covariance_factor(&self) -> Result<DMatrix<f64>> {
        cholesky(&self.covariance(), PivotPolicy::Semidefinite { neg_tol: PSD_TOL }).map_err(|e| match e {
            MrError::NotPositiveDefinite { pivot, value } => MrError::InvalidArgument(format!(
                "induced covariance of (beta_X1, beta_X2, beta_X3, alpha') is not positive semi-definite \
                 (pivot {} = {value:e}); check rhos",
                pivot + 1
            )),
            other => other,
        })
    }

    fn means(&self) -> [f64; 4] {
        let mu = if self.no_pleiotropy { 0.0 } else { self.mu };
        [self.beta_means[0], self.beta_means[1], self.beta_means[2], mu]
    }

    /// Extra outcome variance added to the univariable weights: the part of
    /// `theta2 x2 + theta3 x3` not explained by `|beta_X1|`.
    pub fn univariable_extra_variance(&self) -> f64 {
        let [_, t2, t3] = self.theta;
        let [s1, s2, s3] = self.sigmas_sq;
        let mut v = t2 * t2 * s2 + t3 * t3 * s3;
        if self.gamma != 0.0 {
            let g = self.gamma;
            v += (t2 * g).powi(2) * s1 + 2.0 * t2 * g * self.rhos[0] * (s1 * s2).sqrt();
        }
        v
    }
}

/// Latent per-replicate quantities, kept for oracle checks.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTruth {
    /// J x 3 true (signed) associations `beta_X1, beta_X2, beta_X3`.
    pub beta_x: DMatrix<f64>,
    pub alpha_prime: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub beta_y: Vec<f64>,
    /// Analysis covariates `|beta_X1|, beta_X2 + gamma |beta_X1|, beta_X3`.
    pub covariates: DMatrix<f64>,
    pub weights_multivariable: Vec<f64>,
    pub weights_univariable: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimulatedReplicate {
    /// K = 3 dataset with the multivariable weights.
    pub multivariable: SummaryDataset,
    /// K = 1 dataset on `|beta_X1|` with the univariable weights.
    pub univariable: SummaryDataset,
    pub truth: GeneratedTruth,
}

/// RNG for one replicate: the config seed selects the key, the replicate
/// index the stream, so replicates can be generated in any order.
pub fn replicate_rng(seed: u64, replicate_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate_index as u64);
    rng
}

pub fn generate_dataset(config: &ScenarioConfig, replicate_index: usize) -> Result<SimulatedReplicate> {
    config.validate()?;
    if replicate_index >= config.replicates {
        return Err(MrError::InvalidArgument(format!(
            "replicate index {replicate_index} out of range for {} replicates",
            config.replicates
        )));
    }
    let factor = config.covariance_factor()?;
    generate_with_factor(config, &factor, replicate_index)
}

fn generate_with_factor(config: &ScenarioConfig, factor: &DMatrix<f64>, replicate_index: usize) -> Result<SimulatedReplicate> {
    let truth = draw_truth(config, factor, &mut replicate_rng(config.seed, replicate_index));
    let multivariable = build_dataset(&["x1", "x2", "x3"], &truth, &truth.weights_multivariable, 3)?;
    let univariable = build_dataset(&["x1"], &truth, &truth.weights_univariable, 1)?;
    Ok(SimulatedReplicate { multivariable, univariable, truth })
}

fn draw_truth(config: &ScenarioConfig, factor: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> GeneratedTruth {
    let j = config.j_variants;
    let m = config.means();
    let mut beta_x = DMatrix::zeros(j, 3);
    let mut alpha_prime = vec![0.0; j];
    for v in 0..j {
        let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        for r in 0..4 {
            let mut x = m[r];
            for c in 0..=r {
                x += factor[(r, c)] * z[c];
            }
            if r < 3 {
                beta_x[(v, r)] = x;
            } else if !config.no_pleiotropy {
                alpha_prime[v] = x;
            }
        }
    }
    let epsilon: Vec<f64> = (0..j).map(|_| rng.sample(StandardNormal)).collect();

    let [t1, t2, t3] = config.theta;
    let mut covariates = DMatrix::zeros(j, 3);
    let mut beta_y = vec![0.0; j];
    let mut weights_multivariable = vec![0.0; j];
    let mut weights_univariable = vec![0.0; j];
    let extra = config.univariable_extra_variance();
    for v in 0..j {
        let x1 = beta_x[(v, 0)].abs();
        let x2 = beta_x[(v, 1)] + config.gamma * x1;
        let x3 = beta_x[(v, 2)];
        covariates[(v, 0)] = x1;
        covariates[(v, 1)] = x2;
        covariates[(v, 2)] = x3;
        beta_y[v] = alpha_prime[v] + t1 * x1 + t2 * x2 + t3 * x3 + epsilon[v];
        let e2 = match config.weight_mode {
            WeightMode::RealizedError => epsilon[v] * epsilon[v],
            WeightMode::VarianceComponent => 1.0,
        };
        let mv = e2 + config.sigma_alpha_sq;
        weights_multivariable[v] = 1.0 / mv;
        weights_univariable[v] = 1.0 / (mv + extra);
    }
    GeneratedTruth { beta_x, alpha_prime, epsilon, beta_y, covariates, weights_multivariable, weights_univariable }
}

fn build_dataset(names: &[&str], truth: &GeneratedTruth, weights: &[f64], k: usize) -> Result<SummaryDataset> {
    let variants = (0..truth.beta_y.len())
        .map(|v| VariantRecord {
            variant_id: format!("sim{}", v + 1),
            effect_allele: "A".into(),
            other_allele: "G".into(),
            beta_x: (0..k).map(|c| truth.covariates[(v, c)]).collect(),
            se_x: vec![NOMINAL_SE_X; k],
            beta_y: truth.beta_y[v],
            se_y: weights[v].recip().sqrt(),
        })
        .collect();
    SummaryDataset::new(names.iter().map(|s| s.to_string()).collect(), variants)
}

/// Per-replicate result of one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateFit {
    pub theta1: f64,
    pub se: f64,
    pub p_causal: f64,
    pub p_intercept: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub mi: std::result::Result<ReplicateFit, String>,
    pub ue: std::result::Result<ReplicateFit, String>,
    pub me: std::result::Result<ReplicateFit, String>,
}

/// Fits multivariable IVW, univariable MR-Egger and multivariable MR-Egger to one replicate.
pub fn fit_replicate(rep: &SimulatedReplicate, scheme: WeightScheme) -> ReplicateOutcome {
    let take = |r: Result<crate::estimators::MRResult>| {
        r.map(|r| ReplicateFit {
            theta1: r.estimates[0].theta_hat,
            se: r.estimates[0].se,
            p_causal: r.estimates[0].p_value,
            p_intercept: r.intercept.map(|i| i.p_value),
        })
        .map_err(|e| e.to_string())
    };
    ReplicateOutcome {
        mi: take(ivw_multivariable(&rep.multivariable, scheme, DEFAULT_LEVEL)),
        ue: take(egger_univariable(&rep.univariable, scheme, DEFAULT_LEVEL)),
        me: take(egger_multivariable(&rep.multivariable, scheme, DEFAULT_LEVEL, "x1")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub model: Model,
    pub mean_theta1: f64,
    /// Sample standard deviation of the estimates.
    pub sd_theta1: f64,
    pub mean_se: f64,
    pub power_causal: f64,
    /// Egger models only.
    pub power_intercept: Option<f64>,
    pub replicates_used: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
}

impl EstimatorSummary {
    fn from_fits(model: Model, fits: &[&std::result::Result<ReplicateFit, String>]) -> Self {
        let ok: Vec<&ReplicateFit> = fits.iter().filter_map(|f| f.as_ref().ok()).collect();
        let first_failure = fits.iter().find_map(|f| f.as_ref().err().cloned());
        let n = ok.len();
        let nf = n as f64;
        let mean = |f: &dyn Fn(&ReplicateFit) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / nf;
        let mean_theta1 = mean(&|r| r.theta1);
        let sd_theta1 = if n > 1 {
            (ok.iter().map(|r| (r.theta1 - mean_theta1).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt()
        } else {
            f64::NAN
        };
        let power_causal = mean(&|r| f64::from(u8::from(r.p_causal < SIGNIFICANCE)));
        let power_intercept = model
            .is_egger()
            .then(|| mean(&|r| f64::from(u8::from(r.p_intercept.is_some_and(|p| p < SIGNIFICANCE)))));
        EstimatorSummary {
            model,
            mean_theta1,
            sd_theta1,
            mean_se: mean(&|r| r.se),
            power_causal,
            power_intercept,
            replicates_used: n,
            failures: fits.len() - n,
            first_failure,
        }
    }

    /// Monte Carlo standard error of `mean_theta1`.
    pub fn mc_se(&self) -> f64 {
        self.sd_theta1 / (self.replicates_used as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub config: ScenarioConfig,
    pub mi: EstimatorSummary,
    pub ue: EstimatorSummary,
    pub me: EstimatorSummary,
}

impl SimulationSummary {
    pub fn estimators(&self) -> [&EstimatorSummary; 3] {
        [&self.mi, &self.ue, &self.me]
    }

    pub fn total_failures(&self) -> usize {
        self.estimators().iter().map(|e| e.failures).sum()
    }
}

/// Runs every replicate (in parallel on the current rayon pool) and
/// aggregates in replicate order, so the summary does not depend on the
/// number of threads.
pub fn run_scenario(config: &ScenarioConfig) -> Result<SimulationSummary> {
    config.validate()?;
    let factor = config.covariance_factor()?;
    let outcomes: Vec<ReplicateOutcome> = (0..config.replicates)
        .into_par_iter()
        .map(|i| match generate_with_factor(config, &factor, i) {
            Ok(rep) => fit_replicate(&rep, config.scheme),
            Err(e) => {
                let msg = format!("replicate {i}: {e}");
                ReplicateOutcome { mi: Err(msg.clone()), ue: Err(msg.clone()), me: Err(msg) }
            }
        })
        .collect();
    let col = |f: fn(&ReplicateOutcome) -> &std::result::Result<ReplicateFit, String>| {
        outcomes.iter().map(f).collect::<Vec<_>>()
    };
    Ok(SimulationSummary {
        config: config.clone(),
        mi: EstimatorSummary::from_fits(Model::MI, &col(|o| &o.mi)),
        ue: EstimatorSummary::from_fits(Model::UE, &col(|o| &o.ue)),
        me: EstimatorSummary::from_fits(Model::ME, &col(|o| &o.me)),
    })
}

/// Runs `f` on a dedicated pool of `threads` workers (`0` means rayon's default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| MrError::InvalidArgument(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Flat key-value scenario file. `scenario`, `mu`, `theta1`, `correlated` and
/// `mediation` pick a grid cell; the remaining keys override single parameters.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub scenario: Option<u8>,
    pub mu: Option<f64>,
    pub theta1: Option<f64>,
    pub correlated: Option<bool>,
    pub mediation: Option<bool>,
    pub theta: Option<[f64; 3]>,
    pub sigma_alpha_sq: Option<f64>,
    pub inside_violated: Option<bool>,
    pub beta_means: Option<[f64; 3]>,
    pub sigmas_sq: Option<[f64; 3]>,
    pub rhos: Option<[f64; 3]>,
    pub gamma: Option<f64>,
    pub j_variants: Option<usize>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub no_pleiotropy: Option<bool>,
    pub weight_mode: Option<WeightMode>,
    pub scheme: Option<WeightScheme>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| MrError::InvalidArgument(format!("scenario config: {e}")))
    }

    pub fn into_config(self) -> Result<ScenarioConfig> {
        let scenario = Scenario::from_number(self.scenario.unwrap_or(1))?;
        let mut c = ScenarioConfig::grid_cell(
            scenario,
            self.mu.unwrap_or(0.0),
            self.theta1.unwrap_or(0.0),
            self.correlated.unwrap_or(false),
            self.mediation.unwrap_or(false),
        );
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(theta, sigma_alpha_sq, inside_violated, beta_means, sigmas_sq, rhos, gamma, j_variants, replicates, seed, no_pleiotropy, weight_mode, scheme);
        if let (Some(t1), None) = (self.theta1, self.theta) {
            c.theta[0] = t1;
        }
        c.validate()?;
        Ok(c)
    }
}
