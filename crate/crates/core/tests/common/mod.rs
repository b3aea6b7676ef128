#![allow(dead_code)]

use mregger::wls::{weighted_cov, weighted_var};
use mregger::{
    egger_correlated, egger_multivariable, egger_univariable, ivw_correlated, ivw_multivariable, ivw_univariable, orient,
    CorrelationMatrix, MRResult, SummaryDataset, VariantRecord, WeightScheme,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub const FE: WeightScheme = WeightScheme::FixedEffect;
pub const RE: WeightScheme = WeightScheme::MultiplicativeRandomEffect;
pub const LEVEL: f64 = 0.95;

pub fn names(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("x{i}")).collect()
}

/// Dataset from rows of `(beta_x, beta_y, se_y)`.
pub fn dataset(rows: &[(Vec<f64>, f64, f64)]) -> SummaryDataset {
    let k = rows[0].0.len();
    let variants = rows
        .iter()
        .enumerate()
        .map(|(i, (bx, by, se))| VariantRecord {
            variant_id: format!("rs{}", i + 1),
            effect_allele: "A".into(),
            other_allele: "G".into(),
            beta_x: bx.clone(),
            se_x: vec![0.01; k],
            beta_y: *by,
            se_y: *se,
        })
        .collect();
    SummaryDataset::new(names(k), variants).unwrap()
}

/// Solution of the weighted normal equations by explicit inversion:
/// coefficients, unscaled standard errors and residual standard error.
pub struct NormalEquations {
    pub coefficients: Vec<f64>,
    pub unscaled_se: Vec<f64>,
    pub sigma: f64,
}

impl NormalEquations {
    pub fn se(&self, scheme: WeightScheme) -> Vec<f64> {
        let m = match scheme {
            WeightScheme::FixedEffect => 1.0,
            WeightScheme::MultiplicativeRandomEffect => self.sigma.max(1.0),
        };
        self.unscaled_se.iter().map(|s| s * m).collect()
    }
}

/// `(X' P X)^-1 X' P y` with `P` the precision matrix of the outcome errors.
pub fn brute_force(x: &DMatrix<f64>, y: &[f64], precision: &DMatrix<f64>) -> NormalEquations {
    let yv = DVector::from_column_slice(y);
    let xtpx = x.transpose() * precision * x;
    let inv = xtpx.clone().try_inverse().expect("invertible normal equations");
    let beta = &inv * (x.transpose() * precision * &yv);
    let r = &yv - x * &beta;
    let rss = (r.transpose() * precision * &r)[(0, 0)];
    let df = x.nrows() - x.ncols();
    let sigma = if df == 0 { 0.0 } else { (rss / df as f64).sqrt() };
    NormalEquations {
        coefficients: beta.iter().copied().collect(),
        unscaled_se: (0..x.ncols()).map(|i| inv[(i, i)].sqrt()).collect(),
        sigma,
    }
}

pub fn design(ds: &SummaryDataset, intercept: bool) -> DMatrix<f64> {
    let bx = ds.beta_x_matrix();
    if !intercept {
        return bx;
    }
    let mut d = DMatrix::from_element(ds.j(), ds.k() + 1, 1.0);
    d.view_mut((0, 1), (ds.j(), ds.k())).copy_from(&bx);
    d
}

pub fn diagonal_precision(ds: &SummaryDataset) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_vec(ds.weights()))
}

pub fn omega_precision(ds: &SummaryDataset) -> DMatrix<f64> {
    let se = ds.se_y();
    let c = ds.correlation().unwrap();
    let omega = DMatrix::from_fn(ds.j(), ds.j(), |s, t| se[s] * se[t] * c.get(s, t));
    omega.try_inverse().expect("invertible covariance")
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(f64::MIN_POSITIVE)
}

/// Normwise relative difference `max|a - b| / max|b|`.
pub fn normwise(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    diff / scale.max(f64::MIN_POSITIVE)
}

/// Compares the coefficient and standard-error vectors of a fitted result
/// against the brute-force solve, each to `tol` normwise relative.
pub fn check_against(result: &MRResult, oracle: &NormalEquations, scheme: WeightScheme, tol: f64) -> Result<(), String> {
    let mut coef = Vec::new();
    let mut se = Vec::new();
    if let Some(i) = &result.intercept {
        coef.push(i.theta_0);
        se.push(i.se);
    }
    for e in &result.estimates {
        coef.push(e.theta_hat);
        se.push(e.se);
    }
    let want_se = oracle.se(scheme);
    let (dc, ds) = (normwise(&coef, &oracle.coefficients), normwise(&se, &want_se));
    if dc > tol || ds > tol {
        return Err(format!(
            "{}: coefficients {coef:?} vs {:?} ({dc:e}); se {se:?} vs {want_se:?} ({ds:e})",
            result.method, oracle.coefficients
        ));
    }
    Ok(())
}

/// Random correlation matrix `D^-1/2 (A A' + d I) D^-1/2`.
pub fn random_correlation(vals: &[f64], j: usize, ridge: f64) -> CorrelationMatrix {
    let a = DMatrix::from_fn(j, j, |r, c| vals[r * j + c]);
    let s = &a * a.transpose() + DMatrix::identity(j, j) * ridge;
    let d: Vec<f64> = (0..j).map(|i| s[(i, i)].sqrt()).collect();
    CorrelationMatrix::new(DMatrix::from_fn(j, j, |r, c| {
        if r == c {
            1.0
        } else {
            s[(r, c)] / (d[r] * d[c])
        }
    }))
    .unwrap()
}

/// Small random instance: J in [K+2, 8], K in [1, 3], first risk factor
/// strictly positive so every estimator applies.
#[derive(Debug, Clone)]
pub struct Instance {
    pub rows: Vec<(Vec<f64>, f64, f64)>,
    pub corr_vals: Vec<f64>,
}

impl Instance {
    pub fn k(&self) -> usize {
        self.rows[0].0.len()
    }

    pub fn dataset(&self) -> SummaryDataset {
        dataset(&self.rows)
    }

    pub fn correlated(&self) -> SummaryDataset {
        let j = self.rows.len();
        self.dataset().with_correlation(random_correlation(&self.corr_vals, j, 0.5)).unwrap()
    }
}

pub fn instance_strategy(signed_reference: bool) -> impl Strategy<Value = Instance> {
    (1usize..=3)
        .prop_flat_map(|k| (Just(k), (k + 2)..=8usize))
        .prop_flat_map(move |(k, j)| {
            let lo = if signed_reference { -1.0 } else { 0.05 };
            let row = (
                lo..1.0f64,
                prop::collection::vec(-1.0..1.0f64, k - 1),
                -1.0..1.0f64,
                0.05..1.0f64,
            )
                .prop_map(|(first, rest, by, se)| {
                    let mut bx = vec![first];
                    bx.extend(rest);
                    (bx, by, se)
                });
            (prop::collection::vec(row, j), prop::collection::vec(-0.5..0.5f64, j * j))
        })
        .prop_map(|(rows, corr_vals)| Instance { rows, corr_vals })
}

pub fn univariable_strategy() -> impl Strategy<Value = Instance> {
    instance_strategy(false).prop_map(|mut i| {
        for r in &mut i.rows {
            r.0.truncate(1);
        }
        i
    })
}

pub fn signs_strategy() -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), 8)
}

fn bits(r: &MRResult) -> Vec<u64> {
    r.estimates.iter().flat_map(|e| [e.theta_hat.to_bits(), e.se.to_bits(), e.p_value.to_bits()]).collect()
}

fn flip_rows(inst: &Instance, signs: &[bool]) -> SummaryDataset {
    let ds = inst.dataset();
    let variants = ds
        .variants()
        .iter()
        .zip(signs.iter().cycle())
        .map(|(v, &f)| if f { v.flipped() } else { v.clone() })
        .collect();
    SummaryDataset::new(ds.risk_factor_names().to_vec(), variants).unwrap()
}

pub fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg.into()))
    }
}

/// IVW results are bit-identical whichever allele each variant is reported for.
pub fn prop_orientation_invariance(inst: &Instance, signs: &[bool]) -> Result<(), TestCaseError> {
    let a = inst.dataset();
    let b = flip_rows(inst, signs);
    for scheme in [FE, RE] {
        let ra = ivw_multivariable(&a, scheme, LEVEL).unwrap();
        let rb = ivw_multivariable(&b, scheme, LEVEL).unwrap();
        ensure(bits(&ra) == bits(&rb), format!("multivariable IVW changed under flips: {ra:?} vs {rb:?}"))?;
        if a.k() == 1 {
            let ua = ivw_univariable(&a, scheme, LEVEL).unwrap();
            let ub = ivw_univariable(&b, scheme, LEVEL).unwrap();
            ensure(bits(&ua) == bits(&ub), "univariable IVW changed under flips")?;
        }
    }
    Ok(())
}

/// Orienting twice is the same as orienting once; Egger is unchanged by
/// flipping before orientation.
pub fn prop_orient_idempotent(inst: &Instance, signs: &[bool]) -> Result<(), TestCaseError> {
    let ds = flip_rows(inst, signs);
    let (once, _) = orient(&ds, "x1").unwrap();
    let (twice, rep) = orient(&once, "x1").unwrap();
    ensure(once == twice, "second orientation changed the data")?;
    ensure(rep.flipped_ids.is_empty(), "second orientation flipped variants")?;
    ensure(once.variants().iter().all(|v| v.beta_x[0] >= 0.0), "reference not oriented")?;
    let (direct, _) = orient(&inst.dataset(), "x1").unwrap();
    ensure(direct == once, "orientation depends on the reported allele")
}

/// MR-Egger nests IVW: its weighted residual sum of squares is never larger,
/// an outcome shift moves only the intercept, and an exactly proportional
/// outcome gives the same slope with zero intercept.
pub fn prop_ivw_egger_nesting(inst: &Instance, shift: f64) -> Result<(), TestCaseError> {
    let ds = inst.dataset();
    let (ivw, egger) = if ds.k() == 1 {
        (ivw_univariable(&ds, FE, LEVEL).unwrap(), egger_univariable(&ds, FE, LEVEL).unwrap())
    } else {
        (ivw_multivariable(&ds, FE, LEVEL).unwrap(), egger_multivariable(&ds, FE, LEVEL, "x1").unwrap())
    };
    let rss = |r: &MRResult| r.residual_scale.powi(2) * r.df as f64;
    ensure(rss(&egger) <= rss(&ivw) * (1.0 + 1e-9) + 1e-12, "Egger RSS exceeds IVW RSS")?;

    let shifted: Vec<_> = inst.rows.iter().map(|(bx, by, se)| (bx.clone(), by + shift, *se)).collect();
    let es = egger_multivariable(&dataset(&shifted), FE, LEVEL, "x1").unwrap();
    let e0 = egger_multivariable(&ds, FE, LEVEL, "x1").unwrap();
    let (i0, is) = (e0.intercept.unwrap().theta_0, es.intercept.unwrap().theta_0);
    ensure((is - i0 - shift).abs() <= 1e-8 * (1.0 + shift.abs() + i0.abs()), "shift not absorbed by intercept")?;
    for (a, b) in e0.estimates.iter().zip(&es.estimates) {
        ensure((a.theta_hat - b.theta_hat).abs() <= 1e-8 * (1.0 + a.theta_hat.abs()), "slope moved under shift")?;
    }

    let theta: Vec<f64> = (0..ds.k()).map(|k| 0.5 - 0.3 * k as f64).collect();
    let exact: Vec<_> = inst
        .rows
        .iter()
        .map(|(bx, _, se)| (bx.clone(), bx.iter().zip(&theta).map(|(b, t)| b * t).sum(), *se))
        .collect();
    let dx = dataset(&exact);
    let iv = ivw_multivariable(&dx, FE, LEVEL).unwrap();
    let eg = egger_multivariable(&dx, FE, LEVEL, "x1").unwrap();
    ensure(eg.intercept.unwrap().theta_0.abs() <= 1e-8, "exact proportional fit has an intercept")?;
    for (k, (a, b)) in iv.estimates.iter().zip(&eg.estimates).enumerate() {
        ensure((a.theta_hat - theta[k]).abs() <= 1e-8 && (b.theta_hat - theta[k]).abs() <= 1e-8, "exact slope missed")?;
    }
    Ok(())
}

/// With one risk factor the multivariable estimators are the univariable ones.
pub fn prop_k1_equivalence(inst: &Instance) -> Result<(), TestCaseError> {
    let ds = inst.dataset();
    for scheme in [FE, RE] {
        let mi = ivw_multivariable(&ds, scheme, LEVEL).unwrap();
        let ui = ivw_univariable(&ds, scheme, LEVEL).unwrap();
        ensure(bits(&mi) == bits(&ui) && mi.df == ui.df, "MI and UI differ at K=1")?;
        let me = egger_multivariable(&ds, scheme, LEVEL, "x1").unwrap();
        let ue = egger_univariable(&ds, scheme, LEVEL).unwrap();
        ensure(bits(&me) == bits(&ue) && me.intercept == ue.intercept, "ME and UE differ at K=1")?;
    }
    Ok(())
}

/// Generalized least squares with an identity correlation is weighted least squares.
pub fn prop_gls_identity(inst: &Instance) -> Result<(), TestCaseError> {
    let ds = inst.dataset();
    let id = ds.clone().with_correlation(CorrelationMatrix::identity(ds.j())).unwrap();
    for scheme in [FE, RE] {
        let pairs = [
            (ivw_multivariable(&ds, scheme, LEVEL).unwrap(), ivw_correlated(&id, scheme, LEVEL).unwrap()),
            (
                egger_multivariable(&ds, scheme, LEVEL, "x1").unwrap(),
                egger_correlated(&id, scheme, LEVEL, "x1").unwrap(),
            ),
        ];
        for (w, g) in pairs {
            for (a, b) in w.estimates.iter().zip(&g.estimates) {
                ensure(rel_close(b.theta_hat, a.theta_hat, 1e-10), format!("theta {} vs {}", b.theta_hat, a.theta_hat))?;
                ensure(rel_close(b.se, a.se, 1e-10), format!("se {} vs {}", b.se, a.se))?;
            }
            if let (Some(a), Some(b)) = (&w.intercept, &g.intercept) {
                ensure(rel_close(b.theta_0, a.theta_0, 1e-10), "intercept differs")?;
            }
        }
    }
    Ok(())
}

/// Fixed and random effects share point estimates; random-effect errors are never smaller.
pub fn prop_fixed_random(inst: &Instance) -> Result<(), TestCaseError> {
    let ds = inst.dataset();
    let check = |f: MRResult, r: MRResult| -> Result<(), TestCaseError> {
        for (a, b) in f.estimates.iter().zip(&r.estimates) {
            ensure(a.theta_hat.to_bits() == b.theta_hat.to_bits(), "point estimates differ")?;
            ensure(b.se >= a.se, "random-effects se below fixed-effect se")?;
        }
        Ok(())
    };
    check(ivw_multivariable(&ds, FE, LEVEL).unwrap(), ivw_multivariable(&ds, RE, LEVEL).unwrap())?;
    check(egger_multivariable(&ds, FE, LEVEL, "x1").unwrap(), egger_multivariable(&ds, RE, LEVEL, "x1").unwrap())?;
    let c = inst.correlated();
    check(ivw_correlated(&c, FE, LEVEL).unwrap(), ivw_correlated(&c, RE, LEVEL).unwrap())
}

pub fn moments_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..40).prop_flat_map(|n| (prop::collection::vec(-1e3..1e3f64, n), prop::collection::vec(1e-3..1e3f64, n)))
}

pub fn prop_cov_is_var(a: &[f64], w: &[f64]) -> Result<(), TestCaseError> {
    let c = weighted_cov(a, a, w).unwrap();
    let v = weighted_var(a, w).unwrap();
    ensure((c - v).abs() <= 1e-12 * v.abs().max(f64::MIN_POSITIVE), format!("cov(a,a)={c} var(a)={v}"))?;
    ensure(v >= 0.0, "negative variance")
}

/// Deterministic draws from a strategy.
pub fn sample<S: Strategy>(strategy: &S, n: usize) -> Vec<S::Value> {
    use proptest::strategy::ValueTree;
    use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
    let mut runner = TestRunner::new_with_rng(Config::default(), TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    (0..n).map(|_| strategy.new_tree(&mut runner).unwrap().current()).collect()
}

/// Every estimator on `inst` against the explicit-inverse solve. Returns the
/// number of comparisons made.
pub fn check_instance(inst: &Instance, tol: f64) -> Result<usize, String> {
    let mut n = 0;
    let ds = inst.dataset();
    let corr = inst.correlated();
    let err = |e: mregger::MrError| e.to_string();
    for scheme in [FE, RE] {
        let w = diagonal_precision(&ds);
        let p = omega_precision(&corr);
        let plain = brute_force(&design(&ds, false), &ds.beta_y(), &w);
        let with_int = brute_force(&design(&ds, true), &ds.beta_y(), &w);
        let gls = brute_force(&design(&corr, false), &corr.beta_y(), &p);
        let gls_int = brute_force(&design(&corr, true), &corr.beta_y(), &p);
        let mut cases = vec![
            (ivw_multivariable(&ds, scheme, LEVEL).map_err(err)?, &plain),
            (egger_multivariable(&ds, scheme, LEVEL, "x1").map_err(err)?, &with_int),
            (ivw_correlated(&corr, scheme, LEVEL).map_err(err)?, &gls),
            (egger_correlated(&corr, scheme, LEVEL, "x1").map_err(err)?, &gls_int),
        ];
        if ds.k() == 1 {
            cases.push((ivw_univariable(&ds, scheme, LEVEL).map_err(err)?, &plain));
            cases.push((egger_univariable(&ds, scheme, LEVEL).map_err(err)?, &with_int));
        }
        for (result, oracle) in cases {
            check_against(&result, oracle, scheme, tol)?;
            n += 1;
        }
    }
    Ok(n)
}

/// Univariable IVW against its closed form `sum(bx by w) / sum(bx^2 w)`
/// with fixed-effect error `sum(bx^2 w)^-1/2`.
pub fn check_closed_form(inst: &Instance, tol: f64) -> Result<(), String> {
    let rows: Vec<_> = inst.rows.iter().map(|(bx, by, se)| (vec![bx[0]], *by, *se)).collect();
    let ds = dataset(&rows);
    let (mut num, mut den) = (0.0, 0.0);
    for (bx, by, se) in &rows {
        let w = se.powi(-2);
        num += bx[0] * by * w;
        den += bx[0] * bx[0] * w;
    }
    let r = ivw_univariable(&ds, FE, LEVEL).map_err(|e| e.to_string())?;
    let e = &r.estimates[0];
    if !rel_close(e.theta_hat, num / den, tol) || !rel_close(e.se, den.sqrt().recip(), tol) {
        return Err(format!("closed form {} ({}) vs regression {} ({})", num / den, den.sqrt().recip(), e.theta_hat, e.se));
    }
    Ok(())
}
