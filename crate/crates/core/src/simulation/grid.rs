//! The 2 x 8 x 2 grid of scenario settings, plus the mediation copy.

use std::io::Write;

use serde::Serialize;

use super::{run_scenario, Scenario, ScenarioConfig, SimulationSummary};
use crate::error::Result;
use crate::numfmt::report;

const DIRECTIONAL_MUS: [f64; 3] = [0.01, 0.05, 0.1];
const THETA1_VALUES: [f64; 2] = [0.0, 0.3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSetting {
    pub correlated: bool,
    pub mediation: bool,
    pub theta1: f64,
    pub scenario: Scenario,
    pub mu: f64,
}

impl GridSetting {
    pub fn config(&self, replicates: usize, seed: u64) -> ScenarioConfig {
        ScenarioConfig::grid_cell(self.scenario, self.mu, self.theta1, self.correlated, self.mediation)
            .with_replicates(replicates)
            .with_seed(seed)
    }

    pub fn block(&self) -> &'static str {
        match (self.mediation, self.correlated) {
            (false, false) => "independent",
            (false, true) => "correlated",
            (true, false) => "mediation-independent",
            (true, true) => "mediation-correlated",
        }
    }
}

/// Grid cells in table order: correlation setting, then theta1, then the
/// eight pleiotropy rows. Mediation cells follow the main 32 when requested.
pub fn grid_settings(include_mediation: bool) -> Vec<GridSetting> {
    let mediations: &[bool] = if include_mediation { &[false, true] } else { &[false] };
    let mut out = Vec::new();
    for &mediation in mediations {
        for correlated in [false, true] {
            for theta1 in THETA1_VALUES {
                let mut push = |scenario, mu| out.push(GridSetting { correlated, mediation, theta1, scenario, mu });
                push(Scenario::NoPleiotropy, 0.0);
                push(Scenario::Balanced, 0.0);
                for mu in DIRECTIONAL_MUS {
                    push(Scenario::Directional, mu);
                }
                for mu in DIRECTIONAL_MUS {
                    push(Scenario::DirectionalViolated, mu);
                }
            }
        }
    }
    out
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of grid row `index` derived from the root seed.
pub fn row_seed(root: u64, index: usize) -> u64 {
    splitmix64(root ^ splitmix64(index as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub index: usize,
    pub setting: GridSetting,
    pub seed: u64,
    pub summary: SimulationSummary,
}

impl GridRow {
    fn single(summary: &SimulationSummary) -> Self {
        let c = &summary.config;
        GridRow {
            index: 0,
            setting: GridSetting {
                correlated: c.rhos != [0.0; 3],
                mediation: c.gamma != 0.0,
                theta1: c.theta[0],
                scenario: c.scenario(),
                mu: c.mu,
            },
            seed: c.seed,
            summary: summary.clone(),
        }
    }
}

pub fn run_grid(replicates: usize, seed: u64, include_mediation: bool) -> Result<Vec<GridRow>> {
    grid_settings(include_mediation)
        .into_iter()
        .enumerate()
        .map(|(index, setting)| {
            let s = row_seed(seed, index);
            let summary = run_scenario(&setting.config(replicates, s))?;
            Ok(GridRow { index, setting, seed: s, summary })
        })
        .collect()
}

fn opt(x: Option<f64>) -> String {
    x.map(report).unwrap_or_default()
}

pub fn write_grid_csv<W: Write>(rows: &[GridRow], replicates: usize, seed: u64, out: W) -> Result<()> {
    let (mode, scheme, j) = rows
        .first()
        .map(|r| (r.summary.config.weight_mode.label(), r.summary.config.scheme.label(), r.summary.config.j_variants))
        .unwrap_or(("", "", 0));
    let header = [
        "mregger grid".to_string(),
        format!("seed={seed} replicates={replicates} rows={} j_variants={j} weight_mode={mode} scheme={scheme}", rows.len()),
    ];
    write_rows_csv(rows, &header, out)
}

/// CSV for a single scenario run, with the full configuration in the header.
pub fn write_scenario_csv<W: Write>(summary: &SimulationSummary, out: W) -> Result<()> {
    let c = &summary.config;
    let header = [
        "mregger simulate".to_string(),
        format!("seed={} replicates={}", c.seed, c.replicates),
        format!("config={}", serde_json::to_string(c).map_err(|e| crate::error::MrError::InvalidArgument(e.to_string()))?),
    ];
    write_rows_csv(&[GridRow::single(summary)], &header, out)
}

pub fn write_scenario_text<W: Write>(summary: &SimulationSummary, out: W) -> Result<()> {
    let c = &summary.config;
    write_grid_text(&[GridRow::single(summary)], c.replicates, c.seed, out)
}

fn write_rows_csv<W: Write>(rows: &[GridRow], header: &[String], mut out: W) -> Result<()> {
    for h in header {
        writeln!(out, "# {h}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> =
        ["row", "block", "theta1", "scenario", "mu", "sigma_alpha_sq", "inside_violated", "gamma", "row_seed"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    for m in ["mi", "ue", "me"] {
        for f in ["mean_theta1", "mean_se", "sd_theta1", "power_causal", "power_intercept", "replicates_used", "failures"] {
            header.push(format!("{m}_{f}"));
        }
    }
    w.write_record(&header)?;
    for r in rows {
        let c = &r.summary.config;
        let mut rec = vec![
            (r.index + 1).to_string(),
            r.setting.block().to_string(),
            report(c.theta[0]),
            r.setting.scenario.number().to_string(),
            report(c.mu),
            report(c.sigma_alpha_sq),
            c.inside_violated.to_string(),
            report(c.gamma),
            r.seed.to_string(),
        ];
        for e in r.summary.estimators() {
            rec.extend([
                report(e.mean_theta1),
                report(e.mean_se),
                report(e.sd_theta1),
                report(e.power_causal),
                opt(e.power_intercept),
                e.replicates_used.to_string(),
                e.failures.to_string(),
            ]);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Aligned text rendering: one block per correlation/mediation setting,
/// sub-headed by theta1 and scenario. Powers are in percent.
pub fn write_grid_text<W: Write>(rows: &[GridRow], replicates: usize, seed: u64, mut out: W) -> Result<()> {
    writeln!(out, "mregger grid: seed={seed} replicates={replicates}")?;
    let head = [
        "", "MI mean", "(se)", "power%", "UE mean", "(se)", "int%", "power%", "ME mean", "(se)", "int%", "power%", "fail",
    ];
    let line = |cells: &[String]| {
        let mut s = format!("{:<18}", cells[0]);
        for c in &cells[1..] {
            s.push_str(&format!(" {c:>12}"));
        }
        s
    };
    let mut last: Option<(&str, f64, Scenario)> = None;
    for r in rows {
        let st = &r.setting;
        if last.map(|l| l.0) != Some(st.block()) {
            writeln!(out, "\n== {} ==", st.block())?;
            writeln!(out, "{}", line(&head.map(String::from)))?;
        }
        if last.map(|l| (l.0, l.1)) != Some((st.block(), st.theta1)) {
            writeln!(out, "theta1 = {}", report(st.theta1))?;
        }
        if last != Some((st.block(), st.theta1, st.scenario)) {
            writeln!(out, "  {}. {}", st.scenario.number(), st.scenario.title())?;
        }
        last = Some((st.block(), st.theta1, st.scenario));
        let c = &r.summary.config;
        let label = if c.no_pleiotropy {
            String::new()
        } else {
            format!("    ({}, {})", report(c.mu), report(c.sigma_alpha_sq))
        };
        let pct = |p: f64| report(100.0 * p);
        let s = &r.summary;
        let cells = vec![
            label,
            report(s.mi.mean_theta1),
            format!("({})", report(s.mi.mean_se)),
            pct(s.mi.power_causal),
            report(s.ue.mean_theta1),
            format!("({})", report(s.ue.mean_se)),
            s.ue.power_intercept.map(pct).unwrap_or_default(),
            pct(s.ue.power_causal),
            report(s.me.mean_theta1),
            format!("({})", report(s.me.mean_se)),
            s.me.power_intercept.map(pct).unwrap_or_default(),
            pct(s.me.power_causal),
            s.total_failures().to_string(),
        ];
        writeln!(out, "{}", line(&cells))?;
    }
    Ok(())
}
