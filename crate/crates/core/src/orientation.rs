//! Re-expressing associations per copy of the allele that increases a
//! chosen reference risk factor.

use serde::Serialize;

use crate::data::SummaryDataset;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OrientationReport {
    pub reference: String,
    /// Variants whose associations were negated and alleles swapped.
    pub flipped_ids: Vec<String>,
    /// Variants with exactly zero association with the reference; left as given.
    pub zero_ids: Vec<String>,
}

impl OrientationReport {
    pub fn warnings(&self) -> Vec<String> {
        if self.zero_ids.is_empty() {
            return Vec::new();
        }
        vec![format!(
            "{} variant(s) have zero association with {} and keep their reported orientation: {}",
            self.zero_ids.len(),
            self.reference,
            self.zero_ids.join(",")
        )]
    }
}

/// Flips every variant whose association with `reference` is negative:
/// all risk-factor and outcome associations are negated and the allele labels
/// swapped. Standard errors are unchanged; an attached correlation matrix is
/// re-signed to match.
pub fn orient(ds: &SummaryDataset, reference: &str) -> Result<(SummaryDataset, OrientationReport)> {
    let r = ds.risk_factor_index(reference)?;
    let mut flipped_ids = Vec::new();
    let mut zero_ids = Vec::new();
    let mut signs = Vec::with_capacity(ds.j());
    let variants = ds
        .variants()
        .iter()
        .map(|v| {
            let b = v.beta_x[r];
            if b < 0.0 {
                flipped_ids.push(v.variant_id.clone());
                signs.push(-1.0);
                v.flipped()
            } else {
                if b == 0.0 {
                    zero_ids.push(v.variant_id.clone());
                }
                signs.push(1.0);
                v.clone()
            }
        })
        .collect();
    let correlation = ds.correlation().map(|c| c.with_signs(&signs));
    let report = OrientationReport { reference: reference.to_string(), flipped_ids, zero_ids };
    Ok((ds.with_variants(variants, correlation), report))
}
