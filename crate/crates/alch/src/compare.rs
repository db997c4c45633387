//! Componentwise differences between two run reports.

use std::collections::BTreeMap;

use alch_core::TensorField;
use serde::{Deserialize, Serialize};

use crate::run::RunReport;
use crate::RunError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunDiff {
    /// Largest component difference per boundary field.
    pub fields: BTreeMap<String, f64>,
    /// Absolute differences of the CR gaps, when both runs have them.
    pub cr: BTreeMap<String, f64>,
    pub max_field: f64,
}

fn field_diff(a: &TensorField, b: &TensorField) -> Result<f64, RunError> {
    if a.grid != b.grid || a.slots != b.slots {
        return Err(RunError::Incomparable("boundary grids differ".into()));
    }
    Ok(a.data.iter().zip(&b.data).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())))
}

/// Requires equal model and chart blocks; seeds and tolerances may differ.
pub fn compare_runs(a: &RunReport, b: &RunReport) -> Result<RunDiff, RunError> {
    if a.config.model != b.config.model {
        return Err(RunError::Incomparable("model blocks differ".into()));
    }
    if a.config.chart != b.config.chart {
        return Err(RunError::Incomparable("chart blocks differ".into()));
    }
    let (Some(ba), Some(bb)) = (&a.boundary, &b.boundary) else {
        return Err(RunError::Incomparable("both reports need boundary data".into()));
    };
    let mut fields = BTreeMap::new();
    fields.insert("eta0".to_string(), field_diff(&ba.fields.eta0, &bb.fields.eta0)?);
    fields.insert("gamma".to_string(), field_diff(&ba.fields.gamma, &bb.fields.gamma)?);
    fields.insert("xi0".to_string(), field_diff(&ba.fields.xi0, &bb.fields.xi0)?);
    fields.insert("phi".to_string(), field_diff(&ba.fields.phi, &bb.fields.phi)?);
    let mut cr = BTreeMap::new();
    if let (Some(x), Some(y)) = (&a.cr, &b.cr) {
        cr.insert("levi_gap".to_string(), (x.levi_gap - y.levi_gap).abs());
        cr.insert("reeb_gap".to_string(), (x.reeb_gap - y.reeb_gap).abs());
        cr.insert("nijenhuis_gap".to_string(), (x.nijenhuis_gap - y.nijenhuis_gap).abs());
        cr.insert("levi_eigen_min".to_string(), (x.levi_eigen_min - y.levi_eigen_min).abs());
    }
    let max_field = fields.values().cloned().fold(0.0, f64::max);
    Ok(RunDiff { fields, cr, max_field })
}
