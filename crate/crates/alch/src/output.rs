//! Files written by a run: `report.json`, `series_<name>.csv`,
//! `fit_<name>.csv` and `boundary_data.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use alch_core::{Grid, TensorField};
use serde::Serialize;

use crate::config::Formats;
use crate::run::RunOutput;
use crate::RunError;

/// Grid and components of the boundary fields, for plotting.
#[derive(Serialize)]
struct BoundaryFile<'a> {
    grid: &'a Grid,
    points: Vec<Vec<f64>>,
    eta0: &'a TensorField,
    gamma: &'a TensorField,
    xi0: &'a TensorField,
    phi: &'a TensorField,
    g0: &'a TensorField,
}

/// `r,value` rows at full double precision.
pub fn series_csv(r: &[f64], v: &[f64]) -> String {
    let mut s = String::from("r,value\n");
    for (a, b) in r.iter().zip(v) {
        let _ = writeln!(s, "{a:.16e},{b:.16e}");
    }
    s
}

/// `r,value,fitted` rows inside the fit window.
pub fn fit_csv(r: &[f64], v: &[f64], fit: &alch_core::rates::DecayFit) -> String {
    let mut s = String::from("r,value,fitted\n");
    for (a, b) in r.iter().zip(v) {
        if *a < fit.r_window.0 - 1e-12 || *a > fit.r_window.1 + 1e-12 {
            continue;
        }
        let mut log = fit.intercept - fit.slope * a;
        if fit.log_corrected {
            log += (a + 1.0).ln();
        }
        let _ = writeln!(s, "{a:.16e},{b:.16e},{:.16e}", log.exp());
    }
    s
}

pub fn write_outputs(out: &RunOutput, dir: &Path, formats: Formats) -> Result<(), RunError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&out.report)?)?;
    if matches!(formats, Formats::Csv | Formats::Both) {
        for (name, v) in &out.series {
            fs::write(dir.join(format!("series_{name}.csv")), series_csv(&out.r, v))?;
            if let Some(f) = out.report.fits.get(name) {
                fs::write(dir.join(format!("fit_{name}.csv")), fit_csv(&out.r, v, f))?;
            }
        }
    }
    if matches!(formats, Formats::Json | Formats::Both) {
        if let Some(d) = &out.data {
            let file = BoundaryFile {
                grid: &d.grid,
                points: (0..d.grid.len()).map(|p| d.grid.point(p)).collect(),
                eta0: &d.eta0,
                gamma: &d.gamma,
                xi0: &d.xi0,
                phi: &d.phi,
                g0: &d.g0,
            };
            fs::write(dir.join("boundary_data.json"), serde_json::to_string(&file)?)?;
        }
    }
    Ok(())
}
