//! Stage orchestration and the run report.

use std::collections::BTreeMap;
use std::time::Instant;

use alch_core::boundary::{assemble, compute_line, BoundaryData, Invariants, LineDiagnostics};
use alch_core::cr::{cr_report, expansion_residual, CrReport};
use alch_core::curvature::{deficits, DeficitSeries};
use alch_core::models::{deficit_line, model_oracle, Model, ModelSpec, OracleReport};
use alch_core::rates::{classify_regime, fit_decay_above, fit_decay_window, DecayFit, RateMap, Verdict, FLOOR_FACTOR};
use alch_core::{Chart, TensorField};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Resolved, RunConfig, Stage};
use crate::RunError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    Pass,
    Fail,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: String,
    pub outcome: Outcome,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeficitSummary {
    pub max_alch: f64,
    pub max_ak: f64,
    pub max_ak_plus: f64,
    pub sec_min: f64,
    pub sec_max: f64,
    /// Every slice keeps `sec(∂r, ·)` in `[−1 − δ, −¼ + δ]` with `δ = 1.5 ×` the slice deficit.
    pub sec_bounds: bool,
}

/// Components of the boundary fields at one grid corner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerRow {
    pub x: Vec<f64>,
    pub eta0: Vec<f64>,
    pub gamma: Vec<f64>,
    pub xi0: Vec<f64>,
    pub phi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFields {
    pub eta0: TensorField,
    pub gamma: TensorField,
    pub xi0: TensorField,
    pub phi: TensorField,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySummary {
    pub corners: Vec<CornerRow>,
    /// Largest absolute component of each field.
    pub max_abs: BTreeMap<String, f64>,
    pub invariants: Invariants,
    pub diagnostics: LineDiagnostics,
    pub flags: Vec<String>,
    pub fields: BoundaryFields,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub oracle: Option<OracleReport>,
    pub deficits: Option<DeficitSummary>,
    pub boundary: Option<BoundarySummary>,
    pub cr: Option<CrReport>,
    pub fits: BTreeMap<String, DecayFit>,
    pub rates: Vec<Verdict>,
    pub stages: Vec<StageOutcome>,
    pub verdict: Outcome,
}

impl RunReport {
    /// 0 on PASS, 2 on any FAIL, 1 on a stage error.
    pub fn exit_code(&self) -> i32 {
        match self.verdict {
            Outcome::Pass => 0,
            Outcome::Fail => 2,
            Outcome::Error => 1,
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageOutcome> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

/// Everything a run produces; the report plus the data behind the files.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    /// Per-slice series by name, on the chart's radial samples.
    pub series: BTreeMap<String, Vec<f64>>,
    pub r: Vec<f64>,
    pub data: Option<BoundaryData>,
}

#[derive(Default)]
struct State {
    oracle: Option<OracleReport>,
    deficits: Option<DeficitSeries>,
    deficit_summary: Option<DeficitSummary>,
    data: Option<BoundaryData>,
    cr: Option<CrReport>,
    fits: BTreeMap<String, DecayFit>,
    verdicts: Vec<Verdict>,
    series: BTreeMap<String, Vec<f64>>,
}

/// Runs the enabled stages in dependency order. Configuration errors are
/// returned; stage errors are recorded in the report under the stage name.
pub fn run(config: &RunConfig) -> Result<RunOutput, RunError> {
    let res = config.resolve()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if config.workers > 0 {
        builder = builder.num_threads(config.workers);
    }
    let pool = builder.build().map_err(|e| RunError::Config(format!("workers: {e}")))?;
    Ok(pool.install(|| run_resolved(config, &res)))
}

fn run_resolved(config: &RunConfig, res: &Resolved) -> RunOutput {
    let mut st = State::default();
    let mut outcomes = Vec::new();
    let model = Model::new(res.spec, &res.chart);
    for &stage in &res.stages {
        let t = Instant::now();
        let result = match &model {
            Ok(m) => run_stage(stage, m, config, res, &mut st),
            Err(e) => Err(e.clone()),
        };
        let (outcome, error) = match result {
            Ok(true) => (Outcome::Pass, None),
            Ok(false) => (Outcome::Fail, None),
            Err(e) => (Outcome::Error, Some(e.to_string())),
        };
        outcomes.push(StageOutcome { stage: stage.name().into(), outcome, seconds: t.elapsed().as_secs_f64(), error });
        if outcome == Outcome::Error {
            break;
        }
    }
    let verdict = if outcomes.iter().any(|o| o.outcome == Outcome::Error) {
        Outcome::Error
    } else if outcomes.iter().any(|o| o.outcome == Outcome::Fail) {
        Outcome::Fail
    } else {
        Outcome::Pass
    };
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        oracle: st.oracle,
        deficits: st.deficit_summary,
        boundary: st.data.as_ref().map(summary),
        cr: st.cr,
        fits: st.fits,
        rates: st.verdicts,
        stages: outcomes,
        verdict,
    };
    RunOutput { report, series: st.series, r: res.chart.r_samples(), data: st.data }
}

fn run_stage(stage: Stage, model: &Model, config: &RunConfig, res: &Resolved, st: &mut State) -> Result<bool, alch_core::Error> {
    let chart = &res.chart;
    let window = res.boundary.rate_window;
    match stage {
        Stage::Oracle => {
            let tol = config.tolerances.oracle_for(res.spec.analytic_derivatives);
            let rep = model_oracle(res.spec, chart, tol)?;
            let pass = rep.pass;
            st.oracle = Some(rep);
            Ok(pass)
        }
        Stage::Deficits => {
            let d = deficit_stage(model, chart)?;
            // Roundoff in the coordinate curvature grows with r; the same model
            // at eps = 0 measures that floor sample by sample.
            let reference = if res.spec.kind.is_exact() {
                None
            } else {
                let spec = ModelSpec { eps: 0.0, ..res.spec };
                Some(deficit_stage(&Model::new(spec, chart)?, chart)?)
            };
            for (k, v) in [("alch", &d.alch), ("ak", &d.ak), ("ak_plus", &d.ak_plus)] {
                st.series.insert(k.into(), v.clone());
                let fit = match &reference {
                    Some(rf) => {
                        let floor = match k {
                            "alch" => &rf.alch,
                            "ak" => &rf.ak,
                            _ => &rf.ak_plus,
                        };
                        fit_decay_above(&d.r, v, window, true, floor, FLOOR_FACTOR)
                    }
                    None => fit_decay_window(&d.r, v, window, true),
                };
                if let Ok(f) = fit {
                    st.fits.insert(k.into(), f);
                }
            }
            let mut ok = true;
            for k in 0..d.r.len() {
                let delta = 1.5 * d.alch[k] + 1e-9;
                ok &= d.sec_min[k] >= -1.0 - delta && d.sec_max[k] <= -0.25 + delta;
            }
            let max = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
            st.deficit_summary = Some(DeficitSummary {
                max_alch: max(&d.alch),
                max_ak: max(&d.ak),
                max_ak_plus: max(&d.ak_plus),
                sec_min: d.sec_min.iter().cloned().fold(f64::INFINITY, f64::min),
                sec_max: d.sec_max.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                sec_bounds: ok,
            });
            st.deficits = Some(d);
            Ok(ok)
        }
        Stage::Boundary => {
            let grid = chart.base_grid();
            let lines = (0..grid.len())
                .into_par_iter()
                .map(|p| compute_line(model, chart, &grid.point(p), &res.boundary))
                .collect::<Result<Vec<_>, _>>()?;
            let data = assemble(model, chart, lines, &res.boundary)?;
            for (k, v) in &data.series {
                st.series.insert(k.clone(), v.clone());
            }
            for (k, f) in &data.fits {
                st.fits.insert(k.clone(), f.clone());
            }
            let t = &config.tolerances;
            let i = &data.invariants;
            let pass = [i.phi_sq, i.phi_cube, i.eta0_phi, i.gamma_phi, i.phi_xi0, i.eta0_xi0].iter().all(|&v| v <= t.identity)
                && data.diagnostics.evolution <= t.evolution
                && i.xi0_routes <= t.xi0_routes;
            st.data = Some(data);
            Ok(pass)
        }
        Stage::Cr => {
            let data = st.data.as_ref().ok_or(alch_core::Error::Degenerate("no boundary data".into()))?;
            let rep = cr_report(data, &config.tolerances.cr)?;
            let pass = rep.pass;
            st.cr = Some(rep);
            Ok(pass)
        }
        Stage::Rates => {
            if let Some(data) = &st.data {
                let ex = expansion_residual(model, chart, data, window)?;
                st.series.insert("g_hat".into(), ex.values);
                if let Some(f) = ex.fit {
                    st.fits.insert("g_hat".into(), f);
                }
            }
            let a = if res.spec.kind.is_exact() { None } else { Some(res.spec.a) };
            let opts = config.tolerances.classify();
            let map = RateMap;
            let mut pass = true;
            for (k, f) in st.fits.iter_mut() {
                if map.predicted(k, 1.0).is_err() {
                    continue;
                }
                let v = classify_regime(a, f, k, &map, &opts)?;
                f.regime = v.regime;
                pass &= v.pass;
                st.verdicts.push(v);
            }
            Ok(pass)
        }
        Stage::All => unreachable!("expanded during validation"),
    }
}

fn deficit_stage(model: &Model, chart: &Chart) -> Result<DeficitSeries, alch_core::Error> {
    let base = chart.base_grid();
    let lines = (0..base.len())
        .into_par_iter()
        .map(|b| deficit_line(model, chart, &base.point(b), false))
        .collect::<Result<Vec<_>, _>>()?;
    let (norms, sec): (Vec<_>, Vec<_>) = lines.into_iter().unzip();
    Ok(deficits(&chart.r_samples(), &norms, &sec))
}

fn summary(data: &BoundaryData) -> BoundarySummary {
    let grid = &data.grid;
    let mut corners = Vec::new();
    let dims: Vec<usize> = grid.axes.iter().map(|a| a.n).collect();
    for mask in 0..(1usize << dims.len()) {
        let idx: Vec<usize> = dims.iter().enumerate().map(|(k, &n)| if mask >> k & 1 == 1 { n - 1 } else { 0 }).collect();
        let p = grid.linear(&idx);
        corners.push(CornerRow {
            x: grid.point(p),
            eta0: data.eta0.at(p).to_vec(),
            gamma: data.gamma.at(p).to_vec(),
            xi0: data.xi0.at(p).to_vec(),
            phi: data.phi.at(p).to_vec(),
        });
    }
    let max_abs = |f: &TensorField| f.data.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut m = BTreeMap::new();
    m.insert("eta0".to_string(), max_abs(&data.eta0));
    m.insert("gamma".to_string(), max_abs(&data.gamma));
    m.insert("xi0".to_string(), max_abs(&data.xi0));
    m.insert("phi".to_string(), max_abs(&data.phi));
    BoundarySummary {
        corners,
        max_abs: m,
        invariants: data.invariants,
        diagnostics: data.diagnostics,
        flags: data.flags.clone(),
        fields: BoundaryFields {
            eta0: data.eta0.clone(),
            gamma: data.gamma.clone(),
            xi0: data.xi0.clone(),
            phi: data.phi.clone(),
        },
    }
}
