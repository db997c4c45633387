//! Run configuration, read from a single JSON document.

use std::path::{Path, PathBuf};

use alch_core::boundary::{BoundaryOptions, Fault};
use alch_core::cr::CrTolerances;
use alch_core::models::{Bump, ModelKind, ModelSpec};
use alch_core::rates::ClassifyOptions;
use alch_core::Chart;
use serde::{Deserialize, Serialize};

use crate::RunError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    #[serde(default)]
    pub chart: ChartBlock,
    #[serde(default)]
    pub pipeline: PipelineBlock,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputBlock,
    /// Gram-Schmidt seed permutation index.
    #[serde(default)]
    pub seed: u64,
    /// Worker threads for per-base-point work; 0 picks the default.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub fault: Fault,
}

fn one() -> i64 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub kind: ModelKind,
    #[serde(default = "one")]
    pub n: i64,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub eps: f64,
    #[serde(default = "yes")]
    pub analytic_derivatives: bool,
    #[serde(default)]
    pub bump: Bump,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChartBlock {
    pub base_box: Vec<[f64; 2]>,
    pub grid: Vec<i64>,
    pub h_x: f64,
    pub h_r: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub r_step: f64,
}

impl Default for ChartBlock {
    fn default() -> Self {
        let c = Chart::default();
        ChartBlock {
            base_box: c.base_box,
            grid: c.grid.iter().map(|&n| n as i64).collect(),
            h_x: c.h_x,
            h_r: c.h_r,
            r_min: c.r_min,
            r_max: c.r_max,
            r_step: c.r_step,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Oracle,
    Deficits,
    Boundary,
    Cr,
    Rates,
    All,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Oracle => "oracle",
            Stage::Deficits => "deficits",
            Stage::Boundary => "boundary",
            Stage::Cr => "cr",
            Stage::Rates => "rates",
            Stage::All => "all",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineBlock {
    pub stages: Vec<Stage>,
    /// Radial window of every decay fit.
    pub rate_window: [f64; 2],
}

impl Default for PipelineBlock {
    fn default() -> Self {
        PipelineBlock { stages: vec![Stage::All], rate_window: [6.0, 12.0] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Oracle bound; unset means 1e-8 with analytic derivatives, 1e-4 without.
    pub oracle: Option<f64>,
    /// Pointwise `φ`, `η⁰`, `γ` identities.
    pub identity: f64,
    /// Per-slice evolution residual of `φ_r`.
    pub evolution: f64,
    /// Agreement of the two `ξ₀` routes.
    pub xi0_routes: f64,
    /// Orthonormality drift of transported frames per unit `r`.
    pub drift: f64,
    pub cr: CrTolerances,
    pub band_rel: f64,
    pub band_abs: f64,
    pub one_sided: bool,
    pub noise_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let c = ClassifyOptions::default();
        Tolerances {
            oracle: None,
            identity: 1e-5,
            evolution: 1e-5,
            xi0_routes: 1e-5,
            drift: BoundaryOptions::default().drift_tol,
            cr: CrTolerances::default(),
            band_rel: c.band_rel,
            band_abs: c.band_abs,
            one_sided: c.one_sided,
            noise_floor: c.noise_floor,
        }
    }
}

impl Tolerances {
    pub fn oracle_for(&self, analytic: bool) -> f64 {
        self.oracle.unwrap_or(if analytic { 1e-8 } else { 1e-4 })
    }

    pub fn classify(&self) -> ClassifyOptions {
        ClassifyOptions { band_rel: self.band_rel, band_abs: self.band_abs, one_sided: self.one_sided, noise_floor: self.noise_floor }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formats {
    Json,
    Csv,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: Option<PathBuf>,
    pub formats: Formats,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { dir: None, formats: Formats::Both }
    }
}

/// A configuration that passed validation, in core types.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub spec: ModelSpec,
    pub chart: Chart,
    /// Enabled stages in execution order.
    pub stages: Vec<Stage>,
    pub boundary: BoundaryOptions,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            RunError::Config(format!("{path}: {}", e.into_inner()))
        })
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn resolve(&self) -> Result<Resolved, RunError> {
        let cfg = |e: alch_core::Error| RunError::Config(e.to_string());
        let bad = |field: &str, msg: &str| RunError::Config(format!("{field} {msg}"));
        let c = &self.chart;
        if c.grid.iter().any(|&n| n < 5) {
            return Err(bad("chart.grid", "must be ≥ 5"));
        }
        if self.model.n < 1 {
            return Err(bad("model.n", "must be ≥ 1"));
        }
        let chart = Chart {
            dim_boundary: 2 * self.model.n as usize + 1,
            r_min: c.r_min,
            r_max: c.r_max,
            r_step: c.r_step,
            base_box: c.base_box.clone(),
            grid: c.grid.iter().map(|&n| n as usize).collect(),
            h_x: c.h_x,
            h_r: c.h_r,
        };
        chart.validate().map_err(cfg)?;
        let spec = ModelSpec {
            kind: self.model.kind,
            n: self.model.n as usize,
            a: self.model.a,
            eps: self.model.eps,
            analytic_derivatives: self.model.analytic_derivatives,
            bump: self.model.bump,
        };
        spec.validate().map_err(cfg)?;
        let t = &self.tolerances;
        let positive = [
            ("tolerances.oracle", t.oracle.unwrap_or(1.0)),
            ("tolerances.identity", t.identity),
            ("tolerances.evolution", t.evolution),
            ("tolerances.xi0_routes", t.xi0_routes),
            ("tolerances.drift", t.drift),
            ("tolerances.cr.contact", t.cr.contact),
            ("tolerances.cr.levi", t.cr.levi),
            ("tolerances.cr.reeb", t.cr.reeb),
            ("tolerances.cr.nijenhuis", t.cr.nijenhuis),
            ("tolerances.cr.smoothness_budget", t.cr.smoothness_budget),
            ("tolerances.band_rel", t.band_rel),
            ("tolerances.band_abs", t.band_abs),
            ("tolerances.noise_floor", t.noise_floor),
        ];
        if let Some((f, _)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(bad(f, "must be positive"));
        }
        let [lo, hi] = self.pipeline.rate_window;
        if !(lo < hi) || lo < chart.r_min || hi > chart.r_max + 1e-12 {
            return Err(bad("pipeline.rate_window", "must be an increasing window inside [r_min, r_max]"));
        }
        let stages = self.stage_list()?;
        let boundary = BoundaryOptions {
            seed: self.seed,
            drift_tol: t.drift,
            rate_window: (lo, hi),
            fault: self.fault,
            ..BoundaryOptions::default()
        };
        Ok(Resolved { spec, chart, stages, boundary })
    }

    fn stage_list(&self) -> Result<Vec<Stage>, RunError> {
        let mut s: Vec<Stage> = self.pipeline.stages.clone();
        if s.is_empty() {
            return Err(RunError::Config("pipeline.stages must name at least one stage".into()));
        }
        if s.contains(&Stage::All) {
            s = vec![Stage::Deficits, Stage::Boundary, Stage::Cr, Stage::Rates];
            if self.model.kind.is_exact() {
                s.insert(0, Stage::Oracle);
            }
        }
        s.sort();
        s.dedup();
        if s.contains(&Stage::Cr) && !s.contains(&Stage::Boundary) {
            return Err(RunError::Config("pipeline.stages: cr requires boundary".into()));
        }
        if s.contains(&Stage::Rates) && !s.contains(&Stage::Boundary) && !s.contains(&Stage::Deficits) {
            return Err(RunError::Config("pipeline.stages: rates requires deficits or boundary".into()));
        }
        Ok(s)
    }

    /// Replaces the stage list, as the CLI subcommands do.
    pub fn with_stages(mut self, stages: &[Stage]) -> Self {
        self.pipeline.stages = stages.to_vec();
        self
    }

    pub fn model_kind(&self) -> ModelKind {
        self.model.kind
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::from_json(r#"{"model": {"kind": "cph_horo"}}"#).unwrap();
        let r = c.resolve().unwrap();
        assert_eq!(r.chart, Chart::default());
        assert_eq!(r.stages, vec![Stage::Oracle, Stage::Deficits, Stage::Boundary, Stage::Cr, Stage::Rates]);
    }

    #[test]
    fn negative_grid_names_the_field() {
        let c = RunConfig::from_json(r#"{"model": {"kind": "cph_horo"}, "chart": {"grid": [-3, 7, 7]}}"#).unwrap();
        let e = c.resolve().unwrap_err().to_string();
        assert!(e.contains("chart.grid must be ≥ 5"), "{e}");
    }

    #[test]
    fn parse_errors_carry_the_path() {
        let e = RunConfig::from_json(r#"{"model": {"kind": "cph_horo"}, "chart": {"h_x": "small"}}"#).unwrap_err();
        assert!(e.to_string().contains("chart.h_x"), "{e}");
        let e = RunConfig::from_json(r#"{"model": {"kind": "sphere"}}"#).unwrap_err();
        assert!(e.to_string().contains("model.kind"), "{e}");
    }

    #[test]
    fn stage_dependencies() {
        let c = RunConfig::from_json(r#"{"model": {"kind": "cph_horo"}, "pipeline": {"stages": ["cr"]}}"#).unwrap();
        assert!(c.resolve().unwrap_err().to_string().contains("cr requires boundary"));
        let c = RunConfig::from_json(r#"{"model": {"kind": "cph_horo"}, "pipeline": {"stages": ["rates"]}}"#).unwrap();
        assert!(c.resolve().is_err());
        let c = RunConfig::from_json(r#"{"model": {"kind": "perturbed_metric", "a": 1.25, "eps": 0.1}, "pipeline": {"stages": ["all"]}}"#)
            .unwrap();
        assert_eq!(c.resolve().unwrap().stages[0], Stage::Deficits);
    }

    #[test]
    fn tolerances_must_be_positive() {
        let c = RunConfig::from_json(r#"{"model": {"kind": "cph_horo"}, "tolerances": {"identity": 0}}"#).unwrap();
        assert!(c.resolve().unwrap_err().to_string().contains("tolerances.identity"));
    }

    #[test]
    fn fault_round_trip() {
        let c = RunConfig::from_json(r#"{"model": {"kind": "cph_horo"}, "fault": {"scale_gamma": 2.0}}"#).unwrap();
        assert_eq!(c.fault, Fault::ScaleGamma(2.0));
        let c = RunConfig::from_json(r#"{"model": {"kind": "cph_horo"}, "fault": "flip_phi"}"#).unwrap();
        assert_eq!(c.fault, Fault::FlipPhi);
        let back = RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
