//! Log-linear decay fits and classification against the predicted rates.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::Error;

/// Values below this are clamped before taking logarithms.
pub const CLAMP_FLOOR: f64 = 1e-14;

/// Margin over a reference floor below which samples are not fitted.
pub const FLOOR_FACTOR: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "sub_3_2")]
    Sub32,
    #[serde(rename = "border_3_2")]
    Border32,
    #[serde(rename = "super_3_2")]
    Super32,
}

impl Regime {
    pub fn of(a: f64) -> Regime {
        if (a - 1.5).abs() <= 0.01 {
            Regime::Border32
        } else if a < 1.5 {
            Regime::Sub32
        } else {
            Regime::Super32
        }
    }
}

/// One least-squares line `log v ≈ intercept − slope·r` (minus `log(r+1)`
/// for the log-corrected form).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub rms_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Decay rate `b` of `v ≈ C e^{−b r}`.
    pub slope: f64,
    pub intercept: f64,
    pub r_window: (f64, f64),
    pub rms_residual: f64,
    pub log_corrected: bool,
    /// Filled by [`classify_regime`]; `None` means no regime.
    pub regime: Option<Regime>,
    /// The competing fit form when both were computed.
    pub alternative: Option<LineFit>,
    /// Largest raw value in the window.
    pub max_value: f64,
    /// Samples clamped to [`CLAMP_FLOOR`].
    pub clamped: usize,
    /// Slope indistinguishable from zero.
    pub flat: bool,
    /// Window samples dropped for sitting within reach of a reference floor.
    #[serde(default)]
    pub censored: usize,
    /// Samples in the window before censoring.
    #[serde(default)]
    pub samples: usize,
}

fn line_fit(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let k = sxy / sxx;
    let c = my - k * mx;
    let ss: f64 = x.iter().zip(y).map(|(a, b)| (b - c - k * a) * (b - c - k * a)).sum();
    LineFit { slope: -k, intercept: c, rms_residual: libm::sqrt(ss / n) }
}

/// Fits `v ≈ C e^{−b r}` by least squares on `log v`; with `allow_log` also
/// fits `v ≈ C (r+1) e^{−b r}` and keeps the lower-residual form.
pub fn fit_decay(r: &[f64], v: &[f64], allow_log: bool) -> Result<DecayFit, Error> {
    if r.len() != v.len() {
        return Err(Error::Fit("length mismatch".into()));
    }
    if v.iter().chain(r.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Fit("non-finite values".into()));
    }
    if r.len() < 6 {
        return Err(Error::Fit(format!("{} samples, need at least 6", r.len())));
    }
    let mut clamped = 0;
    let logs: Vec<f64> = v
        .iter()
        .map(|&x| {
            if x < CLAMP_FLOOR {
                clamped += 1;
                libm::log(CLAMP_FLOOR)
            } else {
                libm::log(x)
            }
        })
        .collect();
    let pure = line_fit(r, &logs);
    let mut fit = DecayFit {
        slope: pure.slope,
        intercept: pure.intercept,
        r_window: (r[0], r[r.len() - 1]),
        rms_residual: pure.rms_residual,
        log_corrected: false,
        regime: None,
        alternative: None,
        max_value: v.iter().fold(0.0f64, |m, x| m.max(*x)),
        clamped,
        flat: false,
        censored: 0,
        samples: r.len(),
    };
    if allow_log {
        let corrected: Vec<f64> = logs.iter().zip(r).map(|(l, x)| l - libm::log(x + 1.0)).collect();
        let lf = line_fit(r, &corrected);
        if lf.rms_residual < pure.rms_residual {
            fit.slope = lf.slope;
            fit.intercept = lf.intercept;
            fit.rms_residual = lf.rms_residual;
            fit.log_corrected = true;
            fit.alternative = Some(pure);
        } else {
            fit.alternative = Some(lf);
        }
    }
    fit.flat = fit.slope.abs() < 1e-6;
    Ok(fit)
}

/// [`fit_decay`] restricted to samples with `lo ≤ r ≤ hi`.
pub fn fit_decay_window(r: &[f64], v: &[f64], window: (f64, f64), allow_log: bool) -> Result<DecayFit, Error> {
    let (rr, vv): (Vec<f64>, Vec<f64>) = r
        .iter()
        .zip(v)
        .filter(|(x, _)| **x >= window.0 - 1e-9 && **x <= window.1 + 1e-9)
        .map(|(a, b)| (*a, *b))
        .unzip();
    fit_decay(&rr, &vv, allow_log)
}

/// [`fit_decay_window`] keeping only samples with `v > factor · floor`, where
/// `floor` is the same series measured on a reference with no deviation.
/// When fewer than six samples survive, the full window is fitted and every
/// sample is reported as censored.
pub fn fit_decay_above(
    r: &[f64],
    v: &[f64],
    window: (f64, f64),
    allow_log: bool,
    floor: &[f64],
    factor: f64,
) -> Result<DecayFit, Error> {
    if floor.len() != v.len() {
        return Err(Error::Fit("floor length mismatch".into()));
    }
    let inside: Vec<usize> =
        (0..r.len()).filter(|&k| r[k] >= window.0 - 1e-9 && r[k] <= window.1 + 1e-9).collect();
    let kept: Vec<usize> = inside.iter().copied().filter(|&k| v[k] > factor * floor[k]).collect();
    if kept.len() < 6 {
        let mut fit = fit_decay_window(r, v, window, allow_log)?;
        fit.censored = fit.samples;
        return Ok(fit);
    }
    let rr: Vec<f64> = kept.iter().map(|&k| r[k]).collect();
    let vv: Vec<f64> = kept.iter().map(|&k| v[k]).collect();
    let mut fit = fit_decay(&rr, &vv, allow_log)?;
    fit.censored = inside.len() - kept.len();
    fit.samples = inside.len();
    fit.max_value = inside.iter().fold(0.0f64, |m, &k| m.max(v[k]));
    Ok(fit)
}

/// Predicted decay rate of each tracked quantity as a function of `a`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RateMap;

impl RateMap {
    pub const KEYS: [&'static str; 12] = [
        "alch", "ak", "alch_plus", "ak_plus", "beta", "e0_jdr", "j_pair", "eta0", "gamma", "shape", "phi", "g_hat",
    ];

    pub fn predicted(&self, key: &str, a: f64) -> Result<f64, Error> {
        Ok(match key {
            "alch" | "ak" | "alch_plus" | "ak_plus" | "beta" | "e0_jdr" | "j_pair" => a,
            "eta0" => a.min(1.5),
            "gamma" | "shape" | "phi" | "xi0" => (a - 0.5).min(1.0),
            "g_hat" => (a - 1.0).min(0.5),
            other => return Err(Error::UnknownQuantity(other.to_string())),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    pub band_rel: f64,
    pub band_abs: f64,
    /// Accept measured rates above the band as compatible with the
    /// one-sided estimate.
    pub one_sided: bool,
    /// Series whose window maximum stays below this are reported as vanishing.
    pub noise_floor: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions { band_rel: 0.15, band_abs: 0.05, one_sided: true, noise_floor: 1e-9 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// Measured rate inside the band around the prediction.
    RateEqual,
    /// Measured rate above the band, compatible with the one-sided estimate.
    RateAtLeast,
    /// Deviation never rises above the noise floor.
    Vanishing,
    /// No nominal order, nothing to compare with.
    Indeterminate,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub quantity: String,
    pub a_nominal: Option<f64>,
    pub predicted: Option<f64>,
    pub measured: f64,
    pub band: Option<f64>,
    pub status: Status,
    pub regime: Option<Regime>,
    pub pass: bool,
    /// Human-readable status, e.g. "rate ≥ predicted".
    pub label: String,
    pub note: String,
}

impl Verdict {
    pub fn text(&self) -> &'static str {
        match self.status {
            Status::RateEqual => "rate = predicted",
            Status::RateAtLeast => "rate ≥ predicted",
            Status::Vanishing => "vanishing",
            Status::Indeterminate => "no prediction",
            Status::Fail => "rate mismatch",
        }
    }
}

/// Compares a fitted slope with the prediction for `key` at order `a`.
pub fn classify_regime(
    a_nominal: Option<f64>,
    fit: &DecayFit,
    key: &str,
    map: &RateMap,
    opts: &ClassifyOptions,
) -> Result<Verdict, Error> {
    let predicted = match a_nominal {
        Some(a) => Some(map.predicted(key, a)?),
        None => {
            map.predicted(key, 1.0)?;
            None
        }
    };
    let regime = a_nominal.map(Regime::of);
    let mut v = Verdict {
        quantity: key.to_string(),
        a_nominal,
        predicted,
        measured: fit.slope,
        band: None,
        status: Status::Indeterminate,
        regime,
        pass: true,
        label: String::new(),
        note: String::new(),
    };
    if fit.max_value <= opts.noise_floor {
        v.status = Status::Vanishing;
        v.note = format!("window maximum {:.3e} below noise floor", fit.max_value);
        return Ok(labelled(v));
    }
    if fit.samples > 0 && fit.censored == fit.samples {
        v.status = Status::Vanishing;
        v.note = "indistinguishable from the unperturbed reference".into();
        return Ok(labelled(v));
    }
    let Some(pred) = predicted else {
        v.note = "no nominal order".into();
        return Ok(labelled(v));
    };
    let band = opts.band_rel * pred.abs() + opts.band_abs;
    v.band = Some(band);
    let mut measured = fit.slope;
    if regime == Some(Regime::Border32) {
        let log_slope = if fit.log_corrected {
            Some(fit.slope)
        } else {
            fit.alternative.map(|a| a.slope)
        };
        match log_slope {
            Some(s) => {
                measured = s;
                v.note = "knee: log factor not certifiable, log-corrected slope used, both fits reported".into();
            }
            None => {
                v.status = Status::Fail;
                v.pass = false;
                v.note = "knee requires the log-corrected fit".into();
                return Ok(labelled(v));
            }
        }
    }
    v.measured = measured;
    if (measured - pred).abs() <= band {
        v.status = Status::RateEqual;
    } else if opts.one_sided && measured > pred + band {
        v.status = Status::RateAtLeast;
    } else {
        v.status = Status::Fail;
        v.pass = false;
    }
    Ok(labelled(v))
}

fn labelled(mut v: Verdict) -> Verdict {
    v.label = v.text().to_string();
    v
}
