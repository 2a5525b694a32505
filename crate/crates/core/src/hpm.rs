//! Human performance model.
//!
//! Maps a normalized cognitive workload onto task performance with an
//! inverted-U (Gaussian) curve per measurement channel, fuses the subjective
//! and objective channels with convex weights, and predicts the performance
//! that follows an additive workload change.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HpmError {
    #[error("workload {0} is outside [0, 1]")]
    WorkloadOutOfRange(f64),
    #[error("ISA score {0} is not one of -2, -1, 0, 1, 2")]
    InvalidIsa(i32),
    #[error("sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("amplitude must be positive and finite, got {0}")]
    InvalidAmplitude(f64),
    #[error("fusion weights must lie in [0, 1] and sum to 1, got alpha={alpha}, beta={beta}")]
    InvalidWeights { alpha: f64, beta: f64 },
    #[error("trapezoid calibration needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("calibration sample x values must be strictly increasing (index {0})")]
    NonMonotoneSamples(usize),
    #[error("cannot average an empty set of performances")]
    EmptyTeam,
}

/// How out-of-range workloads are treated at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangePolicy {
    Reject,
    Clamp,
}

/// Normalized cognitive workload on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct WorkloadLevel(f64);

impl WorkloadLevel {
    pub const MIN: WorkloadLevel = WorkloadLevel(0.0);
    pub const MAX: WorkloadLevel = WorkloadLevel(1.0);

    pub fn new(value: f64) -> Result<Self, HpmError> {
        Self::with_policy(value, RangePolicy::Reject)
    }

    pub fn with_policy(value: f64, policy: RangePolicy) -> Result<Self, HpmError> {
        if value.is_nan() {
            return Err(HpmError::WorkloadOutOfRange(value));
        }
        match policy {
            RangePolicy::Reject if !(0.0..=1.0).contains(&value) => {
                Err(HpmError::WorkloadOutOfRange(value))
            }
            RangePolicy::Reject => Ok(Self(value)),
            RangePolicy::Clamp => Ok(Self(value.clamp(0.0, 1.0))),
        }
    }

    /// Clamps any finite value into range; NaN maps to 0.
    pub fn clamped(value: f64) -> Self {
        if value.is_nan() {
            Self(0.0)
        } else {
            Self(value.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for WorkloadLevel {
    type Error = HpmError;
    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<WorkloadLevel> for f64 {
    fn from(w: WorkloadLevel) -> f64 {
        w.0
    }
}

/// Five-point instantaneous self-assessment rating, -2 (very low) to +2 (very high).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub struct IsaScore(i8);

impl IsaScore {
    pub const ALL: [IsaScore; 5] = [
        IsaScore(-2),
        IsaScore(-1),
        IsaScore(0),
        IsaScore(1),
        IsaScore(2),
    ];

    pub fn new(value: i32) -> Result<Self, HpmError> {
        if (-2..=2).contains(&value) {
            Ok(Self(value as i8))
        } else {
            Err(HpmError::InvalidIsa(value))
        }
    }

    pub fn value(self) -> i32 {
        self.0 as i32
    }
}

impl TryFrom<i32> for IsaScore {
    type Error = HpmError;
    fn try_from(value: i32) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<IsaScore> for i32 {
    fn from(s: IsaScore) -> i32 {
        s.value()
    }
}

/// Non-negative dimensionless performance.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PerformanceScore(pub f64);

impl PerformanceScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Gaussian curve parameters for one measurement channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChannelParams")]
pub struct HpmChannelParams {
    mu: WorkloadLevel,
    sigma: f64,
    amplitude: f64,
}

#[derive(Deserialize)]
struct RawChannelParams {
    mu: WorkloadLevel,
    sigma: f64,
    #[serde(default)]
    amplitude: Option<f64>,
}

impl TryFrom<RawChannelParams> for HpmChannelParams {
    type Error = HpmError;
    fn try_from(raw: RawChannelParams) -> Result<Self, Self::Error> {
        match raw.amplitude {
            Some(a) => Self::new(raw.mu, raw.sigma, a),
            None => Self::peak_normalized(raw.mu, raw.sigma),
        }
    }
}

impl HpmChannelParams {
    pub fn new(mu: WorkloadLevel, sigma: f64, amplitude: f64) -> Result<Self, HpmError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(HpmError::InvalidSigma(sigma));
        }
        if !(amplitude.is_finite() && amplitude > 0.0) {
            return Err(HpmError::InvalidAmplitude(amplitude));
        }
        Ok(Self {
            mu,
            sigma,
            amplitude,
        })
    }

    /// Amplitude `sigma * sqrt(2 pi)`, which puts the curve's peak at exactly 1.
    pub fn peak_normalized(mu: WorkloadLevel, sigma: f64) -> Result<Self, HpmError> {
        Self::new(mu, sigma, peak_amplitude(sigma))
    }

    pub fn with_amplitude(self, amplitude: f64) -> Result<Self, HpmError> {
        Self::new(self.mu, self.sigma, amplitude)
    }

    pub fn mu(&self) -> WorkloadLevel {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }
}

impl Default for HpmChannelParams {
    fn default() -> Self {
        Self::peak_normalized(WorkloadLevel(0.5), 0.2).expect("valid defaults")
    }
}

pub fn peak_amplitude(sigma: f64) -> f64 {
    sigma * (2.0 * PI).sqrt()
}

/// Both channels plus the fusion weights (objective weight `alpha_p`,
/// subjective weight `beta_p`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHpmParams")]
pub struct HpmParams {
    subjective: HpmChannelParams,
    objective: HpmChannelParams,
    alpha_p: f64,
    beta_p: f64,
}

#[derive(Deserialize)]
struct RawHpmParams {
    #[serde(default)]
    subjective: HpmChannelParams,
    #[serde(default)]
    objective: HpmChannelParams,
    #[serde(default = "half")]
    alpha_p: f64,
    #[serde(default = "half")]
    beta_p: f64,
}

fn half() -> f64 {
    0.5
}

impl TryFrom<RawHpmParams> for HpmParams {
    type Error = HpmError;
    fn try_from(raw: RawHpmParams) -> Result<Self, Self::Error> {
        Self::new(raw.subjective, raw.objective, raw.alpha_p, raw.beta_p)
    }
}

const WEIGHT_SUM_TOL: f64 = 1e-12;

impl HpmParams {
    pub fn new(
        subjective: HpmChannelParams,
        objective: HpmChannelParams,
        alpha_p: f64,
        beta_p: f64,
    ) -> Result<Self, HpmError> {
        let in_unit = |w: f64| (0.0..=1.0).contains(&w);
        if !in_unit(alpha_p) || !in_unit(beta_p) || (alpha_p + beta_p - 1.0).abs() > WEIGHT_SUM_TOL
        {
            return Err(HpmError::InvalidWeights {
                alpha: alpha_p,
                beta: beta_p,
            });
        }
        Ok(Self {
            subjective,
            objective,
            alpha_p,
            beta_p,
        })
    }

    /// Same curve on both channels, equal weights.
    pub fn symmetric(channel: HpmChannelParams) -> Self {
        Self {
            subjective: channel,
            objective: channel,
            alpha_p: 0.5,
            beta_p: 0.5,
        }
    }

    /// Re-weight the channels; `alpha_p` is the objective weight.
    pub fn with_objective_weight(self, alpha_p: f64) -> Result<Self, HpmError> {
        Self::new(self.subjective, self.objective, alpha_p, 1.0 - alpha_p)
    }

    pub fn subjective(&self) -> &HpmChannelParams {
        &self.subjective
    }

    pub fn objective(&self) -> &HpmChannelParams {
        &self.objective
    }

    pub fn alpha_p(&self) -> f64 {
        self.alpha_p
    }

    pub fn beta_p(&self) -> f64 {
        self.beta_p
    }
}

impl Default for HpmParams {
    fn default() -> Self {
        Self::symmetric(HpmChannelParams::default())
    }
}

/// `A / (sigma sqrt(2 pi)) * exp(-(s - mu)^2 / (2 sigma^2))`.
pub fn performance_curve(s: WorkloadLevel, params: &HpmChannelParams) -> PerformanceScore {
    let z = s.value() - params.mu.value();
    let scale = params.amplitude / (params.sigma * (2.0 * PI).sqrt());
    PerformanceScore(scale * (-(z * z) / (2.0 * params.sigma * params.sigma)).exp())
}

/// Trapezoidal area under an empirical `(workload, performance)` curve.
pub fn calibrate_amplitude(samples: &[(WorkloadLevel, PerformanceScore)]) -> Result<f64, HpmError> {
    if samples.len() < 2 {
        return Err(HpmError::TooFewSamples(samples.len()));
    }
    let mut area = 0.0;
    for (i, pair) in samples.windows(2).enumerate() {
        let (x0, y0) = (pair[0].0.value(), pair[0].1.value());
        let (x1, y1) = (pair[1].0.value(), pair[1].1.value());
        if x1 <= x0 {
            return Err(HpmError::NonMonotoneSamples(i + 1));
        }
        area += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok(area)
}

/// Affine map of the -2..+2 rating onto `[0, 1]`.
pub fn isa_to_workload(isa: IsaScore) -> WorkloadLevel {
    WorkloadLevel((isa.value() as f64 + 2.0) / 4.0)
}

pub fn operator_performance(
    s_subj: WorkloadLevel,
    s_obj: WorkloadLevel,
    params: &HpmParams,
) -> PerformanceScore {
    let p_obj = performance_curve(s_obj, &params.objective).value();
    let p_subj = performance_curve(s_subj, &params.subjective).value();
    PerformanceScore(params.alpha_p * p_obj + params.beta_p * p_subj)
}

pub fn team_performance(perfs: &[PerformanceScore]) -> Result<PerformanceScore, HpmError> {
    if perfs.is_empty() {
        return Err(HpmError::EmptyTeam);
    }
    let sum: f64 = perfs.iter().map(|p| p.value()).sum();
    Ok(PerformanceScore(sum / perfs.len() as f64))
}

/// Additive workload transition, saturating at the ends of `[0, 1]`.
pub fn predict_next_state(s: WorkloadLevel, delta_w: f64) -> WorkloadLevel {
    WorkloadLevel::clamped(s.value() + delta_w)
}

pub fn predict_next_performance(
    s_subj: WorkloadLevel,
    s_obj: WorkloadLevel,
    delta_w: f64,
    params: &HpmParams,
) -> PerformanceScore {
    operator_performance(
        predict_next_state(s_subj, delta_w),
        predict_next_state(s_obj, delta_w),
        params,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(v: f64) -> WorkloadLevel {
        WorkloadLevel::new(v).unwrap()
    }

    fn default_channel() -> HpmChannelParams {
        HpmChannelParams::peak_normalized(w(0.5), 0.2).unwrap()
    }

    #[test]
    fn curve_peaks_at_one_with_normalized_amplitude() {
        let p = performance_curve(w(0.5), &default_channel());
        assert!((p.value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn curve_closed_form_point() {
        // exp(-(0.4)^2 / (2 * 0.04)) = exp(-2)
        let p = performance_curve(w(0.9), &default_channel());
        assert!((p.value() - 0.1353352832366127).abs() < 1e-9);
    }

    #[test]
    fn curve_is_symmetric() {
        let c = default_channel();
        for d in [0.0, 0.05, 0.13, 0.4, 0.5] {
            let lo = performance_curve(w(0.5 - d), &c).value();
            let hi = performance_curve(w(0.5 + d), &c).value();
            assert!((lo - hi).abs() < 1e-15, "d={d}");
        }
    }

    #[test]
    fn trapezoid_examples() {
        let s = |pts: &[(f64, f64)]| -> Vec<(WorkloadLevel, PerformanceScore)> {
            pts.iter().map(|&(x, y)| (w(x), PerformanceScore(y))).collect()
        };
        assert_eq!(calibrate_amplitude(&s(&[(0.0, 0.0), (1.0, 1.0)])).unwrap(), 0.5);
        assert_eq!(calibrate_amplitude(&s(&[(0.0, 1.0), (1.0, 1.0)])).unwrap(), 1.0);
        assert_eq!(
            calibrate_amplitude(&s(&[(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)])).unwrap(),
            0.5
        );
    }

    #[test]
    fn trapezoid_rejects_bad_samples() {
        assert_eq!(
            calibrate_amplitude(&[(w(0.1), PerformanceScore(1.0))]),
            Err(HpmError::TooFewSamples(1))
        );
        let bad = [
            (w(0.1), PerformanceScore(1.0)),
            (w(0.5), PerformanceScore(1.0)),
            (w(0.5), PerformanceScore(1.0)),
        ];
        assert_eq!(calibrate_amplitude(&bad), Err(HpmError::NonMonotoneSamples(2)));
    }

    #[test]
    fn isa_mapping_endpoints() {
        assert_eq!(isa_to_workload(IsaScore::new(-2).unwrap()).value(), 0.0);
        assert_eq!(isa_to_workload(IsaScore::new(0).unwrap()).value(), 0.5);
        assert_eq!(isa_to_workload(IsaScore::new(2).unwrap()).value(), 1.0);
        assert!(IsaScore::new(3).is_err());
        assert!(IsaScore::new(-3).is_err());
    }

    #[test]
    fn fusion_examples() {
        let params = HpmParams::default();
        let both_peak = operator_performance(w(0.5), w(0.5), &params);
        assert!((both_peak.value() - 1.0).abs() < 1e-12);
        let mixed = operator_performance(w(0.5), w(0.9), &params);
        assert!((mixed.value() - (0.5 * (-2.0f64).exp() + 0.5)).abs() < 1e-12);
        assert!((mixed.value() - 0.5677).abs() < 1e-4);
    }

    #[test]
    fn weights_must_sum_to_one() {
        let c = default_channel();
        assert!(HpmParams::new(c, c, 0.7, 0.3).is_ok());
        assert!(HpmParams::new(c, c, 0.7, 0.4).is_err());
        assert!(HpmParams::new(c, c, 1.2, -0.2).is_err());
    }

    #[test]
    fn team_mean() {
        let p = |v: f64| PerformanceScore(v);
        assert!((team_performance(&[p(0.7)]).unwrap().value() - 0.7).abs() < 1e-15);
        assert!((team_performance(&[p(0.6), p(0.8)]).unwrap().value() - 0.7).abs() < 1e-15);
        assert_eq!(team_performance(&[p(1.0), p(0.0), p(0.5)]).unwrap().value(), 0.5);
        assert_eq!(team_performance(&[]), Err(HpmError::EmptyTeam));
    }

    #[test]
    fn next_state_examples() {
        assert_eq!(predict_next_state(w(0.5), 0.0).value(), 0.5);
        assert!((predict_next_state(w(0.5), 0.1).value() - 0.6).abs() < 1e-15);
        assert_eq!(predict_next_state(w(0.95), 0.2).value(), 1.0);
        assert_eq!(predict_next_state(w(0.05), -0.2).value(), 0.0);
    }

    #[test]
    fn next_performance_examples() {
        let params = HpmParams::default();
        let now = operator_performance(w(0.3), w(0.8), &params);
        assert_eq!(predict_next_performance(w(0.3), w(0.8), 0.0, &params), now);
        let peak = predict_next_performance(w(0.4), w(0.4), 0.1, &params);
        assert!((peak.value() - 1.0).abs() < 1e-12);
        let p = predict_next_performance(w(0.7), w(0.7), 0.2, &params);
        assert!((p.value() - (-2.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn workload_range_policy() {
        assert!(WorkloadLevel::new(1.2).is_err());
        assert_eq!(
            WorkloadLevel::with_policy(1.2, RangePolicy::Clamp).unwrap().value(),
            1.0
        );
        assert!(WorkloadLevel::with_policy(f64::NAN, RangePolicy::Clamp).is_err());
    }

    #[test]
    fn params_deserialize_with_default_amplitude() {
        let p: HpmParams = toml::from_str(
            "alpha_p = 0.6\nbeta_p = 0.4\n[subjective]\nmu = 0.4\nsigma = 0.25\n",
        )
        .unwrap();
        assert_eq!(p.alpha_p(), 0.6);
        assert!((p.subjective().amplitude() - peak_amplitude(0.25)).abs() < 1e-15);
        assert_eq!(*p.objective(), HpmChannelParams::default());
        assert!(toml::from_str::<HpmParams>("alpha_p = 0.6\n").is_err());
    }
}
