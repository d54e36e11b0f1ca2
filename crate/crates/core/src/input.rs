//! Exogenous input: a Gaussian truncated to mean ± 3 sigma, and schedules
//! that pick the input for each step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::{OpinionPartition, WindowMoments};
use crate::numeric::{std_normal_mass, std_normal_pdf};

/// Half-width of the input support in units of sigma.
pub const TRUNCATION: f64 = 3.0;
/// Standardised distances within this of the truncation point are treated
/// as lying on it, so windows touching the support in one point carry no
/// mass despite rounding in `mean ± 3 sigma`.
const SUPPORT_SLACK: f64 = 1e-12;

fn snap(z: f64) -> f64 {
    if (z.abs() - TRUNCATION).abs() <= SUPPORT_SLACK || z.abs() > TRUNCATION {
        TRUNCATION.copysign(z)
    } else {
        z
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InputError {
    #[error("sigma must be positive and finite (got {0})")]
    InvalidSigma(f64),
    #[error("input weight must be positive and finite (got {0})")]
    InvalidWeight(f64),
    #[error("input mean must be finite (got {0})")]
    InvalidMean(f64),
    #[error("window [{a}, {b}] is inverted")]
    InvertedWindow { a: f64, b: f64 },
    #[error("step {t} is beyond the schedule horizon {horizon}")]
    HorizonExceeded { t: usize, horizon: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

/// Gaussian with mean `mean` and standard deviation `sigma`, restricted to
/// `[mean - 3 sigma, mean + 3 sigma]` and rescaled to total mass `weight`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedGaussianInput {
    mean: f64,
    sigma: f64,
    weight: f64,
}

impl TruncatedGaussianInput {
    pub fn new(mean: f64, sigma: f64, weight: f64) -> Result<Self, InputError> {
        if !mean.is_finite() {
            return Err(InputError::InvalidMean(mean));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(InputError::InvalidSigma(sigma));
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(InputError::InvalidWeight(weight));
        }
        Ok(Self { mean, sigma, weight })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn with_mean(&self, mean: f64) -> Result<Self, InputError> {
        Self::new(mean, self.sigma, self.weight)
    }

    pub fn support(&self) -> (f64, f64) {
        (self.mean - TRUNCATION * self.sigma, self.mean + TRUNCATION * self.sigma)
    }

    /// Normalising constant of the truncated standard normal.
    fn norm() -> f64 {
        std_normal_mass(-TRUNCATION, TRUNCATION)
    }

    pub fn density(&self, z: f64) -> f64 {
        let (lo, hi) = self.support();
        if z < lo || z > hi {
            return 0.0;
        }
        self.weight * std_normal_pdf((z - self.mean) / self.sigma) / (self.sigma * Self::norm())
    }

    /// Closed-form mass and first moment on the closed window `[a, b]`.
    pub fn window_moments(&self, a: f64, b: f64) -> Result<WindowMoments, InputError> {
        if a > b || a.is_nan() || b.is_nan() {
            return Err(InputError::InvertedWindow { a, b });
        }
        let (lo, hi) = self.support();
        let p = a.max(lo);
        let q = b.min(hi);
        if q <= p {
            return Ok(WindowMoments::default());
        }
        let alpha = snap((p - self.mean) / self.sigma);
        let beta = snap((q - self.mean) / self.sigma);
        if beta <= alpha {
            return Ok(WindowMoments::default());
        }
        let scale = self.weight / Self::norm();
        let mass = scale * std_normal_mass(alpha, beta);
        // int z phi(z) dz = -phi(z)
        let moment = self.mean * mass + scale * self.sigma * (std_normal_pdf(alpha) - std_normal_pdf(beta));
        Ok(WindowMoments { mass, moment })
    }

    /// The input support lies inside the (closed) support hull of `part`.
    pub fn assumption2_check(&self, part: &OpinionPartition) -> bool {
        let (lo, hi) = self.support();
        let (s_lo, s_hi) = part.support();
        let slack = SUPPORT_SLACK * self.sigma;
        s_lo <= lo + slack && hi - slack <= s_hi
    }
}

/// How a phase chooses its input mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanRule {
    Fixed(f64),
    /// Mean follows the population: `x_min(t) + offset`.
    Tracking { offset: f64 },
}

impl MeanRule {
    fn resolve(&self, support: (f64, f64)) -> f64 {
        match *self {
            MeanRule::Fixed(m) => m,
            MeanRule::Tracking { offset } => support.0 + offset,
        }
    }
}

/// Input used for steps up to and including `until_step` (and after the
/// previous phase).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub until_step: usize,
    pub mean: MeanRule,
    pub sigma: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum InputSchedule {
    #[default]
    None,
    Constant(TruncatedGaussianInput),
    Phased(Vec<Phase>),
}

impl InputSchedule {
    pub fn phased(phases: Vec<Phase>) -> Result<Self, InputError> {
        if phases.is_empty() {
            return Err(InputError::InvalidSchedule("phased schedule needs at least one phase".into()));
        }
        for (i, ph) in phases.iter().enumerate() {
            if i > 0 && ph.until_step <= phases[i - 1].until_step {
                return Err(InputError::InvalidSchedule(format!(
                    "phase {i}: until_step must increase (got {} after {})",
                    ph.until_step,
                    phases[i - 1].until_step
                )));
            }
            // validates sigma and weight
            TruncatedGaussianInput::new(0.0, ph.sigma, ph.weight)?;
            match ph.mean {
                MeanRule::Fixed(m) if !m.is_finite() => return Err(InputError::InvalidMean(m)),
                MeanRule::Tracking { offset } if !offset.is_finite() => {
                    return Err(InputError::InvalidMean(offset))
                }
                _ => {}
            }
        }
        Ok(InputSchedule::Phased(phases))
    }

    /// Constant positive-mean input for steps `0..=horizon`.
    pub fn direct(mean: f64, sigma: f64, weight: f64, horizon: usize) -> Result<Self, InputError> {
        Self::phased(vec![Phase { until_step: horizon, mean: MeanRule::Fixed(mean), sigma, weight }])
    }

    /// A first phase at `first` for steps `t <= floor(alpha * horizon)`, then
    /// `second` until the horizon.
    pub fn distracting(
        first: MeanRule,
        second: f64,
        sigma: f64,
        weight: f64,
        horizon: usize,
        alpha: f64,
    ) -> Result<Self, InputError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(InputError::InvalidSchedule(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let switch = (alpha * horizon as f64).floor() as usize;
        Self::phased(vec![
            Phase { until_step: switch, mean: first, sigma, weight },
            Phase { until_step: horizon, mean: MeanRule::Fixed(second), sigma, weight },
        ])
    }

    /// Last step the schedule is defined for; `None` when unbounded.
    pub fn horizon(&self) -> Option<usize> {
        match self {
            InputSchedule::Phased(phases) => phases.last().map(|p| p.until_step),
            _ => None,
        }
    }

    /// The input does not change with time or with the population.
    pub fn is_time_invariant(&self) -> bool {
        !matches!(self, InputSchedule::Phased(_))
    }

    /// Input in force at step `t`, given the current support hull.
    pub fn schedule_at(&self, t: usize, support: (f64, f64)) -> Result<Option<TruncatedGaussianInput>, InputError> {
        match self {
            InputSchedule::None => Ok(None),
            InputSchedule::Constant(u) => Ok(Some(*u)),
            InputSchedule::Phased(phases) => {
                let phase = phases.iter().find(|p| t <= p.until_step).ok_or(InputError::HorizonExceeded {
                    t,
                    horizon: phases.last().map_or(0, |p| p.until_step),
                })?;
                TruncatedGaussianInput::new(phase.mean.resolve(support), phase.sigma, phase.weight).map(Some)
            }
        }
    }

    /// Every input the schedule can produce while the support is `support`.
    pub fn inputs_for_support(&self, support: (f64, f64)) -> Vec<TruncatedGaussianInput> {
        match self {
            InputSchedule::None => Vec::new(),
            InputSchedule::Constant(u) => vec![*u],
            InputSchedule::Phased(phases) => phases
                .iter()
                .filter_map(|p| TruncatedGaussianInput::new(p.mean.resolve(support), p.sigma, p.weight).ok())
                .collect(),
        }
    }
}

/// JSON form of a phase mean: a number or `{"tracking_offset": L/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeanSpec {
    Fixed(f64),
    Tracking { tracking_offset: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    #[serde(default)]
    pub until_step: Option<usize>,
    pub mean: MeanSpec,
    pub sigma: f64,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

/// Schedule as written in a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScheduleSpec {
    None,
    Constant { phases: Vec<PhaseSpec> },
    Phased { phases: Vec<PhaseSpec> },
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<InputSchedule, InputError> {
        match self {
            ScheduleSpec::None => Ok(InputSchedule::None),
            ScheduleSpec::Constant { phases } => {
                let [phase] = &phases[..] else {
                    return Err(InputError::InvalidSchedule("constant schedule takes exactly one phase".into()));
                };
                let MeanSpec::Fixed(mean) = phase.mean else {
                    return Err(InputError::InvalidSchedule("constant schedule needs a fixed mean".into()));
                };
                Ok(InputSchedule::Constant(TruncatedGaussianInput::new(mean, phase.sigma, phase.weight)?))
            }
            ScheduleSpec::Phased { phases } => {
                let phases = phases
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let until_step = p.until_step.ok_or_else(|| {
                            InputError::InvalidSchedule(format!("phase {i}: until_step is required"))
                        })?;
                        let mean = match p.mean {
                            MeanSpec::Fixed(m) => MeanRule::Fixed(m),
                            MeanSpec::Tracking { tracking_offset } => MeanRule::Tracking { offset: tracking_offset },
                        };
                        Ok(Phase { until_step, mean, sigma: p.sigma, weight: p.weight })
                    })
                    .collect::<Result<Vec<_>, InputError>>()?;
                InputSchedule::phased(phases)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson on `n` panels; test-only oracle for the closed forms.
    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + h * i as f64;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn construction_and_support() {
        let u = TruncatedGaussianInput::new(0.0, 0.1, 1.0).unwrap();
        let (lo, hi) = u.support();
        assert!((lo + 0.3).abs() < 1e-15 && (hi - 0.3).abs() < 1e-15);
        let w = u.window_moments(lo, hi).unwrap();
        assert!((w.mass - 1.0).abs() < 1e-12);
        assert!(matches!(TruncatedGaussianInput::new(0.0, 0.0, 1.0), Err(InputError::InvalidSigma(_))));
        assert!(matches!(TruncatedGaussianInput::new(0.0, -1.0, 1.0), Err(InputError::InvalidSigma(_))));
        assert!(matches!(TruncatedGaussianInput::new(0.0, 0.1, 0.0), Err(InputError::InvalidWeight(_))));
    }

    #[test]
    fn half_support_mass() {
        let u = TruncatedGaussianInput::new(0.3, 0.05, 2.0).unwrap();
        let w = u.window_moments(0.3, 0.45).unwrap();
        assert!((w.mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_sigma_mass() {
        // (Phi(1) - Phi(-1)) / (Phi(3) - Phi(-3)) = 0.682689492137086 / 0.997300203936740
        let expected = 0.682689492137086 / 0.997300203936740;
        let u = TruncatedGaussianInput::new(0.0, 0.1, 1.0).unwrap();
        let w = u.window_moments(-0.1, 0.1).unwrap();
        assert!((w.mass - expected).abs() < 1e-12);
        assert!((expected - 0.68454).abs() < 1e-5);
    }

    #[test]
    fn moments_on_examples() {
        let u = TruncatedGaussianInput::new(0.0, 0.1, 1.0).unwrap();
        assert_eq!(u.window_moments(0.5, 0.9).unwrap(), WindowMoments::default());
        assert_eq!(u.window_moments(-0.9, -0.3).unwrap().mass, 0.0);

        let v = TruncatedGaussianInput::new(0.2, 0.1, 1.0).unwrap();
        let full = v.window_moments(-1.0, 1.0).unwrap();
        assert!((full.mass - 1.0).abs() < 1e-12);
        assert!((full.moment - 0.2).abs() < 1e-12);

        let half = u.window_moments(0.0, 0.3).unwrap();
        let oracle_mass = simpson(|z| u.density(z), 0.0, 0.3, 2000);
        let oracle_moment = simpson(|z| z * u.density(z), 0.0, 0.3, 2000);
        assert!((half.mass - 0.5).abs() < 1e-12);
        assert!((half.moment - oracle_moment).abs() < 1e-11);
        assert!((half.mass - oracle_mass).abs() < 1e-11);
        // scipy quad: moment 0.039557841303171, average 0.079115682606342
        assert!((half.moment - 0.039557841303171).abs() < 1e-12);
        assert!((half.average().unwrap() - 0.07910).abs() < 2e-5);
    }

    #[test]
    fn assumption2() {
        let part = OpinionPartition::from_uniform(-1.0, 1.0, 1.0, 20).unwrap();
        let u = TruncatedGaussianInput::new(0.2, 0.1, 1.0).unwrap();
        assert!(u.assumption2_check(&part));
        let narrow = OpinionPartition::from_uniform(-0.1, 0.1, 1.0, 20).unwrap();
        assert!(!u.assumption2_check(&narrow));
        let touching = OpinionPartition::new(vec![-0.1, 0.2, 0.5], vec![0.5, 0.5]).unwrap();
        assert!(u.assumption2_check(&touching));
    }

    #[test]
    fn schedules() {
        assert_eq!(InputSchedule::None.schedule_at(7, (-1.0, 1.0)).unwrap(), None);

        let d = InputSchedule::distracting(MeanRule::Fixed(-0.2), 0.2, 0.1, 1.0, 25, 0.48).unwrap();
        let at = |t| d.schedule_at(t, (-1.0, 1.0)).unwrap().unwrap().mean();
        assert_eq!(at(5), -0.2);
        assert_eq!(at(12), -0.2);
        assert_eq!(at(13), 0.2);
        assert_eq!(at(20), 0.2);
        assert_eq!(d.horizon(), Some(25));
        assert!(matches!(d.schedule_at(26, (-1.0, 1.0)), Err(InputError::HorizonExceeded { t: 26, horizon: 25 })));

        let tracking = InputSchedule::phased(vec![Phase {
            until_step: 10,
            mean: MeanRule::Tracking { offset: 0.25 },
            sigma: 0.05,
            weight: 1.0,
        }])
        .unwrap();
        let u = tracking.schedule_at(3, (-0.9, 0.9)).unwrap().unwrap();
        assert!((u.mean() + 0.65).abs() < 1e-15);

        assert!(InputSchedule::distracting(MeanRule::Fixed(-0.2), 0.2, 0.1, 1.0, 25, 1.0).is_err());
        assert!(InputSchedule::phased(vec![]).is_err());
    }

    #[test]
    fn schedule_spec_json() {
        let spec: ScheduleSpec = serde_json::from_str(
            r#"{"type":"phased","phases":[
                {"until_step":12,"mean":{"tracking_offset":0.25},"sigma":0.1},
                {"until_step":25,"mean":0.2,"sigma":0.1,"weight":1.0}]}"#,
        )
        .unwrap();
        let s = spec.build().unwrap();
        let u = s.schedule_at(0, (-1.0, 1.0)).unwrap().unwrap();
        assert!((u.mean() + 0.75).abs() < 1e-15);
        assert_eq!(u.weight(), 1.0);

        let none: ScheduleSpec = serde_json::from_str(r#"{"type":"none"}"#).unwrap();
        assert_eq!(none.build().unwrap(), InputSchedule::None);

        let c: ScheduleSpec =
            serde_json::from_str(r#"{"type":"constant","phases":[{"mean":0.0,"sigma":0.04}]}"#).unwrap();
        assert!(matches!(c.build().unwrap(), InputSchedule::Constant(_)));

        let bad: ScheduleSpec =
            serde_json::from_str(r#"{"type":"phased","phases":[{"mean":0.0,"sigma":0.04}]}"#).unwrap();
        assert!(bad.build().is_err());
        assert!(serde_json::from_str::<ScheduleSpec>(r#"{"type":"sometimes"}"#).is_err());
    }
}
