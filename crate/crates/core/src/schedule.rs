//! Retention schedules for both diffusion stages.
//!
//! A schedule fixes the per-step retention probability `alpha[t]` and its
//! running product `alpha_bar[t]` for `t = 1..=T`. `alpha_bar` starts at
//! ~1 (no noise) and decays to a small floor at `t = T` (full noise).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp for `alpha_bar`; keeps posterior denominators nonzero at
/// the terminal step.
pub const ALPHA_BAR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Cosine,
    /// Built from explicit `alpha_bar` targets.
    Custom,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::InvalidConfig(format!(
                "unknown schedule '{other}' (expected linear or cosine)"
            ))),
        }
    }
}

/// Which diffusion stage a schedule drives. Purely descriptive; both
/// stages use the same arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    Coordinate,
    Edge,
}

/// Per-step retention probabilities and their cumulative products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    kind: ScheduleKind,
    stage: StageTag,
    steps: usize,
    alpha: Vec<f64>,     // alpha[t-1] for t in 1..=T
    alpha_bar: Vec<f64>, // alpha_bar[t-1], exact running product of alpha
}

impl DiffusionSchedule {
    /// Linear schedule: `alpha_bar` decays linearly from ~1 at t=0 to the
    /// floor at t=T.
    pub fn linear(steps: usize) -> Result<Self> {
        let raw = (1..=steps)
            .map(|t| 1.0 - t as f64 / steps as f64)
            .collect();
        Self::from_raw_alpha_bar(ScheduleKind::Linear, steps, raw)
    }

    /// Cosine schedule: `alpha_bar = cos^2((t/T) * pi/2)`, clamped to the
    /// floor at the tail.
    pub fn cosine(steps: usize) -> Result<Self> {
        let raw = (1..=steps)
            .map(|t| {
                let x = t as f64 / steps as f64 * std::f64::consts::FRAC_PI_2;
                x.cos().powi(2)
            })
            .collect();
        Self::from_raw_alpha_bar(ScheduleKind::Cosine, steps, raw)
    }

    pub fn of_kind(kind: ScheduleKind, steps: usize) -> Result<Self> {
        match kind {
            ScheduleKind::Linear => Self::linear(steps),
            ScheduleKind::Cosine => Self::cosine(steps),
            ScheduleKind::Custom => Err(Error::InvalidConfig(
                "custom schedules are built with from_targets".into(),
            )),
        }
    }

    /// Builds a schedule from explicit strictly decreasing `alpha_bar`
    /// targets, one per step. The final target must be at most 1e-4.
    pub fn from_targets(targets: Vec<f64>) -> Result<Self> {
        let steps = targets.len();
        Self::from_raw_alpha_bar(ScheduleKind::Custom, steps, targets)
    }

    /// Builds from a nonincreasing target `alpha_bar` sequence.
    ///
    /// Values at or below the floor are replaced by a geometric ramp down
    /// to exactly the floor at t=T, keeping the sequence strictly
    /// decreasing. `alpha` is derived from consecutive ratios and
    /// `alpha_bar` re-accumulated as the exact running product.
    fn from_raw_alpha_bar(kind: ScheduleKind, steps: usize, mut raw: Vec<f64>) -> Result<Self> {
        if steps < 1 {
            return Err(Error::InvalidSchedule("steps must be >= 1".into()));
        }
        debug_assert_eq!(raw.len(), steps);

        let clamp_from = raw.iter().position(|&v| v <= ALPHA_BAR_FLOOR).unwrap_or(steps);
        if clamp_from < steps {
            let prev = if clamp_from == 0 { 1.0 } else { raw[clamp_from - 1] };
            let span = (steps - clamp_from) as f64;
            let log_prev = prev.ln();
            let log_floor = ALPHA_BAR_FLOOR.ln();
            for (k, slot) in raw[clamp_from..].iter_mut().enumerate() {
                let w = (k + 1) as f64 / span;
                *slot = (log_prev + w * (log_floor - log_prev)).exp();
            }
            raw[steps - 1] = ALPHA_BAR_FLOOR;
        }

        let mut alpha = Vec::with_capacity(steps);
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut prev = 1.0;
        let mut prod = 1.0;
        for &target in &raw {
            let a = target / prev;
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidSchedule(format!(
                    "derived alpha {a} outside (0, 1]"
                )));
            }
            prod *= a;
            alpha.push(a);
            alpha_bar.push(prod);
            prev = target;
        }

        let sched = DiffusionSchedule { kind, stage: StageTag::Edge, steps, alpha, alpha_bar };
        sched.validate()?;
        Ok(sched)
    }

    pub fn with_stage(mut self, stage: StageTag) -> Self {
        self.stage = stage;
        self
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn stage(&self) -> StageTag {
        self.stage
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Retention probability at step `t` (1-based).
    pub fn alpha(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.steps, "step {t} outside 1..={}", self.steps);
        self.alpha[t - 1]
    }

    /// Cumulative retention through step `t`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(t <= self.steps, "step {t} outside 0..={}", self.steps);
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Checks the structural invariants; used after construction and
    /// after deserializing a checkpoint.
    pub fn validate(&self) -> Result<()> {
        if self.alpha.len() != self.steps || self.alpha_bar.len() != self.steps {
            return Err(Error::InvalidSchedule("array lengths disagree with step count".into()));
        }
        let mut prev = 1.0;
        for t in 1..=self.steps {
            let a = self.alpha[t - 1];
            let ab = self.alpha_bar[t - 1];
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidSchedule(format!("alpha[{t}] = {a} outside (0, 1]")));
            }
            if ab >= prev {
                return Err(Error::InvalidSchedule(format!(
                    "alpha_bar not strictly decreasing at t = {t}"
                )));
            }
            if prev * a != ab {
                return Err(Error::InvalidSchedule(format!(
                    "alpha_bar[{t}] is not the exact running product"
                )));
            }
            prev = ab;
        }
        if self.alpha_bar[self.steps - 1] > 1e-4 {
            return Err(Error::InvalidSchedule(format!(
                "terminal alpha_bar {} above 1e-4",
                self.alpha_bar[self.steps - 1]
            )));
        }
        Ok(())
    }
}
