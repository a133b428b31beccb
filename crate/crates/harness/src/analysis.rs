//! Derived quantities computed from persisted records.

use gridmind_core::belief::BeliefState;
use gridmind_core::env::{EpisodeLog, Outcome, Phase};
use gridmind_core::{Frame, Scene};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Information gain after every exploration action, recomputed by feeding
/// the logged observations through a fresh belief.
pub fn gain_curve(scene: &Scene, log: &EpisodeLog) -> Vec<f64> {
    let layout = scene.layout();
    let frame = Frame::of(scene.spawn);
    let mut belief = BeliefState::for_scene(scene);
    let mut out = Vec::new();
    for e in log.phase_entries(Phase::Exploration) {
        let next = match &e.result.outcome {
            Outcome::Observation { sightings } => belief.assert_observation(&layout, e.pose_after, sightings).ok(),
            Outcome::Located { target, position } => belief.assert_position(target, frame.to_world(*position)).ok(),
            _ => None,
        };
        if let Some(b) = next {
            belief = b;
        }
        out.push(belief.information_gain());
    }
    out
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorrelationError {
    #[error("need at least 3 pairs, got {0}")]
    TooFew(usize),
    #[error("one of the samples has zero variance")]
    DegenerateVariance,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided p-value of the t test for r = 0.
    pub p: f64,
    pub n: usize,
}

/// Pearson correlation of paired samples.
pub fn correlate(pairs: &[(f64, f64)]) -> Result<Correlation, CorrelationError> {
    let n = pairs.len();
    if n < 3 {
        return Err(CorrelationError::TooFew(n));
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= f64::EPSILON * nf || syy <= f64::EPSILON * nf {
        return Err(CorrelationError::DegenerateVariance);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = nf - 2.0;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(Correlation { r, p, n })
}
