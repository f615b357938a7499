//! Damped fixed-point iteration over tuples of adapted fields.

use crate::error::{Error, Result};
use crate::noise_tree::AdaptedField;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial relaxation factor in `(0, 1]`.
    pub relaxation: f64,
}

impl Default for PicardSettings {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 200,
            relaxation: 1.0,
        }
    }
}

impl PicardSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "picard settings need tol > 0, max_iter >= 1 and relaxation in (0, 1]: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Result of a converged iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardOutcome {
    pub fields: Vec<AdaptedField>,
    pub iterations: usize,
    /// Largest ratio of successive step sizes over the last few
    /// iterations (0 when the map converged in at most two steps).
    pub contraction: f64,
    pub relaxation: f64,
}

const MAX_HALVINGS: usize = 4;
const INCREASE_LIMIT: usize = 3;

fn max_abs(fields: &[AdaptedField]) -> f64 {
    fields.iter().map(AdaptedField::max_abs).fold(0.0, f64::max)
}

fn max_diff(a: &[AdaptedField], b: &[AdaptedField]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y.iter()).fold(0.0_f64, |m, (p, q)| m.max((p - q).abs())))
        .fold(0.0, f64::max)
}

/// Iterates `x <- (1 - w) x + w T(x)` from `start` until the relative
/// change `|T(x) - x| / max(|T(x)|, |x|)` drops below `tol`. Three
/// consecutive increases of the step `|T(x) - x|` halve `w`; after four halvings the
/// iteration fails.
pub fn iterate(
    settings: &PicardSettings,
    what: &'static str,
    start: Vec<AdaptedField>,
    mut map: impl FnMut(&[AdaptedField]) -> Result<Vec<AdaptedField>>,
) -> Result<PicardOutcome> {
    settings.validate()?;
    let mut x = start;
    let mut omega = settings.relaxation;
    let mut halvings = 0;
    let mut increases = 0;
    // absolute step sizes; increases signal expansion even when the
    // relative change stays bounded
    let mut history: Vec<f64> = Vec::new();
    let mut last_change = None;
    for it in 1..=settings.max_iter {
        let tx = map(&x)?;
        let scale = max_abs(&tx).max(max_abs(&x));
        let step = max_diff(&tx, &x);
        let change = if scale == 0.0 { 0.0 } else { step / scale };
        if !change.is_finite() {
            return Err(Error::NonContraction {
                what,
                iterations: it,
                last_change: change,
            });
        }
        if let Some(&prev) = history.last() {
            if step > prev {
                increases += 1;
            } else {
                increases = 0;
            }
        }
        history.push(step);
        last_change = Some(change);
        if change <= settings.tol {
            let tail: Vec<f64> = history.iter().rev().take(6).copied().collect();
            let contraction = tail
                .windows(2)
                .filter(|w| w[1] > 0.0)
                .map(|w| w[0] / w[1])
                .fold(0.0, f64::max);
            return Ok(PicardOutcome {
                fields: tx,
                iterations: it,
                contraction,
                relaxation: omega,
            });
        }
        if increases >= INCREASE_LIMIT {
            if halvings == MAX_HALVINGS {
                return Err(Error::NonContraction {
                    what,
                    iterations: it,
                    last_change: change,
                });
            }
            halvings += 1;
            omega *= 0.5;
            increases = 0;
        }
        if omega == 1.0 {
            x = tx;
        } else {
            for (xi, ti) in x.iter_mut().zip(&tx) {
                xi.scale(1.0 - omega);
                xi.axpy(omega, ti);
            }
        }
    }
    Err(Error::IterationCap {
        what,
        cap: settings.max_iter,
        last_change: last_change.unwrap_or(f64::NAN),
    })
}
