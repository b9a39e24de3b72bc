//! Bjontegaard deltas between two rate/quality curves.
//!
//! Curves are interpolated with a monotone piecewise-cubic Hermite
//! interpolant (Fritsch-Carlson slopes) and the interpolants are integrated
//! in closed form over the interval where both curves are defined.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{MetricKind, RDCurve};

/// Floor applied to zero error rates before the log transform.
pub const LOG_FLOOR: f64 = 1e-6;

/// Shape-preserving cubic interpolant through strictly increasing knots.
#[derive(Clone, Debug)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(Error::InvalidCurve(format!("need >= 2 matching knots, got {} and {}", x.len(), y.len())));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidCurve("knots must be strictly increasing".into()));
        }
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Self { x, y, d })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    fn segment(&self, t: f64) -> usize {
        let k = self.x.partition_point(|&v| v <= t);
        k.clamp(1, self.x.len() - 1) - 1
    }

    /// `(y0, d0, c2, c3)` so that `p(x0 + s) = y0 + d0 s + c2 s^2 + c3 s^3`.
    fn coefficients(&self, k: usize) -> (f64, f64, f64, f64) {
        let h = self.x[k + 1] - self.x[k];
        let delta = (self.y[k + 1] - self.y[k]) / h;
        let (d0, d1) = (self.d[k], self.d[k + 1]);
        (self.y[k], d0, (3.0 * delta - 2.0 * d0 - d1) / h, (d0 + d1 - 2.0 * delta) / (h * h))
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.segment(t);
        let (y0, d0, c2, c3) = self.coefficients(k);
        let s = t - self.x[k];
        y0 + s * (d0 + s * (c2 + s * c3))
    }

    /// Exact integral over `[a, b]`, which must lie inside the domain.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        let mut total = 0.0;
        for k in 0..self.x.len() - 1 {
            let lo = a.max(self.x[k]);
            let hi = b.min(self.x[k + 1]);
            if hi <= lo {
                continue;
            }
            let (y0, d0, c2, c3) = self.coefficients(k);
            let anti = |s: f64| s * (y0 + s * (d0 / 2.0 + s * (c2 / 3.0 + s * c3 / 4.0)));
            total += anti(hi - self.x[k]) - anti(lo - self.x[k]);
        }
        total
    }
}

fn end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() || m0 == 0.0 {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BDResult {
    /// Percent change; `None` when the curves do not overlap.
    pub value: Option<f64>,
    /// Mean difference (target minus reference) in the integration domain.
    pub mean_log_diff: Option<f64>,
    /// Integration interval, on the quality axis for BD-rate and on the
    /// log10-bpp axis otherwise.
    pub overlap: (f64, f64),
    /// Number of zero error rates floored before the log transform.
    pub floored_points: usize,
}

impl BDResult {
    pub fn valid(&self) -> bool {
        self.value.is_some()
    }

    fn invalid(overlap: (f64, f64), floored_points: usize) -> Self {
        Self { value: None, mean_log_diff: None, overlap, floored_points }
    }
}

/// Quality-axis knots with `log10(bpp)` values. Repeated quality values keep
/// the cheapest rate.
fn rate_knots(curve: &RDCurve) -> Result<Pchip> {
    let mut pts: Vec<(f64, f64)> = curve.points().iter().map(|p| (p.value, p.bpp.log10())).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup_by(|later, earlier| later.0 == earlier.0);
    if pts.len() < 2 {
        return Err(Error::InvalidCurve(format!("`{}` has fewer than two distinct quality values", curve.label)));
    }
    Pchip::new(pts.iter().map(|p| p.0).collect(), pts.iter().map(|p| p.1).collect())
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0.max(b.0), a.1.min(b.1))
}

fn check_same_metric(reference: &RDCurve, target: &RDCurve) -> Result<()> {
    if reference.metric != target.metric {
        return Err(Error::InvalidCurve(format!(
            "metric mismatch: reference is {}, target is {}",
            reference.metric, target.metric
        )));
    }
    Ok(())
}

/// Average rate change (percent) of `target` versus `reference` at equal quality.
/// Negative values are rate savings.
pub fn bd_rate(reference: &RDCurve, target: &RDCurve) -> Result<BDResult> {
    check_same_metric(reference, target)?;
    let r = rate_knots(reference)?;
    let t = rate_knots(target)?;
    let (lo, hi) = overlap(r.domain(), t.domain());
    if !(hi > lo) {
        return Ok(BDResult::invalid((lo, hi), 0));
    }
    let diff = (t.integrate(lo, hi) - r.integrate(lo, hi)) / (hi - lo);
    Ok(BDResult { value: Some((10f64.powf(diff) - 1.0) * 100.0), mean_log_diff: Some(diff), overlap: (lo, hi), floored_points: 0 })
}

/// Average quality change (percent) of `target` versus `reference` at equal rate.
///
/// Error rates are compared on a log scale and reported as a percentage
/// change; PSNR is compared in dB and reported relative to the reference mean.
pub fn bd_metric(reference: &RDCurve, target: &RDCurve, metric: MetricKind) -> Result<BDResult> {
    check_same_metric(reference, target)?;
    if reference.metric != metric {
        return Err(Error::InvalidCurve(format!("curves carry {}, asked for {metric}", reference.metric)));
    }
    let mut floored = 0;
    let mut knots = |curve: &RDCurve| {
        let x = curve.points().iter().map(|p| p.bpp.log10()).collect();
        let y = curve
            .points()
            .iter()
            .map(|p| match metric {
                MetricKind::Psnr => p.value,
                MetricKind::Cer | MetricKind::Wer => {
                    if p.value < LOG_FLOOR {
                        floored += 1;
                    }
                    p.value.max(LOG_FLOOR).log10()
                }
            })
            .collect();
        Pchip::new(x, y)
    };
    let r = knots(reference)?;
    let t = knots(target)?;
    let (lo, hi) = overlap(r.domain(), t.domain());
    if !(hi > lo) {
        return Ok(BDResult::invalid((lo, hi), floored));
    }
    let ref_mean = r.integrate(lo, hi) / (hi - lo);
    let diff = t.integrate(lo, hi) / (hi - lo) - ref_mean;
    let value = match metric {
        MetricKind::Psnr => diff / ref_mean * 100.0,
        MetricKind::Cer | MetricKind::Wer => (10f64.powf(diff) - 1.0) * 100.0,
    };
    Ok(BDResult { value: Some(value), mean_log_diff: Some(diff), overlap: (lo, hi), floored_points: floored })
}

/// Unweighted mean of the valid BD values.
pub fn mean_bd(results: &[BDResult]) -> Option<f64> {
    let vals: Vec<f64> = results.iter().filter_map(|r| r.value).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}
