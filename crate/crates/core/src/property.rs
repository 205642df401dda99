//! Repair properties as losses and metrics.
//!
//! For an anomalous input `x_bad` with mask `ω = ω(x_bad)` and a candidate
//! repair `x_fix`:
//!
//! * `L1 = s(x_fix)` (overall improvement)
//! * `L2 = ‖ω̄ ⊙ (x_fix − x_bad)‖₂` (similarity)
//! * `L3 = max(0, s_ω(x_fix) − s_ω(x_bad))` (localised improvement)
//! * `L4 = max(0, s_ω̄(x_fix) − s_ω̄(x_bad) − δ4)` (non-degradation)
//!
//! and the guidance loss is `L = λ1·L1 + λ2·L2 + λ3·L3 + λ4·L4`.

use serde::{Deserialize, Serialize};

use crate::detector::{AnomalyMask, Detector};
use crate::error::{ensure_dim, Error, Result};
use crate::tensor::Tape;

/// Added under the square root of `L2` so its gradient exists at `x_fix = x_bad`.
pub const L2_SMOOTHING: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropertyWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl Default for PropertyWeights {
    fn default() -> Self {
        PropertyWeights {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            lambda4: 1.0,
        }
    }
}

impl PropertyWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, lambda4: f64) -> Result<Self> {
        let w = PropertyWeights {
            lambda1,
            lambda2,
            lambda3,
            lambda4,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.lambda1, self.lambda2, self.lambda3, self.lambda4]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|l| *l >= 0.0 && l.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "property weights must be finite and nonnegative: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub delta2: f64,
    pub delta4: f64,
    pub delta: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            delta2: 1.0,
            delta4: 0.0,
            delta: 0.2,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        if self.delta2 > 0.0 && self.delta4 >= 0.0 && self.delta > 0.0 && self.delta < 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("tolerances out of range: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub m_s: f64,
    pub m_d: f64,
    pub m_omega: f64,
    pub m_omega_bar: f64,
}

impl MetricsRecord {
    pub const NAMES: [&'static str; 4] = ["m_s", "m_d", "m_omega", "m_omega_bar"];

    pub fn as_array(&self) -> [f64; 4] {
        [self.m_s, self.m_d, self.m_omega, self.m_omega_bar]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        MetricsRecord {
            m_s: v[0],
            m_d: v[1],
            m_omega: v[2],
            m_omega_bar: v[3],
        }
    }
}

/// Everything about `x_bad` the losses need, evaluated once per repair.
#[derive(Debug, Clone)]
pub struct PropertyObjective<'a, D: Detector + ?Sized> {
    det: &'a D,
    x_bad: &'a [f64],
    omega: &'a AnomalyMask,
    omega_bar: AnomalyMask,
    s_bad_omega: f64,
    s_bad_omega_bar: f64,
    tol: Tolerances,
    weights: PropertyWeights,
}

impl<'a, D: Detector + ?Sized> PropertyObjective<'a, D> {
    pub fn new(
        det: &'a D,
        x_bad: &'a [f64],
        omega: &'a AnomalyMask,
        tol: Tolerances,
        weights: PropertyWeights,
    ) -> Result<Self> {
        ensure_dim("property", det.dim(), x_bad.len())?;
        ensure_dim("property", det.dim(), omega.len())?;
        weights.validate()?;
        if !(tol.delta4 >= 0.0) {
            return Err(Error::InvalidParameter("delta4 must be nonnegative".into()));
        }
        let omega_bar = omega.complement();
        let s_bad = det.score(x_bad)?;
        Ok(PropertyObjective {
            det,
            x_bad,
            omega,
            s_bad_omega: s_bad.region(omega)?,
            s_bad_omega_bar: s_bad.region(&omega_bar)?,
            omega_bar,
            tol,
            weights,
        })
    }

    pub fn omega_bar(&self) -> &AnomalyMask {
        &self.omega_bar
    }

    fn masked_distance(&self, x_fix: &[f64]) -> f64 {
        self.x_bad
            .iter()
            .zip(x_fix)
            .zip(self.omega_bar.bits())
            .filter(|(_, &keep)| keep)
            .map(|((b, f), _)| (f - b) * (f - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn breakdown(&self, x_fix: &[f64]) -> Result<LossBreakdown> {
        ensure_dim("loss_breakdown", self.x_bad.len(), x_fix.len())?;
        let s_fix = self.det.score(x_fix)?;
        let l1 = s_fix.total;
        let l2 = self.masked_distance(x_fix);
        let l3 = (s_fix.region(self.omega)? - self.s_bad_omega).max(0.0);
        let l4 = (s_fix.region(&self.omega_bar)? - self.s_bad_omega_bar - self.tol.delta4).max(0.0);
        let w = self.weights;
        Ok(LossBreakdown {
            l1,
            l2,
            l3,
            l4,
            total: w.lambda1 * l1 + w.lambda2 * l2 + w.lambda3 * l3 + w.lambda4 * l4,
        })
    }

    pub fn metrics(&self, x_fix: &[f64]) -> Result<MetricsRecord> {
        ensure_dim("metrics", self.x_bad.len(), x_fix.len())?;
        let s_fix = self.det.score(x_fix)?;
        Ok(MetricsRecord {
            m_s: s_fix.total,
            m_d: self.masked_distance(x_fix),
            m_omega: s_fix.region(self.omega)? - self.s_bad_omega,
            m_omega_bar: s_fix.region(&self.omega_bar)? - self.s_bad_omega_bar,
        })
    }

    /// Gradient of the weighted loss with respect to `x_fix`. `L2` uses the
    /// smoothed norm; inactive hinges (including exactly at the kink)
    /// contribute nothing.
    pub fn gradient(&self, x_fix: &[f64]) -> Result<Vec<f64>> {
        ensure_dim("grad_guidance", self.x_bad.len(), x_fix.len())?;
        let w = self.weights;
        let tape = Tape::new();
        let x = tape.vector(x_fix.to_vec());
        let (alpha, beta) = self.det.decompose_var(x)?;
        let mut terms = Vec::with_capacity(4);
        if w.lambda1 != 0.0 {
            terms.push(alpha.sum().add(&beta)?.scale(w.lambda1));
        }
        if w.lambda2 != 0.0 {
            let keep = tape.vector(self.omega_bar.to_f64());
            let bad = tape.vector(self.x_bad.to_vec());
            let d2 = x.sub(&bad)?.mul(&keep)?.square().sum();
            terms.push(d2.add_scalar(L2_SMOOTHING).sqrt()?.scale(w.lambda2));
        }
        if w.lambda3 != 0.0 {
            let z = tape.vector(self.omega.to_f64());
            let s = alpha.mul(&z)?.sum().add(&beta)?;
            terms.push(s.add_scalar(-self.s_bad_omega).relu().scale(w.lambda3));
        }
        if w.lambda4 != 0.0 {
            let z = tape.vector(self.omega_bar.to_f64());
            let s = alpha.mul(&z)?.sum().add(&beta)?;
            let excess = s.add_scalar(-self.s_bad_omega_bar - self.tol.delta4);
            terms.push(excess.relu().scale(w.lambda4));
        }
        let Some((first, rest)) = terms.split_first() else {
            return Ok(vec![0.0; x_fix.len()]);
        };
        let mut total = *first;
        for t in rest {
            total = total.add(t)?;
        }
        Ok(tape.backward(total)?.wrt(x).into_data())
    }
}

pub fn loss_breakdown<D: Detector + ?Sized>(
    det: &D,
    x_bad: &[f64],
    x_fix: &[f64],
    omega: &AnomalyMask,
    tol: &Tolerances,
    weights: &PropertyWeights,
) -> Result<LossBreakdown> {
    PropertyObjective::new(det, x_bad, omega, *tol, *weights)?.breakdown(x_fix)
}

pub fn grad_guidance<D: Detector + ?Sized>(
    det: &D,
    x_bad: &[f64],
    x_fix: &[f64],
    omega: &AnomalyMask,
    tol: &Tolerances,
    weights: &PropertyWeights,
) -> Result<Vec<f64>> {
    PropertyObjective::new(det, x_bad, omega, *tol, *weights)?.gradient(x_fix)
}

pub fn metrics<D: Detector + ?Sized>(
    det: &D,
    x_bad: &[f64],
    x_fix: &[f64],
    omega: &AnomalyMask,
) -> Result<MetricsRecord> {
    PropertyObjective::new(
        det,
        x_bad,
        omega,
        Tolerances::default(),
        PropertyWeights::default(),
    )?
    .metrics(x_fix)
}

/// Fraction of repairs with `l2 ≤ δ2`, `l3 ≤ 0` and `l4 ≤ 0`.
pub fn satisfaction_rate(breakdowns: &[LossBreakdown], tol: &Tolerances) -> Result<f64> {
    if breakdowns.is_empty() {
        return Err(Error::Empty("satisfaction_rate"));
    }
    let ok = breakdowns
        .iter()
        .filter(|b| b.l2 <= tol.delta2 && b.l3 <= 0.0 && b.l4 <= 0.0)
        .count();
    Ok(ok as f64 / breakdowns.len() as f64)
}

/// Split-conformal threshold: the `⌈(n+1)·confidence⌉`-th smallest score, or
/// `+∞` when that rank exceeds `n`.
pub fn conformal_threshold(scores: &[f64], confidence: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("conformal_threshold"));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "confidence {confidence} outside (0, 1)"
        )));
    }
    let n = scores.len();
    // Guard against (n+1)·c landing a hair above an integer.
    let rank = (((n + 1) as f64 * confidence) - 1e-9).ceil() as usize;
    if rank > n {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[rank.max(1) - 1])
}

/// Fraction of scores at or below `threshold`.
pub fn tnr(scores: &[f64], threshold: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("tnr"));
    }
    Ok(scores.iter().filter(|&&s| s <= threshold).count() as f64 / scores.len() as f64)
}
