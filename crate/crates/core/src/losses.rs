//! Masked reconstruction loss, frame-pooled features and the temporal
//! contrastive objective, each with its analytic gradient.

use crate::error::{Error, Result};
use crate::masking::MaskPlan;
use crate::real::Real;
use crate::tensor::{add_into, dot, Mat};

/// Norm floor below which cosine distance is undefined.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveParams {
    /// Largest frame gap treated as a positive pair.
    pub tau_p: usize,
    /// Cosine-distance margin for negative pairs.
    pub tau_m: f64,
    /// Weight of the contrastive term in the total loss.
    pub lambda: f64,
}

impl Default for ContrastiveParams {
    fn default() -> Self {
        ContrastiveParams {
            tau_p: 1,
            tau_m: 0.5,
            lambda: 0.1,
        }
    }
}

impl ContrastiveParams {
    pub fn validate(&self) -> Result<()> {
        if self.tau_p < 1 {
            return Err(Error::Config("loss.tau_p must be >= 1".into()));
        }
        if !(self.tau_m > 0.0 && self.tau_m <= 2.0) {
            return Err(Error::Config(format!("loss.tau_m={} must lie in (0, 2]", self.tau_m)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("loss.lambda={} must lie in [0, 1]", self.lambda)));
        }
        Ok(())
    }
}

fn check_recon_shapes<F: Real>(pred: &Mat<F>, target: &Mat<F>, plan: &MaskPlan) -> Result<()> {
    if (pred.rows, pred.cols) != (target.rows, target.cols) || pred.rows != plan.frames() * plan.patches() {
        return Err(Error::shape(format!(
            "prediction {}x{}, target {}x{}, plan {}x{}",
            pred.rows,
            pred.cols,
            target.rows,
            target.cols,
            plan.frames(),
            plan.patches()
        )));
    }
    if plan.total_masked() == 0 {
        return Err(Error::EmptyMaskSet);
    }
    Ok(())
}

/// Mean over masked patches of the per-pixel squared error of that patch.
pub fn reconstruction_loss<F: Real>(pred: &Mat<F>, target: &Mat<F>, plan: &MaskPlan) -> Result<F> {
    Ok(reconstruction_loss_grad(pred, target, plan)?.0)
}

/// Loss and `∂L/∂pred` (zero on visible patches).
pub fn reconstruction_loss_grad<F: Real>(pred: &Mat<F>, target: &Mat<F>, plan: &MaskPlan) -> Result<(F, Mat<F>)> {
    check_recon_shapes(pred, target, plan)?;
    let scale = F::one() / F::lit((plan.total_masked() * pred.cols) as f64);
    let two = F::lit(2.0);
    let mut grad = Mat::zeros(pred.rows, pred.cols);
    let mut loss = F::zero();
    for (k, &masked) in plan.mask().iter().enumerate() {
        if !masked {
            continue;
        }
        let g = grad.row_mut(k);
        for ((gi, &p), &y) in g.iter_mut().zip(pred.row(k)).zip(target.row(k)) {
            let r = p - y;
            loss += r * r;
            *gi = two * r * scale;
        }
    }
    Ok((loss * scale, grad))
}

/// Per-frame mean of encoded visible tokens (`rows` exclude CLS), `T×D`.
pub fn frame_features<F: Real>(encoded: &Mat<F>, plan: &MaskPlan) -> Result<Mat<F>> {
    if encoded.rows != plan.total_visible() {
        return Err(Error::shape(format!(
            "{} encoded rows vs {} visible",
            encoded.rows,
            plan.total_visible()
        )));
    }
    let mut out = Mat::zeros(plan.frames(), encoded.cols);
    for t in 0..plan.frames() {
        let rows = plan.visible_rows(t);
        if rows.is_empty() {
            return Err(Error::EmptyFrame(t));
        }
        let inv = F::one() / F::lit(rows.len() as f64);
        let f = out.row_mut(t);
        for r in rows {
            add_into(f, encoded.row(r));
        }
        f.iter_mut().for_each(|x| *x *= inv);
    }
    Ok(out)
}

/// Per-frame mean over all `N` slots of a full frame-major sequence.
pub fn frame_means<F: Real>(full: &Mat<F>, frames: usize) -> Result<Mat<F>> {
    if frames == 0 || full.rows % frames != 0 || full.rows == 0 {
        return Err(Error::shape(format!("{} rows over {frames} frames", full.rows)));
    }
    let n = full.rows / frames;
    let inv = F::one() / F::lit(n as f64);
    let mut out = Mat::zeros(frames, full.cols);
    for t in 0..frames {
        let f = out.row_mut(t);
        for k in t * n..(t + 1) * n {
            add_into(f, full.row(k));
        }
        f.iter_mut().for_each(|x| *x *= inv);
    }
    Ok(out)
}

fn norm<F: Real>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

/// `1 − cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance<F: Real>(a: &[F], b: &[F]) -> Result<F> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    let eps = F::lit(NORM_EPS);
    if na < eps || nb < eps {
        return Err(Error::DegenerateNorm(NORM_EPS));
    }
    let cos = (dot(a, b) / (na * nb)).max(-F::one()).min(F::one());
    Ok(F::one() - cos)
}

/// Number of ordered-in-time frame pairs, `T(T−1)/2`.
pub fn comparison_count(frames: usize) -> usize {
    frames * frames.saturating_sub(1) / 2
}

pub fn temporal_contrastive_loss<F: Real>(features: &Mat<F>, params: &ContrastiveParams) -> Result<F> {
    Ok(temporal_contrastive_loss_grad(features, params)?.0)
}

/// Loss over all pairs `(t, t+Δt)`: `d²` when `Δt ≤ τ_p`, `[τ_m − d]₊²`
/// otherwise, averaged over `C` pairs. Also returns `∂L/∂features`.
pub fn temporal_contrastive_loss_grad<F: Real>(features: &Mat<F>, params: &ContrastiveParams) -> Result<(F, Mat<F>)> {
    let t_len = features.rows;
    if t_len < 2 {
        return Err(Error::TooFewFrames(t_len));
    }
    let d = features.cols;
    let eps = F::lit(NORM_EPS);
    let norms: Vec<F> = (0..t_len).map(|t| norm(features.row(t))).collect();
    if norms.iter().any(|&n| !(n >= eps)) {
        return Err(Error::DegenerateNorm(NORM_EPS));
    }
    let mut unit = Mat::zeros(t_len, d);
    for t in 0..t_len {
        let inv = F::one() / norms[t];
        for (u, &x) in unit.row_mut(t).iter_mut().zip(features.row(t)) {
            *u = x * inv;
        }
    }
    let inv_c = F::one() / F::lit(comparison_count(t_len) as f64);
    let tau_m = F::lit(params.tau_m);
    let two = F::lit(2.0);
    // gradient w.r.t. the unit vectors first, projected afterwards
    let mut g_unit = Mat::zeros(t_len, d);
    let mut loss = F::zero();
    for a in 0..t_len {
        for b in a + 1..t_len {
            let cos = dot(unit.row(a), unit.row(b));
            let dist = F::one() - cos;
            let dl_ddist = if b - a <= params.tau_p {
                loss += dist * dist;
                two * dist
            } else {
                let h = (tau_m - dist).max(F::zero());
                loss += h * h;
                -two * h
            };
            if dl_ddist == F::zero() {
                continue;
            }
            // ∂dist/∂u_a = −u_b
            let coef = -dl_ddist * inv_c;
            for j in 0..d {
                let (ua, ub) = (unit.get(a, j), unit.get(b, j));
                g_unit.data[a * d + j] += coef * ub;
                g_unit.data[b * d + j] += coef * ua;
            }
        }
    }
    // u = f/|f| ⇒ ∂L/∂f = (g − (g·u)u)/|f|
    let mut grad = Mat::zeros(t_len, d);
    for t in 0..t_len {
        let u = unit.row(t);
        let g = g_unit.row(t);
        let gu = dot(g, u);
        let inv = F::one() / norms[t];
        for ((o, &gi), &ui) in grad.row_mut(t).iter_mut().zip(g).zip(u) {
            *o = (gi - gu * ui) * inv;
        }
    }
    Ok((loss * inv_c, grad))
}

/// `L_rec + λ·L_contrast`.
pub fn total_loss<F: Real>(rec: F, contrast: F, lambda: F) -> F {
    rec + lambda * contrast
}
