//! Cosine, triplet-hinge and cosine-BCE objectives on the transformed
//! embedding, each returning the batch-mean value and its gradient with
//! respect to the prediction. Targets and seeds are data and get no gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_cosine: f64,
    pub lambda_triplet: f64,
    pub lambda_cosbce: f64,
    /// Triplet margin.
    pub alpha: f64,
    /// Logit scale applied to the cosine before the sigmoid.
    pub gamma: f64,
    pub t_match: f64,
    pub t_mismatch: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_cosine: 1.0,
            lambda_triplet: 1.0,
            lambda_cosbce: 1.0,
            alpha: 0.3,
            gamma: 3.0,
            t_match: 1.0,
            t_mismatch: 0.5,
        }
    }
}

impl LossConfig {
    pub fn with_lambdas(self, cosine: f64, triplet: f64, cosbce: f64) -> Self {
        LossConfig {
            lambda_cosine: cosine,
            lambda_triplet: triplet,
            lambda_cosbce: cosbce,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = [self.lambda_cosine, self.lambda_triplet, self.lambda_cosbce];
        if l.iter().any(|&x| !(x >= 0.0 && x.is_finite())) || l.iter().all(|&x| x == 0.0) {
            return Err(Error::InvalidInput(format!(
                "loss weights must be non-negative with at least one positive: {l:?}"
            )));
        }
        if !(self.alpha >= 0.0) || !(self.gamma > 0.0) {
            return Err(Error::InvalidInput(format!(
                "need alpha >= 0 and gamma > 0, got alpha={} gamma={}",
                self.alpha, self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.t_match) || !(0.0..=1.0).contains(&self.t_mismatch) {
            return Err(Error::InvalidInput("BCE targets must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cosine: f64,
    pub triplet: f64,
    pub cosbce: f64,
    pub batch_size: usize,
}

/// Cosine of one row pair and its gradient with respect to the first row.
struct RowCos {
    cos: f64,
    grad: Vec<f64>,
}

fn row_cos(a: &[f64], b: &[f64], row: usize) -> Result<RowCos> {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if !(na > 0.0) || !(nb > 0.0) {
        return Err(Error::ZeroNorm { row });
    }
    let cos = dot(a, b) / (na * nb);
    let grad = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| y / (na * nb) - cos * x / (na * na))
        .collect();
    Ok(RowCos { cos, grad })
}

fn check_shapes(pred: &Mat<f64>, others: &[&Mat<f64>]) -> Result<()> {
    if pred.rows == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    for o in others {
        if o.rows != pred.rows || o.cols != pred.cols {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                pred.rows, pred.cols, o.rows, o.cols
            )));
        }
    }
    Ok(())
}

/// `softplus(z) = ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean of `1 - cos(pred, target)`.
pub fn loss_cosine(pred: &Mat<f64>, target: &Mat<f64>) -> Result<(f64, Mat<f64>)> {
    check_shapes(pred, &[target])?;
    let scale = 1.0 / pred.rows as f64;
    let mut grad = Mat::zeros(pred.rows, pred.cols);
    let mut total = 0.0;
    for r in 0..pred.rows {
        let c = row_cos(pred.row(r), target.row(r), r)?;
        total += 1.0 - c.cos;
        for (g, v) in grad.row_mut(r).iter_mut().zip(&c.grad) {
            *g = -scale * v;
        }
    }
    Ok((total * scale, grad))
}

/// Mean of `max(0, alpha + cos(pred, seed) - cos(pred, target))`, with the
/// prediction as anchor, the proxy target as positive and the seed as
/// negative.
pub fn loss_triplet(pred: &Mat<f64>, target: &Mat<f64>, seed: &Mat<f64>, alpha: f64) -> Result<(f64, Mat<f64>)> {
    check_shapes(pred, &[target, seed])?;
    let scale = 1.0 / pred.rows as f64;
    let mut grad = Mat::zeros(pred.rows, pred.cols);
    let mut total = 0.0;
    for r in 0..pred.rows {
        let neg = row_cos(pred.row(r), seed.row(r), r)?;
        let pos = row_cos(pred.row(r), target.row(r), r)?;
        let hinge = alpha + neg.cos - pos.cos;
        if hinge > 0.0 {
            total += hinge;
            for ((g, n), p) in grad.row_mut(r).iter_mut().zip(&neg.grad).zip(&pos.grad) {
                *g = scale * (n - p);
            }
        }
    }
    Ok((total * scale, grad))
}

/// Mean binary cross-entropy between `sigmoid(gamma * cos(pred, target))`
/// and a soft target (`t_match` when moods agree, `t_mismatch` otherwise).
/// Evaluated as `softplus(z) - t z` on the logit `z`.
pub fn loss_cosbce_with_targets(
    pred: &Mat<f64>,
    target: &Mat<f64>,
    mood_match: &[bool],
    gamma: f64,
    t_match: f64,
    t_mismatch: f64,
) -> Result<(f64, Mat<f64>)> {
    check_shapes(pred, &[target])?;
    if mood_match.len() != pred.rows {
        return Err(Error::Shape(format!("{} match flags for {} rows", mood_match.len(), pred.rows)));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!("gamma must be positive, got {gamma}")));
    }
    let scale = 1.0 / pred.rows as f64;
    let mut grad = Mat::zeros(pred.rows, pred.cols);
    let mut total = 0.0;
    for r in 0..pred.rows {
        let c = row_cos(pred.row(r), target.row(r), r)?;
        let t = if mood_match[r] { t_match } else { t_mismatch };
        let z = gamma * c.cos;
        total += softplus(z) - t * z;
        let dz = (sigmoid(z) - t) * gamma * scale;
        for (g, v) in grad.row_mut(r).iter_mut().zip(&c.grad) {
            *g = dz * v;
        }
    }
    Ok((total * scale, grad))
}

pub fn loss_cosbce(pred: &Mat<f64>, target: &Mat<f64>, mood_match: &[bool], gamma: f64) -> Result<(f64, Mat<f64>)> {
    loss_cosbce_with_targets(pred, target, mood_match, gamma, 1.0, 0.5)
}

/// Weighted sum of the three terms and its gradient.
pub fn loss_total(
    pred: &Mat<f64>,
    target: &Mat<f64>,
    seed: &Mat<f64>,
    mood_match: &[bool],
    config: &LossConfig,
) -> Result<(LossBreakdown, Mat<f64>)> {
    config.validate()?;
    let (cosine, g_cos) = loss_cosine(pred, target)?;
    let (triplet, g_tri) = loss_triplet(pred, target, seed, config.alpha)?;
    let (cosbce, g_bce) =
        loss_cosbce_with_targets(pred, target, mood_match, config.gamma, config.t_match, config.t_mismatch)?;
    let (lc, lt, lb) = (config.lambda_cosine, config.lambda_triplet, config.lambda_cosbce);
    let total = lc * cosine + lt * triplet + lb * cosbce;
    let mut grad = Mat::zeros(pred.rows, pred.cols);
    for (i, g) in grad.data.iter_mut().enumerate() {
        *g = lc * g_cos.data[i] + lt * g_tri.data[i] + lb * g_bce.data[i];
    }
    Ok((
        LossBreakdown {
            total,
            cosine,
            triplet,
            cosbce,
            batch_size: pred.rows,
        },
        grad,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
        let mut r = rng::rng_from(seed);
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect())
    }

    fn neg(m: &Mat<f64>) -> Mat<f64> {
        Mat::from_vec(m.rows, m.cols, m.data.iter().map(|v| -v).collect())
    }

    /// Scalar cosine written independently of `row_cos`.
    fn cos_ref(a: &[f64], b: &[f64]) -> f64 {
        let mut ab = 0.0;
        let mut aa = 0.0;
        let mut bb = 0.0;
        for i in 0..a.len() {
            ab += a[i] * b[i];
            aa += a[i] * a[i];
            bb += b[i] * b[i];
        }
        ab / (aa.sqrt() * bb.sqrt())
    }

    fn fd_check(f: impl Fn(&Mat<f64>) -> f64, x: &Mat<f64>, grad: &Mat<f64>) {
        let h = 1e-4;
        for i in 0..x.data.len() {
            let mut p = x.clone();
            p.data[i] += h;
            let mut m = x.clone();
            m.data[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let an = grad.data[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(rel < 1e-4, "index {i}: analytic {an} vs fd {fd}");
        }
    }

    #[test]
    fn cosine_endpoints() {
        let x = random(3, 5, 1);
        assert!(loss_cosine(&x, &x).unwrap().0.abs() < 1e-15);
        assert!((loss_cosine(&neg(&x), &x).unwrap().0 - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_gradient_matches_fd() {
        let (p, t) = (random(4, 8, 2), random(4, 8, 3));
        let (_, g) = loss_cosine(&p, &t).unwrap();
        fd_check(|q| loss_cosine(q, &t).unwrap().0, &p, &g);
    }

    #[test]
    fn triplet_identity_pair_is_alpha() {
        let (p, t) = (random(5, 6, 4), random(5, 6, 5));
        let (v, _) = loss_triplet(&p, &t, &t, 0.3).unwrap();
        assert!((v - 0.3).abs() < 1e-15);
    }

    #[test]
    fn triplet_inactive_hinge() {
        let p = Mat::from_vec(1, 2, vec![1.0, 0.0]);
        let t = Mat::from_vec(1, 2, vec![2.0, 0.0]);
        let s = Mat::from_vec(1, 2, vec![0.0, 1.0]);
        let (v, g) = loss_triplet(&p, &t, &s, 0.3).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn triplet_matches_scalar_reference_and_fd() {
        let (p, t, s) = (random(6, 8, 6), random(6, 8, 7), random(6, 8, 8));
        let (v, g) = loss_triplet(&p, &t, &s, 0.3).unwrap();
        let expect: f64 = (0..6)
            .map(|r| (0.3 + cos_ref(p.row(r), s.row(r)) - cos_ref(p.row(r), t.row(r))).max(0.0))
            .sum::<f64>()
            / 6.0;
        assert!((v - expect).abs() < 1e-14);
        fd_check(|q| loss_triplet(q, &t, &s, 0.3).unwrap().0, &p, &g);
    }

    #[test]
    fn cosbce_reference_points() {
        let x = random(1, 4, 9);
        let (v, _) = loss_cosbce(&x, &x, &[true], 3.0).unwrap();
        assert!((v - (1.0 + (-3.0f64).exp()).ln()).abs() < 1e-12);
        assert!((v - 0.048587).abs() < 1e-6);
        let a = Mat::from_vec(1, 2, vec![1.0, 0.0]);
        let b = Mat::from_vec(1, 2, vec![0.0, 3.0]);
        let (v, _) = loss_cosbce(&a, &b, &[false], 3.0).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cosbce_mismatch_minimized_at_zero_cosine() {
        // Sweep cos over [-1, 1] via 2-d vectors at angle theta.
        let target = Mat::from_vec(1, 2, vec![1.0, 0.0]);
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=2000 {
            let c = -1.0 + i as f64 / 1000.0;
            let s = (1.0 - c * c).max(0.0).sqrt();
            let p = Mat::from_vec(1, 2, vec![c, s]);
            let (v, _) = loss_cosbce(&p, &target, &[false], 3.0).unwrap();
            assert!(v.is_finite());
            if v < best.0 {
                best = (v, c);
            }
        }
        assert!(best.1.abs() < 1e-9, "minimizer at cos={}", best.1);
    }

    #[test]
    fn cosbce_stable_at_large_gamma() {
        let x = random(2, 3, 1);
        let (v, g) = loss_cosbce(&x, &neg(&x), &[true, false], 1e4).unwrap();
        assert!(v.is_finite() && g.data.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn cosbce_gradient_matches_fd() {
        let (p, t) = (random(4, 8, 10), random(4, 8, 11));
        let flags = [true, false, false, true];
        let (_, g) = loss_cosbce(&p, &t, &flags, 3.0).unwrap();
        fd_check(|q| loss_cosbce(q, &t, &flags, 3.0).unwrap().0, &p, &g);
    }

    #[test]
    fn total_identity_batch() {
        let x = random(4, 6, 12);
        let (b, _) = loss_total(&x, &x, &x, &[true; 4], &LossConfig::default()).unwrap();
        assert!(b.cosine.abs() < 1e-15);
        assert!((b.triplet - 0.3).abs() < 1e-15);
        assert!((b.total - 0.348587).abs() < 1e-6);
        assert_eq!(b.batch_size, 4);
    }

    #[test]
    fn total_masking_and_gradient() {
        let (p, t, s) = (random(4, 8, 13), random(4, 8, 14), random(4, 8, 15));
        let flags = [false, true, false, false];
        let only_cos = LossConfig::default().with_lambdas(1.0, 0.0, 0.0);
        let (b, _) = loss_total(&p, &t, &s, &flags, &only_cos).unwrap();
        assert_eq!(b.total, b.cosine);
        let cfg = LossConfig::default();
        let (_, g) = loss_total(&p, &t, &s, &flags, &cfg).unwrap();
        fd_check(|q| loss_total(q, &t, &s, &flags, &cfg).unwrap().0.total, &p, &g);
    }

    #[test]
    fn zero_norm_row_is_an_error() {
        let mut p = random(3, 4, 1);
        p.row_mut(1).fill(0.0);
        let t = random(3, 4, 2);
        assert!(matches!(loss_cosine(&p, &t), Err(Error::ZeroNorm { row: 1 })));
        assert!(matches!(loss_triplet(&t, &t, &p, 0.3), Err(Error::ZeroNorm { row: 1 })));
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().with_lambdas(0.0, 0.0, 0.0).validate().is_err());
        assert!(LossConfig { gamma: 0.0, ..Default::default() }.validate().is_err());
        assert!(LossConfig { alpha: -0.1, ..Default::default() }.validate().is_err());
        let json = r#"{"lambda_cosine":1,"lambda_triplet":0,"lambda_cosbce":1,"alpha":0.3,"gamma":3}"#;
        let c: LossConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.t_mismatch, 0.5);
    }

    proptest::proptest! {
        #[test]
        fn losses_are_scale_invariant(seed in 0u64..500, a in 0.01f64..100.0, b in 0.01f64..100.0, c in 0.01f64..100.0) {
            let (p, t, s) = (random(3, 5, seed), random(3, 5, seed + 1), random(3, 5, seed + 2));
            let flags = [true, false, false];
            let scale = |m: &Mat<f64>, k: f64| Mat::from_vec(m.rows, m.cols, m.data.iter().map(|v| v * k).collect());
            let cfg = LossConfig::default();
            let (x, _) = loss_total(&p, &t, &s, &flags, &cfg).unwrap();
            let (y, _) = loss_total(&scale(&p, a), &scale(&t, b), &scale(&s, c), &flags, &cfg).unwrap();
            proptest::prop_assert!((x.total - y.total).abs() < 1e-12);
            proptest::prop_assert!((x.triplet - y.triplet).abs() < 1e-12);
        }

        #[test]
        fn batch_mean_of_rows(seed in 0u64..500) {
            let (p, t, s) = (random(5, 4, seed), random(5, 4, seed + 7), random(5, 4, seed + 9));
            let flags = [true, false, true, false, false];
            let cfg = LossConfig::default();
            let (whole, _) = loss_total(&p, &t, &s, &flags, &cfg).unwrap();
            let mut sum = 0.0;
            for r in 0..5 {
                let one = |m: &Mat<f64>| Mat::from_vec(1, 4, m.row(r).to_vec());
                sum += loss_total(&one(&p), &one(&t), &one(&s), &flags[r..r + 1], &cfg).unwrap().0.total;
            }
            proptest::prop_assert!((whole.total - sum / 5.0).abs() < 1e-12);
            let rebuilt = whole.cosine + whole.triplet + whole.cosbce;
            proptest::prop_assert!((whole.total - rebuilt).abs() <= 1e-12 * whole.total.abs());
        }
    }
}
