//! Multilabel losses over logits.
//!
//! One parameterization covers all three families. For a logit `z`, target
//! `y ∈ {0, 1}`, clamped probability `p = clamp(σ(z), ε, 1 − ε)` and shifted
//! probability `q = max(p − m, 0)`:
//!
//! ```text
//! loss(z, y) = −y · (1 − p)^γ₊ · ln p  −  (1 − y) · q^γ₋ · ln(1 − q)
//! ```
//!
//! * binary cross-entropy: `γ₊ = γ₋ = 0, m = 0`
//! * focal loss: `γ₊ = γ₋ = γ, m = 0`
//! * asymmetric loss: distinct `γ₊, γ₋` and a clip `m > 0`
//!
//! Batch losses sum over labels and average over samples.

use alloc::format;

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Scalar};

pub const DEFAULT_PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub gamma_pos: f64,
    pub gamma_neg: f64,
    pub clip: f64,
    pub prob_floor: f64,
}

impl LossSpec {
    pub fn new(gamma_pos: f64, gamma_neg: f64, clip: f64) -> Result<Self> {
        let spec = LossSpec {
            gamma_pos,
            gamma_neg,
            clip,
            prob_floor: DEFAULT_PROB_FLOOR,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn bce() -> Self {
        LossSpec {
            gamma_pos: 0.0,
            gamma_neg: 0.0,
            clip: 0.0,
            prob_floor: DEFAULT_PROB_FLOOR,
        }
    }

    pub fn focal(gamma: f64) -> Self {
        LossSpec {
            gamma_pos: gamma,
            gamma_neg: gamma,
            ..Self::bce()
        }
    }

    /// Asymmetric loss with γ₊ = 1, γ₋ = 4, m = 0.05.
    pub fn asl_default() -> Self {
        LossSpec {
            gamma_pos: 1.0,
            gamma_neg: 4.0,
            clip: 0.05,
            ..Self::bce()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma_pos >= 0.0
            && self.gamma_neg >= 0.0
            && (0.0..1.0).contains(&self.clip)
            && self.prob_floor > 0.0
            && self.prob_floor < 0.5;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid loss spec {self:?}")))
        }
    }

    fn clamped_prob(&self, z: f64) -> (f64, bool) {
        let p = sigmoid(z);
        let lo = self.prob_floor;
        let hi = 1.0 - self.prob_floor;
        if p < lo {
            (lo, true)
        } else if p > hi {
            (hi, true)
        } else {
            (p, false)
        }
    }

    /// Loss of one (logit, target) element.
    pub fn element_loss(&self, z: f64, y: f64) -> f64 {
        let (p, _) = self.clamped_prob(z);
        let mut loss = 0.0;
        if y != 0.0 {
            loss -= y * pow(1.0 - p, self.gamma_pos) * libm::log(p);
        }
        if y != 1.0 {
            let q = p - self.clip;
            if q > 0.0 {
                loss -= (1.0 - y) * pow(q, self.gamma_neg) * libm::log(1.0 - q);
            }
        }
        loss
    }

    /// Derivative of [`element_loss`](Self::element_loss) with respect to
    /// the logit. Zero through the probability clamp and on the thresholded
    /// side of `p = m` (including the kink itself).
    pub fn element_grad(&self, z: f64, y: f64) -> f64 {
        let (p, clamped) = self.clamped_prob(z);
        if clamped {
            return 0.0;
        }
        let dp = p * (1.0 - p);
        let mut g = 0.0;
        if y != 0.0 {
            // d/dz [−(1−p)^a ln p] = (1−p)^a · (a·p·ln p − (1−p))
            let a = self.gamma_pos;
            let mut inner = -(1.0 - p);
            if a != 0.0 {
                inner += a * p * libm::log(p);
            }
            g += y * pow(1.0 - p, a) * inner;
        }
        if y != 1.0 {
            let q = p - self.clip;
            if q > 0.0 {
                // d/dq [−q^b ln(1−q)] = q^b/(1−q) − b·q^(b−1)·ln(1−q)
                let b = self.gamma_neg;
                let mut dq = pow(q, b) / (1.0 - q);
                if b != 0.0 {
                    dq -= b * pow(q, b - 1.0) * libm::log(1.0 - q);
                }
                g += (1.0 - y) * dq * dp;
            }
        }
        g
    }
}

/// `x^e` with the common integer exponents short-circuited; results match
/// `libm::pow` exactly.
#[inline]
fn pow(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if e == 1.0 {
        x
    } else {
        libm::pow(x, e)
    }
}

/// Logistic sigmoid, evaluated without overflow for either sign.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

fn check_inputs<T: Scalar>(logits: &Matrix<T>, targets: &Matrix<T>) -> Result<()> {
    if logits.shape() != targets.shape() {
        return Err(Error::shape("loss", logits.shape(), targets.shape()));
    }
    if let Some(v) = targets
        .data()
        .iter()
        .find(|v| **v != T::ZERO && **v != T::ONE)
    {
        return Err(Error::Validation(format!("target {v:?} is not 0 or 1")));
    }
    if !logits.all_finite() {
        return Err(Error::Numeric("logits contain NaN or infinity".into()));
    }
    Ok(())
}

/// Mean over samples of the per-sample loss summed over labels.
pub fn loss_value<T: Scalar>(
    logits: &Matrix<T>,
    targets: &Matrix<T>,
    spec: &LossSpec,
) -> Result<f64> {
    check_inputs(logits, targets)?;
    let n = logits.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let total = logits
        .data()
        .iter()
        .zip(targets.data())
        .fold(0.0f64, |acc, (z, y)| {
            acc + spec.element_loss(z.to_f64(), y.to_f64())
        });
    Ok(total / n as f64)
}

/// Gradient of [`loss_value`] with respect to each logit.
pub fn loss_grad<T: Scalar>(
    logits: &Matrix<T>,
    targets: &Matrix<T>,
    spec: &LossSpec,
) -> Result<Matrix<T>> {
    check_inputs(logits, targets)?;
    let inv_n = 1.0 / logits.rows().max(1) as f64;
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for ((o, z), y) in out
        .data_mut()
        .iter_mut()
        .zip(logits.data())
        .zip(targets.data())
    {
        *o = T::from_f64(spec.element_grad(z.to_f64(), y.to_f64()) * inv_n);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use proptest::prelude::*;

    fn logit(p: f64) -> f64 {
        libm::log(p / (1.0 - p))
    }

    fn one(z: f64, y: f64) -> (Matrix<f64>, Matrix<f64>) {
        (Matrix::filled(1, 1, z), Matrix::filled(1, 1, y))
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        // 1 / (1 + e^-10) evaluated to 20 digits: 0.99995460213129756...
        assert!((sigmoid(10.0) - 0.999_954_602_131_297_6).abs() < 1e-15);
        let mut r = RngState::new(4);
        for _ in 0..100 {
            let z = r.normal(0.0, 5.0);
            assert!((sigmoid(-z) - (1.0 - sigmoid(z))).abs() < 1e-15);
        }
    }

    #[test]
    fn bce_at_zero_logit() {
        let (z, y) = one(0.0, 1.0);
        let v = loss_value(&z, &y, &LossSpec::bce()).unwrap();
        assert!((v - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(loss_grad(&z, &y, &LossSpec::bce()).unwrap().data(), &[-0.5]);
    }

    #[test]
    fn focal_positive_example() {
        let v = LossSpec::focal(2.0).element_loss(logit(0.9), 1.0);
        assert!((v - 0.001_053_605_156_578_263).abs() < 1e-12, "{v}");
    }

    #[test]
    fn asl_hard_threshold_is_exact_zero() {
        let spec = LossSpec::new(1.0, 4.0, 0.05).unwrap();
        assert_eq!(spec.element_loss(logit(0.03), 0.0), 0.0);
        assert_eq!(spec.element_grad(logit(0.03), 0.0), 0.0);
    }

    #[test]
    fn asl_shifted_negative_example() {
        let spec = LossSpec::new(1.0, 2.0, 0.05).unwrap();
        let v = spec.element_loss(0.0, 0.0);
        // 0.45² · −ln(0.55)
        assert!((v - 0.121_061_992_653_013_14).abs() < 1e-12, "{v}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let z = Matrix::<f64>::filled(1, 2, 0.0);
        let bad = Matrix::from_rows(&[&[0.0, 0.5]]).unwrap();
        assert!(matches!(
            loss_value(&z, &bad, &LossSpec::bce()),
            Err(Error::Validation(_))
        ));
        let nan = Matrix::from_rows(&[&[f64::NAN, 0.0]]).unwrap();
        let y = Matrix::<f64>::zeros(1, 2);
        assert!(matches!(
            loss_grad(&nan, &y, &LossSpec::bce()),
            Err(Error::Numeric(_))
        ));
        assert!(LossSpec::new(0.0, 0.0, 1.0).is_err());
        assert!(LossSpec::new(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn mean_over_samples_sum_over_labels() {
        let z = Matrix::from_rows(&[&[0.0, 0.0], &[0.0, 0.0]]).unwrap();
        let y = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let v = loss_value(&z, &y, &LossSpec::bce()).unwrap();
        assert!((v - 2.0 * core::f64::consts::LN_2).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn non_negative(z in -30.0f64..30.0, y in 0u8..2, gp in 0.0f64..5.0, gn in 0.0f64..5.0, m in 0.0f64..0.5) {
            let spec = LossSpec::new(gp, gn, m).unwrap();
            prop_assert!(spec.element_loss(z, y as f64) >= 0.0);
        }

        #[test]
        fn monotone_in_probability(a in -15.0f64..15.0, b in -15.0f64..15.0, g in 0.0f64..4.0) {
            prop_assume!((a - b).abs() > 1e-3);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let spec = LossSpec::focal(g);
            prop_assert!(spec.element_loss(hi, 1.0) < spec.element_loss(lo, 1.0));
            prop_assert!(spec.element_loss(hi, 0.0) > spec.element_loss(lo, 0.0));
        }

        #[test]
        fn focal_is_asl_without_clip(z in -20.0f64..20.0, y in 0u8..2, g in 0.0f64..5.0) {
            let focal = LossSpec::focal(g);
            let asl = LossSpec::new(g, g, 0.0).unwrap();
            prop_assert_eq!(focal.element_loss(z, y as f64), asl.element_loss(z, y as f64));
            prop_assert_eq!(focal.element_grad(z, y as f64), asl.element_grad(z, y as f64));
        }
    }
}
