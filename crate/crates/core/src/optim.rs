//! Adam updates and an exponential moving average of parameters.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Scalar;
use crate::nn::{ParamGrads, ParamSet};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        Self::with_constants(params, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS)
    }

    pub fn with_constants(params: &ParamSet<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<T>> = params
            .blocks()
            .map(|b| alloc::vec![T::ZERO; b.len()])
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamGrads<T>, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Parameter(format!(
                "learning rate {lr} must be positive"
            )));
        }
        if !params.same_shape(grads) || params.blocks().count() != self.m.len() {
            return Err(Error::Validation(
                "gradient shapes do not match parameters".into(),
            ));
        }
        if let Some(i) = grads
            .blocks()
            .position(|b| b.iter().any(|g| !g.is_finite()))
        {
            return Err(Error::Numeric(format!(
                "gradient of {}",
                ParamSet::<T>::block_name(i)
            )));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - libm::pow(b1, self.t as f64);
        let c2 = 1.0 - libm::pow(b2, self.t as f64);
        for (((p, g), m), v) in params
            .blocks_mut()
            .zip(grads.blocks())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                let gi = g[i].to_f64();
                let mi = b1 * m[i].to_f64() + (1.0 - b1) * gi;
                let vi = b2 * v[i].to_f64() + (1.0 - b2) * gi * gi;
                m[i] = T::from_f64(mi);
                v[i] = T::from_f64(vi);
                let m_hat = mi / c1;
                let v_hat = vi / c2;
                p[i] = T::from_f64(p[i].to_f64() - lr * m_hat / (libm::sqrt(v_hat) + self.eps));
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    params: &mut ParamSet<T>,
    grads: &ParamGrads<T>,
    lr: f64,
) -> Result<()> {
    state.step(params, grads, lr)
}

/// Shadow parameters following `EMA₁ = Θ₁`, `EMAₜ = α·EMAₜ₋₁ + (1 − α)·Θₜ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState<T: Scalar = f32> {
    shadow: Option<ParamSet<T>>,
    alpha: f64,
}

impl<T: Scalar> EmaState<T> {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Parameter(format!(
                "EMA decay {alpha} outside [0, 1)"
            )));
        }
        Ok(EmaState {
            shadow: None,
            alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_initialized(&self) -> bool {
        self.shadow.is_some()
    }

    pub fn update(&mut self, params: &ParamSet<T>) -> Result<()> {
        let alpha = self.alpha;
        match &mut self.shadow {
            None => self.shadow = Some(params.clone()),
            Some(shadow) => {
                if !shadow.same_shape(params) {
                    return Err(Error::Validation(
                        "EMA shadow shape differs from parameters".into(),
                    ));
                }
                for (s, p) in shadow.blocks_mut().zip(params.blocks()) {
                    for (si, pi) in s.iter_mut().zip(p) {
                        // Equal entries are a fixed point; skip so rounding cannot drift them.
                        if *si != *pi {
                            *si = T::from_f64(alpha * si.to_f64() + (1.0 - alpha) * pi.to_f64());
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// A copy of the averaged parameters.
    pub fn materialize(&self) -> Result<ParamSet<T>> {
        self.shadow
            .clone()
            .ok_or_else(|| Error::State("EMA has not seen any parameters".into()))
    }
}

pub fn ema_update<T: Scalar>(state: &mut EmaState<T>, params: &ParamSet<T>) -> Result<()> {
    state.update(params)
}

pub fn ema_materialize<T: Scalar>(state: &EmaState<T>) -> Result<ParamSet<T>> {
    state.materialize()
}
