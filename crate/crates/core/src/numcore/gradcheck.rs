//! Central finite-difference verification of hand-written backward passes.

use rand::seq::index::sample;

use super::layer::LinearLayer;
use super::rng::rng;
use crate::error::{Error, Result};

/// A model with a deterministic scalar loss over its layers.
pub trait GradCheckable {
    /// Loss at the current parameters. Must not touch gradients.
    fn loss(&self) -> Result<f64>;

    /// Zeroes gradients, recomputes the loss and accumulates analytic
    /// gradients into every layer.
    fn backprop(&mut self) -> Result<f64>;

    /// Every trainable layer, in a stable order, with a display name.
    fn layers_mut(&mut self) -> Vec<(String, &mut LinearLayer)>;
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    pub samples_per_layer: usize,
    /// Denominator floor for the relative error, so vanishing gradients are
    /// compared in absolute terms.
    pub rel_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            samples_per_layer: 200,
            rel_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerCheck {
    pub name: String,
    pub checked: usize,
    pub kinks_skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub layers: Vec<LayerCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for l in &self.layers {
            writeln!(
                f,
                "  {:<24} checked {:>4}  kinks {:>3}  max rel err {:.3e}",
                l.name, l.checked, l.kinks_skipped, l.max_rel_error
            )?;
        }
        write!(
            f,
            "  max rel err {:.3e} (tolerance {:.1e}) -> {}",
            self.max_rel_error,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares analytic gradients with central differences on a random subset
/// of at least `samples_per_layer` parameters per layer (all of them for
/// smaller layers).
///
/// A parameter whose one-sided differences disagree with each other by more
/// than the central estimate disagrees with the analytic value sits on a ReLU
/// kink; it is skipped and another one drawn. More than 10% kinks in a layer
/// fails the check.
pub fn gradient_check<M: GradCheckable>(model: &mut M, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let base = model.backprop()?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("gradient check: loss is {base}")));
    }
    let mut r = rng(cfg.seed);
    let n_layers = model.layers_mut().len();
    let mut layers = Vec::with_capacity(n_layers);
    let mut worst: f64 = 0.0;
    let mut passed = true;

    for li in 0..n_layers {
        let (name, count) = {
            let mut ls = model.layers_mut();
            let (name, layer) = &mut ls[li];
            (name.clone(), layer.param_count())
        };
        let order = sample(&mut r, count, count).into_vec();
        let target = cfg.samples_per_layer.min(count);
        let mut check = LayerCheck {
            name,
            checked: 0,
            kinks_skipped: 0,
            max_rel_error: 0.0,
        };
        for &idx in &order {
            if check.checked == target {
                break;
            }
            let (orig, analytic) = {
                let mut ls = model.layers_mut();
                let layer = &mut *ls[li].1;
                let v = *layer.param_mut(idx);
                (v, layer.grad_at(idx))
            };
            let eval_at = |value: f64, model: &mut M| -> Result<f64> {
                *model.layers_mut()[li].1.param_mut(idx) = value;
                let l = model.loss()?;
                if !l.is_finite() {
                    return Err(Error::NonFinite(format!("gradient check: loss is {l}")));
                }
                Ok(l)
            };
            let plus = eval_at(orig + cfg.step, model)?;
            let minus = eval_at(orig - cfg.step, model)?;
            *model.layers_mut()[li].1.param_mut(idx) = orig;

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let err = rel_error(analytic, numeric, cfg.rel_floor);
            if err > cfg.tolerance {
                let fwd = (plus - base) / cfg.step;
                let bwd = (base - minus) / cfg.step;
                if (fwd - bwd).abs() >= (numeric - analytic).abs() {
                    check.kinks_skipped += 1;
                    continue;
                }
            }
            check.checked += 1;
            check.max_rel_error = check.max_rel_error.max(err);
        }
        if check.max_rel_error > cfg.tolerance || check.kinks_skipped * 10 > target.max(1) {
            passed = false;
        }
        worst = worst.max(check.max_rel_error);
        layers.push(check);
    }
    Ok(GradCheckReport {
        layers,
        max_rel_error: worst,
        tolerance: cfg.tolerance,
        passed,
    })
}
