//! Inverted dropout and the evaluation modes that drive it.
//!
//! A model calls [`apply_site`] once per dropout site with a stable site id.
//! The [`Mode`] decides what happens there:
//!
//! * `Infer`: identity.
//! * `Train`: an independent mask per element, the usual training regime.
//! * `Sample`: one mask per unit, shared by every column of the batch. This
//!   is a single draw of the network's parameters, so all inputs scored in
//!   one call see the same thinned network.
//! * `Fixed`: an explicit per-unit mask per site, used to enumerate the mask
//!   space exactly.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng as _;

use super::matrix::Matrix;
use super::rng::{derive_seed, rng};
use crate::error::{Error, Result};

pub type MaskSet = BTreeMap<u32, Vec<bool>>;

#[derive(Clone, Debug, Default)]
pub enum Mode {
    #[default]
    Infer,
    Train {
        seed: u64,
    },
    Sample {
        seed: u64,
    },
    Fixed(Arc<MaskSet>),
}

impl Mode {
    pub fn is_stochastic(&self) -> bool {
        !matches!(self, Mode::Infer)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    pub keep_prob: f64,
    /// Row-major element mask, or one entry per row when `per_unit`.
    pub mask: Vec<bool>,
    pub seed: u64,
    pub per_unit: bool,
    /// Multiplier on kept entries: `1 / keep_prob`, or 1 in inference.
    pub scale: f64,
}

impl DropoutMask {
    fn keeps(&self, i: usize, j: usize, cols: usize) -> bool {
        if self.per_unit {
            self.mask[i]
        } else {
            self.mask[i * cols + j]
        }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut y = x.clone();
        let cols = x.cols();
        for i in 0..x.rows() {
            for j in 0..cols {
                y[(i, j)] = if self.keeps(i, j, cols) { x[(i, j)] * self.scale } else { 0.0 };
            }
        }
        y
    }

    /// Gradient of `apply` is the same masked scaling.
    pub fn backward(&self, upstream: &Matrix) -> Matrix {
        self.apply(upstream)
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.mask.iter().all(|&m| m)
    }
}

fn check_keep(keep_prob: f64) -> Result<()> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::Param(format!("keep_prob must lie in (0, 1], got {keep_prob}")));
    }
    Ok(())
}

fn draw(n: usize, keep_prob: f64, seed: u64) -> Vec<bool> {
    let mut r = rng(seed);
    (0..n).map(|_| r.gen::<f64>() < keep_prob).collect()
}

/// Element-wise inverted dropout: `y = x ⊙ mask / keep_prob` when training,
/// `y = x` otherwise. The same `(seed, shape)` always yields the same mask.
pub fn dropout_apply(x: &Matrix, keep_prob: f64, train: bool, seed: u64) -> Result<(Matrix, DropoutMask)> {
    check_keep(keep_prob)?;
    let mask = if train {
        DropoutMask {
            keep_prob,
            mask: draw(x.len(), keep_prob, seed),
            seed,
            per_unit: false,
            scale: 1.0 / keep_prob,
        }
    } else {
        DropoutMask {
            keep_prob,
            mask: vec![true; x.len()],
            seed,
            per_unit: false,
            scale: 1.0,
        }
    };
    Ok((mask.apply(x), mask))
}

/// Applies dropout at the site `site` under `mode`.
pub fn apply_site(x: &Matrix, keep_prob: f64, mode: &Mode, site: u32) -> Result<(Matrix, DropoutMask)> {
    check_keep(keep_prob)?;
    if keep_prob == 1.0 {
        // Not a stochastic site; no mask is enumerated for it.
        return dropout_apply(x, keep_prob, false, 0);
    }
    match mode {
        Mode::Infer => dropout_apply(x, keep_prob, false, 0),
        Mode::Train { seed } => dropout_apply(x, keep_prob, true, derive_seed(*seed, site as u64)),
        Mode::Sample { seed } => {
            let s = derive_seed(*seed, site as u64);
            let mask = DropoutMask {
                keep_prob,
                mask: draw(x.rows(), keep_prob, s),
                seed: s,
                per_unit: true,
                scale: 1.0 / keep_prob,
            };
            Ok((mask.apply(x), mask))
        }
        Mode::Fixed(set) => {
            let units = set
                .get(&site)
                .ok_or_else(|| Error::Param(format!("no fixed mask supplied for dropout site {site}")))?;
            if units.len() != x.rows() {
                return Err(Error::shape(
                    "apply_site",
                    format!("{} mask units", x.rows()),
                    format!("{} mask units", units.len()),
                ));
            }
            let mask = DropoutMask {
                keep_prob,
                mask: units.clone(),
                seed: 0,
                per_unit: true,
                scale: 1.0 / keep_prob,
            };
            Ok((mask.apply(x), mask))
        }
    }
}

/// A dropout site as seen by the exact mask enumerator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSite {
    pub id: u32,
    pub units: usize,
    pub keep_prob: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keep_all_is_identity() {
        let x = Matrix::from_rows(&[vec![1.0, -2.0], vec![3.0, 4.0]]);
        let (y, m) = dropout_apply(&x, 1.0, true, 9).unwrap();
        assert_eq!(y, x);
        assert!(m.mask.iter().all(|&b| b));
    }

    #[test]
    fn inference_is_identity() {
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 0.3]]);
        let (y, m) = dropout_apply(&x, 0.3, false, 9).unwrap();
        assert_eq!(y, x);
        assert!(m.is_identity());
    }

    #[test]
    fn rejects_nonpositive_keep() {
        let x = Matrix::zeros(1, 1);
        assert!(matches!(dropout_apply(&x, 0.0, true, 0), Err(Error::Param(_))));
        assert!(matches!(dropout_apply(&x, -0.5, false, 0), Err(Error::Param(_))));
        assert!(matches!(dropout_apply(&x, 1.5, false, 0), Err(Error::Param(_))));
    }

    #[test]
    fn empirical_keep_rate_and_unbiasedness() {
        let n = 100_000;
        let x = Matrix::filled(1, n, 2.0);
        let (y, m) = dropout_apply(&x, 0.5, true, 1234).unwrap();
        let rate = m.mask.iter().filter(|&&b| b).count() as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.01, "keep rate {rate}");
        let mean = y.sum() / n as f64;
        // sd of the mean is 2 / sqrt(n) ≈ 0.0063
        assert!((mean - 2.0).abs() < 0.03, "mean {mean}");
    }

    #[test]
    fn seeded_masks_are_reproducible() {
        let x = Matrix::filled(7, 13, 1.0);
        let (a, _) = dropout_apply(&x, 0.4, true, 77).unwrap();
        let (b, _) = dropout_apply(&x, 0.4, true, 77).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let (c, _) = dropout_apply(&x, 0.4, true, 78).unwrap();
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn sample_mode_shares_units_across_columns() {
        let x = Matrix::filled(32, 5, 1.0);
        let (y, m) = apply_site(&x, 0.5, &Mode::Sample { seed: 3 }, 1).unwrap();
        assert!(m.per_unit);
        for i in 0..32 {
            let row = y.row(i);
            assert!(row.iter().all(|&v| v == row[0]));
        }
    }

    #[test]
    fn fixed_mode_uses_supplied_mask() {
        let x = Matrix::filled(3, 2, 1.0);
        let mut set = MaskSet::new();
        set.insert(4, vec![true, false, true]);
        let (y, _) = apply_site(&x, 0.5, &Mode::Fixed(Arc::new(set)), 4).unwrap();
        assert_eq!(y.row(0), &[2.0, 2.0]);
        assert_eq!(y.row(1), &[0.0, 0.0]);
        assert!(apply_site(&x, 0.5, &Mode::Fixed(Arc::new(MaskSet::new())), 4).is_err());
    }

    #[test]
    fn backward_reuses_mask() {
        let x = Matrix::filled(4, 4, 1.0);
        let (y, m) = dropout_apply(&x, 0.5, true, 5).unwrap();
        assert_eq!(m.backward(&x), y);
    }
}
