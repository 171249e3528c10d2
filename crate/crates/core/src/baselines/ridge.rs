use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointHeader, ModelKind};
use crate::error::{Error, Result};
use crate::evaluation::Standardizer;
use crate::seq_head::TensorSpec;
use crate::traits::TraitId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeOptions {
    pub lambda: f64,
    /// Center features and targets before solving (intercept restores means).
    pub center: bool,
}

impl Default for RidgeOptions {
    fn default() -> Self {
        RidgeOptions {
            lambda: 1.0,
            center: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub center: bool,
    pub trait_id: Option<TraitId>,
    pub standardizer: Option<Standardizer>,
}

impl RidgeModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let d = self.weights.len();
        let mut params = self.weights.clone();
        params.push(self.intercept);
        Ok(Checkpoint {
            header: CheckpointHeader {
                kind: ModelKind::Ridge,
                parameter_order: vec![
                    TensorSpec { name: "ridge.w".into(), shape: vec![d], offset: 0 },
                    TensorSpec { name: "ridge.b".into(), shape: vec![1], offset: d },
                ],
                meta: serde_json::json!({
                    "lambda": self.lambda,
                    "center": self.center,
                    "trait_id": self.trait_id,
                    "standardizer": self.standardizer,
                }),
            },
            params,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.expect_kind(ModelKind::Ridge)?;
        #[derive(Deserialize)]
        struct Meta {
            lambda: f64,
            center: bool,
            trait_id: Option<TraitId>,
            standardizer: Option<Standardizer>,
        }
        let meta: Meta = serde_json::from_value(ck.header.meta)?;
        let mut weights = ck.params;
        let intercept = weights
            .pop()
            .ok_or_else(|| Error::Checkpoint("ridge checkpoint without intercept".into()))?;
        Ok(RidgeModel {
            weights,
            intercept,
            lambda: meta.lambda,
            center: meta.center,
            trait_id: meta.trait_id,
            standardizer: meta.standardizer,
        })
    }
}

pub fn ridge_fit(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<RidgeModel> {
    ridge_fit_with(x, y, RidgeOptions { lambda, center: true })
}

/// Closed-form ridge: solves `(XᵀX + λI) w = Xᵀy` on (optionally) centered
/// data via Cholesky.
pub fn ridge_fit_with(x: &[Vec<f64>], y: &[f64], opts: RidgeOptions) -> Result<RidgeModel> {
    let n = x.len();
    if n == 0 {
        return Err(Error::invalid("ridge needs at least one observation"));
    }
    if y.len() != n {
        return Err(Error::Shape(format!("{n} rows vs {} targets", y.len())));
    }
    if !(opts.lambda >= 0.0 && opts.lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda {} must be non-negative", opts.lambda)));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("ragged or empty feature rows".into()));
    }
    if opts.lambda == 0.0 && d > n {
        return Err(Error::Singular(format!("{d} features but only {n} rows at lambda = 0")));
    }
    let (x_mean, y_mean) = if opts.center {
        let mut m = vec![0.0; d];
        for row in x {
            for (a, b) in m.iter_mut().zip(row) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= n as f64);
        (m, y.iter().sum::<f64>() / n as f64)
    } else {
        (vec![0.0; d], 0.0)
    };
    let xc = DMatrix::from_fn(n, d, |i, j| x[i][j] - x_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = xc.transpose() * &xc;
    for i in 0..d {
        gram[(i, i)] += opts.lambda;
    }
    let rhs = xc.transpose() * yc;
    let scale = (0..d).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Singular("normal equations are not positive definite".into()))?;
    let l = chol.l();
    if scale == 0.0 || (0..d).any(|i| l[(i, i)] * l[(i, i)] <= 1e-12 * scale) {
        return Err(Error::Singular("rank-deficient design".into()));
    }
    let w = chol.solve(&rhs);
    let weights: Vec<f64> = w.iter().copied().collect();
    let intercept = y_mean - weights.iter().zip(&x_mean).map(|(a, b)| a * b).sum::<f64>();
    if weights.iter().any(|v| !v.is_finite()) || !intercept.is_finite() {
        return Err(Error::NonFinite("ridge solution".into()));
    }
    Ok(RidgeModel {
        weights,
        intercept,
        lambda: opts.lambda,
        center: opts.center,
        trait_id: None,
        standardizer: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_design_returns_targets() {
        let x = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let y = [4.0, -2.0, 0.5];
        let m = ridge_fit_with(&x, &y, RidgeOptions { lambda: 0.0, center: false }).unwrap();
        for (w, t) in m.weights.iter().zip(&y) {
            assert!((w - t).abs() < 1e-12);
        }
        assert_eq!(m.intercept, 0.0);
    }

    #[test]
    fn collinear_exact_fit() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        let m = ridge_fit(&x, &[2.0, 4.0, 6.0], 0.0).unwrap();
        assert!((m.weights[0] - 2.0).abs() < 1e-12);
        assert!(m.intercept.abs() < 1e-12);
    }

    #[test]
    fn heavy_penalty_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x: Vec<Vec<f64>> = (0..20).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = ridge_fit(&x, &y, 1e9).unwrap();
        let norm = m.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "{norm}");
    }

    #[test]
    fn singular_cases() {
        let x = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]];
        assert!(matches!(ridge_fit(&x, &[1.0, 2.0, 3.0], 0.0), Err(Error::Singular(_))));
        assert!(ridge_fit(&x, &[1.0, 2.0, 3.0], 0.1).is_ok());
        let wide = vec![vec![1.0, 2.0, 3.0]];
        assert!(matches!(ridge_fit(&wide, &[1.0], 0.0), Err(Error::Singular(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let x = vec![vec![1.0, 0.5], vec![2.0, -1.0], vec![3.0, 0.0]];
        let m = ridge_fit(&x, &[1.0, 2.0, 2.5], 0.3).unwrap();
        let back = RidgeModel::from_checkpoint(Checkpoint::from_bytes(&m.to_checkpoint().unwrap().to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
