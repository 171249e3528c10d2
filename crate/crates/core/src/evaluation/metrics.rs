//! Regression metrics and target standardization.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and sample standard deviation of one trait on a fitting split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
            return Err(Error::invalid(format!("standardizer needs finite mean and positive std, got ({mean}, {std})")));
        }
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub fn apply_all(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().map(|&v| self.apply(v)).collect()
    }

    pub fn invert_all(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| self.invert(v)).collect()
    }
}

pub fn zscore_fit(values: &[f64]) -> Result<Standardizer> {
    if values.len() < 2 {
        return Err(Error::invalid("standardization needs at least two values"));
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64;
    if var == 0.0 {
        return Err(Error::invalid("zero variance in standardization targets"));
    }
    Standardizer::new(m, var.sqrt())
}

pub fn zscore_apply(s: &Standardizer, raw: &[f64]) -> Vec<f64> {
    s.apply_all(raw)
}

pub fn zscore_invert(s: &Standardizer, z: &[f64]) -> Vec<f64> {
    s.invert_all(z)
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    crate::seq_head::loss_mse(yhat, y)
}

/// Coefficient of determination with `SS_tot` taken about `mean(y)`.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() < 2 {
        return Err(Error::invalid("R² needs at least two observations"));
    }
    r2_about(y, yhat, mean(y))
}

/// R² with `SS_tot` taken about an external reference mean (e.g. the
/// training-split mean).
pub fn r2_about(y: &[f64], yhat: &[f64], reference: f64) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::Shape(format!("{} targets vs {} predictions", y.len(), yhat.len())));
    }
    if y.is_empty() {
        return Err(Error::invalid("R² of an empty set"));
    }
    let ss_tot: f64 = y.iter().map(|v| (v - reference) * (v - reference)).sum();
    if ss_tot == 0.0 {
        return Err(Error::invalid("constant targets: R² undefined"));
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Sample Pearson correlation and its two-sided p-value from the
/// t-statistic on `n − 2` degrees of freedom.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} observations", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::invalid("Pearson correlation needs at least three observations"));
    }
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(x) || constant(y) {
        return Err(Error::invalid("constant input: correlation undefined"));
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("constant input: correlation undefined"));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::invalid(e.to_string()))?;
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok((r, p))
}

/// Sample standard deviation (n − 1); zero for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn mean_of(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        mean(xs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zscore_small() {
        let s = zscore_fit(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        let z = zscore_apply(&s, &[1.0, 2.0, 3.0]);
        assert_eq!(zscore_invert(&s, &z), vec![1.0, 2.0, 3.0]);
        assert!(zscore_fit(&[4.0, 4.0]).is_err());
        assert!(zscore_fit(&[4.0]).is_err());
    }

    #[test]
    fn neuroticism_mean_maps_to_zero() {
        let s = Standardizer::new(72.97, 21.7).unwrap();
        assert_eq!(s.apply(72.97), 0.0);
    }

    #[test]
    fn r2_cases() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
        assert_eq!(r2(&y, &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert!((r2(&y, &[1.0, 2.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(r2(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pearson_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let (r, p) = pearson_r(&x, &[2.0, 4.0, 6.0, 8.0]).unwrap();
        assert_eq!((r, p), (1.0, 0.0));
        let (r, _) = pearson_r(&x, &[-1.0, -2.0, -3.0, -4.0]).unwrap();
        assert_eq!(r, -1.0);
        let (r, p) = pearson_r(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
        // t = 0.5·sqrt(1/0.75) on 1 df: p = 1 - (2/π)·atan(t)
        let t: f64 = 0.5 / 0.75f64.sqrt();
        let p_exact = 1.0 - 2.0 / std::f64::consts::PI * t.atan();
        assert!((p - p_exact).abs() < 1e-9, "{p} vs {p_exact}");
        assert!(pearson_r(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    proptest! {
        #[test]
        fn zscore_round_trip(values in proptest::collection::vec(-300.0f64..300.0, 2..40)) {
            prop_assume!(values.iter().any(|&v| (v - values[0]).abs() > 1e-6));
            let s = zscore_fit(&values).unwrap();
            let z = zscore_apply(&s, &values);
            prop_assert!(mean(&z).abs() < 1e-12);
            for (a, b) in zscore_invert(&s, &z).iter().zip(&values) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }

        #[test]
        fn r2_matches_mse_identity(y in proptest::collection::vec(-5.0f64..5.0, 3..30), noise in -1.0f64..1.0) {
            prop_assume!(sample_std(&y) > 1e-3);
            let yhat: Vec<f64> = y.iter().enumerate().map(|(i, v)| v + noise * (i as f64).sin()).collect();
            let n = y.len() as f64;
            let m = mean(&y);
            let var = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            let lhs = r2(&y, &yhat).unwrap();
            let rhs = 1.0 - mse(&y, &yhat).unwrap() / var;
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
