use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{AnalysisError, Result};

/// Product-moment correlation with its degrees of freedom and two-sided p.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub df: usize,
    pub p: f64,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(AnalysisError::Shape {
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(AnalysisError::TooFew { needed: 3, got: n });
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(AnalysisError::Degenerate);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = n - 2;
    Ok(Correlation {
        r,
        df,
        p: two_sided_p(r, df),
    })
}

/// P(|T| >= |t|) for t = r·sqrt(df / (1 − r²)) under Student's t with `df`
/// degrees of freedom, written as I_{df/(df+t²)}(df/2, 1/2).
fn two_sided_p(r: f64, df: usize) -> f64 {
    let one_minus = 1.0 - r * r;
    if one_minus <= 0.0 {
        return 0.0;
    }
    let df = df as f64;
    let t2 = r * r * df / one_minus;
    beta_reg(df / 2.0, 0.5, df / (df + t2))
}

pub fn mean(x: &[f64]) -> Option<f64> {
    (!x.is_empty()).then(|| x.iter().sum::<f64>() / x.len() as f64)
}

/// Linear-interpolated quantile of sorted data, q in [0, 1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_series() {
        let x = [1.0, 2.0, 5.0, 7.0];
        let c = pearson(&x, &x).unwrap();
        assert_eq!(c.r, 1.0);
        assert_eq!(c.p, 0.0);
        assert_eq!(c.df, 2);
    }

    #[test]
    fn hand_example() {
        let c = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((c.r - 0.6).abs() < 1e-12);
        // t = 0.6·sqrt(2/0.64) = 1.0607; two-sided p for df 2 is 0.4
        assert!((c.p - 0.4).abs() < 1e-9, "{}", c.p);
    }

    #[test]
    fn zero_covariance() {
        let c = pearson(&[-1.0, 0.0, 1.0, 0.0], &[0.0, 1.0, 0.0, -1.0]).unwrap();
        assert!(c.r.abs() < 1e-15);
        assert!((c.p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn undefined_cases() {
        assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(AnalysisError::Degenerate)));
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(AnalysisError::TooFew { .. })));
    }

    #[test]
    fn quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&s, 0.5), Some(3.0));
        assert_eq!(quantile_sorted(&s, 0.125), Some(1.5));
    }

    proptest! {
        #[test]
        fn affine_maps_give_unit_correlation(
            x in proptest::collection::vec(-100.0f64..100.0, 3..40),
            a in 0.01f64..50.0,
            b in -100.0f64..100.0,
            negate in any::<bool>(),
        ) {
            let mx = x.iter().sum::<f64>() / x.len() as f64;
            prop_assume!(x.iter().any(|v| (v - mx).abs() > 1e-3));
            let a = if negate { -a } else { a };
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let c = pearson(&x, &y).unwrap();
            let want = if negate { -1.0 } else { 1.0 };
            prop_assert!((c.r - want).abs() < 1e-9);
        }
    }
}
