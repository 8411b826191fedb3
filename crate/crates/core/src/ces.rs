//! CES aggregate of capital and labor used as the homothetic index.

/// `v = (1/rho) log(alpha e^{rho k} + (1-alpha) e^{rho l})`, with the
/// Cobb–Douglas limit `alpha k + (1-alpha) l` for `|rho| < 1e-8`.
///
/// Evaluated around the Cobb–Douglas point so that no large exponentials
/// are formed and the first-order terms cancel analytically.
pub fn ces_index(k: f64, l: f64, alpha: f64, rho_v: f64) -> f64 {
    let mu = alpha * k + (1.0 - alpha) * l;
    if rho_v.abs() < 1e-8 {
        return mu;
    }
    let d = k - l;
    let a = rho_v * (1.0 - alpha) * d;
    let b = -rho_v * alpha * d;
    if a.abs().max(b.abs()) > 500.0 {
        // log-sum-exp branch for extreme spreads
        let x = rho_v * k + alpha.ln();
        let y = rho_v * l + (1.0 - alpha).ln();
        let (hi, lo) = if x > y { (x, y) } else { (y, x) };
        return (hi + (lo - hi).exp().ln_1p()) / rho_v;
    }
    let s = alpha * a.exp_m1() + (1.0 - alpha) * b.exp_m1();
    mu + s.ln_1p() / rho_v
}

/// Labor level that puts the index at `v` given capital `k`, or `None` when
/// no such level exists.
pub fn ces_labor_for_index(v: f64, k: f64, alpha: f64, rho_v: f64) -> Option<f64> {
    if rho_v.abs() < 1e-8 {
        return Some((v - alpha * k) / (1.0 - alpha));
    }
    // (1-alpha) e^{rho l} = e^{rho v} - alpha e^{rho k}, scaled by e^{-rho v}
    let rest = 1.0 - alpha * (rho_v * (k - v)).exp();
    if rest <= 0.0 || !rest.is_finite() {
        return None;
    }
    Some(v + (rest / (1.0 - alpha)).ln() / rho_v)
}

/// Evaluates the index over paired slices.
pub fn ces_column(k: &[f64], l: &[f64], alpha: f64, rho_v: f64) -> Vec<f64> {
    k.iter()
        .zip(l)
        .map(|(&a, &b)| ces_index(a, b, alpha, rho_v))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_inputs_return_the_common_value() {
        for rho in [-1.0, -0.3, 0.0, 0.3, 1.0] {
            assert!((ces_index(0.7, 0.7, 0.4, rho) - 0.7).abs() < 1e-14);
        }
    }

    #[test]
    fn cobb_douglas_limit() {
        assert_eq!(ces_index(1.0, 2.0, 0.4, 0.0), 1.6);
        assert!((ces_index(1.0, 2.0, 0.4, 1e-9) - 1.6).abs() < 1e-8);
    }

    #[test]
    fn direct_evaluation() {
        let want = (0.4 * 0.3f64.exp() + 0.6).ln() / 0.3;
        assert!((ces_index(1.0, 0.0, 0.4, 0.3) - want).abs() < 1e-14);
    }

    #[test]
    fn continuous_across_the_limit_threshold() {
        let a = ces_index(1.0, 3.0, 0.4, 1.01e-8);
        let b = ces_index(1.0, 3.0, 0.4, 0.99e-8);
        assert!((a - b).abs() < 1e-7);
    }

    #[test]
    fn marginal_rate_of_substitution() {
        let (k, l, alpha, rho) = (1.3, 0.4, 0.4, 0.3);
        let h = 1e-6;
        let vk = (ces_index(k + h, l, alpha, rho) - ces_index(k - h, l, alpha, rho)) / (2.0 * h);
        let vl = (ces_index(k, l + h, alpha, rho) - ces_index(k, l - h, alpha, rho)) / (2.0 * h);
        let want = alpha / (1.0 - alpha) * (rho * (k - l)).exp();
        assert!(((vk / vl) / want - 1.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn translation_homogeneity(
            k in -5.0f64..5.0, l in -5.0f64..5.0, c in -5.0f64..5.0,
            alpha in 0.05f64..0.95, rho in -1.0f64..1.0,
        ) {
            let v = ces_index(k, l, alpha, rho);
            prop_assert!((ces_index(k + c, l + c, alpha, rho) - (v + c)).abs() < 1e-12);
        }

        #[test]
        fn labor_inverse_round_trips(
            k in 0.0f64..3.0, l in 0.0f64..3.0, alpha in 0.1f64..0.9, rho in -1.0f64..1.0,
        ) {
            let v = ces_index(k, l, alpha, rho);
            let back = ces_labor_for_index(v, k, alpha, rho).unwrap();
            prop_assert!((back - l).abs() < 1e-8);
        }
    }
}
