use proptest::prelude::*;

use mfprod::ces::{ces_column, ces_index};
use mfprod::demean;
use mfprod::dgp::{default_truth, simulate, DgpConfig, DgpId, EventDesign};
use mfprod::diagnostics::{did_att, pair_discrepancy, Input};
use mfprod::params::ParamVector;
use mfprod::proposed::{ab_moments_unnormalized, CurvatureInstrument};
use mfprod::residuals::residuals;
use mfprod::{CenteredPanel, Panel};

fn panel(seed: u64) -> Panel {
    simulate(&DgpConfig::new(DgpId::Ar1, 40, 6, seed))
        .unwrap()
        .0
}

/// Output net of each proxy: `y~ - h~/a_omega` for the three inputs.
fn proxy_errors(cp: &CenteredPanel, th: &ParamVector) -> Vec<f64> {
    let r = residuals(cp, th, false).unwrap();
    let mut out = Vec::new();
    for (h, a) in [
        (&r.m_tilde, th.gamma_omega),
        (&r.e_tilde, th.delta_omega),
        (&r.w_tilde, th.zeta_omega),
    ] {
        out.extend(r.y_tilde.iter().zip(h).map(|(y, v)| y - v / a));
    }
    out
}

/// Omega-free Block A errors `delta m~ - gamma e~` and `zeta m~ - gamma w~`.
fn block_a_errors(cp: &CenteredPanel, th: &ParamVector) -> Vec<f64> {
    let r = residuals(cp, th, false).unwrap();
    let mut out: Vec<f64> = r
        .m_tilde
        .iter()
        .zip(&r.e_tilde)
        .map(|(m, e)| th.delta_omega * m - th.gamma_omega * e)
        .collect();
    out.extend(
        r.m_tilde
            .iter()
            .zip(&r.w_tilde)
            .map(|(m, w)| th.zeta_omega * m - th.gamma_omega * w),
    );
    out
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn perturbed_truth(cp: &CenteredPanel, jitter: f64) -> ParamVector {
    let mut th = default_truth().with_basis_dim(cp.basis_dim());
    th.beta_m += 0.1 * jitter;
    th.gamma_omega *= 1.0 + 0.2 * jitter;
    th.zeta_k -= 0.3 * jitter;
    th
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn location_shift_leaves_errors_and_moments_unchanged(
        seed in 0u64..1000,
        ck in -2.0f64..2.0,
        cl in -2.0f64..2.0,
        jitter in -1.0f64..1.0,
    ) {
        let cp = demean(&panel(seed)).unwrap();
        let th = perturbed_truth(&cp, jitter);
        let sh = th.shifted_kl(ck, cl);
        prop_assert!(max_diff(&proxy_errors(&cp, &th), &proxy_errors(&cp, &sh)) < 1e-10);
        prop_assert!(max_diff(&block_a_errors(&cp, &th), &block_a_errors(&cp, &sh)) < 1e-10);
        for curv in [CurvatureInstrument::Off, CurvatureInstrument::Fitted(4), CurvatureInstrument::Monomials(3)] {
            let g0 = ab_moments_unnormalized(&cp, &th, curv).unwrap();
            let g1 = ab_moments_unnormalized(&cp, &sh, curv).unwrap();
            prop_assert!(max_diff(g0.as_slice(), g1.as_slice()) < 1e-10);
        }
        for (a, b) in [(Input::M, Input::E), (Input::M, Input::W), (Input::E, Input::W)] {
            let (k0, l0) = pair_discrepancy(&th, a, b);
            let (k1, l1) = pair_discrepancy(&sh, a, b);
            prop_assert!((k0 - k1).abs() < 1e-10 && (l0 - l1).abs() < 1e-10);
        }
    }

    #[test]
    fn ces_translation_homogeneity(
        k in -5.0f64..5.0,
        l in -5.0f64..5.0,
        c in -5.0f64..5.0,
        alpha in 0.01f64..0.99,
        rho_v in -2.0f64..2.0,
    ) {
        prop_assert!((ces_index(k + c, l + c, alpha, rho_v) - ces_index(k, l, alpha, rho_v) - c).abs() < 1e-12);
    }

    #[test]
    fn ces_mrs_matches_closed_form(
        k in -2.0f64..2.0,
        l in -2.0f64..2.0,
        alpha in 0.05f64..0.95,
        rho_v in -1.0f64..1.0,
    ) {
        let h = 1e-6;
        let vk = (ces_index(k + h, l, alpha, rho_v) - ces_index(k - h, l, alpha, rho_v)) / (2.0 * h);
        let vl = (ces_index(k, l + h, alpha, rho_v) - ces_index(k, l - h, alpha, rho_v)) / (2.0 * h);
        let closed = alpha / (1.0 - alpha) * (rho_v * (k - l)).exp();
        prop_assert!(((vk / vl) - closed).abs() <= 1e-6 * closed);
    }

    #[test]
    fn did_absorbs_linear_kl_shift(seed in 0u64..200, ck in -1.0f64..1.0, cl in -1.0f64..1.0) {
        let mut cfg = DgpConfig::new(DgpId::PotentialOutcome, 40, 8, seed);
        cfg.process.event = Some(EventDesign { treat_share: 0.5, treat_start: 4, effect: true });
        let (p, truth) = simulate(&cfg).unwrap();
        let shifted: Vec<f64> = (0..p.n_obs()).map(|i| truth.omega[i] + ck * p.k[i] + cl * p.l[i]).collect();
        let start = p.year[4];
        for degree in 1..=3 {
            let a = did_att(&truth.omega, &p, start, degree).unwrap();
            let b = did_att(&shifted, &p, start, degree).unwrap();
            prop_assert!((a.att_hat - b.att_hat).abs() < 1e-8);
        }
    }
}

#[test]
fn cobb_douglas_limit_of_the_index() {
    for rv in [1e-9, -1e-9, 0.0] {
        let v = ces_column(&[1.0], &[2.0], 0.4, rv);
        assert!((v[0] - 1.6).abs() < 1e-8);
    }
    let direct = (1.0 / 0.3) * (0.4 * 0.3f64.exp() + 0.6).ln();
    assert!((ces_index(1.0, 0.0, 0.4, 0.3) - direct).abs() < 1e-14);
}

#[test]
fn block_a_error_has_no_productivity_term() {
    // Zero shocks: the Block A errors vanish identically at the truth even
    // though productivity varies.
    let mut cfg = DgpConfig::new(DgpId::Ar1, 30, 5, 9);
    cfg.process.shock_scale = 0.0;
    let (p, _) = simulate(&cfg).unwrap();
    let cp = demean(&p).unwrap();
    let th = default_truth().with_basis_dim(cp.basis_dim());
    assert!(block_a_errors(&cp, &th).iter().all(|u| u.abs() < 1e-10));
}
