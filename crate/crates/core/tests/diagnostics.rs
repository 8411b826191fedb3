use mfprod::demean;
use mfprod::dgp::{default_truth, simulate, DgpConfig, DgpId, EventDesign, TruthRecord};
use mfprod::diagnostics::{
    chi2_2_sf, did_att, exclusion_recovery, exclusion_regressions, pair_discrepancy,
    wald_statistic, ExclusionCase, Input, WaldPairs,
};
use mfprod::proposed::fit_block_ab;
use mfprod::{Error, Panel};
use nalgebra::DMatrix;

/// Zero shocks and output error; `edit` adjusts the true demand slopes.
fn exact_panel(
    edit: impl Fn(&mut mfprod::params::ParamVector),
) -> (Panel, mfprod::params::ParamVector) {
    let mut cfg = DgpConfig::new(DgpId::Ar1, 60, 6, 11);
    cfg.process.shock_scale = 0.0;
    cfg.process.sigma_eps = 0.0;
    edit(&mut cfg.true_params);
    let th = cfg.true_params.clone();
    (simulate(&cfg).unwrap().0, th)
}

#[test]
fn joint_proxies_recover_primary_elasticities_exactly() {
    let (p, th) = exact_panel(|t| {
        t.gamma_k = 0.0;
        t.gamma_l = 0.0;
        t.delta_k = 0.0;
        t.delta_l = 0.0;
        t.zeta_k = 0.0;
        t.zeta_l = 0.0;
    });
    let cp = demean(&p).unwrap();
    let rec = exclusion_regressions(
        &cp,
        &th.with_basis_dim(cp.basis_dim()),
        ExclusionCase::Joint,
    )
    .unwrap();
    assert_eq!(rec.len(), 3);
    for r in &rec {
        assert_eq!(r.identifies, "kl");
        assert!((r.beta_k - 0.2).abs() < 1e-10, "{r:?}");
        assert!((r.beta_l - 0.3).abs() < 1e-10, "{r:?}");
        assert!((r.beta0 - rec[0].beta0).abs() < 1e-10);
    }
}

#[test]
fn joint_proxy_with_slopes_recovers_net_elasticity() {
    // With demand slopes the joint regression returns beta_k - gamma_k / gamma_omega.
    let (p, th) = exact_panel(|_| {});
    let cp = demean(&p).unwrap();
    let rec = exclusion_regressions(
        &cp,
        &th.with_basis_dim(cp.basis_dim()),
        ExclusionCase::Joint,
    )
    .unwrap();
    assert!((rec[0].beta_k - (0.2 - 0.45 / 2.2)).abs() < 1e-10);
    assert!((rec[1].beta_l - (0.3 - 0.60 / 2.0)).abs() < 1e-10);
}

#[test]
fn marginal_exclusion_recovers_each_elasticity() {
    let (p, th) = exact_panel(|t| {
        t.gamma_k = 0.0;
        t.zeta_l = 0.0;
    });
    let cp = demean(&p).unwrap();
    let case = ExclusionCase::Marginal {
        k_input: Input::M,
        l_input: Input::W,
    };
    let rec = exclusion_regressions(&cp, &th.with_basis_dim(cp.basis_dim()), case).unwrap();
    assert_eq!(rec[0].identifies, "k");
    assert!((rec[0].beta_k - 0.2).abs() < 1e-10);
    assert_eq!(rec[1].identifies, "l");
    assert!((rec[1].beta_l - 0.3).abs() < 1e-10);
}

#[test]
fn marginal_exclusion_with_noise_is_close() {
    let mut cfg = DgpConfig::new(DgpId::Ar1, 300, 10, 12);
    cfg.true_params.gamma_k = 0.0;
    let th = cfg.true_params.clone();
    let p = simulate(&cfg).unwrap().0;
    let cp = demean(&p).unwrap();
    let case = ExclusionCase::Marginal {
        k_input: Input::M,
        l_input: Input::W,
    };
    let rec = exclusion_regressions(&cp, &th.with_basis_dim(cp.basis_dim()), case).unwrap();
    assert!(
        (rec[0].beta_k - 0.2).abs() < 4.0 * rec[0].se_k + 0.01,
        "{:?}",
        rec[0]
    );
}

#[test]
fn marginal_exclusion_needs_distinct_inputs() {
    let (p, th) = exact_panel(|_| {});
    let cp = demean(&p).unwrap();
    let case = ExclusionCase::Marginal {
        k_input: Input::E,
        l_input: Input::E,
    };
    assert!(matches!(
        exclusion_regressions(&cp, &th.with_basis_dim(cp.basis_dim()), case),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn proxy_needs_a_productivity_loading() {
    let (p, mut th) = exact_panel(|_| {});
    th.delta_omega = 0.0;
    let cp = demean(&p).unwrap();
    assert!(matches!(
        exclusion_regressions(
            &cp,
            &th.with_basis_dim(cp.basis_dim()),
            ExclusionCase::Joint
        ),
        Err(Error::Degenerate(_))
    ));
}

#[test]
fn pair_discrepancy_vanishes_for_equal_ratios() {
    let mut th = default_truth();
    th.delta_k = th.gamma_k / th.gamma_omega * th.delta_omega;
    th.delta_l = th.gamma_l / th.gamma_omega * th.delta_omega;
    let (dk, dl) = pair_discrepancy(&th, Input::M, Input::E);
    assert!(dk.abs() < 1e-15 && dl.abs() < 1e-15);
    let (dk, _) = pair_discrepancy(&default_truth(), Input::M, Input::E);
    assert!((dk - (0.40 / 2.0 - 0.45 / 2.2)).abs() < 1e-15);
    let (a, b) = pair_discrepancy(&default_truth(), Input::E, Input::M);
    assert!((a + dk).abs() < 1e-15 && b.is_finite());
}

#[test]
fn wald_statistic_and_p_value() {
    let v = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
    assert!((wald_statistic(&[2.0, 1.0], &v).unwrap() - 2.0).abs() < 1e-14);
    assert!((chi2_2_sf(2.0) - (-1.0f64).exp()).abs() < 1e-15);
    assert_eq!(chi2_2_sf(0.0), 1.0);
    assert!((chi2_2_sf(5.991464547107979) - 0.05).abs() < 1e-12);
    assert!(wald_statistic(&[1.0, 1.0], &DMatrix::zeros(2, 2)).is_err());
}

#[test]
fn exclusion_recovery_reports_three_pairs() {
    let p = simulate(&DgpConfig::new(DgpId::Ar1, 200, 10, 13))
        .unwrap()
        .0;
    let cp = demean(&p).unwrap();
    let ab = fit_block_ab(&cp).unwrap();
    let rec = exclusion_recovery(&cp, &ab, ExclusionCase::Joint, WaldPairs::default()).unwrap();
    assert_eq!(rec.pairs.len(), 3);
    assert_eq!(rec.wald_df, 2);
    assert!(rec.wald_stat >= 0.0 && (0.0..=1.0).contains(&rec.wald_p));
    assert!(rec.pairs.iter().all(|d| d.se_k > 0.0 && d.se_l > 0.0));
}

fn event_panel(seed: u64, effect: bool) -> (Panel, TruthRecord) {
    let mut cfg = DgpConfig::new(DgpId::PotentialOutcome, 400, 10, seed);
    cfg.process.event = Some(EventDesign {
        treat_share: 0.5,
        treat_start: 5,
        effect,
    });
    simulate(&cfg).unwrap()
}

fn group_means(p: &Panel, y: &[f64], start: i64) -> [[f64; 2]; 2] {
    let d = p.d.as_ref().unwrap();
    let treated: Vec<bool> = p
        .firm_groups()
        .iter()
        .map(|r| r.clone().any(|i| d[i] > 0.5))
        .collect();
    let mut sum = [[0.0; 2]; 2];
    let mut cnt = [[0.0; 2]; 2];
    for (g, r) in p.firm_groups().iter().enumerate() {
        for i in r.clone() {
            let (a, b) = (treated[g] as usize, (p.year[i] >= start) as usize);
            sum[a][b] += y[i];
            cnt[a][b] += 1.0;
        }
    }
    [
        [sum[0][0] / cnt[0][0], sum[0][1] / cnt[0][1]],
        [sum[1][0] / cnt[1][0], sum[1][1] / cnt[1][1]],
    ]
}

#[test]
fn did_equals_difference_of_means_on_a_balanced_panel() {
    let (p, truth) = event_panel(14, true);
    let start = p.year[5];
    let r = did_att(&truth.omega, &p, start, 0).unwrap();
    let m = group_means(&p, &truth.omega, start);
    let oracle = (m[1][1] - m[1][0]) - (m[0][1] - m[0][0]);
    assert!(
        (r.att_hat - oracle).abs() < 1e-10,
        "{} vs {oracle}",
        r.att_hat
    );
    assert!(!r.used_poly_kl);
    assert_eq!(r.n_treated + r.n_control, 400);
}

#[test]
fn did_tracks_the_sample_treatment_effect() {
    let (p, truth) = event_panel(15, true);
    let start = p.year[5];
    let r = did_att(&truth.omega, &p, start, 0).unwrap();
    let (o0, o1, d) = (
        truth.omega0.as_ref().unwrap(),
        truth.omega1.as_ref().unwrap(),
        p.d.as_ref().unwrap(),
    );
    let eff: Vec<f64> = (0..p.n_obs())
        .filter(|&i| d[i] > 0.5)
        .map(|i| o1[i] - o0[i])
        .collect();
    let att = eff.iter().sum::<f64>() / eff.len() as f64;
    assert!(
        (r.att_hat - att).abs() < 4.0 * r.se,
        "{} vs {att} (se {})",
        r.att_hat,
        r.se
    );
    assert!(r.att_hat / r.se > 3.0);
}

#[test]
fn placebo_treatment_has_no_effect() {
    let (p, truth) = event_panel(16, false);
    let (o0, o1) = (
        truth.omega0.as_ref().unwrap(),
        truth.omega1.as_ref().unwrap(),
    );
    assert_eq!(o0, o1);
    let r = did_att(&truth.omega, &p, p.year[5], 0).unwrap();
    assert!(r.att_hat.abs() < 4.0 * r.se, "{} (se {})", r.att_hat, r.se);
}

#[test]
fn did_input_errors() {
    let (p, truth) = event_panel(17, true);
    assert!(did_att(&truth.omega[1..], &p, p.year[5], 0).is_err());
    assert!(did_att(&truth.omega, &p, 1000, 0).is_err());
    assert!(did_att(&truth.omega, &p, -1000, 0).is_err());
    let mut nod = p.clone();
    nod.d = None;
    assert!(did_att(&truth.omega, &nod, p.year[5], 0).is_err());
}
