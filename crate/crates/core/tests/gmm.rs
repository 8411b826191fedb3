use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use mfprod::demean;
use mfprod::dgp::{simulate, DgpConfig, DgpId};
use mfprod::gmm::{
    clustered_sandwich, delta_method, firm_averaged_moments, minimize_weighted, two_step,
    two_step_estimate, Block, GmmOptions, GmmResult, MomentModel, MomentSpec,
};
use mfprod::params::{ParamId, ParamVector};

/// `y = x b + u` with instruments `z`, moments averaged within firm.
struct LinearIv {
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    y: DVector<f64>,
    firms: Vec<Range<usize>>,
}

impl MomentModel for LinearIv {
    fn n_moments(&self) -> usize {
        self.z.ncols()
    }
    fn n_firms(&self) -> usize {
        self.firms.len()
    }
    fn blocks(&self) -> Vec<Block> {
        vec![Block::A; self.z.ncols()]
    }
    fn firm_moments(&self, b: &[f64]) -> Option<DMatrix<f64>> {
        let u = &self.y - &self.x * DVector::from_column_slice(b);
        Some(DMatrix::from_fn(
            self.firms.len(),
            self.z.ncols(),
            |g, j| {
                let r = &self.firms[g];
                r.clone().map(|i| self.z[(i, j)] * u[i]).sum::<f64>() / r.len() as f64
            },
        ))
    }
}

/// Balanced design: `x = (1, x1)` with `x1` endogenous, instruments
/// `(1, z1, .., z_extra)`. `invalid` loads the error on the last instrument.
fn design(n_firms: usize, t: usize, extra: usize, invalid: f64, seed: u64) -> LinearIv {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nrm = || -> f64 { StandardNormal.sample(&mut rng) };
    let n = n_firms * t;
    let nz = 1 + extra;
    let z = DMatrix::from_fn(n, 1 + nz, |_, j| if j == 0 { 1.0 } else { nrm() });
    let mut x = DMatrix::zeros(n, 2);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let u = nrm() + invalid * z[(i, nz)];
        let x1 = (1..=nz).map(|j| z[(i, j)]).sum::<f64>() + 0.5 * u;
        x[(i, 0)] = 1.0;
        x[(i, 1)] = x1;
        y[i] = 1.0 + 2.0 * x1 + u;
    }
    let firms = (0..n_firms).map(|g| g * t..(g + 1) * t).collect();
    LinearIv { x, z, y, firms }
}

fn iv_closed_form(m: &LinearIv) -> DVector<f64> {
    (m.z.transpose() * &m.x)
        .lu()
        .solve(&(m.z.transpose() * &m.y))
        .unwrap()
}

#[test]
fn firm_averaged_moments_match_column_means_oracle() {
    let p = simulate(&DgpConfig::new(DgpId::Ar1, 25, 4, 1)).unwrap().0;
    let cp = demean(&p).unwrap();
    let spec = MomentSpec::new(
        Block::A,
        "y",
        |cp, _| cp.data.y.clone(),
        |cp| vec![cp.data.k.clone()],
    );
    let (g, f) = firm_averaged_moments(&[spec], &cp, &ParamVector::default()).unwrap();
    let oracle: f64 = cp
        .data
        .firm_groups()
        .iter()
        .map(|r| r.clone().map(|i| cp.data.k[i] * cp.data.y[i]).sum::<f64>() / r.len() as f64)
        .sum::<f64>()
        / cp.n_firms() as f64;
    assert_eq!(f.nrows(), 25);
    assert!((g[0] - oracle).abs() < 1e-14);
}

#[test]
fn zero_residual_gives_zero_moments() {
    let p = simulate(&DgpConfig::new(DgpId::Ar1, 10, 3, 2)).unwrap().0;
    let cp = demean(&p).unwrap();
    let spec = MomentSpec::new(
        Block::B,
        "zero",
        |cp, _| vec![0.0; cp.n_obs()],
        |cp| vec![cp.data.k.clone(), cp.data.l.clone()],
    );
    let (g, f) = firm_averaged_moments(&[spec], &cp, &ParamVector::default()).unwrap();
    assert!(g.iter().chain(f.iter()).all(|v| *v == 0.0));
}

#[test]
fn just_identified_fit_is_the_exact_iv_solution() {
    let m = design(200, 5, 0, 0.0, 3);
    let fit = two_step(&m, &[0.0, 0.0], &GmmOptions::default()).unwrap();
    let b = iv_closed_form(&m);
    assert!(fit.converged);
    assert_eq!(fit.df, 0);
    assert!((fit.x[0] - b[0]).abs() < 1e-8 && (fit.x[1] - b[1]).abs() < 1e-8);
    assert!(fit.j_stat < 1e-12);
}

#[test]
fn weighting_is_irrelevant_at_just_identification() {
    let m = design(100, 4, 0, 0.0, 4);
    let w = DMatrix::from_row_slice(2, 2, &[3.0, 0.7, 0.7, 0.5]);
    let (a, _, _) = minimize_weighted(
        &m,
        &DMatrix::identity(2, 2),
        &[0.0, 0.0],
        &GmmOptions::default(),
    );
    let (b, _, _) = minimize_weighted(&m, &w, &[0.0, 0.0], &GmmOptions::default());
    assert!((a[0] - b[0]).abs() < 1e-8 && (a[1] - b[1]).abs() < 1e-8);
}

#[test]
fn j_statistic_grows_with_sample_size_under_misspecification() {
    let small = two_step(
        &design(200, 5, 2, 0.5, 5),
        &[0.0, 0.0],
        &GmmOptions::default(),
    )
    .unwrap();
    let large = two_step(
        &design(1600, 5, 2, 0.5, 5),
        &[0.0, 0.0],
        &GmmOptions::default(),
    )
    .unwrap();
    assert_eq!(small.df, 2);
    // Expected ratio is 8; allow sampling noise.
    assert!(
        large.j_stat > 4.0 * small.j_stat,
        "{} vs {}",
        large.j_stat,
        small.j_stat
    );
    assert!(small.j_stat > 10.0);
}

#[test]
fn j_statistic_is_small_under_correct_specification() {
    let fit = two_step(
        &design(400, 5, 2, 0.0, 6),
        &[0.0, 0.0],
        &GmmOptions::default(),
    )
    .unwrap();
    // chi-squared(2): exceeding 18 has probability about 1e-4.
    assert!(fit.j_stat < 18.0);
}

#[test]
fn doubling_the_outcome_scales_covariance_by_four() {
    let m = design(150, 4, 1, 0.0, 7);
    let fit1 = two_step(&m, &[0.0, 0.0], &GmmOptions::default()).unwrap();
    let m2 = LinearIv { y: &m.y * 2.0, ..m };
    let fit2 = two_step(&m2, &[0.0, 0.0], &GmmOptions::default()).unwrap();
    for i in 0..2 {
        assert!((fit2.x[i] - 2.0 * fit1.x[i]).abs() < 1e-7);
        for j in 0..2 {
            let (a, b) = (fit1.vcov[(i, j)], fit2.vcov[(i, j)]);
            assert!((b - 4.0 * a).abs() <= 1e-5 * a.abs().max(1e-8), "{a} {b}");
        }
    }
}

#[test]
fn optimizer_output_is_deterministic() {
    let m = design(120, 4, 2, 0.2, 8);
    let a = two_step(&m, &[0.1, 0.1], &GmmOptions::default()).unwrap();
    let b = two_step(&m, &[0.1, 0.1], &GmmOptions::default()).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.vcov, b.vcov);
    assert_eq!(a.j_stat.to_bits(), b.j_stat.to_bits());
}

#[test]
fn rejects_underidentified_and_non_finite_starts() {
    let m = design(20, 3, 0, 0.0, 9);
    assert!(two_step(&m, &[0.0, 0.0, 0.0], &GmmOptions::default()).is_err());
    assert!(two_step(&m, &[f64::NAN, 0.0], &GmmOptions::default()).is_err());
}

fn beta_m_spec() -> MomentSpec {
    MomentSpec::new(
        Block::A,
        "y-bm*m",
        |cp, th| {
            cp.data
                .y
                .iter()
                .zip(&cp.data.m)
                .map(|(y, m)| y - th.beta_m * m)
                .collect()
        },
        |cp| vec![cp.data.m.clone()],
    )
}

fn beta_m_fit() -> (mfprod::CenteredPanel, GmmResult) {
    let p = simulate(&DgpConfig::new(DgpId::Ar1, 60, 5, 10)).unwrap().0;
    let cp = demean(&p).unwrap();
    let r = two_step_estimate(
        &[beta_m_spec()],
        &cp,
        &ParamVector::default(),
        &[ParamId::BetaM],
    )
    .unwrap();
    (cp, r)
}

#[test]
fn spec_model_matches_clustered_ols_oracle() {
    let (cp, r) = beta_m_fit();
    let d = &cp.data;
    let b = d.y.iter().zip(&d.m).map(|(y, m)| y * m).sum::<f64>()
        / d.m.iter().map(|m| m * m).sum::<f64>();
    assert!((r.theta_hat.beta_m - b).abs() < 1e-9);

    // V = Sigma / (N G^2) with G = -mean_j(avg m^2), Sigma = mean_j(g_j^2).
    let groups = d.firm_groups();
    let n = groups.len() as f64;
    let g: f64 = -groups
        .iter()
        .map(|rg| rg.clone().map(|i| d.m[i] * d.m[i]).sum::<f64>() / rg.len() as f64)
        .sum::<f64>()
        / n;
    let sigma: f64 = groups
        .iter()
        .map(|rg| {
            (rg.clone()
                .map(|i| d.m[i] * (d.y[i] - b * d.m[i]))
                .sum::<f64>()
                / rg.len() as f64)
                .powi(2)
        })
        .sum::<f64>()
        / n;
    let v = sigma / (n * g * g);
    assert!((r.vcov[(0, 0)] - v).abs() < 1e-6 * v);
    let cs = clustered_sandwich(
        &[beta_m_spec()],
        &cp,
        &r.theta_hat,
        &[ParamId::BetaM],
        &DMatrix::identity(1, 1),
        1e-6,
    )
    .unwrap();
    assert!((cs[(0, 0)] - v).abs() < 1e-6 * v);
}

#[test]
fn delta_method_selector_and_scaling() {
    let (_, r) = beta_m_fit();
    let (vals, ses) = delta_method(|t| vec![t.beta_m], &r).unwrap();
    assert_eq!(vals[0], r.theta_hat.beta_m);
    assert!((ses[0] - r.se(ParamId::BetaM).unwrap()).abs() < 1e-8 * ses[0]);
    let (_, ses2) = delta_method(|t| vec![2.0 * t.beta_m], &r).unwrap();
    assert!((ses2[0] - 2.0 * ses[0]).abs() < 1e-7 * ses[0]);
    assert_eq!(r.se(ParamId::BetaK), None);
}
