//! End-to-end acceptance checks. Each test prints exactly one PASS/FAIL
//! line; a FAIL line is followed by the assertion failure so the suite
//! reports which property broke.

use std::process::Command;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use hqnsim::autoencoder::{gradcheck_architecture, Activation, AeParams, GRADCHECK_ARCHITECTURES};
use hqnsim::capacity::{
    capacity_estimate, cross_entropy_mc, dagmm_noise_model, entropy_mc, snr_sweep, Method,
    SweepScenario,
};
use hqnsim::config::RunConfig;
use hqnsim::dagmm::{
    adjusted_rand_index, fit_dagmm, latent_block_gradient, latent_responsibilities,
    update_latent_codes, DagmmArch, DagmmHyper, DagmmState,
};
use hqnsim::datagen::gen_cluster3d;
use hqnsim::gmm::{self, fit_em, mixture_moments, pdf_raw, EmOptions, GaussianComponent, GmmModel};
use hqnsim::noise::{hqn_gmm_1d, sample_hqn, ChannelConfig, HqnParams};
use hqnsim::rng::{derive_seed, rng_from};

/// Print the one-line verdict, then fail the test if the check did not hold.
fn check(num: u32, desc: &str, pass: bool) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("{verdict}: criterion {num:02} — {desc}");
    assert!(pass, "criterion {num:02} failed: {desc}");
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_hqnsim")
}

fn tmp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("hqnsim-acc-{}-{tag}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn comp1(weight: f64, mean: f64, var: f64) -> GaussianComponent {
    GaussianComponent {
        weight,
        mean: DVector::from_element(1, mean),
        covariance: DMatrix::from_element(1, 1, var),
    }
}

fn default_noise() -> HqnParams {
    HqnParams {
        lambda: 3.0,
        r_max: 6,
        mu_cl: 0.0,
        sigma_cl: 1.0,
    }
}

fn bench_noise() -> HqnParams {
    HqnParams {
        lambda: 0.3,
        r_max: 4,
        mu_cl: 0.0,
        sigma_cl: 0.2,
    }
}

#[test]
fn criterion_01_truncated_poisson_mass() {
    let mass = default_noise().truncated_mass();
    check(
        1,
        "truncated Poisson mass at lambda=3, R=6 equals 0.96649 within 5e-4",
        (mass - 0.96649).abs() <= 5e-4,
    );
}

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, intervals: usize) -> f64 {
    assert!(intervals % 2 == 0);
    let h = (b - a) / intervals as f64;
    let mut acc = f(a) + f(b);
    for j in 1..intervals {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * j as f64);
    }
    acc * h / 3.0
}

#[test]
fn criterion_02_density_quadrature_matches_truncated_mass() {
    let mut rng = rng_from(0x0202);
    let mut pass = true;
    for _ in 0..20 {
        let params = HqnParams {
            lambda: rng.gen_range(0.2..4.0),
            r_max: rng.gen_range(1..=7),
            mu_cl: rng.gen_range(-2.0..2.0),
            sigma_cl: rng.gen_range(0.3..1.5),
        };
        let model = hqn_gmm_1d(&params).unwrap();
        let a = params.mu_cl - 12.0 * params.sigma_cl;
        let b = params.mu_cl + params.r_max as f64 + 12.0 * params.sigma_cl;
        let integral = simpson(
            |x| pdf_raw(&model, &DVector::from_element(1, x)).unwrap(),
            a,
            b,
            40_000,
        );
        pass &= (integral - params.truncated_mass()).abs() <= 1e-6;
    }
    check(
        2,
        "1-D noise density integrates to the truncated mass within 1e-6 on 20 random parameter sets",
        pass,
    );
}

#[test]
fn criterion_03_em_loglik_monotone() {
    let mut pass = true;
    for seed in 0..100u64 {
        let ds = gen_cluster3d(3, 300, 0.5, &bench_noise(), seed).unwrap();
        let (_, trace) = fit_em(
            &ds.data,
            3,
            &EmOptions {
                seed: derive_seed(seed, 7),
                ..Default::default()
            },
        )
        .unwrap();
        pass &= trace.loglik.windows(2).all(|w| w[1] - w[0] >= -1e-9);
    }
    check(
        3,
        "log-likelihood nondecreasing (slack 1e-9) in 100 seeded EM runs",
        pass,
    );
}

#[test]
fn criterion_04_em_recovers_three_means() {
    let generator = GmmModel::new(
        vec![
            comp1(1.0 / 3.0, 0.0, 0.25),
            comp1(1.0 / 3.0, 5.0, 0.25),
            comp1(1.0 / 3.0, 10.0, 0.25),
        ],
        true,
    )
    .unwrap();
    let mut hits = 0;
    for seed in 0..100u64 {
        let data = gmm::sample(&generator, 5000, derive_seed(seed, 1)).unwrap();
        let (model, _) = fit_em(
            &data,
            3,
            &EmOptions {
                seed: derive_seed(seed, 2),
                ..Default::default()
            },
        )
        .unwrap();
        let mut means: Vec<f64> = model.components.iter().map(|c| c.mean[0]).collect();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Sorted order is the optimal matching in one dimension.
        let ok = (means[0]).abs() <= 0.1 && (means[1] - 5.0).abs() <= 0.1 && (means[2] - 10.0).abs() <= 0.1;
        if ok {
            hits += 1;
        }
    }
    check(
        4,
        "EM recovers means 0/5/10 within 0.1 in at least 95/100 seeds",
        hits >= 95,
    );
}

#[test]
fn criterion_05_gradient_fidelity() {
    let mut pass = true;
    for arch in GRADCHECK_ARCHITECTURES {
        let err = gradcheck_architecture(arch, 0x0505).unwrap();
        pass &= err < 1e-4;
    }
    let out = tmp_dir("gradcheck");
    let status = Command::new(bin())
        .args(["gradcheck", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    pass &= status.code() == Some(0);
    check(
        5,
        "backprop matches central differences below 1e-4 on all test architectures and the CLI self-check exits 0",
        pass,
    );
}

#[test]
fn criterion_06_latent_update_stationarity() {
    let mut rng = rng_from(0x0606);
    let mut pass = true;
    for t in 0..50u64 {
        let d_lat = 1 + (t % 2) as usize;
        let ae = AeParams::new_random(&[2, 4, d_lat], Activation::Tanh, derive_seed(0x0606, t))
            .unwrap();
        let n = 8;
        let data = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        let latent_codes = DMatrix::from_fn(n, d_lat, |_, _| rng.gen_range(-1.0..1.0));
        let duals = DMatrix::from_fn(n, d_lat, |_, _| rng.gen_range(-0.5..0.5));
        let comps = (0..3)
            .map(|_| GaussianComponent {
                weight: 1.0 / 3.0,
                mean: DVector::from_fn(d_lat, |_, _| rng.gen_range(-1.0..1.0)),
                covariance: DMatrix::from_diagonal(&DVector::from_fn(d_lat, |_, _| {
                    rng.gen_range(0.3..2.0)
                })),
            })
            .collect();
        let state = DagmmState {
            ae,
            latent_codes,
            duals,
            latent_gmm: GmmModel::new(comps, true).unwrap(),
            hyper: DagmmHyper {
                lambda_tilde: rng.gen_range(0.05..2.0),
                rho_tilde: rng.gen_range(0.2..2.0),
                r_count: 3,
                ..Default::default()
            },
        };
        let resp = latent_responsibilities(&state).unwrap();
        let codes = update_latent_codes(&state, &data, &resp).unwrap();
        for i in 0..n {
            let grad = latent_block_gradient(&state, &data, &resp, &codes, i).unwrap();
            pass &= grad.norm() < 1e-8;
        }
    }
    check(
        6,
        "analytic gradient vanishes (norm < 1e-8) at the closed-form latent update on 50 random instances",
        pass,
    );
}

#[test]
fn criterion_07_entropy_calibration() {
    const GAUSS_ENTROPY: f64 = 1.418_938_533_2; // 0.5 ln(2*pi*e)
    let std_normal = GmmModel::new(vec![comp1(1.0, 0.0, 1.0)], true).unwrap();
    let e1 = entropy_mc(&std_normal, 200_000, 0x0701).unwrap();
    let far = GmmModel::new(vec![comp1(0.5, 0.0, 1.0), comp1(0.5, 100.0, 1.0)], true).unwrap();
    let e2 = entropy_mc(&far, 200_000, 0x0702).unwrap();
    let pass = (e1.value - GAUSS_ENTROPY).abs() <= 0.01
        && (e2.value - (GAUSS_ENTROPY + std::f64::consts::LN_2)).abs() <= 0.01;
    check(
        7,
        "Monte-Carlo entropy matches the Gaussian and far-separated-mixture closed forms within 0.01 nats",
        pass,
    );
}

fn awgn_scenario(hqn: HqnParams) -> SweepScenario {
    SweepScenario {
        hqn,
        t_coeff: 1.0,
        mu_x: 0.0,
        beta_rec: 1.0,
        fit_samples: 1000,
        r_fit: 3,
        em: EmOptions::default(),
        dagmm_arch: DagmmArch {
            encoder_sizes: vec![1, 4, 1],
            ..Default::default()
        },
        dagmm_hyper: DagmmHyper::default(),
    }
}

#[test]
fn criterion_08_awgn_limit() {
    let hqn = HqnParams {
        lambda: 1e-6,
        r_max: 6,
        mu_cl: 0.0,
        sigma_cl: 1.0,
    };
    let model = hqn_gmm_1d(&hqn).unwrap();
    let config = ChannelConfig {
        t_coeff: 1.0,
        mu_x: 0.0,
        sigma_x: 1.0,
    };
    let cap = capacity_estimate(&config, &model, 200_000, 0x0801).unwrap();
    let mut pass = (cap.bits - 0.5).abs() <= 0.01;
    let grid = [-10.0, -5.0, 0.0, 5.0, 10.0];
    let curve = snr_sweep(&awgn_scenario(hqn), &grid, &[Method::Baseline], 200_000, 0x0802).unwrap();
    for (k, &snr_db) in grid.iter().enumerate() {
        let closed = 0.5 * (1.0 + 10f64.powf(snr_db / 10.0)).log2();
        let rate = curve.cells[0][k].rate_bits.unwrap_or(f64::NAN);
        pass &= (rate - closed).abs() <= 0.02;
    }
    check(
        8,
        "vanishing photon noise reproduces the AWGN capacity at SNR=1 within 0.01 and across the 5-point sweep within 0.02 bits",
        pass,
    );
}

#[test]
fn criterion_09_baseline_sweep_monotone() {
    let cfg = RunConfig::default();
    let scenario = cfg.sweep_scenario(0x0901).unwrap();
    let grid = cfg.sweep.grid_db.clone();
    let curve = snr_sweep(&scenario, &grid, &[Method::Baseline], 200_000, 0x0901).unwrap();
    let rates: Vec<f64> = curve.cells[0]
        .iter()
        .map(|c| c.rate_bits.unwrap_or(f64::NAN))
        .collect();
    let pass = rates.iter().all(|r| r.is_finite())
        && rates.windows(2).all(|w| w[1] >= w[0] - 0.01);
    check(
        9,
        "baseline rate curve on the default scenario is nondecreasing in SNR within 0.01 bits",
        pass,
    );
}

/// Noise for the warped-cluster scenario: a hybrid-noise draw pushed
/// through the same smooth displacement the 3-D generator uses,
/// z = v + 0.5 sin(v).
fn warped_noise(params: &HqnParams, n: usize, seed: u64) -> DMatrix<f64> {
    let v = sample_hqn(params, n, seed).unwrap();
    DMatrix::from_fn(n, 1, |i, _| v[i] + 0.5 * v[i].sin())
}

#[test]
fn criterion_10_low_snr_advantage_on_warped_noise() {
    let base = default_noise();
    let analytic = hqn_gmm_1d(&base).unwrap();
    let (_, var_z) = mixture_moments(&analytic).unwrap();
    let var_z = var_z[(0, 0)];
    let t = 0.7785;
    // Lowest point of the default SNR grid.
    let snr = 10f64.powf(-10.0 / 10.0);
    let config = ChannelConfig {
        t_coeff: t,
        mu_x: 0.0,
        sigma_x: (snr * var_z).sqrt() / t,
    };
    let r = 7;
    let mut rate_wins = 0;
    let mut ce_wins = 0;
    for seed in 0..10u64 {
        let train = warped_noise(&base, 2000, derive_seed(seed, 1));
        let held = warped_noise(&base, 4000, derive_seed(seed, 2));
        let (gmm_model, _) = fit_em(
            &train,
            r,
            &EmOptions {
                seed: derive_seed(seed, 3),
                ..Default::default()
            },
        )
        .unwrap();
        let arch = DagmmArch {
            encoder_sizes: vec![1, 4, 1],
            activation: Activation::Tanh,
            pretrain_epochs: 60,
            pretrain_batch: 64,
            pretrain_step: 0.02,
        };
        let hyper = DagmmHyper {
            r_count: r,
            seed: derive_seed(seed, 4),
            ..Default::default()
        };
        let (state, report) = fit_dagmm(&train, &arch, &hyper).unwrap();
        assert!(report.aborted.is_none(), "dagmm fit aborted at seed {seed}");
        let dag_model = dagmm_noise_model(&state, &train).unwrap();
        let rate_g = capacity_estimate(&config, &gmm_model, 100_000, derive_seed(seed, 5))
            .unwrap()
            .bits;
        let rate_d = capacity_estimate(&config, &dag_model, 100_000, derive_seed(seed, 5))
            .unwrap()
            .bits;
        if rate_d >= rate_g {
            rate_wins += 1;
        }
        let ce_g = cross_entropy_mc(&held, &gmm_model).unwrap().value;
        let ce_d = cross_entropy_mc(&held, &dag_model).unwrap().value;
        if ce_d <= ce_g {
            ce_wins += 1;
        }
    }
    check(
        10,
        &format!(
            "deep-model rate >= EM rate at the lowest SNR point and held-out cross-entropy <= EM in at least 8/10 seeds (rate {rate_wins}/10, cross-entropy {ce_wins}/10)"
        ),
        rate_wins >= 8 && ce_wins >= 8,
    );
}

#[test]
fn criterion_11_clustering_fidelity() {
    let mut hits = 0;
    for seed in 0..10u64 {
        let ds = gen_cluster3d(3, 600, 0.5, &bench_noise(), seed).unwrap();
        let arch = DagmmArch::default();
        let hyper = DagmmHyper {
            r_count: 3,
            seed: derive_seed(seed, 0x11),
            ..Default::default()
        };
        let (_, report) = fit_dagmm(&ds.data, &arch, &hyper).unwrap();
        let truth = ds.labels.unwrap();
        if report.aborted.is_none() && adjusted_rand_index(&report.labels, &truth) >= 0.9 {
            hits += 1;
        }
    }
    check(
        11,
        "deep-model hard labels reach ARI >= 0.9 on the 3-cluster benchmark in at least 8/10 seeds",
        hits >= 8,
    );
}

#[test]
fn criterion_12_byte_reproducibility() {
    let cfg_path = tmp_dir("repro").join("config.json");
    std::fs::write(&cfg_path, r#"{"gen": {"k": 3, "n": 800, "warp": 0.5}}"#).unwrap();
    let dirs = [tmp_dir("repro-a"), tmp_dir("repro-b")];
    let mut pass = true;
    for dir in &dirs {
        let gen = Command::new(bin())
            .args(["gen", "--config"])
            .arg(&cfg_path)
            .args(["--seed", "7", "--no-timestamp", "--out"])
            .arg(dir)
            .status()
            .unwrap();
        pass &= gen.code() == Some(0);
        let fit = Command::new(bin())
            .args(["fit", "--method", "gmm", "--data"])
            .arg(dir.join("dataset.csv"))
            .args(["--seed", "7", "--no-timestamp", "--out"])
            .arg(dir)
            .status()
            .unwrap();
        pass &= fit.code() == Some(0);
    }
    for rel in [
        "dataset.csv",
        "dataset.svg",
        "gmm/model.json",
        "gmm/trace.csv",
        "gmm/labels.csv",
        "gmm/scatter.svg",
    ] {
        let a = std::fs::read(dirs[0].join(rel)).unwrap();
        let b = std::fs::read(dirs[1].join(rel)).unwrap();
        pass &= a == b;
    }
    check(
        12,
        "repeated runs with identical config and seed produce byte-identical CSV, JSON, and timestamp-suppressed SVG outputs",
        pass,
    );
}
