use mnar_iv::data::Dataset;
use mnar_iv::efficiency::{efficient_phi, one_step_zeta, ConditionalMode, IntersectionModelFit};
use mnar_iv::estimators::{estimate, fit_dr_model, EstimatorKind};
use mnar_iv::model::ModelConfig;
use mnar_iv::moments::InstrumentChoice;
use mnar_iv::simharness::{generate_dataset, scenario_config, ScenarioKind};
use mnar_iv::solver::SolveOptions;

const SWAP: [usize; 2] = [1, 0];

fn swapped(cfg: &ModelConfig) -> ModelConfig {
    let mut c = cfg.clone();
    c.baseline.design = c.baseline.design.remap_covariates(&SWAP);
    c.outcome.design = c.outcome.design.remap_covariates(&SWAP);
    for d in &mut c.iv.designs {
        *d = d.remap_covariates(&SWAP);
    }
    c
}

fn dr_fit(data: &Dataset, cfg: &ModelConfig) -> IntersectionModelFit {
    let choice = InstrumentChoice::default_for(cfg);
    let dr = fit_dr_model(data, cfg, &choice, &SolveOptions::default()).unwrap();
    IntersectionModelFit::new(dr.config).unwrap()
}

#[test]
fn projection_is_orthogonal_to_w() {
    let cfg = scenario_config(ScenarioKind::CorrectBoth);
    for seed in [1, 2, 3] {
        let data = generate_dataset(3000, seed);
        let fit = dr_fit(&data, &cfg);
        let zeta = fit.config.selection_bias.zeta;
        let eff = efficient_phi(&data, &fit, zeta, ConditionalMode::Empirical).unwrap();
        let n = data.n() as f64;
        let ms = eff.summand.iter().sum::<f64>() / n;
        let mw = eff.w.iter().sum::<f64>() / n;
        let cov = eff
            .summand
            .iter()
            .zip(&eff.w)
            .map(|(s, w)| (s - ms) * (w - mw))
            .sum::<f64>()
            / n;
        assert!(cov.abs() <= 1e-8, "seed {seed}: {cov}");
        assert!(eff.w.iter().any(|w| w.abs() > 1e-3));
    }
}

#[test]
fn one_step_is_covariate_relabeling_equivariant() {
    let cfg = scenario_config(ScenarioKind::CorrectBoth);
    let opts = SolveOptions::default();
    for seed in [4, 5] {
        let data = generate_dataset(3000, seed);
        let perm = data.permute_covariates(&SWAP).unwrap();
        let a = dr_fit(&data, &cfg);
        let b = dr_fit(&perm, &swapped(&cfg));
        let za = a.config.selection_bias.zeta;
        let zb = b.config.selection_bias.zeta;
        assert!((za - zb).abs() < 1e-7, "{za} vs {zb}");
        let sa = one_step_zeta(&data, &a, za, &opts).unwrap();
        let sb = one_step_zeta(&perm, &b, zb, &opts).unwrap();
        assert!((sa.zeta - sb.zeta).abs() < 1e-6, "{} vs {}", sa.zeta, sb.zeta);
        assert!((sa.derivative - sb.derivative).abs() < 1e-4 * sa.derivative.abs());
    }
}

#[test]
fn estimators_are_covariate_relabeling_equivariant() {
    let cfg = scenario_config(ScenarioKind::CorrectBoth);
    let cfg_swapped = swapped(&cfg);
    let opts = SolveOptions::default();
    let data = generate_dataset(2500, 8);
    let perm = data.permute_covariates(&SWAP).unwrap();
    for kind in EstimatorKind::ALL {
        let a = estimate(&data, &cfg, kind, &InstrumentChoice::default_for(&cfg), &opts).unwrap();
        let b = estimate(&perm, &cfg_swapped, kind, &InstrumentChoice::default_for(&cfg_swapped), &opts).unwrap();
        assert!((a.phi_hat - b.phi_hat).abs() < 1e-7, "{kind}: {} vs {}", a.phi_hat, b.phi_hat);
        assert!((a.se_phi - b.se_phi).abs() < 1e-6 * a.se_phi.max(1e-3), "{kind}");
        match (a.zeta_hat, b.zeta_hat) {
            (Some(x), Some(y)) => assert!((x - y).abs() < 1e-6, "{kind}: {x} vs {y}"),
            (None, None) => {}
            other => panic!("{kind}: {other:?}"),
        }
    }
}

#[test]
fn efficient_estimate_near_truth() {
    let cfg = scenario_config(ScenarioKind::CorrectBoth);
    let data = generate_dataset(5000, 12);
    let fit = estimate(&data, &cfg, EstimatorKind::IvEff, &InstrumentChoice::default_for(&cfg), &SolveOptions::default())
        .unwrap();
    assert!((fit.phi_hat - mnar_iv::simharness::TRUE_PHI).abs() < 4.0 * fit.se_phi, "{}", fit.phi_hat);
    assert!(fit.se_zeta.unwrap() > 0.0);
}
