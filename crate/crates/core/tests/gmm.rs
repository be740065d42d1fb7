use mnar_iv::data::{Dataset, Observation};
use mnar_iv::estimators::{estimate, EstimatorKind};
use mnar_iv::model::{expit, ModelConfig};
use mnar_iv::moments::{build_dr_system, build_ipw_system, build_or_system, InstrumentChoice};
use mnar_iv::solver::SolveOptions;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// three binary instruments, two covariates (one continuous), binary outcome
fn three_instrument_data(n: usize, seed: u64) -> (Dataset, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = Vec::with_capacity(n);
    let mut truth = 0.0;
    for _ in 0..n {
        let x = vec![rng.gen::<f64>() - 0.5, f64::from(rng.gen_bool(0.5) as u8)];
        let z: Vec<f64> = [0.3, -0.2, 0.1]
            .iter()
            .map(|a| f64::from(rng.gen_bool(expit(a + 0.5 * x[0])) as u8))
            .collect();
        let py = expit(0.5 + x[0] - 0.6 * x[1]);
        truth += py;
        let y = f64::from(rng.gen_bool(py) as u8);
        let lin = -0.4 + 0.9 * z[0] + 0.6 * z[1] - 0.5 * z[2] + 0.3 * x[0] + 0.4 * x[1] + 1.0 * y;
        obs.push(if rng.gen_bool(expit(lin)) {
            Observation::observed(x, z, y)
        } else {
            Observation::missing(x, z)
        });
    }
    (Dataset::from_observations(obs).unwrap(), truth / n as f64)
}

#[test]
fn default_systems_are_over_identified() {
    let cfg = ModelConfig::main_effects(2, 3);
    let choice = InstrumentChoice::default_for(&cfg);
    for sys in [
        build_ipw_system(&cfg, &choice).unwrap(),
        build_or_system(&cfg, &choice).unwrap(),
        build_dr_system(&cfg, &choice).unwrap(),
    ] {
        assert!(!sys.is_exactly_identified());
        assert!(sys.dim_moments() > sys.dim_params());
    }
}

#[test]
fn three_instrument_estimates_converge() {
    let (data, truth) = three_instrument_data(4000, 21);
    let cfg = ModelConfig::main_effects(2, 3);
    let choice = InstrumentChoice::default_for(&cfg);
    let opts = SolveOptions::default();
    for kind in [EstimatorKind::IvIpw, EstimatorKind::IvOr, EstimatorKind::IvDr] {
        let fit = estimate(&data, &cfg, kind, &choice, &opts).unwrap();
        assert!(fit.diagnostics.converged, "{kind}: {:?}", fit.diagnostics);
        assert!(fit.se_phi.is_finite() && fit.se_phi > 0.0);
        assert!((fit.phi_hat - truth).abs() < 5.0 * fit.se_phi, "{kind}: {} vs {truth}", fit.phi_hat);
        let zeta = fit.zeta_hat.unwrap();
        assert!((zeta - 1.0).abs() < 5.0 * fit.se_zeta.unwrap(), "{kind}: {zeta}");
        let cov = fit.covariance_matrix();
        assert!((&cov - cov.transpose()).amax() < 1e-8);
    }
}
