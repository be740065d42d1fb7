use mnar_iv::data::{Dataset, Observation};
use mnar_iv::estimators::{fit_cc_outcome, fit_iv_density};
use mnar_iv::model::expit;
use mnar_iv::moments::{build_stacked_system, InstrumentChoice, ParamBlock, StackedKind};
use mnar_iv::simharness::{generate_dataset, generate_full, generator_config, scenario_config, ScenarioKind, TRUE_PHI};
use mnar_iv::solver::SolveOptions;

const N: usize = 1_000_000;

fn cells() -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for x1 in [0.0, 1.0] {
        for x2 in [0.0, 1.0] {
            for z in [0.0, 1.0] {
                out.push((x1, x2, z));
            }
        }
    }
    out
}

// P(Y = 1 | R = 1, x, z) by Bayes' rule over the two outcome values
fn complete_case_oracle(x1: f64, x2: f64, z: f64) -> f64 {
    let py = expit(1.0 - 1.2 * x1 + 1.5 * x2);
    let pr = |y: f64| expit(-1.5 + 2.5 * z + 0.8 * x1 - 1.2 * x2 + 1.8 * y);
    py * pr(1.0) / (py * pr(1.0) + (1.0 - py) * pr(0.0))
}

#[test]
fn generator_marginals() {
    let rows = generate_full(N, 7);
    let n = N as f64;
    let mean_y = rows.iter().map(|r| r.y).sum::<f64>() / n;
    let mean_r = rows.iter().map(|r| r.r).sum::<f64>() / n;
    assert!((mean_y - TRUE_PHI).abs() < 0.002, "{mean_y}");

    let mut p_r = 0.0;
    for (x1, x2, z) in cells() {
        let px = (if x1 == 1.0 { 0.4 } else { 0.6 }) * (if x2 == 1.0 { 0.6 } else { 0.4 });
        let q = expit(0.4 + 0.9 * x1 - 0.7 * x2 - 0.8 * x1 * x2);
        let pz = if z == 1.0 { q } else { 1.0 - q };
        let py = expit(1.0 - 1.2 * x1 + 1.5 * x2);
        for (y, wy) in [(1.0, py), (0.0, 1.0 - py)] {
            p_r += px * pz * wy * expit(-1.5 + 2.5 * z + 0.8 * x1 - 1.2 * x2 + 1.8 * y);
        }
    }
    assert!((p_r - 0.6296628882491906).abs() < 1e-12);
    assert!((mean_r - p_r).abs() < 0.002, "{mean_r}");
}

#[test]
fn nuisance_fits_recover_generator_laws() {
    let data = generate_dataset(N, 11);
    let truth = generator_config();
    let mut cfg = scenario_config(ScenarioKind::CorrectBoth);
    let opts = SolveOptions::default();
    cfg.iv.xi = fit_iv_density(&data, &cfg.iv, &opts).unwrap();
    for (a, b) in cfg.iv.xi.iter().zip(&truth.iv.xi) {
        assert!((a - b).abs() < 0.02, "{:?}", cfg.iv.xi);
    }
    cfg.outcome.theta = fit_cc_outcome(&data, &cfg.outcome, &opts).unwrap();
    for (x1, x2, z) in cells() {
        let fitted = cfg.outcome.prob_with(&cfg.outcome.theta, &[x1, x2], &[z]);
        let oracle = complete_case_oracle(x1, x2, z);
        assert!((fitted - oracle).abs() < 0.01, "cell ({x1},{x2},{z}): {fitted} vs {oracle}");
        let generator = truth.outcome.prob_with(&truth.outcome.theta, &[x1, x2], &[z]);
        assert!((generator - oracle).abs() < 1e-12);
    }
}

#[test]
fn moment_rows_vanish_at_truth() {
    let truth = generator_config();
    let choice = InstrumentChoice::default_for(&truth);
    for kind in [StackedKind::Ipw, StackedKind::Or, StackedKind::Dr] {
        let sys = build_stacked_system(kind, &truth, &choice, None).unwrap();
        let mut params = sys.current_params();
        let phi = sys.layout().index(ParamBlock::Phi).unwrap();
        params[phi] = TRUE_PHI;
        let mut z_small = Vec::new();
        let mut z_large = Vec::new();
        for (n, seed, out) in [(20_000, 3, &mut z_small), (N, 5, &mut z_large)] {
            let data = generate_dataset(n, seed);
            let m = sys.mean(&data, &params).unwrap();
            let s = sys.second_moment(&data, &params).unwrap();
            for (j, mj) in m.iter().enumerate() {
                let sd = (s[(j, j)] - mj * mj).max(0.0).sqrt();
                let se = sd / (n as f64).sqrt();
                // standardized mean stays O(1) while the raw mean shrinks
                assert!(mj.abs() <= 4.0 * se + 1e-12, "{kind:?} row {j}: {mj} vs se {se}");
                out.push(mj.abs());
            }
        }
        let max_small = z_small.iter().cloned().fold(0.0, f64::max);
        let max_large = z_large.iter().cloned().fold(0.0, f64::max);
        assert!(max_large < max_small, "{kind:?}: {max_large} vs {max_small}");
    }
}

#[test]
fn generated_dataset_blanks_missing_outcomes() {
    let rows = generate_full(500, 9);
    let data = generate_dataset(500, 9);
    for (row, obs) in rows.iter().zip(data.observations()) {
        let expected = if row.r == 1.0 {
            Observation::observed(vec![row.x1, row.x2], vec![row.z], row.y)
        } else {
            Observation::missing(vec![row.x1, row.x2], vec![row.z])
        };
        assert_eq!(obs, &expected);
    }
    let names: &Dataset = &data;
    assert_eq!(names.covariate_names(), ["x1", "x2"]);
    assert_eq!(names.instrument_names(), ["z"]);
}
