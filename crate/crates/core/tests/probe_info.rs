use diqr::selection::{default_lambda_grid, default_t, mqbic, MqbicConfig};
use diqr::simbench::{generate, replication_seed, SimScenario};
use diqr::{active_set, fit_penalized, CoefficientTensor, PenaltySpec, SolverConfig};

#[test]
#[ignore]
fn probe_hetero_information() {
    let solver = SolverConfig { standardize: false, ..SolverConfig::default() };
    let mq = MqbicConfig::new(default_t(100, 3.0).unwrap(), 10).unwrap();
    for rep in 0..6 {
        let scenario = SimScenario::table1().with_seed(replication_seed(1, rep));
        let draw = generate(&scenario).unwrap();
        let grid = scenario.quantile_grid().unwrap();
        let with2: Vec<usize> = vec![0, 2, 5, 11, 14, 19];
        let without: Vec<usize> = vec![0, 5, 11, 14, 19];
        let a = mqbic(&draw.dataset, &grid, &with2, &mq, &solver).unwrap();
        let b = mqbic(&draw.dataset, &grid, &without, &mq, &solver).unwrap();
        println!(
            "rep {rep}: S(with col2) = {:.3} mqbic {:.4} | S(without) = {:.3} mqbic {:.4} | dS = {:.3} dlog = {:.4} (size step 0.0353)",
            a.raw_check_sum, a.value.value, b.raw_check_sum, b.value.value,
            b.raw_check_sum - a.raw_check_sum,
            (b.raw_check_sum / a.raw_check_sum).ln()
        );
    }
}

#[test]
#[ignore]
fn probe_ascending_dynamics() {
    for rep in [0usize, 2, 4] {
        let scenario = SimScenario::table1().with_seed(replication_seed(1, rep));
        let draw = generate(&scenario).unwrap();
        let grid = scenario.quantile_grid().unwrap();
        let solver = SolverConfig::default();
        let full = default_lambda_grid(&draw.dataset, &grid, 50, &solver).unwrap();
        let path: Vec<f64> = full.iter().copied().filter(|&l| l >= 1e-2 * full[0]).collect();
        println!("== rep {rep} true active {:?}", draw.true_active);

        // downward pass
        let mut warm: Option<CoefficientTensor> = None;
        let mut down: Vec<(f64, f64, usize, f64)> = Vec::new();
        for &lambda in &path {
            let mut cfg = solver.clone();
            cfg.warm_start = warm.clone();
            let fit =
                fit_penalized(&draw.dataset, &grid, &PenaltySpec::scad(lambda), &cfg).unwrap();
            warm = Some(fit.coefficients.clone());
            down.push((
                lambda,
                fit.objective_value,
                active_set(&fit.coefficients, 1e-8).len(),
                fit.coefficients.group_l1(2),
            ));
        }
        // upward pass
        warm = None;
        for (i, &lambda) in path.iter().enumerate().rev() {
            let mut cfg = solver.clone();
            cfg.warm_start = warm.clone();
            let fit =
                fit_penalized(&draw.dataset, &grid, &PenaltySpec::scad(lambda), &cfg).unwrap();
            warm = Some(fit.coefficients.clone());
            let up_sz = active_set(&fit.coefficients, 1e-8).len();
            let (l, dobj, dsz, dgrp) = down[i];
            if lambda < 0.35 {
                println!(
                    "  l={l:.4} | down obj={dobj:.6} |D|={dsz:3} grp2={dgrp:.3} | up obj={:.6} |D|={up_sz:3} grp2={:.3} | up_better={}",
                    fit.objective_value,
                    fit.coefficients.group_l1(2),
                    fit.objective_value < dobj
                );
            }
        }
    }
}
