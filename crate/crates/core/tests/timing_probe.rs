use std::time::Instant;

use diqr::loss;
use diqr::selection::{default_lambda_grid, default_t, exhaustive_search, subsets_up_to_size, MqbicConfig};
use diqr::simbench::{generate, replication_seed, SimScenario};
use diqr::{active_set, fit_penalized, CoefficientTensor, PenaltySpec, SolverConfig};

fn run_path(
    draw: &diqr::simbench::GeneratedData,
    grid: &diqr::QuantileGrid,
    points: usize,
    floor_ratio: f64,
    t_divisor: f64,
) -> (Vec<usize>, f64) {
    let solver = SolverConfig::default();
    let full = default_lambda_grid(&draw.dataset, grid, points, &solver).unwrap();
    let path: Vec<f64> = full
        .iter()
        .copied()
        .filter(|&l| l >= floor_ratio * full[0])
        .collect();
    let mq = MqbicConfig::new(default_t(100, t_divisor).unwrap(), 50).unwrap();
    let report = diqr::selection::select_lambda(
        &draw.dataset,
        grid,
        &PenaltySpec::scad(0.0),
        &path,
        &mq,
        &solver,
    )
    .unwrap();
    let ae = draw.truth.slope_l1_distance(&report.fit.coefficients).unwrap() / 10.0;
    (report.selected_predictors.iter().copied().collect(), ae)
}

#[test]
#[ignore]
fn probe_grid_density() {
    for &(points, floor) in &[(50usize, 1e-2f64), (50, 3e-3)] {
        let mut psr_sum = 0.0;
        let mut fdr_sum = 0.0;
        let mut ae_sum = 0.0;
        let mut col2 = 0;
        let reps = 10;
        let t0 = Instant::now();
        for rep in 0..reps {
            let scenario = SimScenario::table1().with_seed(replication_seed(1, rep));
            let draw = generate(&scenario).unwrap();
            let grid = scenario.quantile_grid().unwrap();
            let (sel, ae) = run_path(&draw, &grid, points, floor, 3.0);
            let hits = sel.iter().filter(|j| draw.true_active.contains(j)).count();
            let false_hits = sel.len() - hits;
            psr_sum += hits as f64 / draw.true_active.len() as f64;
            fdr_sum += false_hits as f64 / (100 - draw.true_active.len()) as f64;
            ae_sum += ae;
            if sel.contains(&2) {
                col2 += 1;
            }
            println!("  rep {rep}: selected {:?} ae={ae:.3}", sel);
        }
        println!(
            "points={points} floor={floor:.0e}: psr={:.3} fdr={:.4} ae={:.3} col2 {}/{} elapsed {:?}",
            psr_sum / reps as f64,
            fdr_sum / reps as f64,
            ae_sum / reps as f64,
            col2,
            reps,
            t0.elapsed()
        );
    }
}

#[test]
#[ignore]
fn probe_exhaustive_replication() {
    let scenario = SimScenario {
        n: 200,
        p: 20,
        k_experiments: 2,
        quantiles: vec![0.25, 0.5, 0.75],
        nonzero_spec: vec![(0, 0), (0, 5), (0, 11), (1, 0), (1, 5), (1, 11)],
        hetero_column: vec![5, 5],
        coef_low: 0.75,
        coef_high: 1.25,
        ..SimScenario::table1()
    };
    let draw = generate(&scenario).unwrap();
    let grid = scenario.quantile_grid().unwrap();
    let candidates = subsets_up_to_size(20, 5).unwrap();
    println!("candidates: {}", candidates.len());
    let mq = MqbicConfig::new(default_t(20, 3.0).unwrap(), 5).unwrap();
    let solver = SolverConfig {
        standardize: false,
        ..SolverConfig::default()
    };
    let t0 = Instant::now();
    let report = exhaustive_search(&draw.dataset, &grid, &candidates, &mq, &solver).unwrap();
    println!("exhaustive over {} candidates: {:?}", candidates.len(), t0.elapsed());
    println!("selected: {:?}", report.selected_predictors);
}
