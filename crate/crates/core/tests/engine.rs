use clldif::em::{e_step, fit_constrained, fit_penalized, m_step_nu, posterior_class_probabilities, FitOptions};
use clldif::simulate::generate_custom;
use clldif::{ModelParams, QuadratureGrid, ResponseMatrix, Support};

fn truth(j: usize) -> ModelParams {
    let d: Vec<f64> = (0..j).map(|i| -1.5 + 3.0 * i as f64 / (j - 1) as f64).collect();
    let delta: Vec<f64> = (0..j).map(|i| if i < 2 { 1.0 } else { 0.0 }).collect();
    ModelParams::new(j, 1, d, delta, vec![0.6, 0.4], vec![0.0, 0.7], vec![1.0, 0.8]).unwrap()
}

fn data(n: usize, j: usize, seed: u64) -> ResponseMatrix {
    generate_custom(&truth(j), n, seed).unwrap().0
}

fn quick() -> FitOptions {
    FitOptions {
        n_starts: 2,
        max_outer_iter: 200,
        ..FitOptions::default()
    }
}

#[test]
fn fit_result_invariants() {
    let grid = QuadratureGrid::default();
    let y = data(300, 6, 1);
    let fit = fit_penalized(&y, 1, 3.0, &grid, &quick()).unwrap();
    let p = &fit.params;
    assert_eq!(p.mu()[0], 0.0);
    assert_eq!(p.sigma()[0], 1.0);
    assert_eq!(fit.support, p.support());
    for (j, row) in (0..p.n_items()).map(|j| (j, p.delta_row(j))) {
        assert_eq!(fit.support.contains(j, 1), row[0] != 0.0);
    }
    for w in fit.trace.windows(2) {
        assert!(w[1] <= w[0], "trace rose from {} to {}", w[0], w[1]);
    }
    let nu_sum: f64 = p.nu().iter().sum();
    assert!((nu_sum - 1.0).abs() < 1e-12);
    let expected = -fit.loglik + 3.0 * p.delta_l1();
    assert!((fit.penalized_objective - expected).abs() < 1e-8 * expected.abs());
}

#[test]
fn estep_statistics_are_consistent() {
    let grid = QuadratureGrid::default();
    let y = data(200, 5, 2);
    let (w, stats) = e_step(&truth(5), &y, &grid).unwrap();
    for row in w.w.chunks(w.n_classes * w.n_nodes) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(row.iter().all(|&v| v >= 0.0));
    }
    let total: f64 = stats.s.iter().sum();
    assert!((total - 200.0).abs() < 1e-6);
    for j in 0..5 {
        for k in 0..2 {
            for q in 0..grid.n_nodes() {
                assert!(stats.o(j, k, q) <= stats.s(k, q) * (1.0 + 1e-12) + 1e-15);
                assert!(stats.o(j, k, q) >= 0.0);
            }
        }
    }
    let nu = m_step_nu(&stats, 200);
    assert!((nu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn large_penalty_reduces_to_the_impact_only_fit() {
    let grid = QuadratureGrid::default();
    let y = data(300, 6, 3);
    let opts = quick();
    let shrunk = fit_penalized(&y, 1, 1e6, &grid, &opts).unwrap();
    assert!(shrunk.support.is_empty());
    let empty = fit_constrained(&y, 1, &Support::new(), &grid, &opts, None).unwrap();
    let rel = (shrunk.loglik - empty.loglik).abs() / empty.loglik.abs();
    assert!(rel < 1e-4, "{} vs {}", shrunk.loglik, empty.loglik);
}

#[test]
fn constrained_fits_respect_nesting_and_support() {
    let grid = QuadratureGrid::default();
    let y = data(200, 5, 4);
    let opts = quick();
    let full = fit_constrained(&y, 1, &Support::full(5, 1), &grid, &opts, None).unwrap();
    let sub: Support = [(0, 1), (1, 1)].into_iter().collect();
    let part = fit_constrained(&y, 1, &sub, &grid, &opts, Some(&full.params)).unwrap();
    assert!(part.support.is_subset(&sub));
    for j in 2..5 {
        assert_eq!(part.params.dif(j, 1), 0.0);
    }
    assert!(full.loglik >= part.loglik - 1e-3, "{} < {}", full.loglik, part.loglik);
}

#[test]
fn candidate_set_pins_other_coordinates() {
    let grid = QuadratureGrid::default();
    let y = data(300, 6, 5);
    let allowed: Support = [(0, 1)].into_iter().collect();
    let opts = FitOptions {
        candidate_set: Some(allowed.clone()),
        ..quick()
    };
    let fit = fit_penalized(&y, 1, 0.0, &grid, &opts).unwrap();
    assert!(fit.support.is_subset(&allowed));
}

#[test]
fn single_class_recovers_difficulties() {
    let grid = QuadratureGrid::default();
    let d: Vec<f64> = (0..25).map(|i| -2.0 + 4.0 * i as f64 / 24.0).collect();
    let p = ModelParams::single_class(d.clone()).unwrap();
    let (y, _) = generate_custom(&p, 1000, 11).unwrap();
    let fit = fit_penalized(&y, 0, 0.0, &grid, &quick()).unwrap();
    let rmse = (fit.params.d().iter().zip(&d).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 25.0).sqrt();
    assert!(rmse < 0.15, "d RMSE {rmse}");
    assert_eq!(fit.params.n_classes(), 1);
}

#[test]
fn fits_are_identical_across_thread_counts() {
    let grid = QuadratureGrid::default();
    let y = data(400, 6, 6);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| fit_penalized(&y, 1, 2.0, &grid, &quick()).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a, b);
}

#[test]
fn posterior_class_probabilities_are_rows_on_the_simplex() {
    let grid = QuadratureGrid::default();
    let y = data(100, 5, 7);
    let probs = posterior_class_probabilities(&truth(5), &y, &grid).unwrap();
    assert_eq!(probs.len(), 200);
    for row in probs.chunks(2) {
        assert!((row[0] + row[1] - 1.0).abs() < 1e-9);
    }
}

#[test]
fn focal_classes_are_ordered_by_proportion() {
    let grid = QuadratureGrid::default();
    let y = data(300, 6, 8);
    let fit = fit_penalized(&y, 2, 2.0, &grid, &quick()).unwrap();
    let nu = fit.params.nu();
    assert!(nu[1] >= nu[2], "{nu:?}");
}
