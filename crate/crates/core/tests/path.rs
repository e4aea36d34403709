use clldif::em::FitOptions;
use clldif::regpath::{bic, lambda_grid, lambda_max, parameter_count, select_k, two_stage_path, PathOptions};
use clldif::simulate::{generate, SimDesign};
use clldif::{QuadratureGrid, ResponseMatrix};

fn opts(m: usize) -> PathOptions {
    PathOptions {
        m,
        fit: FitOptions {
            n_starts: 2,
            max_outer_iter: 200,
            ..FitOptions::default()
        },
        ..PathOptions::default()
    }
}

fn design_a(n: usize, seed: u64) -> ResponseMatrix {
    let d = SimDesign {
        j: 15,
        ..SimDesign::design_a(n, 0.4, seed)
    };
    generate(&d).unwrap().0
}

#[test]
fn path_invariants() {
    let grid = QuadratureGrid::default();
    let y = design_a(400, 3);
    let o = opts(6);
    let p = two_stage_path(&y, 1, &grid, &o).unwrap();
    let grid_part = lambda_grid(&y, 1, 6, &grid, &o.fit).unwrap();
    assert!(p.lambdas.len() >= 6);
    assert_eq!(p.per_lambda.len(), p.lambdas.len());
    assert_eq!(&p.lambdas[p.lambdas.len() - 6..], &grid_part[..]);
    for w in p.lambdas.windows(2) {
        assert!(w[1] < w[0] && w[1] > 0.0);
    }
    // the continuation above the grid stops at the first empty support
    assert!(p.per_lambda[0].support.is_empty());
    for (r, &lambda) in p.per_lambda.iter().zip(&p.lambdas) {
        assert_eq!(r.lambda, lambda);
    }
    for r in &p.per_lambda {
        let refit = r.refit.as_ref().unwrap();
        assert_eq!(r.support, r.penalized_fit.support);
        assert!(refit.support.is_subset(&r.support));
        assert_eq!(r.bic, Some(bic(refit, y.n_respondents())));
        let card = parameter_count(15, 1, refit.support.len()) as f64;
        let recomputed = -2.0 * refit.loglik + (y.n_respondents() as f64).ln() * card;
        assert_eq!(r.bic.unwrap(), recomputed);
        // dropping the penalty can only help on the same support
        assert!(refit.loglik >= r.penalized_fit.loglik - 1e-6 * refit.loglik.abs());
    }
    let best = p.per_lambda.iter().filter_map(|r| r.bic).fold(f64::INFINITY, f64::min);
    assert_eq!(p.selected_bic(), best);
    assert_eq!(&p.selected_model, p.selected().refit.as_ref().unwrap());
    assert!(p.per_lambda.iter().any(|r| !r.support.is_empty()));
}

#[test]
fn two_point_grid_is_the_endpoints() {
    let grid = QuadratureGrid::default();
    let y = design_a(300, 4);
    let fit = opts(2).fit;
    let top = lambda_max(&y, 1, &grid, &fit).unwrap();
    let g = lambda_grid(&y, 1, 2, &grid, &fit).unwrap();
    assert_eq!(g, vec![top, top * 1e-3]);
    assert!(lambda_grid(&y, 1, 1, &grid, &fit).is_err());
}

#[test]
fn return_sweep_never_worsens_the_grid_fits() {
    let grid = QuadratureGrid::default();
    let y = design_a(300, 5);
    let both = two_stage_path(&y, 1, &grid, &opts(5)).unwrap();
    let one_way = two_stage_path(
        &y,
        1,
        &grid,
        &PathOptions {
            return_sweep: false,
            ..opts(5)
        },
    )
    .unwrap();
    assert_eq!(one_way.lambdas.len(), 5);
    assert_eq!(&both.lambdas[both.lambdas.len() - 5..], &one_way.lambdas[..]);
    for (a, b) in both.per_lambda[both.lambdas.len() - 5..].iter().zip(&one_way.per_lambda) {
        assert!(a.penalized_fit.penalized_objective <= b.penalized_fit.penalized_objective);
    }
}

#[test]
fn no_focal_class_gives_a_single_record() {
    let grid = QuadratureGrid::default();
    let y = design_a(200, 6);
    let p = two_stage_path(&y, 0, &grid, &opts(5)).unwrap();
    assert_eq!(p.per_lambda.len(), 1);
    assert_eq!(p.lambdas, vec![0.0]);
    assert_eq!(parameter_count(15, 0, 0), 15);
    assert_eq!(p.selected_bic(), bic(&p.selected_model, 200));
}

#[test]
fn select_k_with_one_candidate_returns_it() {
    let grid = QuadratureGrid::default();
    let y = design_a(200, 7);
    let r = select_k(&y, &[1], &grid, &opts(3)).unwrap();
    assert_eq!(r.best_k, 1);
    assert_eq!(r.paths.len(), 1);
    assert!(select_k(&y, &[], &grid, &opts(3)).is_err());
}

#[test]
fn cold_path_is_independent_of_grid_order() {
    // every point is fitted from scratch, so each record depends on its
    // lambda only
    let grid = QuadratureGrid::default();
    let y = design_a(250, 8);
    let cold = PathOptions {
        warm_start: false,
        ..opts(3)
    };
    let a = two_stage_path(&y, 1, &grid, &cold).unwrap();
    let b = two_stage_path(&y, 1, &grid, &cold).unwrap();
    assert_eq!(a, b);
    for r in &a.per_lambda {
        let single = clldif::fit_penalized(&y, 1, r.lambda, &grid, &cold.fit).unwrap();
        assert_eq!(single, r.penalized_fit);
    }
}
