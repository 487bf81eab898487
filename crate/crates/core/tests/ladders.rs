//! Simulation and enumeration ladders over n.

use collapse_core::betel::{
    betel_posterior, betel_predictive, build_family, concentration_profile, flat_prior, pseudo_true, simulate_sample,
    Direction, Variant,
};
use collapse_core::curvature::{curvature_report, lanford_radius, perturbation_stability};
use collapse_core::experiment::rate_fit;
use collapse_core::oracle::{
    feasible_types, gaussian_mixture_approx, predictive_exact, product_law, quadratic_residual, tv_distance,
    window_partition,
};
use collapse_core::{project, ConstrainedModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn two_point_template() -> ConstrainedModel {
    ConstrainedModel::new(2, vec![0.5, 0.5], vec![vec![1.0, 2.0]], vec![1.5]).unwrap()
}

fn grid(lo: f64, hi: f64, points: usize) -> Vec<Vec<f64>> {
    (0..points)
        .map(|i| vec![lo + (hi - lo) * i as f64 / (points - 1) as f64])
        .collect()
}

#[test]
fn posterior_tail_mass_shrinks_with_n() {
    let thetas = grid(1.2, 1.8, 31);
    let family = build_family(&two_point_template(), thetas.clone(), thetas).unwrap();
    let theta0 = 1.6;
    let i0 = 20;
    let p0 = family.projections[i0].p_star.clone();
    let mut tails = Vec::new();
    let mut tvs = Vec::new();
    for n in [50, 100, 200] {
        let mut tail = 0.0;
        let mut tv = 0.0;
        for seed in 0..200u64 {
            let sample = simulate_sample(&p0, n, 1000 * n as u64 + seed).unwrap();
            let post = betel_posterior(&family, &sample, &flat_prior(family.len()), Variant::Canonical).unwrap();
            if seed < 20 {
                tail += concentration_profile(&post, &family, &[theta0], &[0.05], 1.0).unwrap().tail_mass[0];
            }
            let pred = betel_predictive(&post, &family, 2).unwrap();
            tv += tv_distance(&pred, &product_law(&p0, 2).unwrap()).unwrap();
        }
        tails.push(tail / 20.0);
        tvs.push(tv / 200.0);
    }
    assert!(tails[0] >= tails[1] && tails[1] >= tails[2], "tail masses {tails:?}");
    assert!(tvs[0] > tvs[1] && tvs[1] > tvs[2], "predictive distances {tvs:?}");
}

#[test]
fn pseudo_true_outside_range_sits_on_boundary() {
    let template = two_point_template();
    let coarse = grid(1.3, 1.7, 5);
    let fine = grid(1.3, 1.7, 41);
    let fc = build_family(&template, coarse.clone(), coarse).unwrap();
    let ff = build_family(&template, fine.clone(), fine).unwrap();
    let p0 = [0.1, 0.9];
    for direction in [Direction::Forward, Direction::Reverse] {
        let a = pseudo_true(&fc, &p0, direction).unwrap();
        let b = pseudo_true(&ff, &p0, direction).unwrap();
        assert_eq!(a.index, fc.len() - 1);
        assert_eq!(b.index, ff.len() - 1);
        assert!((fc.theta_grid[a.index][0] - ff.theta_grid[b.index][0]).abs() < 1e-12);
    }
}

#[test]
fn noisy_power_law_recovers_slope() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let xs: Vec<f64> = (1..=30).map(|i| i as f64).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| 2.0 * x.powf(0.5) * (1.0 + rng.random_range(-0.05..0.05)))
        .collect();
    let fit = rate_fit(&xs, &ys).unwrap();
    // closed-form OLS on the logs
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / 30.0;
    let my = ly.iter().sum::<f64>() / 30.0;
    let slope = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
        / lx.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
    assert!((fit.slope - slope).abs() < 1e-12);
    assert!((0.4..=0.6).contains(&fit.slope));
}

fn mean_fixture() -> ConstrainedModel {
    ConstrainedModel::new(3, vec![0.2, 0.5, 0.3], vec![vec![1.0, 2.0, 3.0]], vec![2.1]).unwrap()
}

#[test]
fn scaled_quadratic_residual_decreases() {
    let model = mean_fixture();
    let p = project(&model).unwrap();
    let c = curvature_report(&model, &p).unwrap();
    let scaled: Vec<f64> = [20, 40, 80]
        .iter()
        .map(|&n| quadratic_residual(&feasible_types(&model, n, None).unwrap(), &p, &c).unwrap().scaled_max)
        .collect();
    assert!(scaled[0] > scaled[1] && scaled[1] > scaled[2], "{scaled:?}");
}

#[test]
fn collapse_is_monotone_per_fixture() {
    let fixtures = [
        mean_fixture(),
        ConstrainedModel::new(3, vec![0.2, 0.5, 0.3], vec![], vec![]).unwrap(),
        ConstrainedModel::new(4, vec![0.1, 0.2, 0.3, 0.4], vec![vec![1.0, 2.0, 3.0, 4.0]], vec![2.5]).unwrap(),
    ];
    for model in &fixtures {
        let p = project(model).unwrap();
        for m in [1, 2] {
            let tv: Vec<f64> = [20, 40, 80]
                .iter()
                .map(|&n| {
                    let exact = predictive_exact(&feasible_types(model, n, None).unwrap(), m).unwrap();
                    tv_distance(&exact, &product_law(&p.p_star, m).unwrap()).unwrap()
                })
                .collect();
            assert!(tv[0] + 1e-15 >= tv[1] && tv[1] + 1e-15 >= tv[2], "m={m}: {tv:?}");
        }
    }
}

#[test]
fn window_of_radius_zero_keeps_exact_hits() {
    let model = ConstrainedModel::new(3, vec![0.25, 0.5, 0.25], vec![vec![1.0, 2.0, 3.0]], vec![2.0]).unwrap();
    let p = project(&model).unwrap();
    let ens = feasible_types(&model, 4, Some(0.0)).unwrap();
    let w = lanford_radius(f64::INFINITY, 4).unwrap();
    let mass = window_partition(&ens, &p.p_star, &w);
    let hit: f64 = ens
        .types
        .iter()
        .zip(&ens.weights)
        .filter(|(t, _)| t.counts == vec![1, 2, 1])
        .map(|(_, w)| w)
        .sum();
    assert!((mass.mass_in - hit).abs() < 1e-15);
}

#[test]
fn gaussian_mixture_respects_symmetry() {
    let model = ConstrainedModel::new(3, vec![0.25, 0.5, 0.25], vec![vec![1.0, 2.0, 3.0]], vec![2.0]).unwrap();
    let p = project(&model).unwrap();
    let c = curvature_report(&model, &p).unwrap();
    let g = gaussian_mixture_approx(&p, &c, 40, 2).unwrap();
    let swap = |x: usize| 2 - x;
    for a in 0..3 {
        for b in 0..3 {
            let d = g.law.prob(&[a, b]) - g.law.prob(&[swap(a), swap(b)]);
            assert!(d.abs() < 1e-12);
        }
    }
}

#[test]
fn perturbations_obey_weyl() {
    let report = perturbation_stability(&mean_fixture(), 1e-4).unwrap();
    assert!(report.weyl_consistent);
    assert!(!report.records.is_empty());
}
