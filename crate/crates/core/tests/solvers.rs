use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robot_core::ot::{line, solve_exact, w1_line, CostMatrix};
use robot_core::robot::{merged_dual, verify_dual};
use robot_core::{robot_distance, robot_value, DiscreteMeasure, GroundMetric};

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|w| w / s).collect()
}

#[test]
fn assignment_matches_permutation_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..60 {
        let n = rng.random_range(1..=6);
        let cost = CostMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..10.0));
        let w = vec![1.0 / n as f64; n];
        let best = permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum::<f64>() / n as f64)
            .fold(f64::INFINITY, f64::min);
        let sol = solve_exact(&cost, &w, &w).unwrap();
        assert!((sol.value - best).abs() < 1e-12, "{} vs {best}", sol.value);
    }
}

#[test]
fn network_simplex_has_zero_duality_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let n = rng.random_range(1..=30);
        let m = rng.random_range(1..=30);
        let cost = CostMatrix::from_fn(n, m, |_, _| rng.random_range(0.0..5.0));
        let a = random_weights(&mut rng, n);
        let b = random_weights(&mut rng, m);
        let sol = solve_exact(&cost, &a, &b).unwrap();
        assert!((sol.value - sol.duals.objective).abs() < 1e-8);
        assert!(sol.plan.marginal_residual(&a, &b) < 1e-9);
        assert!(sol.plan.positive_count() < n + m);
        assert!(sol.duals.max_violation(|i, j| cost.get(i, j)) < 1e-9);
        for e in sol.plan.entries() {
            let slack = cost.get(e.row, e.col) - sol.duals.psi[e.row] - sol.duals.phi[e.col];
            assert!(slack.abs() < 1e-9, "complementary slackness: {slack}");
        }
    }
}

#[test]
fn line_solver_matches_dense_solver() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for trial in 0..1000 {
        let n = rng.random_range(1..=25);
        let m = rng.random_range(1..=25);
        // integer grid positions force many ties and coincident atoms
        let coarse = trial % 2 == 0;
        let draw = |rng: &mut ChaCha8Rng| {
            if coarse {
                rng.random_range(-4..=4) as f64
            } else {
                rng.random_range(-5.0..5.0)
            }
        };
        let xs: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let ys: Vec<f64> = (0..m).map(|_| draw(&mut rng)).collect();
        let (a, b) = if trial % 3 == 0 {
            (vec![1.0 / n as f64; n], vec![1.0 / m as f64; m])
        } else {
            (random_weights(&mut rng, n), random_weights(&mut rng, m))
        };
        let cap = rng.random_range(0.2..6.0);
        let cost = CostMatrix::from_fn(n, m, |i, j| (xs[i] - ys[j]).abs().min(cap));
        let dense = solve_exact(&cost, &a, &b).unwrap();
        let sparse = line::solve_line(&xs, &a, &ys, &b, cap, true).unwrap();
        assert!((dense.value - sparse.value).abs() < 1e-9, "trial {trial}: {} vs {}", dense.value, sparse.value);
        let plan = sparse.plan.unwrap();
        assert!(plan.marginal_residual(&a, &b) < 1e-9);
        for (i, &p) in sparse.psi.iter().enumerate() {
            for (j, &q) in sparse.phi.iter().enumerate() {
                assert!(p + q <= cost.get(i, j) + 1e-9);
            }
        }
        let v = line::capped_value(&xs, &a, &ys, &b, cap).unwrap();
        assert!((v - dense.value).abs() < 1e-9);
    }
}

#[test]
fn equal_size_uniform_line_solutions_are_certified() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..300 {
        let n = rng.random_range(1..=30);
        let coarse = trial % 2 == 0;
        let draw = |rng: &mut ChaCha8Rng| {
            if coarse {
                rng.random_range(-3..=3) as f64
            } else {
                rng.random_range(-5.0..5.0)
            }
        };
        let xs: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let ys: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let w = vec![1.0 / n as f64; n];
        let cap = if trial % 10 == 0 { f64::INFINITY } else { rng.random_range(0.2..6.0) };
        let cost = CostMatrix::from_fn(n, n, |i, j| (xs[i] - ys[j]).abs().min(cap));
        let dense = solve_exact(&cost, &w, &w).unwrap();
        let sol = line::solve_line(&xs, &w, &ys, &w, cap, true).unwrap();
        assert!((dense.value - sol.value).abs() < 1e-10, "trial {trial}");
        let dual: f64 = sol.psi.iter().chain(&sol.phi).sum::<f64>() / n as f64;
        assert!((dual - sol.value).abs() < 1e-9, "trial {trial}: dual {dual} vs {}", sol.value);
        for (i, &p) in sol.psi.iter().enumerate() {
            for (j, &q) in sol.phi.iter().enumerate() {
                assert!(p + q <= cost.get(i, j) + 1e-9, "trial {trial}");
            }
        }
        assert!(sol.plan.unwrap().marginal_residual(&w, &w) < 1e-15);
    }
}

#[test]
fn uncapped_line_solver_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let n = rng.random_range(1..=40);
        let m = rng.random_range(1..=40);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let ys: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
        let a = random_weights(&mut rng, n);
        let b = random_weights(&mut rng, m);
        let v = line::capped_value(&xs, &a, &ys, &b, f64::INFINITY).unwrap();
        assert!((v - w1_line(&xs, &a, &ys, &b)).abs() < 1e-9);
    }
}

#[test]
fn trimmed_mass_is_mass_on_far_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..50 {
        let n = rng.random_range(2..=20);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mu = DiscreteMeasure::uniform_1d(&xs).unwrap();
        let nu = DiscreteMeasure::uniform_1d(&ys).unwrap();
        let sol = robot_distance(&mu, &nu, GroundMetric::AbsoluteDifference, 1.0).unwrap();
        assert!(sol.value >= 0.0 && sol.value <= 2.0 + 1e-12);
        assert!((sol.s.iter().sum::<f64>() + sol.trimmed_mass).abs() < 1e-12);
        for (w, s) in mu.weights().iter().zip(&sol.s) {
            assert!(*s <= 0.0 && w + s >= -1e-9);
        }
        let v = robot_value(&mu, &nu, GroundMetric::AbsoluteDifference, 1.0).unwrap();
        assert!((v - sol.value).abs() < 1e-9);
    }
}

#[test]
fn merged_dual_certifies_one_dimensional_solutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..30 {
        let n = rng.random_range(1..=30);
        let m = rng.random_range(1..=30);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-6.0..6.0)).collect();
        let ys: Vec<f64> = (0..m).map(|_| rng.random_range(-6.0..6.0)).collect();
        let mu = DiscreteMeasure::from_flat(1, xs, random_weights(&mut rng, n)).unwrap();
        let nu = DiscreteMeasure::from_flat(1, ys, random_weights(&mut rng, m)).unwrap();
        let lambda = rng.random_range(0.3..4.0);
        let sol = robot_distance(&mu, &nu, GroundMetric::Euclidean, lambda).unwrap();
        let psi = merged_dual(&sol, &mu, &nu, GroundMetric::Euclidean).unwrap();
        let check = verify_dual(&mu, &nu, GroundMetric::Euclidean, lambda, &psi).unwrap();
        assert!(check.feasible);
        assert!(check.gap.abs() <= 1e-8, "gap {}", check.gap);
    }
}
