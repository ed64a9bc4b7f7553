use mapclust::constraints::{to_linear_rows, Var};
use mapclust::heuristics::{self, MultiStartSettings};
use mapclust::io::ResultFile;
use mapclust::model::{whiten, MapSolution};
use mapclust::oracle::brute_force;
use mapclust::pwl::pwl_chords;
use mapclust::{
    build_miqp, conditional_params, evaluate_objective, solution_metrics, Assignment, ConstraintSet, Dataset,
    Fixings, Params, Precision, ProblemSpec, SideConstraint,
};
use proptest::prelude::*;

fn all_assignments(n: usize, k: usize) -> impl Iterator<Item = Assignment> {
    (0..k.pow(n as u32)).map(move |mut code| {
        let labels = (0..n)
            .map(|_| {
                let l = code % k;
                code /= k;
                l
            })
            .collect();
        Assignment::new(labels, k).unwrap()
    })
}

fn scalars(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, n)
}

fn labels(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..k, n)
}

/// Assignment-only side constraints on `n` samples and `k` components.
fn constraint(n: usize, k: usize) -> impl Strategy<Value = SideConstraint> {
    use SideConstraint::*;
    let pair = (0..n, 0..n).prop_filter("distinct", |(i, j)| i != j);
    let set = prop::sample::subsequence((0..n).collect::<Vec<_>>(), 1..=n);
    prop_oneof![
        pair.clone().prop_map(|(i, j)| MustLink(i, j)),
        pair.clone().prop_map(|(i, j)| CannotLink(i, j)),
        (0..n, 0..k).prop_map(|(i, k)| AssignLabel(i, k)),
        (pair, 0..k).prop_map(|((i, j), k)| OneWay { i, j, k }),
        (0..k, 0..=3usize).prop_map(|(k, l)| MinSize { k, l }),
        (set.clone(), 0..k, 0..=3usize).prop_map(|(set, k, l)| Pack { set, k, l }),
        (set.clone(), 0..k, 0..=2usize).prop_map(|(set, k, l)| Cover { set, k, l }),
        (set, 0..k, 0..=2usize).prop_map(|(set, k, l)| Partition { set, k, l }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conditional_params_beat_random_params(ys in scalars(7), lab in labels(7, 3), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let data = Dataset::from_scalars(&ys).unwrap();
        let spec = ProblemSpec::new(3, Precision::Scalar(1.3), &data).with_pi_floor(1e-6);
        let a = Assignment::new(lab, 3).unwrap();
        let best = evaluate_objective(&data, &spec, &a, &conditional_params(&data, &spec, &a).unwrap()).unwrap();
        let (lo, hi) = data.range()[0];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let mu = (0..3).map(|_| vec![rng.gen_range(lo..=hi)]).collect();
            let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(1e-3..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let p = Params { mu, pi: raw.iter().map(|r| r / s).collect() };
            prop_assert!(best <= evaluate_objective(&data, &spec, &a, &p).unwrap() + 1e-9);
        }
    }

    #[test]
    fn objective_is_linear_in_the_assignment(
        ys in scalars(5), a in labels(5, 2), b in labels(5, 2), lambda in 0.0..=1.0f64,
    ) {
        let data = Dataset::from_scalars(&ys).unwrap();
        let spec = ProblemSpec::new(2, Precision::Scalar(0.8), &data);
        let p = Params { mu: vec![vec![-1.0], vec![0.7]], pi: vec![0.3, 0.7] };
        let (a, b) = (Assignment::new(a, 2).unwrap(), Assignment::new(b, 2).unwrap());
        let z: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..2).map(|k| lambda * f64::from(u8::from(a.z(i, k))) + (1.0 - lambda) * f64::from(u8::from(b.z(i, k)))).collect())
            .collect();
        let mixed = mapclust::model::evaluate_relaxed_objective(&data, &spec, &z, &p).unwrap();
        let expect = lambda * evaluate_objective(&data, &spec, &a, &p).unwrap()
            + (1.0 - lambda) * evaluate_objective(&data, &spec, &b, &p).unwrap();
        prop_assert!((mixed - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
    }

    #[test]
    fn whitened_objective_matches_direct(
        pts in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 2), 6),
        lab in labels(6, 2),
        off in -0.9..0.9f64,
    ) {
        let data = Dataset::new(pts).unwrap();
        let p = vec![vec![2.0, off], vec![off, 1.0]];
        let spec = ProblemSpec::new(2, Precision::Matrix(p), &data);
        let a = Assignment::new(lab, 2).unwrap();
        let params = Params { mu: vec![vec![0.3, -0.2], vec![-1.0, 0.5]], pi: vec![0.4, 0.6] };
        let direct = evaluate_objective(&data, &spec, &a, &params).unwrap();
        let (wdata, wt) = whiten(&data, &spec).unwrap();
        let wspec = ProblemSpec::new(2, Precision::Scalar(0.5), &wdata);
        let wparams = Params { mu: params.mu.iter().map(|m| wt.apply(m)).collect(), pi: params.pi.clone() };
        let white = evaluate_objective(&wdata, &wspec, &a, &wparams).unwrap();
        prop_assert!((direct - white).abs() <= 1e-9 * direct.abs().max(1.0));
    }

    #[test]
    fn metrics_vanish_on_self_and_relabelling(ys in scalars(8), lab in labels(8, 3)) {
        let data = Dataset::from_scalars(&ys).unwrap();
        let spec = ProblemSpec::new(3, Precision::Scalar(1.0), &data);
        let solve = |a: Assignment| {
            let params = conditional_params(&data, &spec, &a).unwrap();
            let objective = evaluate_objective(&data, &spec, &a, &params).unwrap();
            MapSolution { assignment: a, params, objective, feasible: true }
        };
        let a = Assignment::new(lab, 3).unwrap();
        prop_assume!(a.counts().iter().all(|&c| c > 0));
        let x = solve(a.clone());
        let y = solve(a.relabel(&[2, 0, 1]));
        for m in [solution_metrics(&x, &x).unwrap(), solution_metrics(&y, &x).unwrap()] {
            prop_assert!(m.pi_sup.abs() < 1e-12);
            prop_assert!(m.mu_l2.abs() < 1e-12);
            prop_assert!(m.z_mean_sup.abs() < 1e-12);
        }
    }

    #[test]
    fn compiled_rows_agree_with_semantics(items in prop::collection::vec(constraint(5, 3), 1..4)) {
        let cs = ConstraintSet::new(items.clone(), 5, 3).unwrap();
        let rows: Vec<_> = items.iter().flat_map(|c| to_linear_rows(c, 5, 3).unwrap()).collect();
        for a in all_assignments(5, 3) {
            let value = |v: Var| match v {
                Var::Z(i, k) => f64::from(u8::from(a.z(i, k))),
                Var::Pi(_) => unreachable!("assignment-only constraints"),
            };
            let by_rows = rows.iter().all(|r| r.holds(value, 1e-9));
            prop_assert_eq!(by_rows, cs.satisfied(&a), "{:?} on {:?}", items, a.labels());
        }
    }

    #[test]
    fn propagation_keeps_every_completion(
        items in prop::collection::vec(constraint(5, 3), 1..4),
        seeds in prop::collection::vec((0..5usize, 0..3usize, any::<bool>()), 0..4),
    ) {
        let cs = ConstraintSet::new(items, 5, 3).unwrap();
        let mut input = Fixings::new(5, 3);
        for (i, k, v) in seeds {
            input.set(i, k, v);
        }
        let out = cs.propagate(input.clone());
        if let Some(out) = &out {
            let again = cs.propagate(out.clone());
            prop_assert_eq!(again.as_ref(), Some(out));
        }
        for a in all_assignments(5, 3) {
            if input.admits(&a) && cs.satisfied(&a) {
                prop_assert!(out.as_ref().is_some_and(|f| f.admits(&a)), "lost {:?}", a.labels());
            }
        }
    }

    #[test]
    fn chords_sandwich_the_log(b in 1usize..80, floor_exp in 1.0..4.0f64) {
        let pi_min = 10f64.powf(-floor_exp);
        let pwl = pwl_chords(pi_min, b).unwrap();
        for j in 0..=2000 {
            let pi = pi_min + (1.0 - pi_min) * j as f64 / 2000.0;
            let gap = pwl.eval(pi) + pi.ln();
            prop_assert!(gap >= -1e-12 && gap <= pwl.e_max + 1e-12, "π={pi} gap={gap}");
        }
    }

    #[test]
    fn model_objective_overestimates_by_at_most_n_emax(ys in scalars(4), lab in labels(4, 3)) {
        let data = Dataset::from_scalars(&ys).unwrap();
        let spec = ProblemSpec::new(3, Precision::Scalar(1.1), &data).with_breakpoints(8);
        let model = build_miqp(&data, &spec, &ConstraintSet::empty(4, 3)).unwrap();
        let a = Assignment::new(lab, 3).unwrap();
        let p = conditional_params(&data, &spec, &a).unwrap();
        let diff = model.objective_at(&a, &p) - evaluate_objective(&data, &spec, &a, &p).unwrap();
        prop_assert!(diff >= -1e-9 && diff <= 4.0 * model.e_max + 1e-9, "diff {diff}");
    }

    #[test]
    fn em_log_likelihood_never_decreases(ys in scalars(12), seed in any::<u64>()) {
        let data = Dataset::from_scalars(&ys).unwrap();
        let spec = ProblemSpec::new(3, Precision::Scalar(1.5), &data);
        let a = heuristics::kmeans_init(&data, 3, seed).unwrap();
        let init = conditional_params(&data, &spec, &a).unwrap();
        let run = heuristics::em(&data, &spec, &ConstraintSet::empty(12, 3), &init, 200, 0.0).unwrap();
        for w in run.soft.loglik_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9);
        }
    }

    #[test]
    fn heuristics_never_beat_the_oracle(ys in scalars(7), seed in any::<u64>()) {
        let data = Dataset::from_scalars(&ys).unwrap();
        let spec = ProblemSpec::new(3, Precision::Scalar(2.0), &data);
        let cs = ConstraintSet::empty(7, 3);
        let best = brute_force(&data, &spec, &cs).unwrap().objective;
        let settings = MultiStartSettings { restarts: 3, seed, ..Default::default() };
        let ms = heuristics::em_multistart(&data, &spec, &cs, &settings).unwrap();
        prop_assert!(ms.best.objective >= best - 1e-9);
        let sched = heuristics::Schedule { steps: 2000, ..Default::default() };
        let sa = heuristics::simulated_annealing(&data, &spec, &cs, &sched, seed).unwrap();
        prop_assert!(sa.best.objective >= best - 1e-9);
    }

    #[test]
    fn oracle_ignores_component_names(ys in scalars(6), l in 1usize..3) {
        let data = Dataset::from_scalars(&ys).unwrap();
        let spec = ProblemSpec::new(3, Precision::Scalar(1.0), &data);
        let a = ConstraintSet::new(vec![SideConstraint::MinSize { k: 0, l }], 6, 3).unwrap();
        let b = ConstraintSet::new(vec![SideConstraint::MinSize { k: 2, l }], 6, 3).unwrap();
        let x = brute_force(&data, &spec, &a).unwrap().objective;
        let y = brute_force(&data, &spec, &b).unwrap().objective;
        prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
    }

    #[test]
    fn result_files_roundtrip(ys in scalars(6), lab in labels(6, 2)) {
        let data = Dataset::from_scalars(&ys).unwrap();
        let spec = ProblemSpec::new(2, Precision::Scalar(1.0), &data);
        let a = Assignment::new(lab, 2).unwrap();
        let params = conditional_params(&data, &spec, &a).unwrap();
        let objective = evaluate_objective(&data, &spec, &a, &params).unwrap();
        let s = MapSolution { assignment: a, params, objective, feasible: true };
        let file = ResultFile::from_solution("optimal", Some(&s), 3, serde_json::json!({}));
        let back: ResultFile = serde_json::from_str(&file.to_json().unwrap()).unwrap();
        let again = back.solution().unwrap().unwrap();
        prop_assert_eq!(again.objective.to_bits(), s.objective.to_bits());
        prop_assert_eq!(again.assignment, s.assignment);
    }
}

#[test]
fn oracle_is_below_random_feasible_assignments() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let ys: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let data = Dataset::from_scalars(&ys).unwrap();
        let spec = ProblemSpec::new(3, Precision::Scalar(1.0), &data);
        let cs = ConstraintSet::new(vec![SideConstraint::CannotLink(0, 1), SideConstraint::MustLink(2, 3)], 8, 3).unwrap();
        let best = brute_force(&data, &spec, &cs).unwrap().objective;
        let mut checked = 0;
        while checked < 1000 {
            let a = Assignment::new((0..8).map(|_| rng.gen_range(0..3)).collect(), 3).unwrap();
            if !cs.satisfied(&a) {
                continue;
            }
            checked += 1;
            let p = conditional_params(&data, &spec, &a).unwrap();
            assert!(evaluate_objective(&data, &spec, &a, &p).unwrap() >= best - 1e-12);
        }
    }
}
