use conmab_core::linmodel::LearnerState;
use proptest::prelude::*;

// Gaussian elimination with partial pivoting, kept separate from the
// Cholesky path used by the learner.
fn dense_solve(mut a: Vec<f64>, mut b: Vec<f64>, d: usize) -> Vec<f64> {
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&i, &j| a[i * d + col].abs().total_cmp(&a[j * d + col].abs()))
            .unwrap();
        for k in 0..d {
            a.swap(col * d + k, pivot * d + k);
        }
        b.swap(col, pivot);
        for row in col + 1..d {
            let f = a[row * d + col] / a[col * d + col];
            for k in col..d {
                a[row * d + k] -= f * a[col * d + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; d];
    for row in (0..d).rev() {
        let tail: f64 = (row + 1..d).map(|k| a[row * d + k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row * d + row];
    }
    x
}

fn unit(raw: Vec<f64>) -> Vec<f64> {
    let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        let mut e = vec![0.0; raw.len()];
        e[0] = 1.0;
        return e;
    }
    raw.into_iter().map(|v| v / n).collect()
}

fn trajectory(max_len: usize) -> impl Strategy<Value = (usize, Vec<(Vec<f64>, bool)>)> {
    (1usize..=6).prop_flat_map(move |d| {
        let step = (prop::collection::vec(0.0f64..1.0, d), any::<bool>()).prop_map(|(x, r)| (unit(x), r));
        (Just(d), prop::collection::vec(step, 1..max_len))
    })
}

fn probe(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn incremental_estimate_matches_dense_solve((d, steps) in trajectory(1000)) {
        let mut state = LearnerState::new(d);
        let mut gram = vec![0.0; d * d];
        for i in 0..d {
            gram[i * d + i] = 1.0;
        }
        let mut response = vec![0.0; d];
        for (x, r) in &steps {
            state.update(x, *r);
            for i in 0..d {
                for j in 0..d {
                    gram[i * d + j] += x[i] * x[j];
                }
                if *r {
                    response[i] += x[i];
                }
            }
        }
        let expected = dense_solve(gram.clone(), response.clone(), d);
        for (a, b) in state.theta().iter().zip(&expected) {
            prop_assert!((a - b).abs() <= 1e-8, "theta {a} vs dense {b}");
        }
        for (a, b) in state.gram().iter().zip(&gram) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
        for (a, b) in state.response().iter().zip(&response) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn width_never_grows_with_data(
        (d, steps) in trajectory(200),
        raw in prop::collection::vec(0.0f64..1.0, 6),
    ) {
        let x = unit(raw[..d].to_vec());
        let mut state = LearnerState::new(d);
        let mut prev = state.quad_form(&x);
        for (z, r) in &steps {
            state.update(z, *r);
            let now = state.quad_form(&x);
            prop_assert!(now <= prev + 1e-12, "{now} > {prev}");
            prev = now;
        }
    }

    #[test]
    fn gram_eigenvalues_stay_above_one(
        (d, steps) in trajectory(200),
        probes in prop::collection::vec(probe(6), 1..20),
    ) {
        let mut state = LearnerState::new(d);
        for (z, r) in &steps {
            state.update(z, *r);
        }
        let a = state.gram();
        for p in probes {
            let p = &p[..d];
            let norm2: f64 = p.iter().map(|v| v * v).sum();
            let quad: f64 = (0..d)
                .map(|i| (0..d).map(|j| p[i] * a[i * d + j] * p[j]).sum::<f64>())
                .sum();
            prop_assert!(quad >= norm2 - 1e-9 * (1.0 + norm2), "{quad} < {norm2}");
        }
    }

    #[test]
    fn scoring_is_pure((d, steps) in trajectory(50), alpha in 0.0f64..3.0) {
        let mut state = LearnerState::new(d);
        for (z, r) in &steps {
            state.update(z, *r);
        }
        let before = state.clone();
        for (z, _) in &steps {
            let s = state.score(z, alpha);
            prop_assert!(s.lcb <= s.ucb);
        }
        prop_assert_eq!(before, state);
    }
}
