//! Monte Carlo checks on the experiment layer, at reduced sample counts.

use smps::contraction::{contraction_estimate, SearchOptions};
use smps::ensembles::{gaussian_local_tensor, sample_window, EnsembleSpec, MixingProfile};
use smps::experiments::{c_expectation_series, estimate_xi, recursive_bound_check, spec_beta, CSeries};
use smps::{Error, LocalTensor, RngSeed};

fn sticky(stay: f64, seed: u64) -> [EnsembleSpec; 3] {
    let mut rng = RngSeed::new(seed).rng();
    let a = gaussian_local_tensor(2, 2, 0.5f64.sqrt(), &mut rng).unwrap();
    let b = gaussian_local_tensor(2, 2, 0.5f64.sqrt(), &mut rng).unwrap();
    EnsembleSpec::sticky_markov_family([a, b], stay)
}

#[test]
fn iid_top_exponent_is_negative() {
    let spec = EnsembleSpec::gaussian_iid(2, 2);
    let xi = estimate_xi(&spec, 8, 1000, RngSeed::new(41), SearchOptions::default()).unwrap();
    assert!(xi.xi_hat < -0.05, "xi_hat {}", xi.xi_hat);
    assert!(xi.ci95.1 < 0.0);
    assert!(!xi.minus_infinity);
    assert_eq!(xi.per_n.iter().map(|r| r.n).collect::<Vec<_>>(), vec![2, 4, 6, 8]);
}

/// Pointwise ordering fails at short lengths (powers of one Gaussian tensor
/// contract more than products of two), so the check is on the decay rate
/// over `n = 2..=12` and on the ordering at the far end.
#[test]
fn iid_contracts_faster_than_ti_at_gaussian_marginal() {
    let ns: Vec<usize> = (2..=12).step_by(2).collect();
    let run = |spec: &EnsembleSpec, k: u64| -> CSeries {
        c_expectation_series(spec, &ns, 400, RngSeed::new(52).child(k), SearchOptions::default()).unwrap()
    };
    let (t, i) = (run(&EnsembleSpec::gaussian_ti(2, 2), 1), run(&EnsembleSpec::gaussian_iid(2, 2), 2));
    assert!(i.delta_hat.unwrap() > t.delta_hat.unwrap());
    assert!(i.delta_ci.unwrap().0 > t.delta_ci.unwrap().1);
    let (rt, ri) = (t.rows.last().unwrap(), i.rows.last().unwrap());
    assert!(ri.mean_c + 3.0 * ri.std_error < rt.mean_c - 3.0 * rt.std_error);
}

#[test]
fn log_contraction_is_subadditive() {
    let spec = EnsembleSpec::gaussian_iid(2, 2);
    let opts = SearchOptions::default();
    for k in 0..200u64 {
        let seed = RngSeed::new(61).child(k);
        let (i, j) = (1 + (k % 4) as i64, 1 + (k % 3) as i64);
        let w = sample_window(&spec, 0, (i + j) as usize, seed).unwrap();
        let c_all = contraction_estimate(&w.block(0, i + j - 1).unwrap(), opts, seed.derive("a")).unwrap().lower;
        let c_i = contraction_estimate(&w.block(0, i - 1).unwrap(), opts, seed.derive("i")).unwrap().lower;
        let c_j = contraction_estimate(&w.block(i, i + j - 1).unwrap(), opts, seed.derive("j")).unwrap().lower;
        assert!(c_all.ln() <= c_i.ln() + c_j.ln() + 3e-2, "window {k}: {c_all} vs {c_i}·{c_j}");
    }
}

#[test]
fn recursive_bound_with_declared_profile() {
    let [markov, ti, iid] = sticky(0.75, 71);
    let markov = markov.with_mixing_profile(MixingProfile::FromBeta { factor: 2.0, exponent: 0.5 }).unwrap();
    let opts = SearchOptions { restarts: 16, iters: 200 };
    let triples = [(1, 1, 1), (1, 2, 1), (2, 1, 2), (2, 2, 2), (1, 3, 2), (3, 1, 1), (2, 3, 1), (1, 4, 1), (3, 2, 2), (2, 4, 3)];
    for (k, &(i, q, r)) in triples.iter().enumerate() {
        let c = recursive_bound_check(&markov, i, q, r, 200, RngSeed::new(72).child(k as u64), opts).unwrap();
        assert!(c.pass, "({i},{q},{r}) margin {}", c.margin);
        assert!((c.rho_q - (2.0 * spec_beta(&markov, q).unwrap().sqrt()).min(1.0)).abs() < 1e-15);
    }
    let c = recursive_bound_check(&iid, 2, 1, 2, 200, RngSeed::new(73), opts).unwrap();
    assert_eq!(c.rho_q, 0.0);
    assert!(c.pass);
    let c = recursive_bound_check(&ti, 2, 1, 2, 50, RngSeed::new(74), opts).unwrap();
    assert_eq!(c.rho_q, 1.0);
    assert!(c.pass);
}

#[test]
fn markov_without_profile_is_rejected() {
    let [markov, _, _] = sticky(0.75, 81);
    let err = recursive_bound_check(&markov, 1, 1, 1, 10, RngSeed::new(0), SearchOptions::default()).unwrap_err();
    assert!(matches!(err, Error::MissingProfile));
}

#[test]
fn markov_series_lies_between_extremes() {
    let [markov, ti, iid] = sticky(0.9, 91);
    let ns = [2, 4, 6];
    let opts = SearchOptions { restarts: 16, iters: 200 };
    let m = c_expectation_series(&markov, &ns, 200, RngSeed::new(92), opts).unwrap();
    let t = c_expectation_series(&ti, &ns, 200, RngSeed::new(93), opts).unwrap();
    let i = c_expectation_series(&iid, &ns, 200, RngSeed::new(94), opts).unwrap();
    for j in 0..ns.len() {
        let lo = i.rows[j].mean_c.min(t.rows[j].mean_c) - 3.0 * m.rows[j].std_error;
        let hi = i.rows[j].mean_c.max(t.rows[j].mean_c) + 3.0 * m.rows[j].std_error;
        assert!((lo..=hi).contains(&m.rows[j].mean_c));
    }
}

#[test]
fn depolarizing_series_is_zero_and_flags_underflow() {
    let spec = EnsembleSpec::explicit_ti(LocalTensor::depolarizing(2));
    let opts = SearchOptions { restarts: 4, iters: 50 };
    let s = c_expectation_series(&spec, &[1, 2, 3], 10, RngSeed::new(0), opts).unwrap();
    assert!(s.rows.iter().all(|r| r.mean_c <= 1e-12));
    let xi = estimate_xi(&spec, 4, 10, RngSeed::new(0), opts).unwrap();
    assert!(xi.minus_infinity);
}
