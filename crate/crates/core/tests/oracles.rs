//! Independent oracles: each test recomputes a library quantity by a
//! different, more direct route.

mod common;

use common::{beta_brute_force, dense_expectation};

use rand::Rng;
use smps::contraction::{contraction_estimate, contraction_oracle_d2, m_coeff, SearchOptions};
use smps::ensembles::{gaussian_local_tensor, markov_beta_exact, sample_window, EnsembleSpec};
use smps::linalg::{devectorize, hermitian_eigenvalues, vectorize};
use smps::rng::complex_normal;
use smps::superop::{is_certified_positive, liouville_of_tensor};
use smps::thermo::finite_expectation;
use smps::{CMatrix, DensityState, HermitianObservable, LocalTensor, RngSeed, C64};

fn random_psd<R: Rng>(rng: &mut R, dim: usize) -> CMatrix {
    let g = CMatrix::from_fn(dim, |_, _| complex_normal(rng, 1.0));
    g.mul(&g.adjoint())
}

#[test]
fn liouville_matches_kraus_sum() {
    let mut rng = RngSeed::new(11).rng();
    for &(d, dd) in &[(2, 2), (2, 3), (3, 2)] {
        for _ in 0..20 {
            let t = gaussian_local_tensor(d, dd, 1.0, &mut rng).unwrap();
            let rho = DensityState::from_psd(&random_psd(&mut rng, dd)).unwrap();
            let direct = t.kraus().iter().fold(CMatrix::zeros(dd), |acc, a| {
                acc.add(&a.mul(rho.matrix()).mul(&a.adjoint()))
            });
            let via = liouville_of_tensor(&t).apply(rho.matrix()).unwrap();
            assert!(via.sub(&direct).frobenius() < 1e-10);
        }
    }
}

#[test]
fn vectorization_stacks_columns() {
    let x = CMatrix::from_fn(2, |i, j| C64::new((i + 10 * j) as f64, 0.0));
    let v = vectorize(&x);
    assert_eq!(v.iter().map(|z| z.re).collect::<Vec<_>>(), vec![0.0, 1.0, 10.0, 11.0]);
    assert_eq!(devectorize(&v).unwrap(), x);
}

#[test]
fn finite_expectation_matches_dense_state() {
    let o = CMatrix::from_rows(&[
        vec![C64::new(0.3, 0.0), C64::new(0.2, -0.7)],
        vec![C64::new(0.2, 0.7), C64::new(-1.1, 0.0)],
    ])
    .unwrap();
    let ho = HermitianObservable::new(o.clone()).unwrap();
    for seed in 0..5 {
        for spec in [EnsembleSpec::gaussian_iid(2, 2), EnsembleSpec::gaussian_iid(2, 3)] {
            let w = sample_window(&spec, -2, 5, RngSeed::new(seed)).unwrap();
            let one = finite_expectation(&w, &[(0, ho.clone())], 2).unwrap();
            assert!((one - dense_expectation(&w, 2, &[(0, o.clone())])).abs() < 1e-8);
            let two = finite_expectation(&w, &[(-1, ho.clone()), (1, ho.clone())], 2).unwrap();
            let dense = dense_expectation(&w, 2, &[(-1, o.clone()), (1, o.clone())]);
            assert!((two - dense).abs() < 1e-8, "{two} vs {dense}");
        }
    }
}

/// Largest λ with `A − λB ⪰ 0`, by bisection on the minimum eigenvalue.
fn m_bisect(a: &CMatrix, b: &CMatrix) -> f64 {
    let feasible = |l: f64| hermitian_eigenvalues(&a.sub(&b.scale_re(l)))[0] >= -1e-12;
    let (mut lo, mut hi) = (0.0, 1.0);
    while feasible(hi) {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[test]
fn m_coeff_matches_bisection() {
    let mut rng = RngSeed::new(4).rng();
    for dim in [2, 3] {
        for _ in 0..20 {
            let a = random_psd(&mut rng, dim);
            let b = random_psd(&mut rng, dim);
            let m = m_coeff(&a, &b).unwrap();
            assert!((m - m_bisect(&a, &b)).abs() < 1e-8 * (1.0 + m));
        }
    }
    // B leaves the support of A.
    let a = CMatrix::diag(&[1.0, 0.0]);
    let b = CMatrix::diag(&[1.0, 1.0]);
    assert_eq!(m_coeff(&a, &b).unwrap(), 0.0);
    assert!((m_coeff(&a, &CMatrix::diag(&[0.5, 0.0])).unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn contraction_search_agrees_with_grid() {
    let mut rng = RngSeed::new(21).rng();
    let mut checked = 0;
    while checked < 8 {
        let t = gaussian_local_tensor(4, 2, 0.5, &mut rng).unwrap();
        let s = liouville_of_tensor(&t);
        if !is_certified_positive(&s) {
            continue;
        }
        let c = contraction_estimate(&s, SearchOptions::default(), RngSeed::new(checked)).unwrap().lower;
        let g = contraction_oracle_d2(&s, 64).unwrap();
        assert!((c - g).abs() < 2e-2, "search {c} vs grid {g}");
        assert!(c > 0.0 && c < 1.0);
        checked += 1;
    }
}

#[test]
fn markov_beta_matches_partition_brute_force() {
    for stay in [0.6, 0.75, 0.9] {
        let p = vec![vec![stay, 1.0 - stay], vec![1.0 - stay, stay]];
        let pi = [0.5, 0.5];
        for n in 1..=6 {
            let exact = markov_beta_exact(&p, &pi, n).unwrap();
            assert!((exact - beta_brute_force(&p, &pi, n)).abs() < 1e-12);
            assert!((exact - (2.0 * stay - 1.0).abs().powi(n as i32) / 2.0).abs() < 1e-12);
        }
    }
    // An asymmetric chain, where the closed form no longer applies.
    let p = vec![vec![0.7, 0.3], vec![0.2, 0.8]];
    let pi = [0.4, 0.6];
    for n in 1..=4 {
        let exact = markov_beta_exact(&p, &pi, n).unwrap();
        assert!((exact - beta_brute_force(&p, &pi, n)).abs() < 1e-12);
    }
}

#[test]
fn sampled_hidden_path_is_stationary() {
    use smps::stats::{ks_critical, ks_statistic};
    let t0 = LocalTensor::depolarizing(2);
    let t1 = LocalTensor::new(vec![CMatrix::identity(2)]).unwrap();
    let pad = |t: &LocalTensor| {
        let mut k = t.kraus().to_vec();
        k.resize(4, CMatrix::zeros(2));
        LocalTensor::new(k).unwrap()
    };
    let [markov, _, _] = EnsembleSpec::sticky_markov_family([t0, pad(&t1)], 0.75);
    // State frequencies at an early and a late site across independent paths.
    let mut early = Vec::new();
    let mut late = Vec::new();
    for i in 0..600 {
        let w = sample_window(&markov, 0, 40, RngSeed::new(77).child(i)).unwrap();
        let path = w.hidden_path.expect("Markov windows record their hidden path");
        early.push(path[0] as f64);
        late.push(path[39] as f64);
    }
    let crit = ks_critical(early.len(), late.len(), 1e-3);
    assert!(ks_statistic(&early, &late) < crit);
    let frac = early.iter().sum::<f64>() / early.len() as f64;
    assert!((frac - 0.5).abs() < 0.1);
}
