//! Brute-force oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use smps::ensembles::{matrix_power, ChainWindow};
use smps::{CMatrix, C64};

/// `Ψ(p) = tr(A†_{p_{-N}} ⋯ A†_{p_N})` summed over the full dense state.
pub fn dense_expectation(w: &ChainWindow, n: i64, obs: &[(i64, CMatrix)]) -> f64 {
    let sites: Vec<i64> = (-n..=n).collect();
    let d = w.phys_dim();
    let count = d.pow(sites.len() as u32);
    let digits = |mut idx: usize| -> Vec<usize> {
        let mut out = vec![0; sites.len()];
        for slot in out.iter_mut().rev() {
            *slot = idx % d;
            idx /= d;
        }
        out
    };
    let psi: Vec<C64> = (0..count)
        .map(|idx| {
            let p = digits(idx);
            let mut m = CMatrix::identity(w.bond_dim());
            for (k, &s) in sites.iter().enumerate() {
                m = m.mul(&w.tensor(s).unwrap().kraus()[p[k]].adjoint());
            }
            m.trace()
        })
        .collect();
    // Apply each observable to the ket, one site at a time.
    let mut phi = psi.clone();
    for (site, o) in obs {
        let k = sites.iter().position(|s| s == site).unwrap();
        let mut next = vec![C64::new(0.0, 0.0); count];
        for (idx, slot) in next.iter_mut().enumerate() {
            let p = digits(idx);
            for q in 0..d {
                let mut pq = p.clone();
                pq[k] = q;
                let jdx = pq.iter().fold(0, |acc, &x| acc * d + x);
                *slot += o.get(p[k], q) * phi[jdx];
            }
        }
        phi = next;
    }
    let num: C64 = psi.iter().zip(&phi).map(|(a, b)| a.conj() * b).sum();
    let den: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
    num.re / den
}

fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    // Restricted growth strings: block label of each atom.
    let mut out = Vec::new();
    let mut cur = vec![0usize; n];
    fn rec(i: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        for b in 0..=max + 1 {
            cur[i] = b;
            rec(i + 1, max.max(b), cur, out);
        }
    }
    if n > 0 {
        rec(1, 0, &mut cur, &mut out);
    }
    out
}

/// β between the past pair `(X_{-1}, X_0)` and the future pair
/// `(X_n, X_{n+1})`, as the supremum over every pair of finite partitions of
/// the two path spaces.
pub fn beta_brute_force(p: &[Vec<f64>], pi: &[f64], n: usize) -> f64 {
    let k = p.len();
    let pn = matrix_power(p, n);
    let atoms: Vec<(usize, usize)> = (0..k).flat_map(|a| (0..k).map(move |b| (a, b))).collect();
    let joint = |past: (usize, usize), fut: (usize, usize)| {
        pi[past.0] * p[past.0][past.1] * pn[past.1][fut.0] * p[fut.0][fut.1]
    };
    let marg_past: Vec<f64> = atoms.iter().map(|&a| atoms.iter().map(|&b| joint(a, b)).sum()).collect();
    let marg_fut: Vec<f64> = atoms.iter().map(|&b| atoms.iter().map(|&a| joint(a, b)).sum()).collect();
    let parts = set_partitions(atoms.len());
    let mut best: f64 = 0.0;
    for pa in &parts {
        for pb in &parts {
            let nb_a = pa.iter().max().unwrap() + 1;
            let nb_b = pb.iter().max().unwrap() + 1;
            let mut total = 0.0;
            for i in 0..nb_a {
                for j in 0..nb_b {
                    let mut both = 0.0;
                    let (mut pa_i, mut pb_j) = (0.0, 0.0);
                    for (x, a) in atoms.iter().enumerate() {
                        if pa[x] == i {
                            pa_i += marg_past[x];
                            for (y, b) in atoms.iter().enumerate() {
                                if pb[y] == j {
                                    both += joint(*a, *b);
                                }
                            }
                        }
                    }
                    for y in 0..atoms.len() {
                        if pb[y] == j {
                            pb_j += marg_fut[y];
                        }
                    }
                    total += (both - pa_i * pb_j).abs();
                }
            }
            best = best.max(0.5 * total);
        }
    }
    best
}

