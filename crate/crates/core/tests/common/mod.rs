//! Model generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use mwl_core::integer_dist::{stream_rng, IntegerPmf, SimRng};
use mwl_core::walk::is_irreducible;
use mwl_core::WalkModel;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

/// Free step `±1` w.p. 1/2, one-point membrane kicked up w.p. `p`.
pub fn c1(p: f64) -> WalkModel {
    let unit = IntegerPmf::new(vec![(-1, 0.5), (1, 0.5)]).unwrap();
    let eta = IntegerPmf::new(vec![(-1, 1.0 - p), (1, p)]).unwrap();
    WalkModel::new(0, unit, vec![eta], 0).unwrap()
}

pub fn rng(seed: u64) -> SimRng {
    stream_rng(seed, 0xACCE)
}

fn distinct(rng: &mut SimRng, pool: Vec<i64>, k: usize) -> Vec<i64> {
    let mut pool = pool;
    pool.shuffle(rng);
    pool.truncate(k.min(pool.len()));
    pool
}

/// Zero-mean law on `[-reach, reach]` with both signs present and at most
/// `max_atoms` atoms.
pub fn zero_mean_law(rng: &mut SimRng, reach: i64, max_atoms: usize) -> IntegerPmf {
    let zero = max_atoms >= 3 && rng.random_bool(0.3);
    let budget = max_atoms - usize::from(zero);
    let k_neg = rng.random_range(1..=(budget - 1).min(reach as usize).min(3));
    let k_pos = rng.random_range(1..=(budget - k_neg).min(reach as usize).min(3));
    let neg = distinct(rng, (-reach..=-1).collect(), k_neg);
    let pos = distinct(rng, (1..=reach).collect(), k_pos);
    let mut atoms: Vec<(i64, f64)> = Vec::new();
    let wn: Vec<f64> = neg.iter().map(|_| rng.random_range(0.1..1.0)).collect();
    let wp: Vec<f64> = pos.iter().map(|_| rng.random_range(0.1..1.0)).collect();
    let down: f64 = neg.iter().zip(&wn).map(|(&v, w)| -(v as f64) * w).sum();
    let up: f64 = pos.iter().zip(&wp).map(|(&v, w)| v as f64 * w).sum();
    let scale = down / up;
    atoms.extend(neg.iter().zip(&wn).map(|(&v, &w)| (v, w)));
    atoms.extend(pos.iter().zip(&wp).map(|(&v, &w)| (v, w * scale)));
    if zero {
        atoms.push((0, rng.random_range(0.1..1.0)));
    }
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    IntegerPmf::new(atoms.into_iter().map(|(v, w)| (v, w / total)).collect()).unwrap()
}

/// Arbitrary law on `[-reach, reach]` with `1..=max_atoms` atoms.
pub fn any_law(rng: &mut SimRng, reach: i64, max_atoms: usize) -> IntegerPmf {
    let k = rng.random_range(1..=max_atoms);
    let values = distinct(rng, (-reach..=reach).collect(), k);
    let w: Vec<f64> = values.iter().map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    IntegerPmf::new(
        values
            .into_iter()
            .zip(w)
            .map(|(v, w)| (v, w / total))
            .collect(),
    )
    .unwrap()
}

/// Random irreducible model with half-width `m`, free steps up to `2m + 1`
/// and membrane jumps up to `2m + 3`. Membrane laws have zero mean when
/// `centred`.
pub fn random_model(rng: &mut SimRng, m: u32, max_atoms: usize, centred: bool) -> WalkModel {
    let w = 2 * i64::from(m) + 1;
    loop {
        let step = zero_mean_law(rng, w, max_atoms);
        let laws = (0..w)
            .map(|_| {
                if centred {
                    zero_mean_law(rng, w + 2, max_atoms)
                } else {
                    any_law(rng, w + 2, max_atoms)
                }
            })
            .collect();
        let model = WalkModel::new(m, step, laws, 0).unwrap();
        if is_irreducible(&model).holds() {
            return model;
        }
    }
}

/// First-entrance laws into `{-m..m}` for launch points `m+1 ..= reach`,
/// by value iteration `h <- R + Q h` on `[m+1, top]`, accelerated by
/// squaring `Q`. Overflow above `top` goes to the nearest state of the same
/// residue modulo the step span.
pub fn entrance_oracle(step: &IntegerPmf, m: i64, top: i64, reach: i64) -> Vec<Vec<f64>> {
    let n = (top - m) as usize;
    let w = (2 * m + 1) as usize;
    let g = step.span().max(1);
    let mut q = DMatrix::<f64>::zeros(n, n);
    let mut r = DMatrix::<f64>::zeros(n, w);
    for i in 0..n {
        let y = m + 1 + i as i64;
        for &(d, p) in step.atoms() {
            let mut z = y + d;
            if z <= m {
                r[(i, (z + m) as usize)] += p;
                continue;
            }
            while z > top {
                z -= g;
            }
            q[(i, (z - m - 1) as usize)] += p;
        }
    }
    // h = sum_k Q^k R; after s rounds acc = sum_{k < 2^s} Q^k R.
    let mut acc = r;
    let mut power = q;
    for _ in 0..200 {
        let next = &acc + &power * &acc;
        let moved = (&next - &acc).amax();
        acc = next;
        power = &power * &power;
        if moved < 1e-15 && power.amax() < 1e-15 {
            break;
        }
    }
    (0..(reach - m) as usize)
        .map(|i| acc.row(i).iter().copied().collect())
        .collect()
}

/// Composite Simpson on `[a, b]` with `n` (even) panels; a panel endpoint at
/// 0 takes the one-sided limit from inside `[a, b]`.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let side = if a + b > 0.0 {
        f64::MIN_POSITIVE
    } else {
        -f64::MIN_POSITIVE
    };
    let g = |u: f64| f(if u == 0.0 { side } else { u });
    let h = (b - a) / n as f64;
    let mut acc = g(a) + g(b);
    for i in 1..n {
        let wgt = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += wgt * g(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Integral over the line split at the jump at 0.
pub fn integrate_line(f: impl Fn(f64) -> f64 + Copy, reach: f64) -> f64 {
    simpson(f, -reach, 0.0, 4000) + simpson(f, 0.0, reach, 4000)
}
