//! Small numeric helpers shared across modules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn scaled(v: &[f64], k: f64) -> Vec<f64> {
    v.iter().map(|x| x * k).collect()
}

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `index` in base `b`.
fn radical_inverse(mut index: u64, b: u32) -> f64 {
    let b = b as u64;
    let inv = 1.0 / b as f64;
    let mut f = inv;
    let mut out = 0.0;
    while index > 0 {
        out += f * (index % b) as f64;
        index /= b;
        f *= inv;
    }
    out
}

/// Point `index` of the Halton sequence in `[0,1)^dim` (index 0 is skipped).
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "halton: dimension {dim} unsupported");
    (0..dim).map(|k| radical_inverse(index + 1, PRIMES[k])).collect()
}

/// Roughly uniform unit directions in `R^n`.
///
/// Equally spaced angles for `n = 2`, a spherical Fibonacci lattice for `n = 3`,
/// seeded Gaussian directions otherwise.
pub fn sphere_directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    match n {
        0 => Vec::new(),
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - (2.0 * k as f64 + 1.0) / count as f64;
                    let rad = (1.0 - z * z).max(0.0).sqrt();
                    let a = golden * k as f64;
                    vec![rad * a.cos(), rad * a.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            (0..count).map(|_| random_direction(n, &mut rng)).collect()
        }
    }
}

pub fn random_direction<R: rand::Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let r = norm(&v);
        if r > 1e-12 {
            return scaled(&v, 1.0 / r);
        }
    }
}

/// Map a point of `[0,1)^(n-1)` onto the unit sphere in `R^n`.
///
/// `n = 2` uses the angle directly, `n = 3` an equal-area map; larger `n` goes
/// through Box-Muller.
pub fn cube_to_sphere(u: &[f64], n: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    match n {
        1 => vec![if u.first().copied().unwrap_or(0.0) < 0.5 { 1.0 } else { -1.0 }],
        2 => {
            let a = 2.0 * PI * u[0];
            vec![a.cos(), a.sin()]
        }
        3 => {
            let z = 1.0 - 2.0 * u[0];
            let rad = (1.0 - z * z).max(0.0).sqrt();
            let a = 2.0 * PI * u[1];
            vec![rad * a.cos(), rad * a.sin(), z]
        }
        _ => {
            // Box-Muller on the n-1 coordinates plus one golden-ratio filler.
            let mut w: Vec<f64> = u.iter().map(|p| p.clamp(1e-12, 1.0 - 1e-12)).collect();
            w.push((0.5 + 0.618_033_988_7 * u.iter().sum::<f64>()).fract().clamp(1e-12, 1.0));
            if w.len() % 2 == 1 {
                w.push(0.5);
            }
            let mut v: Vec<f64> = w
                .chunks(2)
                .flat_map(|p| {
                    let r = (-2.0 * p[0].ln()).sqrt();
                    let a = 2.0 * PI * p[1];
                    [r * a.cos(), r * a.sin()]
                })
                .collect();
            v.truncate(n);
            let r = norm(&v);
            if r < 1e-12 {
                let mut e = vec![0.0; n];
                e[0] = 1.0;
                e
            } else {
                scaled(&v, 1.0 / r)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_first_points() {
        assert_eq!(halton(0, 2), vec![0.5, 1.0 / 3.0]);
        assert_eq!(halton(1, 2), vec![0.25, 2.0 / 3.0]);
    }

    #[test]
    fn directions_are_unit() {
        for n in 1..6 {
            for d in sphere_directions(n, 64) {
                assert!((norm(&d) - 1.0).abs() < 1e-12);
            }
        }
        for k in 0..50 {
            let u = halton(k, 4);
            assert!((norm(&cube_to_sphere(&u, 5)) - 1.0).abs() < 1e-12);
        }
    }
}
