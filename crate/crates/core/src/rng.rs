//! Counter-based seeding and the direction samplers used for section measures.

use crate::vec3::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

/// The splitmix64 finalizer.
#[inline]
pub fn splitmix64(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sub-stream `index` of `master`. Pure, so any stream can be
/// regenerated without touching the others.
#[inline]
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(splitmix64(index)))
}

pub fn stream(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, index))
}

/// Unit vectors `(e1, e2)` completing the unit `n` to a right-handed frame.
pub fn frame(n: Vec3) -> (Vec3, Vec3) {
    let e1 = n.any_orthonormal();
    (e1, n.cross(e1))
}

fn from_frame(n: Vec3, cos: f64, phi: f64) -> Vec3 {
    let (e1, e2) = frame(n);
    let sin = (1.0 - cos * cos).max(0.0).sqrt();
    (n * cos + e1 * (sin * phi.cos()) + e2 * (sin * phi.sin())).normalized()
}

/// Direction on the hemisphere around `n` with density ∝ v·n.
pub fn cosine_hemisphere(n: Vec3, rng: &mut impl Rng) -> Vec3 {
    // v·n = sqrt(u) has density 2c on [0, 1], which is the cosine law
    let u: f64 = rng.random();
    from_frame(n, (1.0 - u).sqrt(), TAU * rng.random::<f64>())
}

/// Direction uniform on the hemisphere around `n`.
pub fn uniform_hemisphere(n: Vec3, rng: &mut impl Rng) -> Vec3 {
    from_frame(n, 1.0 - rng.random::<f64>(), TAU * rng.random::<f64>())
}

/// Direction uniform on the cap `v·n ≥ eps`.
pub fn uniform_cap(n: Vec3, eps: f64, rng: &mut impl Rng) -> Vec3 {
    let c = 1.0 - (1.0 - eps) * rng.random::<f64>();
    from_frame(n, c, TAU * rng.random::<f64>())
}

/// Direction on the cap `v·n ≥ eps` with density ∝ v·n (rejection from the
/// cosine-weighted hemisphere).
pub fn cosine_cap(n: Vec3, eps: f64, rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = cosine_hemisphere(n, rng);
        if v.dot(n) >= eps {
            return v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_separates_streams() {
        let a = derive_seed(1, 0);
        let b = derive_seed(1, 1);
        let c = derive_seed(2, 0);
        assert!(a != b && a != c && b != c);
        assert_eq!(derive_seed(1, 0), a);
    }

    #[test]
    fn cosine_hemisphere_mean_cosine() {
        let mut rng = stream(3, 0);
        let n = Vec3::new(1.0, 2.0, 2.0).normalized();
        let k = 200_000;
        let mean: f64 = (0..k).map(|_| cosine_hemisphere(n, &mut rng).dot(n)).sum::<f64>() / k as f64;
        // E[c] = ∫ 2c·c dc = 2/3; sd of c is sqrt(1/2 - 4/9)
        let sd = (0.5f64 - 4.0 / 9.0).sqrt() / (k as f64).sqrt();
        assert!((mean - 2.0 / 3.0).abs() < 4.0 * sd);
    }

    #[test]
    fn cap_samples_respect_the_cap() {
        let mut rng = stream(4, 0);
        for _ in 0..10_000 {
            let v = uniform_cap(Vec3::Z, 0.3, &mut rng);
            assert!(v.z >= 0.3 - 1e-12 && (v.norm() - 1.0).abs() < 1e-12);
            let w = cosine_cap(Vec3::Z, 0.3, &mut rng);
            assert!(w.z >= 0.3);
        }
    }
}
