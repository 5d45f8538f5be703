//! Deterministic stand-ins for the encoder and generator services.
//!
//! Mock vectors are derived from `(seed, key)` only, with a scheme that is
//! easy to reproduce in other languages:
//!
//! * block `j` is `SHA-256(seed as u64 LE || key UTF-8 || j as u32 LE)`;
//! * each block yields four u64 words (LE); word `w` maps to the open
//!   interval `(0, 1)` as `((w >> 11) + 0.5) / 2^53`;
//! * consecutive uniforms `(u1, u2)` become two standard normals via
//!   Box-Muller: `r = sqrt(-2 ln u1)`, `r cos(2 pi u2)`, `r sin(2 pi u2)`;
//! * the first `d` normals are unit-normalized.

use sha2::{Digest, Sha256};

fn uniforms(seed: u64, key: &str) -> impl Iterator<Item = f64> + '_ {
    (0u32..).flat_map(move |block| {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(key.as_bytes());
        h.update(block.to_le_bytes());
        let digest = h.finalize();
        (0..4).map(move |w| {
            let word = u64::from_le_bytes(digest[w * 8..w * 8 + 8].try_into().unwrap());
            ((word >> 11) as f64 + 0.5) / (1u64 << 53) as f64
        })
    })
}

/// Unit-norm pseudo-Gaussian vector determined by `(seed, key)`.
pub fn mock_vector(seed: u64, key: &str, dim: usize) -> Vec<f64> {
    let mut u = uniforms(seed, key);
    let mut v = Vec::with_capacity(dim + 1);
    while v.len() < dim {
        let u1 = u.next().unwrap();
        let u2 = u.next().unwrap();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        v.push(r * theta.cos());
        v.push(r * theta.sin());
    }
    v.truncate(dim);
    let n = crate::embedding::norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// 64-bit digest of `(seed, key, index)`, used to derive mock choices and
/// per-item generation seeds.
pub fn mix(seed: u64, key: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    h.update(index.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectors_are_unit_and_stable() {
        let a = mock_vector(7, "img-1", 16);
        let b = mock_vector(7, "img-1", 16);
        assert_eq!(a, b);
        assert!((crate::embedding::norm(&a) - 1.0).abs() < 1e-12);
        assert_ne!(a, mock_vector(8, "img-1", 16));
        assert_ne!(a, mock_vector(7, "img-2", 16));
        // odd dimensions consume half a Box-Muller pair
        assert_eq!(mock_vector(7, "x", 3).len(), 3);
    }

    #[test]
    fn frozen_first_uniform() {
        // Block 0 for seed 0 and an empty key hashes twelve zero bytes.
        let u = uniforms(0, "").next().unwrap();
        let digest = Sha256::digest([0u8; 12]);
        let word = u64::from_le_bytes(digest[..8].try_into().unwrap());
        assert_eq!(u, ((word >> 11) as f64 + 0.5) / 9007199254740992.0);
        assert!(u > 0.0 && u < 1.0);
    }
}
