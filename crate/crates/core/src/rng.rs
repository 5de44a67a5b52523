//! Stateless hashing used for reproducible perturbations and seed splitting.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// One round of the splitmix64 finalizer.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a sequence of words into one, order-sensitively.
#[inline]
pub fn hash_words(seed: u64, words: &[u64]) -> u64 {
    let mut h = mix(seed ^ GOLDEN);
    for &w in words {
        h = mix(h.wrapping_add(GOLDEN) ^ w);
    }
    h
}

/// Map a hash to a double in `[0, 1)` using its top 53 bits.
#[inline]
pub fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derive an independent child seed.
#[inline]
pub fn split(seed: u64, index: u64) -> u64 {
    hash_words(seed, &[index])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_deterministic_and_order_sensitive() {
        assert_eq!(hash_words(7, &[1, 2, 3]), hash_words(7, &[1, 2, 3]));
        assert_ne!(hash_words(7, &[1, 2, 3]), hash_words(7, &[3, 2, 1]));
        assert_ne!(hash_words(7, &[1]), hash_words(8, &[1]));
    }

    #[test]
    fn unit_interval_is_roughly_uniform() {
        let n = 100_000;
        let mut bins = [0usize; 10];
        let mut mean = 0.0;
        for i in 0..n {
            let u = unit_interval(hash_words(1, &[i]));
            assert!((0.0..1.0).contains(&u));
            bins[(u * 10.0) as usize] += 1;
            mean += u;
        }
        mean /= n as f64;
        assert!((mean - 0.5).abs() < 0.005);
        for b in bins {
            assert!((b as f64 - 10_000.0).abs() < 500.0);
        }
    }
}
