//! Thread-pool setup. `RENVOL_THREADS` caps the rayon pool; reductions in this
//! crate are sequential Kahan sums, so results are bitwise reproducible for a
//! fixed config and seed regardless of thread count.

use std::sync::OnceLock;

static INIT: OnceLock<()> = OnceLock::new();

pub fn init_runtime() {
    INIT.get_or_init(|| {
        if let Ok(v) = std::env::var("RENVOL_THREADS") {
            if let Ok(k) = v.trim().parse::<usize>() {
                if k >= 1 {
                    // Ignore failure: a global pool may already exist (tests).
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
                }
            }
        }
    });
}

/// Neumaier-compensated sequential sum; the deterministic reduction used for
/// all integrals and norms.
pub fn ksum(it: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for x in it {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ksum_beats_naive_on_adversarial_input() {
        let mut xs = Vec::new();
        for _ in 0..3000 {
            xs.extend_from_slice(&[1.0e16, 1.0, -1.0e16]);
        }
        let naive: f64 = xs.iter().sum();
        assert_eq!(naive, 0.0); // the 1.0s are lost without compensation
        assert_eq!(ksum(xs.iter().copied()), 3000.0);
    }
}
