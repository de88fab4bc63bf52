//! Multiplicative process noise on concentrations with a spurious-value cutoff.

use rand::Rng;
use rand_distr::StandardNormal;

/// Adds `N(0, (fraction |c|)^2)` to every entry and zeroes the results that
/// end up at or below `epsilon_spurious`.
pub fn add_process_noise<R: Rng>(c: &mut [f64], fraction: f64, epsilon_spurious: f64, rng: &mut R) {
    for x in c.iter_mut() {
        if *x == 0.0 {
            continue;
        }
        let z: f64 = rng.sample(StandardNormal);
        let v = *x + fraction * x.abs() * z;
        *x = if v > epsilon_spurious { v } else { 0.0 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn zeros_stay_zero() {
        let mut c = vec![0.0; 10];
        add_process_noise(&mut c, 0.1, 1e-6, &mut substream(1, "t", 0, 0));
        assert!(c.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn spurious_entries_are_cut() {
        let mut c = vec![1e-9, -0.5];
        add_process_noise(&mut c, 0.1, 1e-6, &mut substream(1, "t", 0, 0));
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn perturbation_std_is_ten_percent() {
        let mut rng = substream(2, "t", 0, 0);
        let n = 1_000_000;
        let mut c = vec![1.0; n];
        add_process_noise(&mut c, 0.1, 1e-6, &mut rng);
        let mean = c.iter().sum::<f64>() / n as f64;
        let std = (c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        assert!((mean - 1.0).abs() < 1e-3);
        assert!((std - 0.1).abs() < 1e-3, "std {std}");
    }
}
