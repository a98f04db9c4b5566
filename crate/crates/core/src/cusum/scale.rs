//! Scale function of the reflected LSPR and the average-run-length (ARL)
//! formulas built on it.
//!
//! With drift coefficient `beta = beta(rho)`:
//!
//! ```text
//! W(x)        = (1/beta) sum_{k=0}^{floor(x)} ((-1)^k / k!) ((x-k)/beta)^k e^{(x-k)/beta}
//! int_0^x W   = sum_{k=0}^{floor(x)} ( e^{(x-k)/beta} sum_{j=0}^k ((-1)^j/j!) ((x-k)/beta)^j  - 1 )
//! ```
//!
//! The decrease detector's ARL from level `y` is `g_m(y) = int_y^m W`; the
//! increase detector's is `h_m(v) = W(m-v) W(m)/W'(m) - int_0^{m-v} W`. The
//! tilde variants use `beta~ = beta(rho)/rho` and give the post-change
//! expected detection delay; they are related to the plain versions through
//! the pointwise identity `W(x; beta) = rho~ rho~^x W(x; beta~)` with
//! `rho~ = 1/rho`.

use crate::error::{Error, Result};

pub fn beta_of_rho(rho: f64) -> Result<f64> {
    if !(rho > 0.0) || rho == 1.0 || !rho.is_finite() {
        return Err(Error::InvalidRho { rho });
    }
    Ok((rho - 1.0) / rho.ln())
}

/// Compensated (Kahan) accumulator for the alternating series.
#[derive(Default)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

pub fn scale_w(x: f64, beta: f64) -> f64 {
    debug_assert!(x >= 0.0 && beta > 0.0);
    let mut acc = Kahan::default();
    let mut factorial = 1.0f64;
    for k in 0..=(x.floor() as i64) {
        if k > 0 {
            factorial *= k as f64;
        }
        let u = (x - k as f64) / beta;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        acc.add(sign / factorial * u.powi(k as i32) * u.exp());
    }
    acc.sum / beta
}

fn is_kink(x: f64) -> bool {
    (x - x.round()).abs() < 1e-12
}

/// Termwise analytic derivative of the `W` series; integer arguments are
/// kink points and rejected (use [`scale_w_prime_right`] to pick the
/// right-hand side).
pub fn scale_w_prime(x: f64, beta: f64) -> Result<f64> {
    if is_kink(x) {
        return Err(Error::KinkPoint { x });
    }
    Ok(scale_w_prime_right(x, beta))
}

/// Right-hand derivative of `W`; agrees with [`scale_w_prime`] away from
/// integers.
pub fn scale_w_prime_right(x: f64, beta: f64) -> f64 {
    debug_assert!(x >= 0.0 && beta > 0.0);
    let mut acc = Kahan::default();
    let mut factorial = 1.0f64;
    for k in 0..=(x.floor() as i64) {
        if k > 0 {
            factorial *= k as f64;
        }
        let u = (x - k as f64) / beta;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let poly = u.powi(k as i32) + if k >= 1 { k as f64 * u.powi(k as i32 - 1) } else { 0.0 };
        acc.add(sign / factorial * poly * u.exp());
    }
    acc.sum / (beta * beta)
}

pub fn int_w(x: f64, beta: f64) -> f64 {
    debug_assert!(x >= 0.0 && beta > 0.0);
    let mut acc = Kahan::default();
    for k in 0..=(x.floor() as i64) {
        let u = (x - k as f64) / beta;
        let mut inner = Kahan::default();
        let mut term = 1.0f64; // (-1)^j / j! u^j
        inner.add(term);
        for j in 1..=k {
            term *= -u / j as f64;
            inner.add(term);
        }
        acc.add(u.exp() * inner.sum - 1.0);
    }
    acc.sum
}

fn check_level(level: f64, m: f64) -> Result<()> {
    if !(m > 0.0) || !(0.0..=m).contains(&level) {
        return Err(Error::InvalidConfig(format!(
            "level {level} outside [0, m = {m}]"
        )));
    }
    Ok(())
}

/// `g_m(y) = int_y^m W(z; beta(rho)) dz`: expected event count at the first
/// false alarm of the decrease detector started from reflected level `y`.
pub fn arl_decrease(y: f64, m: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidRho { rho });
    }
    check_level(y, m)?;
    let beta = beta_of_rho(rho)?;
    Ok(int_w(m, beta) - int_w(y, beta))
}

fn h_formula(v: f64, m: f64, beta: f64) -> f64 {
    scale_w(m - v, beta) * scale_w(m, beta) / scale_w_prime_right(m, beta) - int_w(m - v, beta)
}

/// `h_m(v) = W(m-v) W(m)/W'(m) - int_0^{m-v} W` with `beta = beta(rho)`:
/// expected event count at the first false alarm of the increase detector
/// started from reflected level `v`.
pub fn arl_increase(v: f64, m: f64, rho: f64) -> Result<f64> {
    if !(rho > 1.0) || !rho.is_finite() {
        return Err(Error::InvalidRho { rho });
    }
    check_level(v, m)?;
    Ok(h_formula(v, m, beta_of_rho(rho)?))
}

/// `g~_m(y) = rho int_y^m rho^z W(z; beta(rho)) dz`, evaluated through the
/// substitution `W(z; beta) = rho~ rho~^z W(z; beta~)` as
/// `int_y^m W(z; beta~) dz` with `beta~ = beta(rho)/rho`. For `rho < 1` this
/// is the post-change expected detection delay of the decrease detector.
pub fn tilde_g(y: f64, m: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidRho { rho });
    }
    check_level(y, m)?;
    let beta_tilde = beta_of_rho(rho)? / rho;
    Ok(int_w(m, beta_tilde) - int_w(y, beta_tilde))
}

/// `h~_m(v)`: the increase-detector mirror of [`tilde_g`], the `h_m` formula
/// evaluated at `beta~ = beta(rho)/rho` for `rho > 1`.
pub fn tilde_h(v: f64, m: f64, rho: f64) -> Result<f64> {
    if !(rho > 1.0) || !rho.is_finite() {
        return Err(Error::InvalidRho { rho });
    }
    check_level(v, m)?;
    Ok(h_formula(v, m, beta_of_rho(rho)? / rho))
}

/// ARL from a fresh detector state: `g_m(0)` for `rho < 1`, `h_m(0)` for
/// `rho > 1`.
pub fn arl_fresh(m: f64, rho: f64) -> Result<f64> {
    if rho < 1.0 {
        arl_decrease(0.0, m, rho)
    } else {
        arl_increase(0.0, m, rho)
    }
}

/// Smallest threshold `m` whose fresh-state ARL reaches `target`; bisection
/// on the strictly increasing ARL map to `|ARL - target| < 1e-6 target`.
pub fn calibrate_threshold(target: f64, rho: f64) -> Result<f64> {
    if !(target > 0.0) {
        return Err(Error::InvalidConfig(format!("target ARL {target} must be > 0")));
    }
    beta_of_rho(rho)?; // validates rho
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while arl_fresh(hi, rho)? < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::InvalidConfig(format!("target ARL {target} out of range")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let arl = arl_fresh(mid, rho)?;
        if (arl - target).abs() < 1e-6 * target {
            return Ok(mid);
        }
        if arl < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const BETA_DOWN: f64 = 0.721_347_520_444_481_7; // beta(0.5) = 0.5 / ln 2

    #[test]
    fn beta_of_rho_values_and_identity() {
        assert_relative_eq!(
            beta_of_rho(std::f64::consts::E).unwrap(),
            std::f64::consts::E - 1.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(beta_of_rho(0.5).unwrap(), BETA_DOWN, max_relative = 1e-14);
        assert!(beta_of_rho(1.0).is_err());
        assert!(beta_of_rho(0.0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let rho: f64 = rng.gen_range(0.05..5.0);
            if (rho - 1.0).abs() < 1e-3 {
                continue;
            }
            assert_relative_eq!(
                rho * beta_of_rho(1.0 / rho).unwrap(),
                beta_of_rho(rho).unwrap(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn scale_w_single_term_region() {
        let beta = BETA_DOWN;
        assert_relative_eq!(scale_w(0.0, beta), 1.0 / beta, max_relative = 1e-14);
        assert_relative_eq!(scale_w(0.0, beta), 2.0 * 2.0f64.ln(), max_relative = 1e-12);
        for x in [0.1, 0.5, 0.9] {
            assert_relative_eq!(scale_w(x, beta), (x / beta).exp() / beta, max_relative = 1e-14);
        }
    }

    #[test]
    fn scale_w_prime_trivial_and_kinks() {
        assert_relative_eq!(scale_w_prime(0.5, 1.0).unwrap(), 0.5f64.exp(), max_relative = 1e-14);
        assert!(matches!(scale_w_prime(3.0, 1.0), Err(Error::KinkPoint { .. })));
        assert!(scale_w_prime_right(3.0, 1.0).is_finite());
    }

    #[test]
    fn scale_w_prime_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let beta: f64 = rng.gen_range(0.5..2.0);
            let x: f64 = rng.gen_range(0.01..8.0);
            if (x - x.round()).abs() < 1e-3 {
                continue;
            }
            let h = 1e-6;
            let fd = (scale_w(x + h, beta) - scale_w(x - h, beta)) / (2.0 * h);
            // Absolute fallback scaled by W covers near-cancellation points
            // where W' itself is tiny.
            assert_relative_eq!(
                scale_w_prime(x, beta).unwrap(),
                fd,
                max_relative = 1e-6,
                epsilon = 1e-6 * scale_w(x, beta)
            );
        }
    }

    // Differentiating g_m(x) = int_x^m W gives the delayed differential
    // equation beta W'(x) = W(x) - W((x-1)^+) away from kinks.
    #[test]
    fn scale_w_satisfies_the_dde()  {
        for beta in [BETA_DOWN, 1.233_151_731_188_215_8, 1.0] {
            for k in 0..40 {
                let x = 0.13 + 0.24 * k as f64;
                let lhs = beta * scale_w_prime(x, beta).unwrap();
                let rhs = scale_w(x, beta) - if x > 1.0 { scale_w(x - 1.0, beta) } else { 0.0 };
                assert_relative_eq!(lhs, rhs, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn int_w_trivial_cases() {
        assert_eq!(int_w(0.0, 0.7), 0.0);
        for x in [0.2, 0.5, 0.99] {
            assert_relative_eq!(int_w(x, 1.3), (x / 1.3f64).exp() - 1.0, max_relative = 1e-14);
        }
        // m = 0.5, beta = 1: e^{0.5} - 1.
        assert_relative_eq!(int_w(0.5, 1.0), 0.5f64.exp() - 1.0, max_relative = 1e-14);
    }

    #[test]
    fn int_w_matches_quadrature() {
        // Simpson per unit interval (W has derivative kinks only at
        // integers, so piecewise quadrature converges fast).
        let beta = BETA_DOWN;
        let x_max = 5.0;
        let mut quad = 0.0f64;
        for seg in 0..5 {
            let (a, b) = (seg as f64, seg as f64 + 1.0);
            let n = 4000usize;
            let h = (b - a) / n as f64;
            let mut s = scale_w(a, beta) + scale_w(b, beta);
            for k in 1..n {
                s += if k % 2 == 1 { 4.0 } else { 2.0 } * scale_w(a + k as f64 * h, beta);
            }
            quad += s * h / 3.0;
        }
        assert_relative_eq!(int_w(x_max, beta), quad, max_relative = 1e-8);
        assert_relative_eq!(int_w(x_max, beta), 184.186_163_317_377_01, max_relative = 1e-12);
    }

    #[test]
    fn arl_values_from_the_theorem_formulas() {
        assert_relative_eq!(arl_decrease(5.0, 5.0, 0.5).unwrap(), 0.0, epsilon = 1e-12);
        // int_y^m W at the standing example (rho, m) = (0.5, 5): frozen from
        // a 30-digit independent evaluation of the series.
        assert_relative_eq!(
            arl_decrease(0.0, 5.0, 0.5).unwrap(),
            184.186_163_317_377_01,
            max_relative = 1e-12
        );
        // int_w(1, beta(0.5)) = e^{2 ln 2} - 1 = 3 exactly.
        assert_relative_eq!(arl_decrease(0.0, 1.0, 0.5).unwrap(), 3.0, max_relative = 1e-12);
        assert_relative_eq!(
            arl_decrease(0.0, 3.0, 0.5).unwrap(),
            34.937_027_111_029_55,
            max_relative = 1e-12
        );

        assert_relative_eq!(
            arl_increase(0.0, 5.0, 1.5).unwrap(),
            58.527_441_324_881_26,
            max_relative = 1e-12
        );
        assert_relative_eq!(arl_increase(0.0, 1.0, 1.5).unwrap(), 2.8, max_relative = 1e-12);
        assert_relative_eq!(
            arl_increase(0.0, 3.0, 1.5).unwrap(),
            16.125_689_077_870_317,
            max_relative = 1e-12
        );
        assert!(arl_decrease(0.0, 5.0, 1.5).is_err());
        assert!(arl_increase(0.0, 5.0, 0.5).is_err());
    }

    #[test]
    fn arl_increase_boundary_limit() {
        let (m, rho) = (5.0, 1.5);
        let beta = beta_of_rho(rho).unwrap();
        let limit = scale_w(m, beta) / (beta * scale_w_prime_right(m, beta));
        let near = arl_increase(m - 1e-9, m, rho).unwrap();
        assert_relative_eq!(near, limit, max_relative = 1e-6);
        assert_relative_eq!(limit, 15.381_218_915_064_164, max_relative = 1e-10);
    }

    #[test]
    fn arl_monotone_in_m_and_h_monotone_in_v() {
        let mut prev_down = 0.0;
        for k in 1..=40 {
            let m = 0.25 * k as f64;
            let down = arl_decrease(0.0, m, 0.5).unwrap();
            assert!(down > prev_down, "m = {m}");
            prev_down = down;
        }
        // Below m = 1 every unit jump crosses, so h_m(0) = 1 identically;
        // strict growth starts past the first kink.
        for k in 1..4 {
            assert_relative_eq!(arl_increase(0.0, 0.25 * k as f64, 1.5).unwrap(), 1.0, max_relative = 1e-12);
        }
        let mut prev_up = 1.0;
        for k in 4..=40 {
            let m = 0.25 * k as f64;
            let up = arl_increase(0.0, m, 1.5).unwrap();
            assert!(up > prev_up, "m = {m}");
            prev_up = up;
        }
        let mut prev = f64::INFINITY;
        for k in 0..=40 {
            let v = 5.0 * k as f64 / 40.0;
            let h = arl_increase(v, 5.0, 1.5).unwrap();
            assert!(h <= prev + 1e-12, "v = {v}");
            prev = h;
        }
    }

    #[test]
    fn tilde_identity_and_values() {
        // W(x; beta) = rho~ rho~^x W(x; beta~) pointwise.
        for rho in [0.5f64, 0.7, 1.5, 2.5] {
            let beta = beta_of_rho(rho).unwrap();
            let beta_tilde = beta / rho;
            let rho_tilde = 1.0 / rho;
            for k in 0..30 {
                let x = 0.21 * k as f64;
                assert_relative_eq!(
                    scale_w(x, beta),
                    rho_tilde * rho_tilde.powf(x) * scale_w(x, beta_tilde),
                    max_relative = 1e-10
                );
            }
        }
        assert_relative_eq!(tilde_g(5.0, 5.0, 0.5).unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(tilde_g(0.0, 5.0, 0.5).unwrap(), 8.824_058_495_055_747, max_relative = 1e-12);
        assert_relative_eq!(tilde_h(0.0, 5.0, 1.5).unwrap(), 17.771_797_994_555_802, max_relative = 1e-12);
    }

    #[test]
    fn tilde_g_matches_quadrature_of_the_stated_integral() {
        // g~_3(0) for rho = 0.5 directly as rho int_0^3 rho^z W(z; beta) dz.
        let rho = 0.5f64;
        let beta = beta_of_rho(rho).unwrap();
        let mut quad = 0.0f64;
        for seg in 0..3 {
            let (a, b) = (seg as f64, seg as f64 + 1.0);
            let n = 4000usize;
            let h = (b - a) / n as f64;
            let f = |z: f64| rho.powf(z) * scale_w(z, beta);
            let mut s = f(a) + f(b);
            for k in 1..n {
                s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
            }
            quad += s * h / 3.0;
        }
        quad *= rho;
        assert_relative_eq!(tilde_g(0.0, 3.0, rho).unwrap(), quad, max_relative = 1e-8);
        assert_relative_eq!(quad, 4.548_981_208_318_748, max_relative = 1e-8);
    }

    #[test]
    fn calibrate_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let m: f64 = rng.gen_range(0.5..10.0);
            for rho in [0.5f64, 1.5] {
                let target = arl_fresh(m, rho).unwrap();
                let recovered = calibrate_threshold(target, rho).unwrap();
                assert_relative_eq!(
                    arl_fresh(recovered, rho).unwrap(),
                    target,
                    max_relative = 2e-6
                );
            }
        }
    }
}
