//! Closed-form and lattice reference prices used to check solver output.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result};

/// Cox-Ross-Rubinstein price of an American put with `steps` time steps.
pub fn binomial_american_put(r: f64, sigma: f64, strike: f64, s0: f64, maturity: f64, steps: usize) -> Result<f64> {
    if steps < 100 {
        return Err(invalid("steps", format!("need at least 100, got {steps}")));
    }
    if !(sigma > 0.0 && maturity > 0.0 && s0 > 0.0) {
        return Err(invalid("sigma", "sigma, maturity and spot must be positive"));
    }
    let dt = maturity / steps as f64;
    let u = (sigma * dt.sqrt()).exp();
    let d = 1.0 / u;
    let growth = (r * dt).exp();
    let p = (growth - d) / (u - d);
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid("sigma", format!("risk-neutral probability {p} outside [0, 1]")));
    }
    let disc = 1.0 / growth;
    let spot = |i: usize, j: usize| s0 * u.powi(j as i32) * d.powi((i - j) as i32);
    let mut v: Vec<f64> = (0..=steps).map(|j| (strike - spot(steps, j)).max(0.0)).collect();
    for i in (0..steps).rev() {
        for j in 0..=i {
            let cont = disc * (p * v[j + 1] + (1.0 - p) * v[j]);
            v[j] = cont.max(strike - spot(i, j));
        }
    }
    Ok(v[0])
}

/// European put under a lognormal underlying with spot `s0`.
pub fn black_scholes_put(s0: f64, strike: f64, r: f64, sigma: f64, maturity: f64) -> Result<f64> {
    if !(sigma > 0.0 && maturity > 0.0) {
        return Err(invalid("sigma", "sigma and maturity must be positive"));
    }
    if strike <= 0.0 {
        return Ok(0.0);
    }
    let n = Normal::standard();
    let sd = sigma * maturity.sqrt();
    let d1 = ((s0 / strike).ln() + (r + 0.5 * sigma * sigma) * maturity) / sd;
    let d2 = d1 - sd;
    Ok(strike * (-r * maturity).exp() * n.cdf(-d2) - s0 * n.cdf(-d1))
}

/// Effective spot and volatility of the geometric mean of `d` independent
/// assets with common volatility and zero dividends, so that the basket put
/// is [`black_scholes_put`] at `(spot, σ)`.
pub fn geometric_basket_reduction(g0: f64, sigma: f64, d: usize, maturity: f64) -> (f64, f64) {
    let sigma_g = sigma / (d as f64).sqrt();
    let q_eff = 0.5 * sigma * sigma - 0.5 * sigma_g * sigma_g;
    (g0 * (-q_eff * maturity).exp(), sigma_g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn black_scholes_reference_value() {
        let p = black_scholes_put(100.0, 100.0, 0.05, 0.15, 1.0).unwrap();
        assert_relative_eq!(p, 3.714600762161, epsilon = 1e-9);
    }

    #[test]
    fn black_scholes_limits() {
        assert_eq!(black_scholes_put(100.0, 0.0, 0.05, 0.15, 1.0).unwrap(), 0.0);
        assert!(black_scholes_put(100.0, 1e-6, 0.05, 0.15, 1.0).unwrap() < 1e-12);
        let p = black_scholes_put(80.0, 100.0, 0.05, 1e-7, 1.0).unwrap();
        assert_relative_eq!(p, 100.0 * (-0.05f64).exp() - 80.0, epsilon = 1e-9);
    }

    #[test]
    fn crr_reference_values() {
        for (n, v) in [(100, 4.2267978525), (500, 4.2315077149), (2000, 4.2323462373)] {
            let p = binomial_american_put(0.05, 0.15, 100.0, 100.0, 1.0, n).unwrap();
            assert_relative_eq!(p, v, epsilon = 1e-8);
        }
    }

    #[test]
    fn crr_degenerate_limits() {
        // vanishing maturity collapses to intrinsic value
        let p = binomial_american_put(0.05, 0.15, 100.0, 90.0, 1e-8, 200).unwrap();
        assert_relative_eq!(p, 10.0, epsilon = 1e-6);
        let p = binomial_american_put(0.05, 0.15, 100.0, 110.0, 1e-8, 200).unwrap();
        assert!(p < 1e-6);
        // tiny volatility with positive carry: at the money is worth ~0
        let prices: Vec<f64> = [0.04, 0.02, 0.01]
            .iter()
            .map(|&s| binomial_american_put(0.05, s, 100.0, 100.0, 1.0, 2000).unwrap())
            .collect();
        assert!(prices[0] > prices[1] && prices[1] > prices[2], "{prices:?}");
        assert!(prices[2] < 0.05, "{prices:?}");
        // below r sqrt(dt) the lattice has no risk-neutral probability
        assert!(binomial_american_put(0.05, 1e-3, 100.0, 100.0, 1.0, 200).is_err());
        assert!(binomial_american_put(0.05, 0.15, 100.0, 100.0, 1.0, 50).is_err());
    }

    #[test]
    fn american_dominates_european() {
        let am = binomial_american_put(0.05, 0.15, 100.0, 100.0, 1.0, 500).unwrap();
        let eu = black_scholes_put(100.0, 100.0, 0.05, 0.15, 1.0).unwrap();
        assert!(am > eu);
    }
}
