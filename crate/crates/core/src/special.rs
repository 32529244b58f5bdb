//! Digamma and trigamma, used to sum Gauss-map tail branches in closed form.

/// ψ(x) for x > 0.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 16.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    acc + x.ln() - 0.5 / x
        - r * (1.0 / 12.0 - r * (1.0 / 120.0 - r * (1.0 / 252.0 - r * (1.0 / 240.0 - r * (1.0 / 132.0)))))
}

/// ψ'(x) for x > 0.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 16.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    acc + 1.0 / x
        + 0.5 * r
        + (r / x) * (1.0 / 6.0 - r * (1.0 / 30.0 - r * (1.0 / 42.0 - r * (1.0 / 30.0 - r * (5.0 / 66.0)))))
}

/// Σ_{k=k1}^{k2} 1/(k+y)², with k2 = None meaning ∞.
pub fn sum_inv_sq(k1: u64, k2: Option<u64>, y: f64) -> f64 {
    let head = trigamma(k1 as f64 + y);
    match k2 {
        Some(k2) if k2 < k1 => 0.0,
        Some(k2) => head - trigamma(k2 as f64 + 1.0 + y),
        None => head,
    }
}

/// Σ_{k=k1}^{k2} [1/(k+c) − 1/(k+d)], with k2 = None meaning ∞.
pub fn sum_inv_diff(k1: u64, k2: Option<u64>, c: f64, d: f64) -> f64 {
    let k1f = k1 as f64;
    match k2 {
        Some(k2) if k2 < k1 => 0.0,
        Some(k2) => {
            let e = k2 as f64 + 1.0;
            (digamma(e + c) - digamma(k1f + c)) - (digamma(e + d) - digamma(k1f + d))
        }
        None => digamma(k1f + d) - digamma(k1f + c),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        let euler = 0.577_215_664_901_532_9;
        assert!((digamma(1.0) + euler).abs() < 1e-14);
        assert!((digamma(0.5) + euler + 2.0 * 2f64.ln()).abs() < 1e-14);
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert!((trigamma(1.0) - pi2_6).abs() < 1e-14);
        assert!((trigamma(0.5) - 3.0 * pi2_6).abs() < 1e-13);
    }

    #[test]
    fn sums_match_direct_loops() {
        let direct: f64 = (70..=400).map(|k| 1.0 / (k as f64 + 0.3).powi(2)).sum();
        assert!((sum_inv_sq(70, Some(400), 0.3) - direct).abs() < 1e-15);
        let direct: f64 = (70..=400).map(|k| 1.0 / (k as f64 + 0.2) - 1.0 / (k as f64 + 0.25)).sum();
        assert!((sum_inv_diff(70, Some(400), 0.2, 0.25) - direct).abs() < 1e-15);
        let direct: f64 = (65..2_000_000).map(|k| 1.0 / (k as f64).powi(2)).sum::<f64>() + 1.0 / 2_000_000.0;
        assert!((sum_inv_sq(65, None, 0.0) - direct).abs() < 1e-12);
    }
}
