//! Small statistical helpers shared by the Monte Carlo drivers.

/// Ordinary least-squares line fit with coefficient of determination.
#[derive(Clone, Copy, Debug)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - ym) * (y - ym)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    LinearFit {
        slope,
        intercept,
        r2,
    }
}

/// Wilson score interval for a binomial proportion; valid near p ∈ {0, 1}
/// where tube probabilities live.
#[derive(Clone, Copy, Debug)]
pub struct WilsonInterval {
    pub p_hat: f64,
    pub low: f64,
    pub high: f64,
}

pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> WilsonInterval {
    assert!(trials > 0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    WilsonInterval {
        p_hat: p,
        low: (center - half).max(0.0),
        high: (center + half).min(1.0),
    }
}

impl WilsonInterval {
    pub fn half_width(&self) -> f64 {
        (self.high - self.low) / 2.0
    }
}

/// `P(sup_{t<=T} |W_t| <= a)` by the reflection series; the oracle for the
/// one-dimensional tube probability.
pub fn sup_abs_brownian_cdf(a: f64, t: f64) -> f64 {
    let mut s = 0.0;
    for j in 0..200 {
        let k = (2 * j + 1) as f64;
        let term = (if j % 2 == 0 { 1.0 } else { -1.0 }) / k
            * (-k * k * std::f64::consts::PI * std::f64::consts::PI * t / (8.0 * a * a)).exp();
        s += term;
        if term.abs() < 1e-18 {
            break;
        }
    }
    (4.0 / std::f64::consts::PI * s).clamp(0.0, 1.0)
}
