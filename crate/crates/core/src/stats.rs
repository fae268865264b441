//! Small statistics toolbox for Monte-Carlo gates.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Asymptotic Kolmogorov tail `P(sqrt(n) D > x)` with the Stephens
/// small-sample correction applied by the callers.
pub fn kolmogorov_tail(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous CDF,
/// restricted to `[.., cap]` when `cap` is finite: observations beyond
/// `cap` (or infinite) are censored and only the CDF on `(-inf, cap]` is
/// compared.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F, cap: f64) -> (f64, f64) {
    let n = sample.len();
    let mut xs: Vec<f64> = sample.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        if !(x <= cap) {
            // Beyond the cap: the empirical CDF stays at i/n up to cap.
            d = d.max((i as f64 / nf - cdf(cap)).abs());
            break;
        }
        let f = cdf(x);
        d = d.max((f - i as f64 / nf).abs()).max(((i + 1) as f64 / nf - f).abs());
    }
    let en = nf.sqrt();
    (d, kolmogorov_tail((en + 0.12 + 0.11 / en) * d))
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.partial_cmp(q).unwrap());
    y.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let t = x[i].min(y[j]);
        while i < n && x[i] <= t {
            i += 1;
        }
        while j < m && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n as f64 * m as f64 / (n + m) as f64).sqrt();
    (d, kolmogorov_tail((ne + 0.12 + 0.11 / ne) * d))
}

/// Chi-square goodness of fit of `counts` to `probs`. Cells with expected
/// count below 5 are pooled into their neighbour. Returns
/// `(statistic, degrees of freedom, p-value)`.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> (f64, usize, f64) {
    let n: u64 = counts.iter().sum();
    let nf = n as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (c, p) in counts.iter().zip(probs) {
        o += *c as f64;
        e += p * nf;
        if e >= 5.0 {
            cells.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => cells.push((o, e)),
        }
    }
    if cells.len() < 2 {
        return (0.0, 0, 1.0);
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = cells.len() - 1;
    let p = 1.0 - ChiSquared::new(df as f64).unwrap().cdf(stat);
    (stat, df, p)
}

/// Chi-square test of homogeneity between two count vectors.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> (f64, usize, f64) {
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    let mut stat = 0.0;
    let mut used = 0;
    for (x, y) in a.iter().zip(b) {
        let tot = (*x + *y) as f64;
        if tot == 0.0 {
            continue;
        }
        used += 1;
        let ea = tot * na / (na + nb);
        let eb = tot * nb / (na + nb);
        stat += (*x as f64 - ea).powi(2) / ea + (*y as f64 - eb).powi(2) / eb;
    }
    if used < 2 {
        return (0.0, 0, 1.0);
    }
    let df = used - 1;
    let p = 1.0 - ChiSquared::new(df as f64).unwrap().cdf(stat);
    (stat, df, p)
}
