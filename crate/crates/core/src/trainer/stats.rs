//! Summary statistics used by the experiment protocols.

/// Sample Pearson correlation. `None` for unequal or short inputs and for
/// zero variance.
pub fn pcc(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// PCC over the common prefix of two sequences.
pub fn pcc_truncated(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    pcc(&x[..n], &y[..n])
}

/// Trailing moving average; the first `window - 1` points average what is
/// available so far.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1);
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for i in 0..xs.len() {
        sum += xs[i];
        if i >= window {
            sum -= xs[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// `|(|ssa| - |sh|) / |sh|| * 100`; `None` when the baseline is zero.
pub fn decline_percent(ssa: f64, shield: f64) -> Option<f64> {
    if shield == 0.0 {
        return None;
    }
    Some(((ssa.abs() - shield.abs()) / shield.abs()).abs() * 100.0)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Means of the first and last quarter of `xs` (at least one point each).
pub fn quartile_means(xs: &[f64]) -> (f64, f64) {
    let q = (xs.len() / 4).max(1).min(xs.len());
    (mean(&xs[..q]), mean(&xs[xs.len() - q..]))
}

/// Minimum, lower quartile, median, upper quartile and maximum with linear
/// interpolation between order statistics.
pub fn five_numbers(xs: &[f64]) -> Option<[f64; 5]> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |p: f64| {
        let h = p * (v.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    Some([v[0], at(0.25), at(0.5), at(0.75), v[v.len() - 1]])
}
