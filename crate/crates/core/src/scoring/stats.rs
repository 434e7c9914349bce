use crate::error::{Error, Result};

/// Population z-scores. A constant list maps to zeros.
pub fn zscores(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / sd).collect()
}

/// `½ ẑ(ll) + ½ ẑ(pssm)` across the variants of one assay.
pub fn combine_scores(ll: &[f64], pssm: &[f64]) -> Result<Vec<f64>> {
    if ll.len() != pssm.len() {
        return Err(Error::Input(format!(
            "{} likelihood scores but {} PSSM scores",
            ll.len(),
            pssm.len()
        )));
    }
    if ll.len() < 2 {
        return Err(Error::Input("combining needs at least two variants".into()));
    }
    let a = zscores(ll);
    let b = zscores(pssm);
    Ok(a.iter().zip(&b).map(|(x, y)| 0.5 * x + 0.5 * y).collect())
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Result<Vec<f64>> {
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::Input("cannot rank NaN".into()));
    }
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        // positions i..j (0-based) share ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            r[k] = avg;
        }
        i = j;
    }
    Ok(r)
}

/// Pearson correlation; `None` when either list has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ with average ranks for ties. `Ok(None)` is the undefined
/// case (a list with all values tied).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::Input(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::Input("Spearman needs at least three pairs".into()));
    }
    Ok(pearson(&average_ranks(x)?, &average_ranks(y)?))
}
