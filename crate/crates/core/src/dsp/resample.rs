use crate::error::{Error, Result};

/// Stretches a segment to `round(len * factor)` samples (at least one) by
/// linear interpolation on an endpoint-aligned grid, so the first and last
/// samples are kept.
pub fn resample_segment(x: &[f64], factor: f64) -> Result<Vec<f64>> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::Parameter(format!("resample factor must be positive, got {factor}")));
    }
    if x.is_empty() {
        return Err(Error::EmptyInput("cannot resample an empty segment".into()));
    }
    let out_len = ((x.len() as f64 * factor).round() as usize).max(1);
    if out_len == x.len() {
        return Ok(x.to_vec());
    }
    if out_len == 1 || x.len() == 1 {
        return Ok(vec![x[0]; out_len]);
    }
    let step = (x.len() - 1) as f64 / (out_len - 1) as f64;
    Ok((0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let lo = (pos.floor() as usize).min(x.len() - 2);
            let frac = pos - lo as f64;
            x[lo] * (1.0 - frac) + x[lo + 1] * frac
        })
        .collect())
}
