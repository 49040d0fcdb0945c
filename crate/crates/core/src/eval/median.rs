use crate::error::{Error, Result};

/// Sliding median of odd width `len`, treating samples beyond either end
/// as zero.
pub fn median_filter_1d(x: &[f64], len: usize) -> Result<Vec<f64>> {
    if len == 0 || len.is_multiple_of(2) {
        return Err(Error::invalid(
            "median_filter_1d",
            format!("length must be odd and positive, got {len}"),
        ));
    }
    if len == 1 {
        return Ok(x.to_vec());
    }
    let half = len / 2;
    let n = x.len() as isize;
    let mut window = vec![0.0; len];
    Ok((0..n)
        .map(|i| {
            for (k, w) in window.iter_mut().enumerate() {
                let j = i + k as isize - half as isize;
                *w = if (0..n).contains(&j) { x[j as usize] } else { 0.0 };
            }
            window.sort_unstable_by(f64::total_cmp);
            window[half]
        })
        .collect())
}
