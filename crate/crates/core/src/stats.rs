//! Small numerical helpers shared across modules.

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

/// Two-sided 97.5% standard normal quantile used for Wald intervals.
pub const Z_975: f64 = 1.959964;

/// Rows per chunk in parallel reductions. The partition is fixed, so sums are
/// reproducible regardless of thread count.
pub(crate) const CHUNK: usize = 512;

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

pub fn sample_sd(values: &[f64]) -> f64 {
    sample_variance(values).sqrt()
}

/// Linear-interpolation quantile (type 7), `q` in [0, 1].
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Two-sided p-value of a Wald statistic.
pub fn wald_p_value(estimate: f64, se: f64) -> f64 {
    if !(se > 0.0) {
        return f64::NAN;
    }
    2.0 * (1.0 - normal_cdf((estimate / se).abs()))
}

pub fn wald_interval(estimate: f64, se: f64) -> (f64, f64) {
    (estimate - Z_975 * se, estimate + Z_975 * se)
}

/// Sums per-row vectors of length `dim` produced by `row`, with a fixed chunk
/// partition and sequential combination of chunk totals.
/// Sum of `count * row(item)` over `(index, count)` groups of `items`.
pub(crate) fn grouped_sum<T, F, E>(items: &[T], groups: &[(usize, usize)], dim: usize, row: F) -> Result<Vec<f64>, E>
where
    T: Sync,
    E: Send,
    F: Fn(&T, &mut [f64]) -> Result<(), E> + Sync,
{
    chunked_sum(groups, dim, |&(i, count), buf| {
        row(&items[i], buf)?;
        let c = count as f64;
        buf.iter_mut().for_each(|v| *v *= c);
        Ok(())
    })
}

pub(crate) fn chunked_sum<T, F, E>(items: &[T], dim: usize, row: F) -> Result<Vec<f64>, E>
where
    T: Sync,
    E: Send,
    F: Fn(&T, &mut [f64]) -> Result<(), E> + Sync,
{
    let partials: Vec<Result<Vec<f64>, E>> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; dim];
            let mut buf = vec![0.0; dim];
            for item in chunk {
                row(item, &mut buf)?;
                for (a, b) in acc.iter_mut().zip(&buf) {
                    *a += b;
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![0.0; dim];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p?) {
            *t += v;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn chunked_sum_is_order_independent_of_threads() {
        let items: Vec<f64> = (0..10_000).map(|i| (i as f64).sin()).collect();
        let a: Result<Vec<f64>, ()> = chunked_sum(&items, 1, |v, out| {
            out[0] = *v;
            Ok(())
        });
        let b: Result<Vec<f64>, ()> = chunked_sum(&items, 1, |v, out| {
            out[0] = *v;
            Ok(())
        });
        assert_eq!(a.unwrap()[0].to_bits(), b.unwrap()[0].to_bits());
    }

    #[test]
    fn p_value_of_zero_statistic_is_one() {
        assert!((wald_p_value(0.0, 1.0) - 1.0).abs() < 1e-12);
        assert!((wald_p_value(1.959964, 1.0) - 0.05).abs() < 1e-6);
    }
}
