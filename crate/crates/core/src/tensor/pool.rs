use crate::error::{dim_err, Result};

/// Non-overlapping k×k max pooling over a (B, C, H, W) buffer. Returns the
/// pooled values, the flat argmax index of each window and the output shape.
/// Ties go to the first element in row-major scan order.
pub(crate) fn max_pool(x: &[f64], shape: &[usize], k: usize) -> Result<(Vec<f64>, Vec<usize>, Vec<usize>)> {
    if shape.len() != 4 {
        return dim_err(format!("max pool expects 4-D input, got {shape:?}"));
    }
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if k == 0 || k > h || k > w {
        return dim_err(format!("pool window {k} larger than input {h}x{w}"));
    }
    let (ho, wo) = (h / k, w / k);
    let mut out = Vec::with_capacity(b * c * ho * wo);
    let mut arg = Vec::with_capacity(b * c * ho * wo);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oi in 0..ho {
            for oj in 0..wo {
                let mut best = base + oi * k * w + oj * k;
                for di in 0..k {
                    for dj in 0..k {
                        let idx = base + (oi * k + di) * w + oj * k + dj;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((out, arg, vec![b, c, ho, wo]))
}

/// Mean over all trailing (spatial) dimensions: (B, C, ...) -> (B, C).
pub(crate) fn global_avg_pool(x: &[f64], shape: &[usize]) -> Result<(Vec<f64>, Vec<usize>)> {
    if shape.len() < 3 {
        return dim_err(format!("adaptive average pool expects (B, C, spatial...), got {shape:?}"));
    }
    let s: usize = shape[2..].iter().product();
    let out = x.chunks(s).map(|ch| ch.iter().sum::<f64>() / s as f64).collect();
    Ok((out, vec![shape[0], shape[1]]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_pool_picks_max_and_first_tie() {
        let (y, arg, s) = max_pool(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2], 2).unwrap();
        assert_eq!((y, arg, s), (vec![4.0], vec![3], vec![1, 1, 1, 1]));
        let (_, arg, _) = max_pool(&[5.0, 5.0, 5.0, 5.0], &[1, 1, 2, 2], 2).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn window_too_large() {
        assert!(max_pool(&[0.0; 4], &[1, 1, 2, 2], 3).is_err());
    }

    #[test]
    fn avg_of_constant() {
        let (y, s) = global_avg_pool(&[2.5; 18], &[1, 2, 3, 3]).unwrap();
        assert_eq!(y, vec![2.5, 2.5]);
        assert_eq!(s, vec![1, 2]);
    }
}
