use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;

/// Inverted-dropout mask: 0 with probability `p`, else `1 / (1 - p)`.
pub fn dropout_mask(n: usize, p: f64, rng: &mut impl Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect()
}

pub fn dropout(x: &Tensor, p: f64, mode: Mode, rng: &mut impl Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Contract(format!("dropout probability must lie in [0, 1), got {p}")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.numel(), p, rng);
    let data = x.data().iter().zip(mask).map(|(v, m)| v * m).collect();
    Tensor::new(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::new(vec![5], vec![1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.7, Mode::Eval, &mut rng).unwrap(), x);
    }

    #[test]
    fn p_one_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(dropout(&Tensor::zeros(&[2]), 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn unbiased_in_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = Tensor::new(vec![4], vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        let trials = 20_000;
        let mut acc = vec![0.0; 4];
        for _ in 0..trials {
            let y = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
            for (a, v) in acc.iter_mut().zip(y.data()) {
                *a += v;
            }
        }
        for (a, v) in acc.iter().zip(x.data()) {
            let mean = a / trials as f64;
            assert!((mean - v).abs() <= 0.02 * v.abs(), "mean {mean} vs {v}");
        }
    }
}
