use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::error::{param_err, Result};
use crate::tensor::{GradFn, Tensor};

struct DropoutFn<T: Element> {
    input: Tensor<T>,
    mask: Vec<T>,
}

impl<T: Element> GradFn<T> for DropoutFn<T> {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn inputs(&self) -> Vec<&Tensor<T>> {
        vec![&self.input]
    }

    fn backward(&self, _: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.iter().zip(&self.mask).map(|(&g, &m)| g * m).collect())]
    }
}

/// Inverted dropout: each element survives with probability `keep_prob`
/// and survivors are divided by `keep_prob`, so the expectation is unchanged.
///
/// The mask is drawn from a ChaCha8 stream seeded with `seed`, one uniform
/// draw per element in memory order. Outside training (or with
/// `keep_prob == 1`) the input is returned unchanged.
pub fn dropout<T: Element>(x: &Tensor<T>, keep_prob: f64, training: bool, seed: u64) -> Result<Tensor<T>> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(param_err!("dropout keep probability must lie in (0, 1], got {keep_prob}"));
    }
    if !training || keep_prob == 1.0 {
        return Ok(x.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kept = T::of(1.0 / keep_prob);
    let mask: Vec<T> = (0..x.numel())
        .map(|_| if rng.random::<f64>() < keep_prob { kept } else { T::zero() })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok(Tensor::from_op(x.shape().to_vec(), data, DropoutFn { input: x.clone(), mask }))
}
