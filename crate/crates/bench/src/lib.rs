//! Deterministic inputs shared by the kernel benchmarks.

use implab::rng::CounterRng;
use implab::{Model, ModelSpec, Tensor};

/// Standard-normal values from a fixed stream.
pub fn normal_vec(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = CounterRng::new(seed);
    (0..n).map(|_| rng.normal() as f32).collect()
}

pub fn normal_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), normal_vec(n, seed)).expect("shape matches data")
}

/// A model, its initial weights and one batch of random inputs with labels.
pub struct Fixture {
    pub model: Model,
    pub params: Vec<f32>,
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl Fixture {
    pub fn new(spec: ModelSpec, batch: usize) -> Self {
        let model = spec.build().expect("valid spec");
        let params = model.init(1).into_flat();
        let [c, h, w] = spec.input;
        let images = normal_tensor(&[batch, c, h, w], 2);
        let labels = (0..batch).map(|i| i % spec.classes).collect();
        Fixture {
            model,
            params,
            images,
            labels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(normal_vec(5, 3), normal_vec(5, 3));
        let f = Fixture::new(ModelSpec::lenet(), 4);
        assert_eq!(f.images.shape(), &[4, 1, 28, 28]);
        assert_eq!(f.params.len(), f.model.layout().len());
    }
}
