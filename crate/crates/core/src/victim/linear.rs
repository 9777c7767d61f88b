use std::collections::BTreeSet;
use std::sync::Arc;

use super::{Victim, VictimResponse};
use crate::error::{Error, Result};
use crate::tensor::{Dims, Label, VideoTensor};

/// Linear classifier `argmax_k ⟨w_k, x⟩ + b_k` with softmax probabilities
/// at temperature `τ`. Its decision boundaries are hyperplanes, which makes
/// boundary distances available in closed form for testing.
#[derive(Debug, Clone)]
pub struct LinearSoftmaxVictim {
    dims: Dims,
    weights: Vec<VideoTensor>,
    biases: Vec<f64>,
    temperature: f64,
}

impl LinearSoftmaxVictim {
    pub fn new(weights: Vec<VideoTensor>, biases: Vec<f64>, temperature: f64) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::InvalidParameter("linear victim needs at least 2 classes".into()));
        }
        if biases.len() != weights.len() {
            return Err(Error::InvalidParameter(format!(
                "{} weight tensors but {} biases",
                weights.len(),
                biases.len()
            )));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidParameter(format!("temperature must be > 0, got {temperature}")));
        }
        if biases.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite);
        }
        let dims = weights[0].dims();
        if let Some(w) = weights.iter().find(|w| w.dims() != dims) {
            return Err(Error::ShapeMismatch { expected: dims, actual: w.dims() });
        }
        Ok(LinearSoftmaxVictim { dims, weights, biases, temperature })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[VideoTensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    fn scores(&self, x: &VideoTensor) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.as_slice().iter().zip(x.as_slice()).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect()
    }
}

impl Victim for LinearSoftmaxVictim {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn classify(&self, x: &VideoTensor) -> Result<VictimResponse> {
        if x.dims() != self.dims {
            return Err(Error::ShapeMismatch { expected: self.dims, actual: x.dims() });
        }
        let scores = self.scores(x);
        // first maximum wins ties
        let (best, &top) = scores
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |acc, (i, s)| if *s > *acc.1 { (i, s) } else { acc });
        let z: f64 = scores.iter().map(|s| ((s - top) / self.temperature).exp()).sum();
        Ok(VictimResponse { label: Label(best), probability: 1.0 / z })
    }
}

/// Wraps a victim and zeroes a fixed set of frames before classifying, so
/// the output cannot depend on those frames.
#[derive(Clone)]
pub struct FrameObliviousVictim {
    inner: Arc<dyn Victim>,
    ignored: BTreeSet<usize>,
}

impl FrameObliviousVictim {
    pub fn new(inner: Arc<dyn Victim>, ignored: impl IntoIterator<Item = usize>) -> Result<Self> {
        let ignored: BTreeSet<usize> = ignored.into_iter().collect();
        let frames = inner.dims().t;
        if let Some(&t) = ignored.iter().find(|&&t| t >= frames) {
            return Err(Error::FrameOutOfRange { frame: t, frames });
        }
        Ok(FrameObliviousVictim { inner, ignored })
    }

    pub fn ignored_frames(&self) -> &BTreeSet<usize> {
        &self.ignored
    }

    pub fn inner(&self) -> &Arc<dyn Victim> {
        &self.inner
    }
}

impl Victim for FrameObliviousVictim {
    fn dims(&self) -> Dims {
        self.inner.dims()
    }

    fn classify(&self, x: &VideoTensor) -> Result<VictimResponse> {
        let dims = self.inner.dims();
        if x.dims() != dims {
            return Err(Error::ShapeMismatch { expected: dims, actual: x.dims() });
        }
        let n = dims.frame_len();
        let mut data = x.as_slice().to_vec();
        for &t in &self.ignored {
            data[t * n..(t + 1) * n].iter_mut().for_each(|v| *v = 0.0);
        }
        self.inner.classify(&VideoTensor::new(dims, data)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sign_of_score_difference_decides() {
        let d = Dims::new(2, 2, 2, 1).unwrap();
        let v = LinearSoftmaxVictim::new(
            vec![VideoTensor::filled(d, 1.0), VideoTensor::filled(d, -1.0)],
            vec![0.0, 0.0],
            1.0,
        )
        .unwrap();
        let r = v.classify(&VideoTensor::filled(d, 10.0)).unwrap();
        assert_eq!(r.label, Label(0));
        // scores 80 and -80
        assert!((r.probability - 1.0 / (1.0 + (-160.0f64).exp())).abs() < 1e-15);
        assert_eq!(v.classify(&VideoTensor::filled(d, -10.0)).unwrap().label, Label(1));
    }

    #[test]
    fn probability_follows_temperature() {
        let d = Dims::new(1, 1, 1, 1).unwrap();
        let w = |s| VideoTensor::filled(d, s);
        let v = LinearSoftmaxVictim::new(vec![w(1.0), w(0.0)], vec![0.0, 0.0], 2.0).unwrap();
        let r = v.classify(&VideoTensor::filled(d, 2.0)).unwrap();
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((r.probability - expected).abs() < 1e-15);
    }

    #[test]
    fn constructor_validation() {
        let d = Dims::new(1, 1, 1, 1).unwrap();
        let w = VideoTensor::zeros(d);
        assert!(LinearSoftmaxVictim::new(vec![w.clone()], vec![0.0], 1.0).is_err());
        assert!(LinearSoftmaxVictim::new(vec![w.clone(), w.clone()], vec![0.0], 1.0).is_err());
        assert!(LinearSoftmaxVictim::new(vec![w.clone(), w.clone()], vec![0.0, 0.0], 0.0).is_err());
        let other = VideoTensor::zeros(Dims::new(2, 1, 1, 1).unwrap());
        assert!(LinearSoftmaxVictim::new(vec![w, other], vec![0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn oblivious_to_ignored_frame() {
        let d = Dims::new(5, 3, 3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let weights = (0..3)
            .map(|_| VideoTensor::from_fn(d, |_, _, _, _| rng.random_range(-1.0..1.0)))
            .collect();
        let inner = Arc::new(LinearSoftmaxVictim::new(weights, vec![0.0; 3], 1.0).unwrap());
        let v = FrameObliviousVictim::new(inner, [3]).unwrap();
        let x = VideoTensor::from_fn(d, |_, _, _, _| rng.random_range(0.0..255.0));
        let noisy = VideoTensor::from_fn(d, |t, w, h, c| {
            if t == 3 {
                rng.random_range(0.0..255.0)
            } else {
                x.get(t, w, h, c)
            }
        });
        assert_eq!(v.classify(&x).unwrap(), v.classify(&noisy).unwrap());
        assert!(FrameObliviousVictim::new(v.inner().clone(), [5]).is_err());
    }

    proptest! {
        #[test]
        fn label_invariant_under_shared_weight_offset(seed in any::<u64>(), offset in -5.0f64..5.0) {
            let d = Dims::new(2, 3, 2, 1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let weights: Vec<_> = (0..4)
                .map(|_| VideoTensor::from_fn(d, |_, _, _, _| rng.random_range(-1.0..1.0)))
                .collect();
            let shift = VideoTensor::from_fn(d, |_, _, _, _| offset * rng.random_range(0.0..1.0));
            let shifted: Vec<_> = weights.iter().map(|w| w.add(&shift).unwrap()).collect();
            let a = LinearSoftmaxVictim::new(weights, vec![0.0; 4], 1.0).unwrap();
            let b = LinearSoftmaxVictim::new(shifted, vec![0.0; 4], 1.0).unwrap();
            let x = VideoTensor::from_fn(d, |_, _, _, _| rng.random_range(0.0..255.0));
            prop_assert_eq!(a.classify(&x).unwrap().label, b.classify(&x).unwrap().label);
        }
    }
}
