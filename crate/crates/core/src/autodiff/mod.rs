//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! The op set is exactly what the GAN and the microcanonical synthesizer
//! need: 3D convolutions, batchnorm and pointwise nonlinearities, plus the
//! frequency-domain scattering primitives (FFT, filter product, modulus,
//! low-passed subgrid mean) and the Gram-matrix loss head.
//!
//! Values are stored in `Real` (f32 by default; the `f64` feature switches
//! the whole stack for tighter gradient checks). Reductions accumulate in
//! f64 either way.

mod adam;
mod checkpoint;
mod graph;

pub use adam::{AdamParams, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use graph::{Graph, Var};

/// Element type of every tensor in the autodiff stack.
#[cfg(not(feature = "f64"))]
pub type Real = f32;
#[cfg(feature = "f64")]
pub type Real = f64;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {left} vs {right} in {op}")]
    ShapeMismatch { op: String, left: String, right: String },
    #[error("backward requires a scalar loss, got shape {0}")]
    NotScalarLoss(String),
    #[error("backward already ran on this graph; rebuild the forward pass first")]
    BackwardTwice,
    #[error("{op} requires a square 2D input, got {shape}")]
    NotSquare { op: String, shape: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("checkpoint blob length {got} does not match manifest total {expected}")]
    BlobLength { got: usize, expected: usize },
    #[error("checkpoint has no tensor named {0}")]
    MissingTensor(String),
}

pub(crate) fn shape_str(shape: &[usize]) -> String {
    let parts: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("({})", parts.join(","))
}

/// Dense tensor with up to 5 dimensions (batch, channel, x, y, z).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<Real>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<Real>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length does not match shape"
        );
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn scalar(v: Real) -> Tensor {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn item(&self) -> Real {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Standard-normal fill scaled by `std`.
    pub fn randn(shape: &[usize], std: Real, rng: &mut impl rand::Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                g as Real * std
            })
            .collect();
        Tensor { shape: shape.to_vec(), data }
    }
}

#[cfg(test)]
mod tests;
