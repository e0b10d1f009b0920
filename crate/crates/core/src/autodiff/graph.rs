//! Eager tape: every op computes its forward value on construction and
//! records what backward needs. Nodes are created in topological order, so
//! the backward pass is a single reverse sweep.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{shape_str, AutodiffError, Real, Tensor};

type Cx = Complex<Real>;
type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Real),
    AddScalar(Var, #[allow(dead_code)] Real),
    Log(Var),
    ClampMin(Var, Real),
    Relu(Var),
    LeakyRelu(Var, Real),
    Sigmoid(Var),
    SoftmaxChannel(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, #[allow(dead_code)] eps: Real, mean: Vec<Real>, inv_std: Vec<Real> },
    Conv3d { x: Var, w: Var, stride: usize, pad: usize },
    ConvT3d { x: Var, w: Var, stride: usize, pad: usize },
    Linear { x: Var, w: Var },
    BiasAdd { x: Var, b: Var },
    MeanSpatial(Var),
    MeanAll(Var),
    SumAll(Var),
    Reshape(Var),
    StackScalars(Vec<Var>),
    CircShift2d { x: Var, dr: i64, dc: i64 },
    Fft2(Var),
    FreqMulIfft { x: Var, filter: Rc<Vec<Cx>> },
    Modulus(Var),
    FreqSubgridMean { x: Var, weights: Rc<Vec<(usize, Real)>> },
    GramFrobLoss { members: Vec<Var>, target: Rc<Vec<f64>> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Forward tape plus one reverse sweep. Single-threaded by contract; FFT
/// plans are cached per size.
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
    plans: RefCell<HashMap<usize, (Arc<dyn Fft<Real>>, Arc<dyn Fft<Real>>)>>,
    grads: Vec<Option<Vec<Real>>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &str, left: &[usize], right: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op: op.to_string(),
        left: shape_str(left),
        right: shape_str(right),
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
            plans: RefCell::new(HashMap::new()),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input: no gradient is tracked through it.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable input: backward accumulates d(loss)/d(input).
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the loss w.r.t. this node, available after `backward`.
    pub fn grad(&self, v: Var) -> Option<&[Real]> {
        self.grads[v.0].as_deref()
    }

    fn plans_for(&self, n: usize) -> (Arc<dyn Fft<Real>>, Arc<dyn Fft<Real>>) {
        let mut plans = self.plans.borrow_mut();
        let entry = plans.entry(n).or_insert_with(|| {
            let mut planner = FftPlanner::<Real>::new();
            (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
        });
        entry.clone()
    }

    /// Unnormalized 2D FFT of a square complex buffer (in place).
    fn fft2u(&self, buf: &mut [Cx], n: usize, inverse: bool) {
        let (fwd, inv) = self.plans_for(n);
        let plan = if inverse { &inv } else { &fwd };
        for row in buf.chunks_exact_mut(n) {
            plan.process(row);
        }
        for r in 0..n {
            for c in (r + 1)..n {
                buf.swap(r * n + c, c * n + r);
            }
        }
        for row in buf.chunks_exact_mut(n) {
            plan.process(row);
        }
        for r in 0..n {
            for c in (r + 1)..n {
                buf.swap(r * n + c, c * n + r);
            }
        }
    }

    // ---- elementwise ----

    fn binary_same_shape(&mut self, op_name: &str, a: Var, b: Var) -> Result<(Vec<usize>, bool)> {
        let sa = &self.nodes[a.0].value.shape;
        let sb = &self.nodes[b.0].value.shape;
        if sa != sb {
            return Err(mismatch(op_name, sa, sb));
        }
        Ok((sa.clone(), self.needs(a) || self.needs(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, ng) = self.binary_same_shape("add", a, b)?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(self.nodes[b.0].value.data.iter())
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(Tensor { shape, data }, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, ng) = self.binary_same_shape("sub", a, b)?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(self.nodes[b.0].value.data.iter())
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(Tensor { shape, data }, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, ng) = self.binary_same_shape("mul", a, b)?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(self.nodes[b.0].value.data.iter())
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Tensor { shape, data }, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: Real) -> Var {
        let ng = self.needs(a);
        let t = Tensor {
            shape: self.nodes[a.0].value.shape.clone(),
            data: self.nodes[a.0].value.data.iter().map(|x| x * c).collect(),
        };
        self.push(t, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: Real) -> Var {
        let ng = self.needs(a);
        let t = Tensor {
            shape: self.nodes[a.0].value.shape.clone(),
            data: self.nodes[a.0].value.data.iter().map(|x| x + c).collect(),
        };
        self.push(t, Op::AddScalar(a, c), ng)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let ng = self.needs(a);
        let t = Tensor {
            shape: self.nodes[a.0].value.shape.clone(),
            data: self.nodes[a.0].value.data.iter().map(|x| x.ln()).collect(),
        };
        self.push(t, Op::Log(a), ng)
    }

    pub fn clamp_min(&mut self, a: Var, floor: Real) -> Var {
        let ng = self.needs(a);
        let t = Tensor {
            shape: self.nodes[a.0].value.shape.clone(),
            data: self.nodes[a.0].value.data.iter().map(|x| x.max(floor)).collect(),
        };
        self.push(t, Op::ClampMin(a, floor), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ng = self.needs(a);
        let t = Tensor {
            shape: self.nodes[a.0].value.shape.clone(),
            data: self.nodes[a.0].value.data.iter().map(|x| x.max(0.0)).collect(),
        };
        self.push(t, Op::Relu(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: Real) -> Var {
        let ng = self.needs(a);
        let t = Tensor {
            shape: self.nodes[a.0].value.shape.clone(),
            data: self.nodes[a.0]
                .value
                .data
                .iter()
                .map(|&x| if x > 0.0 { x } else { slope * x })
                .collect(),
        };
        self.push(t, Op::LeakyRelu(a, slope), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let ng = self.needs(a);
        let t = Tensor {
            shape: self.nodes[a.0].value.shape.clone(),
            data: self.nodes[a.0]
                .value
                .data
                .iter()
                .map(|&x| 1.0 / (1.0 + (-x).exp()))
                .collect(),
        };
        self.push(t, Op::Sigmoid(a), ng)
    }

    /// Softmax over axis 1 of an (N0, C, ...) tensor.
    pub fn softmax_channel(&mut self, a: Var) -> Result<Var> {
        let shape = self.nodes[a.0].value.shape.clone();
        if shape.len() < 2 {
            return Err(mismatch("softmax_channel", &shape, &[0, 0]));
        }
        let c = shape[1];
        let inner: usize = shape[2..].iter().product();
        let outer = shape[0];
        let x = &self.nodes[a.0].value.data;
        let mut data = vec![0.0 as Real; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let mut m = Real::NEG_INFINITY;
                for ch in 0..c {
                    m = m.max(x[(o * c + ch) * inner + i]);
                }
                let mut z = 0.0;
                for ch in 0..c {
                    z += (x[(o * c + ch) * inner + i] - m).exp();
                }
                for ch in 0..c {
                    data[(o * c + ch) * inner + i] = (x[(o * c + ch) * inner + i] - m).exp() / z;
                }
            }
        }
        let ng = self.needs(a);
        Ok(self.push(Tensor { shape, data }, Op::SoftmaxChannel(a), ng))
    }

    /// Batch normalization over (N, C, ...) with per-channel affine. Batch
    /// statistics are used both in training and generation.
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, eps: Real) -> Result<Var> {
        let shape = self.nodes[x.0].value.shape.clone();
        if shape.len() < 2 {
            return Err(mismatch("batchnorm", &shape, &[0, 0]));
        }
        let c = shape[1];
        if self.nodes[gamma.0].value.shape != [c] {
            return Err(mismatch("batchnorm gamma", &self.nodes[gamma.0].value.shape, &[c]));
        }
        if self.nodes[beta.0].value.shape != [c] {
            return Err(mismatch("batchnorm beta", &self.nodes[beta.0].value.shape, &[c]));
        }
        let inner: usize = shape[2..].iter().product();
        let outer = shape[0];
        let m = (outer * inner) as f64;
        let xd = &self.nodes[x.0].value.data;
        let mut mean = vec![0.0 as Real; c];
        let mut inv_std = vec![0.0 as Real; c];
        for ch in 0..c {
            let mut acc = 0.0f64;
            for o in 0..outer {
                for i in 0..inner {
                    acc += xd[(o * c + ch) * inner + i] as f64;
                }
            }
            let mu = acc / m;
            let mut var = 0.0f64;
            for o in 0..outer {
                for i in 0..inner {
                    let d = xd[(o * c + ch) * inner + i] as f64 - mu;
                    var += d * d;
                }
            }
            var /= m;
            mean[ch] = mu as Real;
            inv_std[ch] = (1.0 / (var + eps as f64).sqrt()) as Real;
        }
        let g = &self.nodes[gamma.0].value.data;
        let b = &self.nodes[beta.0].value.data;
        let mut data = vec![0.0 as Real; xd.len()];
        for o in 0..outer {
            for ch in 0..c {
                for i in 0..inner {
                    let idx = (o * c + ch) * inner + i;
                    data[idx] = g[ch] * (xd[idx] - mean[ch]) * inv_std[ch] + b[ch];
                }
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            Tensor { shape, data },
            Op::BatchNorm { x, gamma, beta, eps, mean, inv_std },
            ng,
        ))
    }

    // ---- linear / convolution ----

    /// (B, In) x (In, Out) -> (B, Out).
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let sx = self.nodes[x.0].value.shape.clone();
        let sw = self.nodes[w.0].value.shape.clone();
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(mismatch("linear", &sx, &sw));
        }
        let (b, n_in, n_out) = (sx[0], sx[1], sw[1]);
        let xd = &self.nodes[x.0].value.data;
        let wd = &self.nodes[w.0].value.data;
        let mut data = vec![0.0 as Real; b * n_out];
        for bi in 0..b {
            for ii in 0..n_in {
                let xv = xd[bi * n_in + ii];
                if xv == 0.0 {
                    continue;
                }
                let wrow = &wd[ii * n_out..(ii + 1) * n_out];
                let orow = &mut data[bi * n_out..(bi + 1) * n_out];
                for (o, wv) in orow.iter_mut().zip(wrow.iter()) {
                    *o += xv * wv;
                }
            }
        }
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(Tensor { shape: vec![b, n_out], data }, Op::Linear { x, w }, ng))
    }

    /// Per-channel bias add on (N, C, ...).
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let shape = self.nodes[x.0].value.shape.clone();
        if shape.len() < 2 {
            return Err(mismatch("bias_add", &shape, &[0, 0]));
        }
        let c = shape[1];
        if self.nodes[b.0].value.shape != [c] {
            return Err(mismatch("bias_add", &self.nodes[b.0].value.shape, &[c]));
        }
        let inner: usize = shape[2..].iter().product();
        let outer = shape[0];
        let xd = &self.nodes[x.0].value.data;
        let bd = &self.nodes[b.0].value.data;
        let mut data = vec![0.0 as Real; xd.len()];
        for o in 0..outer {
            for ch in 0..c {
                for i in 0..inner {
                    let idx = (o * c + ch) * inner + i;
                    data[idx] = xd[idx] + bd[ch];
                }
            }
        }
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(Tensor { shape, data }, Op::BiasAdd { x, b }, ng))
    }

    /// 3D convolution: x (B, Cin, D, H, W), w (Cout, Cin, k, k, k).
    pub fn conv3d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let sx = self.nodes[x.0].value.shape.clone();
        let sw = self.nodes[w.0].value.shape.clone();
        if sx.len() != 5 || sw.len() != 5 || sx[1] != sw[1] || sw[2] != sw[3] || sw[3] != sw[4] {
            return Err(mismatch("conv3d", &sx, &sw));
        }
        let k = sw[2];
        let out_dim = |d: usize| -> Result<usize> {
            let padded = d + 2 * pad;
            if padded < k {
                return Err(mismatch("conv3d", &sx, &sw));
            }
            Ok((padded - k) / stride + 1)
        };
        let (db, dc) = (sx[0], sw[0]);
        let (dd, dh, dw_) = (out_dim(sx[2])?, out_dim(sx[3])?, out_dim(sx[4])?);
        let shape = vec![db, dc, dd, dh, dw_];
        let data = conv3d_forward(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            stride,
            pad,
            &shape,
        );
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(Tensor { shape, data }, Op::Conv3d { x, w, stride, pad }, ng))
    }

    /// Transposed 3D convolution: x (B, Cin, D, H, W), w (Cin, Cout, k, k, k);
    /// output side = (in - 1) * stride - 2 * pad + k.
    pub fn conv3d_transpose(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let sx = self.nodes[x.0].value.shape.clone();
        let sw = self.nodes[w.0].value.shape.clone();
        if sx.len() != 5 || sw.len() != 5 || sx[1] != sw[0] || sw[2] != sw[3] || sw[3] != sw[4] {
            return Err(mismatch("conv3d_transpose", &sx, &sw));
        }
        let k = sw[2];
        let out_dim = |d: usize| -> Result<usize> {
            let v = (d - 1) * stride + k;
            if v < 2 * pad {
                return Err(mismatch("conv3d_transpose", &sx, &sw));
            }
            Ok(v - 2 * pad)
        };
        let shape = vec![sx[0], sw[1], out_dim(sx[2])?, out_dim(sx[3])?, out_dim(sx[4])?];
        let data = convt3d_forward(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            stride,
            pad,
            &shape,
        );
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(Tensor { shape, data }, Op::ConvT3d { x, w, stride, pad }, ng))
    }

    // ---- reductions / shape ----

    /// (N, C, ...) -> (N, C): mean over the spatial tail.
    pub fn mean_spatial(&mut self, a: Var) -> Result<Var> {
        let shape = self.nodes[a.0].value.shape.clone();
        if shape.len() < 3 {
            return Err(mismatch("mean_spatial", &shape, &[0, 0, 0]));
        }
        let inner: usize = shape[2..].iter().product();
        let outer = shape[0] * shape[1];
        let xd = &self.nodes[a.0].value.data;
        let mut data = vec![0.0 as Real; outer];
        for o in 0..outer {
            let mut acc = 0.0f64;
            for i in 0..inner {
                acc += xd[o * inner + i] as f64;
            }
            data[o] = (acc / inner as f64) as Real;
        }
        let ng = self.needs(a);
        Ok(self.push(Tensor { shape: vec![shape[0], shape[1]], data }, Op::MeanSpatial(a), ng))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let xd = &self.nodes[a.0].value.data;
        let acc: f64 = xd.iter().map(|&v| v as f64).sum();
        let v = (acc / xd.len() as f64) as Real;
        let ng = self.needs(a);
        self.push(Tensor::scalar(v), Op::MeanAll(a), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let xd = &self.nodes[a.0].value.data;
        let acc: f64 = xd.iter().map(|&v| v as f64).sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(acc as Real), Op::SumAll(a), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let old = self.nodes[a.0].value.shape.clone();
        if shape.iter().product::<usize>() != old.iter().product::<usize>() {
            return Err(mismatch("reshape", &old, shape));
        }
        let t = Tensor { shape: shape.to_vec(), data: self.nodes[a.0].value.data.clone() };
        let ng = self.needs(a);
        Ok(self.push(t, Op::Reshape(a), ng))
    }

    /// Concatenate scalar nodes into a 1D vector.
    pub fn stack_scalars(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::with_capacity(parts.len());
        let mut ng = false;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            if t.numel() != 1 {
                return Err(mismatch("stack_scalars", &t.shape, &[1]));
            }
            data.push(t.data[0]);
            ng |= self.needs(p);
        }
        Ok(self.push(
            Tensor { shape: vec![parts.len()], data },
            Op::StackScalars(parts.to_vec()),
            ng,
        ))
    }

    // ---- scattering primitives ----

    /// Circular shift of an (H, W) grid: out(r, c) = in(r - dr, c - dc).
    pub fn circ_shift2d(&mut self, a: Var, dr: i64, dc: i64) -> Result<Var> {
        let shape = self.nodes[a.0].value.shape.clone();
        if shape.len() != 2 {
            return Err(mismatch("circ_shift2d", &shape, &[0, 0]));
        }
        let (h, w) = (shape[0], shape[1]);
        let xd = &self.nodes[a.0].value.data;
        let mut data = vec![0.0 as Real; h * w];
        for r in 0..h {
            let sr = (r as i64 - dr).rem_euclid(h as i64) as usize;
            for c in 0..w {
                let sc = (c as i64 - dc).rem_euclid(w as i64) as usize;
                data[r * w + c] = xd[sr * w + sc];
            }
        }
        let ng = self.needs(a);
        Ok(self.push(Tensor { shape, data }, Op::CircShift2d { x: a, dr, dc }, ng))
    }

    /// Real (N, N) -> complex spectrum stored as (2, N, N) re/im planes.
    pub fn fft2(&mut self, a: Var) -> Result<Var> {
        let shape = self.nodes[a.0].value.shape.clone();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(AutodiffError::NotSquare { op: "fft2".into(), shape: shape_str(&shape) });
        }
        let n = shape[0];
        let mut buf: Vec<Cx> = self.nodes[a.0]
            .value
            .data
            .iter()
            .map(|&v| Cx::new(v, 0.0))
            .collect();
        self.fft2u(&mut buf, n, false);
        let mut data = vec![0.0 as Real; 2 * n * n];
        for (i, c) in buf.iter().enumerate() {
            data[i] = c.re;
            data[n * n + i] = c.im;
        }
        let ng = self.needs(a);
        Ok(self.push(Tensor { shape: vec![2, n, n], data }, Op::Fft2(a), ng))
    }

    /// Multiply a spectrum (2, N, N) by a fixed complex filter and apply the
    /// normalized inverse FFT; output is a complex (2, N, N) spatial field.
    pub fn freq_mul_ifft(&mut self, a: Var, filter: Rc<Vec<Cx>>) -> Result<Var> {
        let shape = self.nodes[a.0].value.shape.clone();
        if shape.len() != 3 || shape[0] != 2 || shape[1] != shape[2] {
            return Err(AutodiffError::NotSquare {
                op: "freq_mul_ifft".into(),
                shape: shape_str(&shape),
            });
        }
        let n = shape[1];
        if filter.len() != n * n {
            return Err(mismatch("freq_mul_ifft filter", &[filter.len()], &[n * n]));
        }
        let xd = &self.nodes[a.0].value.data;
        let mut buf: Vec<Cx> = (0..n * n)
            .map(|i| Cx::new(xd[i], xd[n * n + i]) * filter[i])
            .collect();
        self.fft2u(&mut buf, n, true);
        let norm = 1.0 / (n * n) as Real;
        let mut data = vec![0.0 as Real; 2 * n * n];
        for (i, c) in buf.iter().enumerate() {
            data[i] = c.re * norm;
            data[n * n + i] = c.im * norm;
        }
        let ng = self.needs(a);
        Ok(self.push(Tensor { shape, data }, Op::FreqMulIfft { x: a, filter }, ng))
    }

    /// Complex (2, N, N) -> real (N, N) magnitude; subgradient 0 where the
    /// magnitude is exactly zero.
    pub fn modulus(&mut self, a: Var) -> Result<Var> {
        let shape = self.nodes[a.0].value.shape.clone();
        if shape.len() != 3 || shape[0] != 2 {
            return Err(mismatch("modulus", &shape, &[2, 0, 0]));
        }
        let m = shape[1] * shape[2];
        let xd = &self.nodes[a.0].value.data;
        let data: Vec<Real> = (0..m)
            .map(|i| (xd[i] * xd[i] + xd[m + i] * xd[m + i]).sqrt())
            .collect();
        let ng = self.needs(a);
        Ok(self.push(
            Tensor { shape: vec![shape[1], shape[2]], data },
            Op::Modulus(a),
            ng,
        ))
    }

    /// Mean over the 2^J-subsampled grid of (field * phi), computed entirely
    /// in the frequency domain from the field's spectrum (2, N, N):
    /// value = Re( sum_k weights[k] * X(k) ) over the alias lattice.
    pub fn freq_subgrid_mean(&mut self, a: Var, weights: Rc<Vec<(usize, Real)>>) -> Result<Var> {
        let shape = self.nodes[a.0].value.shape.clone();
        if shape.len() != 3 || shape[0] != 2 {
            return Err(mismatch("freq_subgrid_mean", &shape, &[2, 0, 0]));
        }
        let xd = &self.nodes[a.0].value.data;
        let mut acc = 0.0f64;
        for &(idx, w) in weights.iter() {
            acc += w as f64 * xd[idx] as f64;
        }
        let ng = self.needs(a);
        Ok(self.push(
            Tensor::scalar(acc as Real),
            Op::FreqSubgridMean { x: a, weights },
            ng,
        ))
    }

    /// || (1/G) sum_g v_g v_g^T - K_target ||_F^2 over member vectors (D,).
    /// The target stays in f64 so a bit-identical ensemble yields exactly 0.
    pub fn gram_frobenius_loss(&mut self, members: &[Var], target: Rc<Vec<f64>>) -> Result<Var> {
        if members.is_empty() {
            return Err(mismatch("gram_frobenius_loss", &[0], &[1]));
        }
        let d = self.nodes[members[0].0].value.numel();
        if target.len() != d * d {
            return Err(mismatch("gram_frobenius_loss target", &[target.len()], &[d * d]));
        }
        for &mv in members {
            if self.nodes[mv.0].value.numel() != d {
                return Err(mismatch(
                    "gram_frobenius_loss member",
                    &self.nodes[mv.0].value.shape,
                    &[d],
                ));
            }
        }
        let gram = self.gram_of(members, d);
        let mut loss = 0.0f64;
        for (g, t) in gram.iter().zip(target.iter()) {
            let diff = g - t;
            loss += diff * diff;
        }
        let ng = members.iter().any(|&m| self.needs(m));
        Ok(self.push(
            Tensor::scalar(loss as Real),
            Op::GramFrobLoss { members: members.to_vec(), target },
            ng,
        ))
    }

    fn gram_of(&self, members: &[Var], d: usize) -> Vec<f64> {
        let g = members.len() as f64;
        let mut gram = vec![0.0f64; d * d];
        for &mv in members {
            let v = &self.nodes[mv.0].value.data;
            for i in 0..d {
                let vi = v[i] as f64;
                for j in 0..d {
                    gram[i * d + j] += vi * v[j] as f64;
                }
            }
        }
        for x in gram.iter_mut() {
            *x /= g;
        }
        gram
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss; gradients land on every node with
    /// `needs_grad`, retrievable via [`Graph::grad`]. A second call without
    /// rebuilding the forward pass is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(AutodiffError::BackwardTwice);
        }
        self.backward_done = true;
        let loss_shape = &self.nodes[loss.0].value.shape;
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(AutodiffError::NotScalarLoss(shape_str(loss_shape)));
        }
        self.grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let gout = match self.grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &gout)?;
            self.grads[idx] = Some(gout);
        }
        Ok(())
    }

    fn add_grad(&mut self, v: Var, contribution: impl FnOnce(&mut [Real])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        if self.grads[v.0].is_none() {
            self.grads[v.0] = Some(vec![0.0; self.nodes[v.0].value.numel()]);
        }
        let mut g = self.grads[v.0].take().unwrap();
        contribution(&mut g);
        self.grads[v.0] = Some(g);
    }

    #[allow(clippy::too_many_lines)]
    fn propagate(&mut self, idx: usize, gout: &[Real]) -> Result<()> {
        // Take the op out to end the borrow on self.nodes; put it back after.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_grad(*a, |g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
                self.add_grad(*b, |g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
            }
            Op::Sub(a, b) => {
                self.add_grad(*a, |g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
                self.add_grad(*b, |g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi -= go;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.data.clone();
                let bv = self.nodes[b.0].value.data.clone();
                self.add_grad(*a, |g| {
                    for ((gi, &go), &b) in g.iter_mut().zip(gout).zip(bv.iter()) {
                        *gi += go * b;
                    }
                });
                self.add_grad(*b, |g| {
                    for ((gi, &go), &a) in g.iter_mut().zip(gout).zip(av.iter()) {
                        *gi += go * a;
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.add_grad(*a, |g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go * c;
                    }
                });
            }
            Op::AddScalar(a, _) => {
                self.add_grad(*a, |g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
            }
            Op::Log(a) => {
                let av = self.nodes[a.0].value.data.clone();
                self.add_grad(*a, |g| {
                    for ((gi, &go), &x) in g.iter_mut().zip(gout).zip(av.iter()) {
                        *gi += go / x;
                    }
                });
            }
            Op::ClampMin(a, floor) => {
                let floor = *floor;
                let av = self.nodes[a.0].value.data.clone();
                self.add_grad(*a, |g| {
                    for ((gi, &go), &x) in g.iter_mut().zip(gout).zip(av.iter()) {
                        if x > floor {
                            *gi += go;
                        }
                    }
                });
            }
            Op::Relu(a) => {
                let av = self.nodes[a.0].value.data.clone();
                self.add_grad(*a, |g| {
                    for ((gi, &go), &x) in g.iter_mut().zip(gout).zip(av.iter()) {
                        if x > 0.0 {
                            *gi += go;
                        }
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                let av = self.nodes[a.0].value.data.clone();
                self.add_grad(*a, |g| {
                    for ((gi, &go), &x) in g.iter_mut().zip(gout).zip(av.iter()) {
                        *gi += if x > 0.0 { go } else { go * slope };
                    }
                });
            }
            Op::Sigmoid(a) => {
                let yv = self.nodes[idx].value.data.clone();
                self.add_grad(*a, |g| {
                    for ((gi, &go), &y) in g.iter_mut().zip(gout).zip(yv.iter()) {
                        *gi += go * y * (1.0 - y);
                    }
                });
            }
            Op::SoftmaxChannel(a) => {
                let y = self.nodes[idx].value.data.clone();
                let shape = self.nodes[idx].value.shape.clone();
                let c = shape[1];
                let inner: usize = shape[2..].iter().product();
                let outer = shape[0];
                self.add_grad(*a, |g| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let mut dot = 0.0;
                            for ch in 0..c {
                                let idx2 = (o * c + ch) * inner + i;
                                dot += gout[idx2] * y[idx2];
                            }
                            for ch in 0..c {
                                let idx2 = (o * c + ch) * inner + i;
                                g[idx2] += y[idx2] * (gout[idx2] - dot);
                            }
                        }
                    }
                });
            }
            Op::BatchNorm { x, gamma, beta, eps: _, mean, inv_std } => {
                let shape = self.nodes[x.0].value.shape.clone();
                let c = shape[1];
                let inner: usize = shape[2..].iter().product();
                let outer = shape[0];
                let m = (outer * inner) as f64;
                let xd = self.nodes[x.0].value.data.clone();
                let gd = self.nodes[gamma.0].value.data.clone();
                // per-channel sums
                let mut sum_dy = vec![0.0f64; c];
                let mut sum_dy_xhat = vec![0.0f64; c];
                for o in 0..outer {
                    for ch in 0..c {
                        for i in 0..inner {
                            let idx2 = (o * c + ch) * inner + i;
                            let xhat = (xd[idx2] - mean[ch]) * inv_std[ch];
                            sum_dy[ch] += gout[idx2] as f64;
                            sum_dy_xhat[ch] += gout[idx2] as f64 * xhat as f64;
                        }
                    }
                }
                let mean = mean.clone();
                let inv_std = inv_std.clone();
                let sum_dy_c = sum_dy.clone();
                let sum_dy_xhat_c = sum_dy_xhat.clone();
                self.add_grad(*gamma, |g| {
                    for (gi, &s) in g.iter_mut().zip(sum_dy_xhat_c.iter()) {
                        *gi += s as Real;
                    }
                });
                self.add_grad(*beta, |g| {
                    for (gi, &s) in g.iter_mut().zip(sum_dy_c.iter()) {
                        *gi += s as Real;
                    }
                });
                self.add_grad(*x, |g| {
                    for o in 0..outer {
                        for ch in 0..c {
                            for i in 0..inner {
                                let idx2 = (o * c + ch) * inner + i;
                                let xhat = ((xd[idx2] - mean[ch]) * inv_std[ch]) as f64;
                                let dxhat = gout[idx2] as f64
                                    - sum_dy[ch] / m
                                    - xhat * sum_dy_xhat[ch] / m;
                                g[idx2] += gd[ch] * inv_std[ch] * dxhat as Real;
                            }
                        }
                    }
                });
            }
            Op::Conv3d { x, w, stride, pad } => {
                let (stride, pad) = (*stride, *pad);
                let xs = self.nodes[x.0].value.clone();
                let ws = self.nodes[w.0].value.clone();
                let out_shape = self.nodes[idx].value.shape.clone();
                if self.needs(*x) {
                    let dx = conv3d_backward_x(&ws, gout, &out_shape, &xs.shape, stride, pad);
                    self.add_grad(*x, |g| {
                        for (gi, d) in g.iter_mut().zip(dx) {
                            *gi += d;
                        }
                    });
                }
                if self.needs(*w) {
                    let dw = conv3d_backward_w(&xs, gout, &out_shape, &ws.shape, stride, pad);
                    self.add_grad(*w, |g| {
                        for (gi, d) in g.iter_mut().zip(dw) {
                            *gi += d;
                        }
                    });
                }
            }
            Op::ConvT3d { x, w, stride, pad } => {
                let (stride, pad) = (*stride, *pad);
                let xs = self.nodes[x.0].value.clone();
                let ws = self.nodes[w.0].value.clone();
                let out_shape = self.nodes[idx].value.shape.clone();
                if self.needs(*x) {
                    let dx = convt3d_backward_x(&ws, gout, &out_shape, &xs.shape, stride, pad);
                    self.add_grad(*x, |g| {
                        for (gi, d) in g.iter_mut().zip(dx) {
                            *gi += d;
                        }
                    });
                }
                if self.needs(*w) {
                    let dw = convt3d_backward_w(&xs, gout, &out_shape, &ws.shape, stride, pad);
                    self.add_grad(*w, |g| {
                        for (gi, d) in g.iter_mut().zip(dw) {
                            *gi += d;
                        }
                    });
                }
            }
            Op::Linear { x, w } => {
                let xs = self.nodes[x.0].value.clone();
                let ws = self.nodes[w.0].value.clone();
                let (b, n_in, n_out) = (xs.shape[0], xs.shape[1], ws.shape[1]);
                if self.needs(*x) {
                    self.add_grad(*x, |g| {
                        for bi in 0..b {
                            for ii in 0..n_in {
                                let mut acc = 0.0f64;
                                for oo in 0..n_out {
                                    acc += (gout[bi * n_out + oo] * ws.data[ii * n_out + oo]) as f64;
                                }
                                g[bi * n_in + ii] += acc as Real;
                            }
                        }
                    });
                }
                if self.needs(*w) {
                    self.add_grad(*w, |g| {
                        for ii in 0..n_in {
                            for oo in 0..n_out {
                                let mut acc = 0.0f64;
                                for bi in 0..b {
                                    acc += (xs.data[bi * n_in + ii] * gout[bi * n_out + oo]) as f64;
                                }
                                g[ii * n_out + oo] += acc as Real;
                            }
                        }
                    });
                }
            }
            Op::BiasAdd { x, b } => {
                let shape = self.nodes[x.0].value.shape.clone();
                let c = shape[1];
                let inner: usize = shape[2..].iter().product();
                let outer = shape[0];
                self.add_grad(*x, |g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
                self.add_grad(*b, |g| {
                    for o in 0..outer {
                        for ch in 0..c {
                            let mut acc = 0.0f64;
                            for i in 0..inner {
                                acc += gout[(o * c + ch) * inner + i] as f64;
                            }
                            g[ch] += acc as Real;
                        }
                    }
                });
            }
            Op::MeanSpatial(a) => {
                let shape = self.nodes[a.0].value.shape.clone();
                let inner: usize = shape[2..].iter().product();
                let outer = shape[0] * shape[1];
                let scale = 1.0 / inner as Real;
                self.add_grad(*a, |g| {
                    for o in 0..outer {
                        let go = gout[o] * scale;
                        for i in 0..inner {
                            g[o * inner + i] += go;
                        }
                    }
                });
            }
            Op::MeanAll(a) => {
                let n = self.nodes[a.0].value.numel();
                let go = gout[0] / n as Real;
                self.add_grad(*a, |g| {
                    for gi in g.iter_mut() {
                        *gi += go;
                    }
                });
            }
            Op::SumAll(a) => {
                let go = gout[0];
                self.add_grad(*a, |g| {
                    for gi in g.iter_mut() {
                        *gi += go;
                    }
                });
            }
            Op::Reshape(a) => {
                self.add_grad(*a, |g| {
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                });
            }
            Op::StackScalars(parts) => {
                for (i, &p) in parts.iter().enumerate() {
                    let go = gout[i];
                    self.add_grad(p, |g| {
                        g[0] += go;
                    });
                }
            }
            Op::CircShift2d { x, dr, dc } => {
                let shape = self.nodes[idx].value.shape.clone();
                let (h, w) = (shape[0], shape[1]);
                let (dr, dc) = (*dr, *dc);
                self.add_grad(*x, |g| {
                    for r in 0..h {
                        let sr = (r as i64 - dr).rem_euclid(h as i64) as usize;
                        for c in 0..w {
                            let sc = (c as i64 - dc).rem_euclid(w as i64) as usize;
                            g[sr * w + sc] += gout[r * w + c];
                        }
                    }
                });
            }
            Op::Fft2(a) => {
                let n = self.nodes[a.0].value.shape[0];
                let m = n * n;
                let mut buf: Vec<Cx> = (0..m).map(|i| Cx::new(gout[i], gout[m + i])).collect();
                self.fft2u(&mut buf, n, true); // unnormalized inverse = conj(W) . g
                self.add_grad(*a, |g| {
                    for (gi, c) in g.iter_mut().zip(buf.iter()) {
                        *gi += c.re;
                    }
                });
            }
            Op::FreqMulIfft { x, filter } => {
                let n = self.nodes[idx].value.shape[1];
                let m = n * n;
                let mut buf: Vec<Cx> = (0..m).map(|i| Cx::new(gout[i], gout[m + i])).collect();
                self.fft2u(&mut buf, n, false);
                let norm = 1.0 / m as Real;
                let filter = filter.clone();
                self.add_grad(*x, |g| {
                    for (i, c) in buf.iter().enumerate() {
                        let v = filter[i].conj() * *c * norm;
                        g[i] += v.re;
                        g[m + i] += v.im;
                    }
                });
            }
            Op::Modulus(a) => {
                let xd = self.nodes[a.0].value.data.clone();
                let yv = self.nodes[idx].value.data.clone();
                let m = yv.len();
                self.add_grad(*a, |g| {
                    for i in 0..m {
                        if yv[i] > 0.0 {
                            let s = gout[i] / yv[i];
                            g[i] += s * xd[i];
                            g[m + i] += s * xd[m + i];
                        }
                    }
                });
            }
            Op::FreqSubgridMean { x, weights } => {
                let go = gout[0];
                let weights = weights.clone();
                self.add_grad(*x, |g| {
                    for &(i, w) in weights.iter() {
                        g[i] += go * w;
                    }
                });
            }
            Op::GramFrobLoss { members, target } => {
                let d = self.nodes[members[0].0].value.numel();
                let gram = self.gram_of(members, d);
                let gcount = members.len() as f64;
                let go = gout[0] as f64;
                for &mv in members {
                    let v = self.nodes[mv.0].value.data.clone();
                    let mut dv = vec![0.0 as Real; d];
                    for i in 0..d {
                        // d/dv_i of sum_pq (Gram - K)_pq^2 needs both the row
                        // and column of the difference (K may be asymmetric)
                        let mut acc = 0.0f64;
                        for j in 0..d {
                            let delta_ij = gram[i * d + j] - target[i * d + j];
                            let delta_ji = gram[j * d + i] - target[j * d + i];
                            acc += (delta_ij + delta_ji) * v[j] as f64;
                        }
                        dv[i] = (go * 2.0 / gcount * acc) as Real;
                    }
                    self.add_grad(mv, |g| {
                        for (gi, d) in g.iter_mut().zip(dv) {
                            *gi += d;
                        }
                    });
                }
            }
        }
        self.nodes[idx].op = op;
        Ok(())
    }
}

// ---- convolution kernels ----

fn conv3d_forward(x: &Tensor, w: &Tensor, stride: usize, pad: usize, out_shape: &[usize]) -> Vec<Real> {
    let (b, cin, dd, hh, ww) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3], x.shape[4]);
    let (cout, k) = (w.shape[0], w.shape[2]);
    let (od, oh, ow) = (out_shape[2], out_shape[3], out_shape[4]);
    let mut out = vec![0.0 as Real; b * cout * od * oh * ow];
    let p = pad as i64;
    for bi in 0..b {
        for co in 0..cout {
            let out_base = (bi * cout + co) * od * oh * ow;
            for ci in 0..cin {
                let x_base = (bi * cin + ci) * dd * hh * ww;
                let w_base = (co * cin + ci) * k * k * k;
                for kz in 0..k {
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = w.data[w_base + (kz * k + ky) * k + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            for oz in 0..od {
                                let iz = oz as i64 * stride as i64 + kz as i64 - p;
                                if iz < 0 || iz >= dd as i64 {
                                    continue;
                                }
                                for oy in 0..oh {
                                    let iy = oy as i64 * stride as i64 + ky as i64 - p;
                                    if iy < 0 || iy >= hh as i64 {
                                        continue;
                                    }
                                    let orow = out_base + (oz * oh + oy) * ow;
                                    let xrow = x_base + (iz as usize * hh + iy as usize) * ww;
                                    for ox in 0..ow {
                                        let ix = ox as i64 * stride as i64 + kx as i64 - p;
                                        if ix < 0 || ix >= ww as i64 {
                                            continue;
                                        }
                                        out[orow + ox] += wv * x.data[xrow + ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv3d_backward_x(
    w: &Tensor,
    gout: &[Real],
    out_shape: &[usize],
    x_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Vec<Real> {
    let (b, cin, dd, hh, ww) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3], x_shape[4]);
    let (cout, k) = (w.shape[0], w.shape[2]);
    let (od, oh, ow) = (out_shape[2], out_shape[3], out_shape[4]);
    let mut dx = vec![0.0 as Real; b * cin * dd * hh * ww];
    let p = pad as i64;
    for bi in 0..b {
        for co in 0..cout {
            let g_base = (bi * cout + co) * od * oh * ow;
            for ci in 0..cin {
                let x_base = (bi * cin + ci) * dd * hh * ww;
                let w_base = (co * cin + ci) * k * k * k;
                for kz in 0..k {
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = w.data[w_base + (kz * k + ky) * k + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            for oz in 0..od {
                                let iz = oz as i64 * stride as i64 + kz as i64 - p;
                                if iz < 0 || iz >= dd as i64 {
                                    continue;
                                }
                                for oy in 0..oh {
                                    let iy = oy as i64 * stride as i64 + ky as i64 - p;
                                    if iy < 0 || iy >= hh as i64 {
                                        continue;
                                    }
                                    let grow = g_base + (oz * oh + oy) * ow;
                                    let xrow = x_base + (iz as usize * hh + iy as usize) * ww;
                                    for ox in 0..ow {
                                        let ix = ox as i64 * stride as i64 + kx as i64 - p;
                                        if ix < 0 || ix >= ww as i64 {
                                            continue;
                                        }
                                        dx[xrow + ix as usize] += wv * gout[grow + ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

fn conv3d_backward_w(
    x: &Tensor,
    gout: &[Real],
    out_shape: &[usize],
    w_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Vec<Real> {
    let (b, cin, dd, hh, ww) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3], x.shape[4]);
    let (cout, k) = (w_shape[0], w_shape[2]);
    let (od, oh, ow) = (out_shape[2], out_shape[3], out_shape[4]);
    let mut dw = vec![0.0 as Real; cout * cin * k * k * k];
    let p = pad as i64;
    for bi in 0..b {
        for co in 0..cout {
            let g_base = (bi * cout + co) * od * oh * ow;
            for ci in 0..cin {
                let x_base = (bi * cin + ci) * dd * hh * ww;
                let w_base = (co * cin + ci) * k * k * k;
                for kz in 0..k {
                    for ky in 0..k {
                        for kx in 0..k {
                            let mut acc = 0.0f64;
                            for oz in 0..od {
                                let iz = oz as i64 * stride as i64 + kz as i64 - p;
                                if iz < 0 || iz >= dd as i64 {
                                    continue;
                                }
                                for oy in 0..oh {
                                    let iy = oy as i64 * stride as i64 + ky as i64 - p;
                                    if iy < 0 || iy >= hh as i64 {
                                        continue;
                                    }
                                    let grow = g_base + (oz * oh + oy) * ow;
                                    let xrow = x_base + (iz as usize * hh + iy as usize) * ww;
                                    for ox in 0..ow {
                                        let ix = ox as i64 * stride as i64 + kx as i64 - p;
                                        if ix < 0 || ix >= ww as i64 {
                                            continue;
                                        }
                                        acc += (gout[grow + ox] * x.data[xrow + ix as usize]) as f64;
                                    }
                                }
                            }
                            dw[w_base + (kz * k + ky) * k + kx] += acc as Real;
                        }
                    }
                }
            }
        }
    }
    dw
}

fn convt3d_forward(x: &Tensor, w: &Tensor, stride: usize, pad: usize, out_shape: &[usize]) -> Vec<Real> {
    let (b, cin, dd, hh, ww) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3], x.shape[4]);
    let (cout, k) = (w.shape[1], w.shape[2]);
    let (od, oh, ow) = (out_shape[2], out_shape[3], out_shape[4]);
    let mut out = vec![0.0 as Real; b * cout * od * oh * ow];
    let p = pad as i64;
    for bi in 0..b {
        for ci in 0..cin {
            let x_base = (bi * cin + ci) * dd * hh * ww;
            for co in 0..cout {
                let out_base = (bi * cout + co) * od * oh * ow;
                let w_base = (ci * cout + co) * k * k * k;
                for kz in 0..k {
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = w.data[w_base + (kz * k + ky) * k + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            for iz in 0..dd {
                                let oz = iz as i64 * stride as i64 + kz as i64 - p;
                                if oz < 0 || oz >= od as i64 {
                                    continue;
                                }
                                for iy in 0..hh {
                                    let oy = iy as i64 * stride as i64 + ky as i64 - p;
                                    if oy < 0 || oy >= oh as i64 {
                                        continue;
                                    }
                                    let xrow = x_base + (iz * hh + iy) * ww;
                                    let orow = out_base + (oz as usize * oh + oy as usize) * ow;
                                    for ix in 0..ww {
                                        let ox = ix as i64 * stride as i64 + kx as i64 - p;
                                        if ox < 0 || ox >= ow as i64 {
                                            continue;
                                        }
                                        out[orow + ox as usize] += wv * x.data[xrow + ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn convt3d_backward_x(
    w: &Tensor,
    gout: &[Real],
    out_shape: &[usize],
    x_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Vec<Real> {
    let (b, cin, dd, hh, ww) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3], x_shape[4]);
    let (cout, k) = (w.shape[1], w.shape[2]);
    let (od, oh, ow) = (out_shape[2], out_shape[3], out_shape[4]);
    let mut dx = vec![0.0 as Real; b * cin * dd * hh * ww];
    let p = pad as i64;
    for bi in 0..b {
        for ci in 0..cin {
            let x_base = (bi * cin + ci) * dd * hh * ww;
            for co in 0..cout {
                let g_base = (bi * cout + co) * od * oh * ow;
                let w_base = (ci * cout + co) * k * k * k;
                for kz in 0..k {
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = w.data[w_base + (kz * k + ky) * k + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            for iz in 0..dd {
                                let oz = iz as i64 * stride as i64 + kz as i64 - p;
                                if oz < 0 || oz >= od as i64 {
                                    continue;
                                }
                                for iy in 0..hh {
                                    let oy = iy as i64 * stride as i64 + ky as i64 - p;
                                    if oy < 0 || oy >= oh as i64 {
                                        continue;
                                    }
                                    let xrow = x_base + (iz * hh + iy) * ww;
                                    let grow = g_base + (oz as usize * oh + oy as usize) * ow;
                                    for ix in 0..ww {
                                        let ox = ix as i64 * stride as i64 + kx as i64 - p;
                                        if ox < 0 || ox >= ow as i64 {
                                            continue;
                                        }
                                        dx[xrow + ix] += wv * gout[grow + ox as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

fn convt3d_backward_w(
    x: &Tensor,
    gout: &[Real],
    out_shape: &[usize],
    w_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Vec<Real> {
    let (b, cin, dd, hh, ww) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3], x.shape[4]);
    let (cout, k) = (w_shape[1], w_shape[2]);
    let (od, oh, ow) = (out_shape[2], out_shape[3], out_shape[4]);
    let mut dw = vec![0.0 as Real; cin * cout * k * k * k];
    let p = pad as i64;
    for bi in 0..b {
        for ci in 0..cin {
            let x_base = (bi * cin + ci) * dd * hh * ww;
            for co in 0..cout {
                let g_base = (bi * cout + co) * od * oh * ow;
                let w_base = (ci * cout + co) * k * k * k;
                for kz in 0..k {
                    for ky in 0..k {
                        for kx in 0..k {
                            let mut acc = 0.0f64;
                            for iz in 0..dd {
                                let oz = iz as i64 * stride as i64 + kz as i64 - p;
                                if oz < 0 || oz >= od as i64 {
                                    continue;
                                }
                                for iy in 0..hh {
                                    let oy = iy as i64 * stride as i64 + ky as i64 - p;
                                    if oy < 0 || oy >= oh as i64 {
                                        continue;
                                    }
                                    let xrow = x_base + (iz * hh + iy) * ww;
                                    let grow = g_base + (oz as usize * oh + oy as usize) * ow;
                                    for ix in 0..ww {
                                        let ox = ix as i64 * stride as i64 + kx as i64 - p;
                                        if ox < 0 || ox >= ow as i64 {
                                            continue;
                                        }
                                        acc += (x.data[xrow + ix] * gout[grow + ox as usize]) as f64;
                                    }
                                }
                            }
                            dw[w_base + (kz * k + ky) * k + kx] += acc as Real;
                        }
                    }
                }
            }
        }
    }
    dw
}
