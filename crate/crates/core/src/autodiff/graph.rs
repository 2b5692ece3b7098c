use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{col2im, gemm_nn, gemm_nt, gemm_tn, im2col, Window};
use crate::error::{contract_err, dim_err, Result};
use crate::math::{self, INV_SQRT_2PI, SQRT_2};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Normalization epsilon shared by layer norm and batch norm.
pub const NORM_EPS: f64 = 1e-5;

/// Stride, padding and group count for [`Graph::conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2d {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

/// Window size, stride and padding for [`Graph::avg_pool2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Per-channel batch statistics observed by a training-mode batch norm.
/// The variance is the unbiased estimate used for running averages.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    o: usize,
    groups: usize,
    win: Window,
}

#[derive(Clone, Copy, Debug)]
struct PoolGeom {
    n: usize,
    c: usize,
    win: Window,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias {
        x: Var,
        bias: Var,
        axis: usize,
    },
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    AvgPool2d {
        input: Var,
        geom: PoolGeom,
    },
    Sum(Var),
    Mean(Var),
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Gelu(Var),
    Relu(Var),
    Sigmoid(Var),
    /// Normalization over groups of elements. `outer × channels × inner`
    /// indexing: layer norm uses channels on the last axis (inner = 1),
    /// batch norm uses axis 1.
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        layout: NormLayout,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    /// Scalar-output op whose gradient was computed during the forward pass.
    Fused {
        x: Var,
        grad: Vec<f64>,
    },
}

#[derive(Clone, Copy, Debug)]
struct NormLayout {
    outer: usize,
    channels: usize,
    inner: usize,
    /// true: statistics per channel (batch norm); false: per (outer, inner) row
    /// across channels (layer norm).
    per_channel: bool,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Define-by-run computation graph.
///
/// Every primitive appends its output node; nodes are stored in execution
/// order so operands always precede their consumers. [`Graph::backward`]
/// walks the tape in reverse once, summing gradients at fan-out points.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Gradient buffer without copying; `None` if no gradient reached `v`.
    pub fn grad_data(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_map(a, b, |x, y| x + y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_map(a, b, |x, y| x - y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_map(a, b, |x, y| x * y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.map(a, |x| c * x);
        let rg = self.any_grad(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// Adds a 1-D `bias` broadcast along `axis` of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || self.shape(bias) != [shape[axis]] {
            return Err(dim_err!(
                "bias {:?} does not match axis {axis} of {:?}",
                self.shape(bias),
                shape
            ));
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[(i / inner) % len])
            .collect();
        let out = Tensor::new(shape, data)?;
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(out, Op::AddBias { x, bias, axis }, rg))
    }

    /// Matrix product of `m×k` and `k×n` tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err!("matmul: cannot multiply {:?} by {:?}", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        let out = Tensor::new(vec![m, n], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Grouped 2-D cross-correlation of `N×C×H×W` input with an
    /// `O×(C/g)×kh×kw` kernel. `groups == C == O` is depthwise; a 1×1 kernel
    /// with one group is pointwise.
    pub fn conv2d(&mut self, input: Var, kernel: Var, spec: Conv2d) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if si.len() != 4 || sk.len() != 4 {
            return Err(dim_err!("conv2d: expected 4-D input and kernel, got {:?} and {:?}", si, sk));
        }
        let (n, c, h, w) = (si[0], si[1], si[2], si[3]);
        let (o, cg, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
        let g = spec.groups;
        if g == 0 || c % g != 0 || o % g != 0 {
            return Err(dim_err!(
                "conv2d: {c} input and {o} output channels must both be divisible by {g} groups"
            ));
        }
        if cg != c / g {
            return Err(dim_err!(
                "conv2d: kernel {:?} expects {cg} channels per group, input {:?} has {}",
                sk,
                si,
                c / g
            ));
        }
        let win = Window::new(h, w, kh, kw, spec.stride, spec.padding).ok_or_else(|| {
            dim_err!(
                "conv2d: {kh}×{kw} kernel (stride {}, padding {}) does not fit {h}×{w} input",
                spec.stride,
                spec.padding
            )
        })?;
        let geom = ConvGeom {
            n,
            c,
            o,
            groups: g,
            win,
        };
        let out = conv_forward(&geom, self.value(input).data(), self.value(kernel).data());
        let out = Tensor::new(vec![n, o, win.out_h, win.out_w], out)?;
        let rg = self.any_grad(&[input, kernel]);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                geom,
            },
            rg,
        ))
    }

    /// Average pooling over `N×C×H×W`. Padded positions are excluded from
    /// each window's divisor.
    pub fn avg_pool2d(&mut self, input: Var, spec: Pool2d) -> Result<Var> {
        let si = self.shape(input).to_vec();
        if si.len() != 4 {
            return Err(dim_err!("avg_pool2d: expected 4-D input, got {:?}", si));
        }
        let (n, c, h, w) = (si[0], si[1], si[2], si[3]);
        let win = Window::new(h, w, spec.kernel, spec.kernel, spec.stride, spec.padding)
            .ok_or_else(|| {
                dim_err!(
                    "avg_pool2d: window {} (padding {}) larger than {h}×{w} input",
                    spec.kernel,
                    spec.padding
                )
            })?;
        let geom = PoolGeom { n, c, win };
        let x = self.value(input).data();
        let mut out = vec![0.0; n * c * win.out_len()];
        for plane in 0..n * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * win.out_len()..(plane + 1) * win.out_len()];
            for oy in 0..win.out_h {
                for ox in 0..win.out_w {
                    let (mut acc, mut count) = (0.0, 0usize);
                    for ky in 0..win.kh {
                        let Some(iy) = win.src_row(oy, ky) else { continue };
                        for kx in 0..win.kw {
                            if let Some(ix) = win.src_col(ox, kx) {
                                acc += src[iy * w + ix];
                                count += 1;
                            }
                        }
                    }
                    dst[oy * win.out_w + ox] = if count == 0 { 0.0 } else { acc / count as f64 };
                }
            }
        }
        let out = Tensor::new(vec![n, c, win.out_h, win.out_w], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::AvgPool2d { input, geom }, rg))
    }

    /// `N×C×H×W → N×C` mean over the spatial axes.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let si = self.shape(input).to_vec();
        if si.len() != 4 {
            return Err(dim_err!("global_avg_pool: expected 4-D input, got {:?}", si));
        }
        let flat = self.reshape(input, &[si[0], si[1], si[2] * si[3]])?;
        self.mean_axis(flat, 2)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean over one axis; the axis is removed from the output shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(dim_err!("mean_axis: axis {axis} out of range for {:?}", shape));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let data = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &data[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let out = Tensor::new(out_shape, out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::MeanAxis { x, axis }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || core::mem::replace(&mut seen[a], true)) {
            return Err(dim_err!("permute: {:?} is not a permutation of {:?}", axes, shape));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let out = permute_data(self.value(x).data(), &shape, axes);
        let out = Tensor::new(out_shape, out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            out,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank < 2 {
            return Err(dim_err!("transpose needs rank ≥ 2, got {:?}", self.shape(x)));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(x, &axes)
    }

    /// Exact GELU, `x·Φ(x)` with the Gaussian CDF.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.map(x, gelu);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Gelu(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| if v > 0.0 { v } else { 0.0 });
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.map(x, math::sigmoid);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| dim_err!("layer_norm on a scalar"))?;
        let layout = NormLayout {
            outer: shape.iter().product::<usize>() / d.max(1),
            channels: d,
            inner: 1,
            per_channel: false,
        };
        self.norm(x, gamma, beta, layout, None)
    }

    /// Batch normalization over axis 1 of an `N×C×…` tensor.
    ///
    /// In training mode the batch statistics normalize the input and are
    /// returned (with unbiased variance) for the caller's running averages.
    /// In eval mode `running` supplies mean and variance.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&[f64], &[f64]),
        training: bool,
    ) -> Result<(Var, Option<BatchStats>)> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(dim_err!("batch_norm expects N×C×…, got {:?}", shape));
        }
        let layout = NormLayout {
            outer: shape[0],
            channels: shape[1],
            inner: shape[2..].iter().product(),
            per_channel: true,
        };
        if running.0.len() != layout.channels || running.1.len() != layout.channels {
            return Err(dim_err!(
                "batch_norm running stats have {} / {} entries for {} channels",
                running.0.len(),
                running.1.len(),
                layout.channels
            ));
        }
        if training {
            let count = layout.outer * layout.inner;
            if count < 2 {
                return Err(dim_err!(
                    "batch_norm needs more than one value per channel in training mode, got {:?}",
                    shape
                ));
            }
            let mut stats = None;
            let v = self.norm(x, gamma, beta, layout, Some(&mut stats))?;
            Ok((v, stats))
        } else {
            let v = self.norm_fixed(x, gamma, beta, layout, running)?;
            Ok((v, None))
        }
    }

    fn norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        layout: NormLayout,
        stats_out: Option<&mut Option<BatchStats>>,
    ) -> Result<Var> {
        let c = layout.channels;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(dim_err!(
                "norm affine params {:?}/{:?} do not match {c} channels",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        let data = self.value(x).data();
        let groups = if layout.per_channel { c } else { layout.outer };
        let mut mean = vec![0.0; groups];
        let mut var = vec![0.0; groups];
        let mut count = vec![0usize; groups];
        for_each_norm_index(layout, |i, grp, _| {
            mean[grp] += data[i];
            count[grp] += 1;
        });
        for (m, &n) in mean.iter_mut().zip(&count) {
            *m /= n as f64;
        }
        for_each_norm_index(layout, |i, grp, _| {
            let d = data[i] - mean[grp];
            var[grp] += d * d;
        });
        let inv_std: Vec<f64> = var
            .iter()
            .zip(&count)
            .map(|(&v, &n)| 1.0 / math::sqrt(v / n as f64 + NORM_EPS))
            .collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; data.len()];
        let mut out = vec![0.0; data.len()];
        for_each_norm_index(layout, |i, grp, ch| {
            xhat[i] = (data[i] - mean[grp]) * inv_std[grp];
            out[i] = xhat[i] * g[ch] + b[ch];
        });
        if let Some(slot) = stats_out {
            let var_unbiased = var
                .iter()
                .zip(&count)
                .map(|(&v, &n)| v / (n - 1) as f64)
                .collect();
            *slot = Some(BatchStats {
                mean,
                var: var_unbiased,
            });
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::Norm {
                x,
                gamma,
                beta,
                layout,
                xhat,
                inv_std,
                batch_stats: true,
            },
            rg,
        ))
    }

    fn norm_fixed(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        layout: NormLayout,
        running: (&[f64], &[f64]),
    ) -> Result<Var> {
        let c = layout.channels;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(dim_err!("batch_norm affine params do not match {c} channels"));
        }
        let inv_std: Vec<f64> = running
            .1
            .iter()
            .map(|&v| 1.0 / math::sqrt(v + NORM_EPS))
            .collect();
        let data = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; data.len()];
        let mut out = vec![0.0; data.len()];
        for_each_norm_index(layout, |i, _, ch| {
            xhat[i] = (data[i] - running.0[ch]) * inv_std[ch];
            out[i] = xhat[i] * g[ch] + b[ch];
        });
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::Norm {
                x,
                gamma,
                beta,
                layout,
                xhat,
                inv_std,
                batch_stats: false,
            },
            rg,
        ))
    }

    /// Records a scalar produced outside the graph from `x`, together with
    /// its gradient `∂out/∂x`. Used by fused losses.
    pub(crate) fn fused_scalar(&mut self, x: Var, value: f64, grad: Vec<f64>) -> Var {
        debug_assert_eq!(grad.len(), self.value(x).numel());
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(value), Op::Fused { x, grad }, rg)
    }

    /// Reverse-mode sweep from a scalar `root`. Gradients from any previous
    /// call are cleared first.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(contract_err!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            ));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else { continue };
            self.backprop_node(i, &g);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contrib: impl FnOnce(&mut [f64], &Graph)) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let mut buf = self.nodes[v.0]
            .grad
            .take()
            .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.numel()]);
        contrib(&mut buf, self);
        self.nodes[v.0].grad = Some(buf);
    }

    fn add_into(&mut self, v: Var, g: &[f64], scale: f64) {
        self.accumulate(v, |buf, _| {
            for (b, &x) in buf.iter_mut().zip(g) {
                *b += scale * x;
            }
        });
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        // Ops are moved out temporarily so `self` can be borrowed mutably.
        let op = core::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_into(*a, g, 1.0);
                self.add_into(*b, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.add_into(*a, g, 1.0);
                self.add_into(*b, g, -1.0);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, |buf, gr| {
                    for ((d, &gi), &bv) in buf.iter_mut().zip(g).zip(gr.value(b).data()) {
                        *d += gi * bv;
                    }
                });
                self.accumulate(b, |buf, gr| {
                    for ((d, &gi), &av) in buf.iter_mut().zip(g).zip(gr.value(a).data()) {
                        *d += gi * av;
                    }
                });
            }
            Op::Scale(a, c) => self.add_into(*a, g, *c),
            Op::AddBias { x, bias, axis } => {
                self.add_into(*x, g, 1.0);
                let shape = self.shape(*x).to_vec();
                let inner: usize = shape[axis + 1..].iter().product();
                let len = shape[*axis];
                self.accumulate(*bias, |buf, _| {
                    for (j, &gj) in g.iter().enumerate() {
                        buf[(j / inner) % len] += gj;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                // dA = dC·Bᵀ, dB = Aᵀ·dC
                self.accumulate(a, |buf, gr| gemm_nt(m, n, k, g, gr.value(b).data(), buf));
                self.accumulate(b, |buf, gr| gemm_tn(k, m, n, gr.value(a).data(), g, buf));
            }
            Op::Conv2d {
                input,
                kernel,
                geom,
            } => {
                let (input, kernel, geom) = (*input, *kernel, *geom);
                let need_input = self.requires_grad(input);
                let need_kernel = self.requires_grad(kernel);
                let (dx, dk) = conv_backward(
                    &geom,
                    self.value(input).data(),
                    self.value(kernel).data(),
                    g,
                    need_input,
                    need_kernel,
                );
                if let Some(dx) = dx {
                    self.add_into(input, &dx, 1.0);
                }
                if let Some(dk) = dk {
                    self.add_into(kernel, &dk, 1.0);
                }
            }
            Op::AvgPool2d { input, geom } => {
                let geom = *geom;
                self.accumulate(*input, |buf, _| pool_backward(&geom, g, buf));
            }
            Op::Sum(x) => {
                let g0 = g[0];
                self.accumulate(*x, |buf, _| buf.iter_mut().for_each(|b| *b += g0));
            }
            Op::Mean(x) => {
                let g0 = g[0] / self.value(*x).numel() as f64;
                self.accumulate(*x, |buf, _| buf.iter_mut().for_each(|b| *b += g0));
            }
            Op::MeanAxis { x, axis } => {
                let shape = self.shape(*x).to_vec();
                let outer: usize = shape[..*axis].iter().product();
                let len = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let inv = 1.0 / len as f64;
                self.accumulate(*x, |buf, _| {
                    for o in 0..outer {
                        let go = &g[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            let dst = &mut buf[(o * len + l) * inner..(o * len + l + 1) * inner];
                            for (d, &gv) in dst.iter_mut().zip(go) {
                                *d += gv * inv;
                            }
                        }
                    }
                });
            }
            Op::Reshape(x) => self.add_into(*x, g, 1.0),
            Op::Permute { x, axes } => {
                let out_shape = self.nodes[i].value.shape().to_vec();
                let mut inverse = vec![0; axes.len()];
                for (o, &a) in axes.iter().enumerate() {
                    inverse[a] = o;
                }
                let back = permute_data(g, &out_shape, &inverse);
                self.add_into(*x, &back, 1.0);
            }
            Op::Gelu(x) => {
                let x = *x;
                self.accumulate(x, |buf, gr| {
                    for ((d, &gi), &xv) in buf.iter_mut().zip(g).zip(gr.value(x).data()) {
                        *d += gi * gelu_grad(xv);
                    }
                });
            }
            Op::Relu(x) => {
                let x = *x;
                self.accumulate(x, |buf, gr| {
                    for ((d, &gi), &xv) in buf.iter_mut().zip(g).zip(gr.value(x).data()) {
                        if xv > 0.0 {
                            *d += gi;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let out = self.nodes[i].value.data().to_vec();
                self.accumulate(*x, |buf, _| {
                    for ((d, &gi), &s) in buf.iter_mut().zip(g).zip(&out) {
                        *d += gi * s * (1.0 - s);
                    }
                });
            }
            Op::Norm {
                x,
                gamma,
                beta,
                layout,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let layout = *layout;
                let c = layout.channels;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for_each_norm_index(layout, |j, _, ch| {
                    dgamma[ch] += g[j] * xhat[j];
                    dbeta[ch] += g[j];
                });
                self.add_into(*gamma, &dgamma, 1.0);
                self.add_into(*beta, &dbeta, 1.0);
                if self.requires_grad(*x) {
                    let gam = self.value(*gamma).data().to_vec();
                    let mut dx = vec![0.0; g.len()];
                    if *batch_stats {
                        // dx = inv_std·(dxhat − mean(dxhat) − xhat·mean(dxhat·xhat))
                        let groups = inv_std.len();
                        let mut m1 = vec![0.0; groups];
                        let mut m2 = vec![0.0; groups];
                        let mut count = vec![0usize; groups];
                        for_each_norm_index(layout, |j, grp, ch| {
                            let dxh = g[j] * gam[ch];
                            m1[grp] += dxh;
                            m2[grp] += dxh * xhat[j];
                            count[grp] += 1;
                        });
                        for_each_norm_index(layout, |j, grp, ch| {
                            let n = count[grp] as f64;
                            let dxh = g[j] * gam[ch];
                            dx[j] = inv_std[grp] * (dxh - m1[grp] / n - xhat[j] * m2[grp] / n);
                        });
                    } else {
                        for_each_norm_index(layout, |j, _, ch| {
                            dx[j] = g[j] * gam[ch] * inv_std[ch];
                        });
                    }
                    self.add_into(*x, &dx, 1.0);
                }
            }
            Op::Fused { x, grad } => {
                let g0 = g[0];
                self.add_into(*x, grad, g0);
            }
        }
        self.nodes[i].op = op;
    }
}

/// Visits every element of a normalization layout as
/// `(flat index, statistics group, channel)`.
fn for_each_norm_index(layout: NormLayout, mut f: impl FnMut(usize, usize, usize)) {
    let NormLayout {
        outer,
        channels,
        inner,
        per_channel,
    } = layout;
    for o in 0..outer {
        for ch in 0..channels {
            let base = (o * channels + ch) * inner;
            for k in 0..inner {
                let grp = if per_channel { ch } else { o * inner + k };
                f(base + k, grp, ch);
            }
        }
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + math::erf(x / SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + math::erf(x / SQRT_2)) + x * INV_SQRT_2PI * math::exp(-0.5 * x * x)
}

fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..data.len() {
        out.push(data[src]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    out
}

fn conv_forward(geom: &ConvGeom, x: &[f64], k: &[f64]) -> Vec<f64> {
    let ConvGeom {
        n,
        c,
        o,
        groups,
        win,
    } = *geom;
    let (cg, og) = (c / groups, o / groups);
    let ksize = cg * win.kh * win.kw;
    let plane = win.h * win.w;
    let out_len = win.out_len();
    let mut out = vec![0.0; n * o * out_len];
    let mut cols = vec![0.0; ksize * out_len];
    for b in 0..n {
        for g in 0..groups {
            let xin = &x[(b * c + g * cg) * plane..(b * c + (g + 1) * cg) * plane];
            im2col(xin, cg, &win, &mut cols);
            let kg = &k[g * og * ksize..(g + 1) * og * ksize];
            let dst = &mut out[(b * o + g * og) * out_len..(b * o + (g + 1) * og) * out_len];
            gemm_nn(og, ksize, out_len, kg, &cols, dst);
        }
    }
    out
}

fn conv_backward(
    geom: &ConvGeom,
    x: &[f64],
    k: &[f64],
    gout: &[f64],
    need_input: bool,
    need_kernel: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let ConvGeom {
        n,
        c,
        o,
        groups,
        win,
    } = *geom;
    let (cg, og) = (c / groups, o / groups);
    let ksize = cg * win.kh * win.kw;
    let plane = win.h * win.w;
    let out_len = win.out_len();
    let mut dx = need_input.then(|| vec![0.0; x.len()]);
    let mut dk = need_kernel.then(|| vec![0.0; k.len()]);
    let mut cols = vec![0.0; ksize * out_len];
    let mut dcols = vec![0.0; ksize * out_len];
    for b in 0..n {
        for g in 0..groups {
            let go = &gout[(b * o + g * og) * out_len..(b * o + (g + 1) * og) * out_len];
            let xr = (b * c + g * cg) * plane..(b * c + (g + 1) * cg) * plane;
            let kr = g * og * ksize..(g + 1) * og * ksize;
            if let Some(dk) = dk.as_mut() {
                im2col(&x[xr.clone()], cg, &win, &mut cols);
                gemm_nt(og, out_len, ksize, go, &cols, &mut dk[kr.clone()]);
            }
            if let Some(dx) = dx.as_mut() {
                dcols.iter_mut().for_each(|v| *v = 0.0);
                gemm_tn(ksize, og, out_len, &k[kr], go, &mut dcols);
                col2im(&dcols, cg, &win, &mut dx[xr]);
            }
        }
    }
    (dx, dk)
}

fn pool_backward(geom: &PoolGeom, gout: &[f64], dx: &mut [f64]) {
    let PoolGeom { n, c, win } = *geom;
    let plane = win.h * win.w;
    for p in 0..n * c {
        let go = &gout[p * win.out_len()..(p + 1) * win.out_len()];
        let dst = &mut dx[p * plane..(p + 1) * plane];
        for oy in 0..win.out_h {
            for ox in 0..win.out_w {
                let mut count = 0usize;
                for ky in 0..win.kh {
                    if win.src_row(oy, ky).is_none() {
                        continue;
                    }
                    count += (0..win.kw).filter(|&kx| win.src_col(ox, kx).is_some()).count();
                }
                if count == 0 {
                    continue;
                }
                let share = go[oy * win.out_w + ox] / count as f64;
                for ky in 0..win.kh {
                    let Some(iy) = win.src_row(oy, ky) else { continue };
                    for kx in 0..win.kw {
                        if let Some(ix) = win.src_col(ox, kx) {
                            dst[iy * win.w + ix] += share;
                        }
                    }
                }
            }
        }
    }
}
