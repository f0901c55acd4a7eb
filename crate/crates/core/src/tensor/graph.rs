use super::filterbank;
use super::ops;
use super::Real;
use crate::error::{PcError, Result};
use ndarray::{Array1, Array2, Array3, ArrayD, ArrayView3, ArrayViewD, Axis, IxDyn, Slice};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Whether a graph records what backward needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Track gradients; conv unfoldings are cached for the backward pass.
    Train,
    /// Forward only; `backward` is an error and leaves never require grad.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum UnaryKind {
    Logistic,
    Tanh,
    Relu,
    LeakyRelu(f64),
    Clamp01,
}

/// How a filter bank turns 1-D taps into a 2-D kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterLayout {
    /// Row-major reshape of N = k*k taps into a k x k kernel (default).
    Reshape,
    /// Outer product of k taps with themselves.
    Separable,
}

enum Op<T: Real> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        col: Option<Array2<T>>,
    },
    Depthwise {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    ZeroInterleave {
        x: Var,
    },
    Subsample2 {
        x: Var,
    },
    BilinearUp2 {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    MulScalar {
        x: Var,
        s: Var,
    },
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
    Unary {
        x: Var,
        kind: UnaryKind,
    },
    ConcatCh {
        a: Var,
        b: Var,
    },
    SliceCh {
        x: Var,
        start: usize,
        len: usize,
    },
    FilterBank {
        theta: Var,
        // d(kernel)/d(rho) and sigmoid'(theta), cached in train mode.
        dkern: Option<Array3<T>>,
        dsig: Option<Array1<T>>,
    },
    SumSquares {
        x: Var,
    },
    SumAll {
        x: Var,
    },
    ChannelUnitNorm {
        x: Var,
        eps: T,
    },
}

struct Node<T: Real> {
    value: ArrayD<T>,
    grad: Option<ArrayD<T>>,
    needs_grad: bool,
    op: Op<T>,
}

/// Arena tape. Builder methods evaluate eagerly and record one node each;
/// inputs always precede outputs, so reverse index order is a valid
/// backward schedule.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    mode: GradMode,
}

fn as_c3<T: Real>(v: &ArrayD<T>) -> Result<ArrayView3<'_, T>> {
    v.view()
        .into_dimensionality::<ndarray::Ix3>()
        .map_err(|_| PcError::Shape(format!("expected a (C, H, W) tensor, got {:?}", v.shape())))
}

impl<T: Real> Graph<T> {
    pub fn new(mode: GradMode) -> Self {
        Graph {
            nodes: Vec::new(),
            mode,
        }
    }

    pub fn mode(&self) -> GradMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &ArrayD<T> {
        &self.nodes[v.0].value
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self, v: Var) -> T {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value.iter().copied().next().unwrap()
    }

    /// Gradient of a leaf after `backward`. Non-leaf gradients are released
    /// as the backward sweep passes them.
    pub fn grad(&self, v: Var) -> Option<ArrayViewD<'_, T>> {
        self.nodes[v.0].grad.as_ref().map(|g| g.view())
    }

    fn push(&mut self, value: ArrayD<T>, needs_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: ArrayD<T>, needs_grad: bool) -> Var {
        let ng = needs_grad && self.mode == GradMode::Train;
        self.push(value, ng, Op::Leaf)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.leaf(ArrayD::zeros(IxDyn(shape)), false)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xv = as_c3(self.value(x))?;
        let wv = self.value(w).view().into_dimensionality::<ndarray::Ix4>().map_err(|_| {
            PcError::Shape(format!(
                "conv weight must be (Co, Ci, kh, kw), got {:?}",
                self.value(w).shape()
            ))
        })?;
        let (c_out, c_in, kh, kw) = wv.dim();
        let (xc, h, wdim) = xv.dim();
        if xc != c_in {
            return Err(PcError::Shape(format!(
                "conv expects {} input channels, got {}",
                c_in, xc
            )));
        }
        if h + 2 * pad < kh || wdim + 2 * pad < kw {
            return Err(PcError::Shape(format!(
                "input {}x{} too small for {}x{} kernel with padding {}",
                h, wdim, kh, kw, pad
            )));
        }
        let bv = match b {
            Some(b) => {
                let bvv = self.value(b);
                if bvv.len() != c_out {
                    return Err(PcError::Shape(format!(
                        "bias length {} does not match {} output channels",
                        bvv.len(),
                        c_out
                    )));
                }
                Some(b)
            }
            None => None,
        };
        let bias_view = bv.map(|b| {
            self.value(b)
                .view()
                .into_dimensionality::<ndarray::Ix1>()
                .expect("bias is 1-D")
        });
        let (out, col) = ops::conv2d_forward(&xv, &wv, bias_view.as_ref(), stride, pad);
        let ng = self.needs(x) || self.needs(w) || bv.map_or(false, |b| self.needs(b));
        let col = (self.mode == GradMode::Train && ng).then_some(col);
        Ok(self.push(
            out.into_dyn(),
            ng,
            Op::Conv2d {
                x,
                w,
                b: bv,
                stride,
                pad,
                col,
            },
        ))
    }

    pub fn depthwise(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let xv = as_c3(self.value(x))?;
        let wv = as_c3(self.value(w))?;
        let (xc, h, wdim) = xv.dim();
        let (wc, kh, kw) = wv.dim();
        if xc != wc {
            return Err(PcError::Shape(format!(
                "depthwise kernel has {} channels, input has {}",
                wc, xc
            )));
        }
        if h + 2 * pad < kh || wdim + 2 * pad < kw {
            return Err(PcError::Shape(format!(
                "input {}x{} too small for {}x{} depthwise kernel with padding {}",
                h, wdim, kh, kw, pad
            )));
        }
        let out = ops::depthwise_forward(&xv, &wv, stride, pad);
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(out.into_dyn(), ng, Op::Depthwise { x, w, stride, pad }))
    }

    pub fn zero_interleave2(&mut self, x: Var) -> Result<Var> {
        let xv = as_c3(self.value(x))?;
        let out = ops::zero_interleave2(&xv);
        let ng = self.needs(x);
        Ok(self.push(out.into_dyn(), ng, Op::ZeroInterleave { x }))
    }

    pub fn subsample2(&mut self, x: Var) -> Result<Var> {
        let xv = as_c3(self.value(x))?;
        let (_, h, w) = xv.dim();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(PcError::Shape(format!(
                "subsampling needs even spatial dims, got {}x{}",
                h, w
            )));
        }
        let out = ops::subsample2(&xv);
        let ng = self.needs(x);
        Ok(self.push(out.into_dyn(), ng, Op::Subsample2 { x }))
    }

    pub fn bilinear_up2(&mut self, x: Var) -> Result<Var> {
        let xv = as_c3(self.value(x))?;
        let out = ops::bilinear_up2(&xv);
        let ng = self.needs(x);
        Ok(self.push(out.into_dyn(), ng, Op::BilinearUp2 { x }))
    }

    fn binary_same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(PcError::Shape(format!(
                "{} operands differ in shape: {:?} vs {:?}",
                what,
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let out = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, ng, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub")?;
        let out = self.value(a) - self.value(b);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, ng, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let out = self.value(a) * self.value(b);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, ng, Op::Mul { a, b }))
    }

    /// Multiply a tensor by a single-element node (a learnable scalar).
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(PcError::Shape(format!(
                "scalar operand must have one element, got {:?}",
                self.value(s).shape()
            )));
        }
        let sv = self.scalar_value(s);
        let out = self.value(x).mapv(|v| v * sv);
        let ng = self.needs(x) || self.needs(s);
        Ok(self.push(out, ng, Op::MulScalar { x, s }))
    }

    /// Fixed-coefficient linear combination of same-shaped nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let (first, _) = *terms.first().ok_or_else(|| {
            PcError::InvalidArgument("weighted_sum needs at least one term".into())
        })?;
        for &(v, _) in terms {
            self.binary_same_shape(first, v, "weighted_sum")?;
        }
        let mut out = ArrayD::<T>::zeros(self.value(first).raw_dim());
        for &(v, c) in terms {
            out.zip_mut_with(self.value(v), |o, &x| *o += c * x);
        }
        let ng = terms.iter().any(|&(v, _)| self.needs(v));
        Ok(self.push(
            out,
            ng,
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
        ))
    }

    fn unary(&mut self, x: Var, kind: UnaryKind) -> Var {
        let out = match kind {
            UnaryKind::Logistic => self
                .value(x)
                .mapv(|v| T::one() / (T::one() + (-v).exp())),
            UnaryKind::Tanh => self.value(x).mapv(|v| v.tanh()),
            UnaryKind::Relu => self.value(x).mapv(|v| v.max(T::zero())),
            UnaryKind::LeakyRelu(slope) => {
                let s = T::cast(slope);
                self.value(x)
                    .mapv(|v| if v > T::zero() { v } else { s * v })
            }
            UnaryKind::Clamp01 => self
                .value(x)
                .mapv(|v| v.max(T::zero()).min(T::one())),
        };
        let ng = self.needs(x);
        self.push(out, ng, Op::Unary { x, kind })
    }

    pub fn logistic(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Logistic)
    }

    pub fn tanh_of(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Relu)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, UnaryKind::LeakyRelu(slope))
    }

    pub fn clamp01(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Clamp01)
    }

    pub fn concat_ch(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = as_c3(self.value(a))?;
        let bv = as_c3(self.value(b))?;
        if av.dim().1 != bv.dim().1 || av.dim().2 != bv.dim().2 {
            return Err(PcError::Shape(format!(
                "channel concat needs equal spatial dims, got {:?} vs {:?}",
                av.dim(),
                bv.dim()
            )));
        }
        let out = ndarray::concatenate(Axis(0), &[av, bv]).expect("checked dims");
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out.into_dyn(), ng, Op::ConcatCh { a, b }))
    }

    pub fn slice_ch(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = as_c3(self.value(x))?;
        if start + len > xv.dim().0 {
            return Err(PcError::Shape(format!(
                "channel slice {}..{} out of range for {} channels",
                start,
                start + len,
                xv.dim().0
            )));
        }
        let out = xv
            .slice_axis(Axis(0), Slice::from(start..start + len))
            .to_owned();
        let ng = self.needs(x);
        Ok(self.push(out.into_dyn(), ng, Op::SliceCh { x, start, len }))
    }

    /// Per-channel low-pass kernels from unconstrained cutoff parameters.
    /// theta (C,) maps through the logistic to ratios in (0, 1); each ratio
    /// yields windowed-sinc taps that become one k x k depthwise slice.
    pub fn filter_bank(&mut self, theta: Var, taps: usize, layout: FilterLayout) -> Result<Var> {
        let tv = self.value(theta);
        if tv.ndim() != 1 || tv.is_empty() {
            return Err(PcError::Shape(format!(
                "cutoff parameters must be a non-empty vector, got {:?}",
                tv.shape()
            )));
        }
        let side = match layout {
            FilterLayout::Reshape => {
                let side = (taps as f64).sqrt().round() as usize;
                if side * side != taps {
                    return Err(PcError::InvalidConfig(format!(
                        "filter length {} is not a square; cannot reshape to a 2-D kernel",
                        taps
                    )));
                }
                side
            }
            FilterLayout::Separable => taps,
        };
        let channels = tv.len();
        let mut kern = Array3::<T>::zeros((channels, side, side));
        let mut dkern = Array3::<T>::zeros((channels, side, side));
        let mut dsig = Array1::<T>::zeros(channels);
        for c in 0..channels {
            let theta_c = tv[[c]].to_f64();
            let rho = 1.0 / (1.0 + (-theta_c).exp());
            let (t, dt) = filterbank::taps_and_dtaps(rho, taps)?;
            dsig[c] = T::cast(rho * (1.0 - rho));
            match layout {
                FilterLayout::Reshape => {
                    for i in 0..side {
                        for j in 0..side {
                            kern[(c, i, j)] = T::cast(t[i * side + j]);
                            dkern[(c, i, j)] = T::cast(dt[i * side + j]);
                        }
                    }
                }
                FilterLayout::Separable => {
                    for i in 0..side {
                        for j in 0..side {
                            kern[(c, i, j)] = T::cast(t[i] * t[j]);
                            dkern[(c, i, j)] = T::cast(dt[i] * t[j] + t[i] * dt[j]);
                        }
                    }
                }
            }
        }
        let ng = self.needs(theta);
        let cache = (self.mode == GradMode::Train && ng).then_some(());
        Ok(self.push(
            kern.into_dyn(),
            ng,
            Op::FilterBank {
                theta,
                dkern: cache.map(|_| dkern),
                dsig: cache.map(|_| dsig),
            },
        ))
    }

    /// Sum of squared entries, as a single-element node.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s: T = self.value(x).iter().map(|&v| v * v).sum();
        let ng = self.needs(x);
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), s),
            ng,
            Op::SumSquares { x },
        )
    }

    /// Sum of all entries, as a single-element node.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: T = self.value(x).iter().copied().sum();
        let ng = self.needs(x);
        self.push(ArrayD::from_elem(IxDyn(&[1]), s), ng, Op::SumAll { x })
    }

    pub fn channel_unit_norm(&mut self, x: Var, eps: T) -> Result<Var> {
        let xv = as_c3(self.value(x))?;
        let out = ops::channel_unit_norm(&xv, eps);
        let ng = self.needs(x);
        Ok(self.push(out.into_dyn(), ng, Op::ChannelUnitNorm { x, eps }))
    }

    /// Reverse sweep from a single-element loss node. Leaf gradients stay
    /// readable afterwards; interior gradients and caches are released as
    /// the sweep passes them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.mode == GradMode::Eval {
            return Err(PcError::State(
                "backward is not available on an eval-mode graph".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(PcError::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(ArrayD::ones(self.nodes[loss.0].value.raw_dim()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if matches!(node.op, Op::Leaf) {
                continue; // keep leaf grads for the caller
            }
            let g = node.grad.take().expect("checked above");
            match &mut node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                    col,
                } => {
                    let col = col.take().ok_or_else(|| {
                        PcError::State("conv cache missing; backward may run only once".into())
                    })?;
                    let gv = as_c3(&g)?;
                    let xv = as_c3(&before[x.0].value)?;
                    let wv = before[w.0]
                        .value
                        .view()
                        .into_dimensionality::<ndarray::Ix4>()
                        .expect("validated at build");
                    let need_dx = before[x.0].needs_grad;
                    let need_dw = before[w.0].needs_grad;
                    let need_db = b.map_or(false, |b| before[b.0].needs_grad);
                    let (dx, dw, db) = ops::conv2d_backward(
                        &gv, &wv, &col, xv.dim(), *stride, *pad, need_dx, need_dw, need_db,
                    );
                    let (x, w, b) = (*x, *w, *b);
                    if let Some(dx) = dx {
                        accumulate(before, x, dx.into_dyn());
                    }
                    if let Some(dw) = dw {
                        accumulate(before, w, dw.into_dyn());
                    }
                    if let (Some(db), Some(b)) = (db, b) {
                        accumulate(before, b, db.into_dyn());
                    }
                }
                Op::Depthwise { x, w, stride, pad } => {
                    let gv = as_c3(&g)?;
                    let xv = as_c3(&before[x.0].value)?;
                    let wv = as_c3(&before[w.0].value)?;
                    let (dx, dw) = ops::depthwise_backward(
                        &gv,
                        &xv,
                        &wv,
                        *stride,
                        *pad,
                        before[x.0].needs_grad,
                        before[w.0].needs_grad,
                    );
                    let (x, w) = (*x, *w);
                    if let Some(dx) = dx {
                        accumulate(before, x, dx.into_dyn());
                    }
                    if let Some(dw) = dw {
                        accumulate(before, w, dw.into_dyn());
                    }
                }
                Op::ZeroInterleave { x } => {
                    let gv = as_c3(&g)?;
                    let dx = ops::zero_interleave2_backward(&gv);
                    accumulate(before, *x, dx.into_dyn());
                }
                Op::Subsample2 { x } => {
                    let gv = as_c3(&g)?;
                    let (_, h, w) = as_c3(&before[x.0].value)?.dim();
                    let dx = ops::subsample2_backward(&gv, h, w);
                    accumulate(before, *x, dx.into_dyn());
                }
                Op::BilinearUp2 { x } => {
                    let gv = as_c3(&g)?;
                    let (_, h, w) = as_c3(&before[x.0].value)?.dim();
                    let dx = ops::bilinear_up2_backward(&gv, h, w);
                    accumulate(before, *x, dx.into_dyn());
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    if before[a.0].needs_grad {
                        accumulate(before, a, g.clone());
                    }
                    if before[b.0].needs_grad {
                        accumulate(before, b, g.clone());
                    }
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    if before[a.0].needs_grad {
                        accumulate(before, a, g.clone());
                    }
                    if before[b.0].needs_grad {
                        accumulate(before, b, g.mapv(|v| -v));
                    }
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    if before[a.0].needs_grad {
                        let mut da = g.clone();
                        da.zip_mut_with(&before[b.0].value, |o, &v| *o *= v);
                        accumulate(before, a, da);
                    }
                    if before[b.0].needs_grad {
                        let mut db = g.clone();
                        db.zip_mut_with(&before[a.0].value, |o, &v| *o *= v);
                        accumulate(before, b, db);
                    }
                }
                Op::MulScalar { x, s } => {
                    let (x, s) = (*x, *s);
                    if before[x.0].needs_grad {
                        let sv = before[s.0].value.iter().copied().next().unwrap();
                        accumulate(before, x, g.mapv(|v| v * sv));
                    }
                    if before[s.0].needs_grad {
                        let dot: T = g
                            .iter()
                            .zip(before[x.0].value.iter())
                            .map(|(&gv, &xv)| gv * xv)
                            .sum();
                        accumulate(before, s, ArrayD::from_elem(IxDyn(&[1]), dot));
                    }
                }
                Op::WeightedSum { terms } => {
                    for &(v, c) in terms.iter() {
                        if before[v.0].needs_grad {
                            accumulate(before, v, g.mapv(|gv| gv * c));
                        }
                    }
                }
                Op::Unary { x, kind } => {
                    let kind = *kind;
                    let x = *x;
                    let dx = match kind {
                        UnaryKind::Logistic => {
                            let mut dx = g.clone();
                            dx.zip_mut_with(&node.value, |o, &y| *o *= y * (T::one() - y));
                            dx
                        }
                        UnaryKind::Tanh => {
                            let mut dx = g.clone();
                            dx.zip_mut_with(&node.value, |o, &y| *o *= T::one() - y * y);
                            dx
                        }
                        UnaryKind::Relu => {
                            let mut dx = g.clone();
                            dx.zip_mut_with(&before[x.0].value, |o, &v| {
                                if v <= T::zero() {
                                    *o = T::zero();
                                }
                            });
                            dx
                        }
                        UnaryKind::LeakyRelu(slope) => {
                            let s = T::cast(slope);
                            let mut dx = g.clone();
                            dx.zip_mut_with(&before[x.0].value, |o, &v| {
                                if v <= T::zero() {
                                    *o *= s;
                                }
                            });
                            dx
                        }
                        UnaryKind::Clamp01 => {
                            let mut dx = g.clone();
                            dx.zip_mut_with(&before[x.0].value, |o, &v| {
                                if v < T::zero() || v > T::one() {
                                    *o = T::zero();
                                }
                            });
                            dx
                        }
                    };
                    accumulate(before, x, dx);
                }
                Op::ConcatCh { a, b } => {
                    let (a, b) = (*a, *b);
                    let gv = as_c3(&g)?;
                    let ca = as_c3(&before[a.0].value)?.dim().0;
                    if before[a.0].needs_grad {
                        let da = gv.slice_axis(Axis(0), Slice::from(0..ca)).to_owned();
                        accumulate(before, a, da.into_dyn());
                    }
                    if before[b.0].needs_grad {
                        let db = gv.slice_axis(Axis(0), Slice::from(ca..)).to_owned();
                        accumulate(before, b, db.into_dyn());
                    }
                }
                Op::SliceCh { x, start, len } => {
                    let (x, start, len) = (*x, *start, *len);
                    let gv = as_c3(&g)?;
                    let (c_n, h, w) = as_c3(&before[x.0].value)?.dim();
                    let mut dx = Array3::<T>::zeros((c_n, h, w));
                    dx.slice_axis_mut(Axis(0), Slice::from(start..start + len))
                        .assign(&gv);
                    accumulate(before, x, dx.into_dyn());
                }
                Op::FilterBank {
                    theta,
                    dkern,
                    dsig,
                    ..
                } => {
                    let theta = *theta;
                    let dkern = dkern.take().ok_or_else(|| {
                        PcError::State("filter cache missing; backward may run only once".into())
                    })?;
                    let dsig = dsig.take().expect("cached together with dkern");
                    let gv = as_c3(&g)?;
                    let channels = dsig.len();
                    let mut dtheta = Array1::<T>::zeros(channels);
                    for c in 0..channels {
                        let mut acc = T::zero();
                        for i in 0..gv.dim().1 {
                            for j in 0..gv.dim().2 {
                                acc += gv[(c, i, j)] * dkern[(c, i, j)];
                            }
                        }
                        dtheta[c] = acc * dsig[c];
                    }
                    accumulate(before, theta, dtheta.into_dyn());
                }
                Op::SumSquares { x } => {
                    let x = *x;
                    let gs = g.iter().copied().next().unwrap();
                    let two = T::cast(2.0);
                    let dx = before[x.0].value.mapv(|v| two * v * gs);
                    accumulate(before, x, dx);
                }
                Op::SumAll { x } => {
                    let x = *x;
                    let gs = g.iter().copied().next().unwrap();
                    let dx = ArrayD::from_elem(before[x.0].value.raw_dim(), gs);
                    accumulate(before, x, dx);
                }
                Op::ChannelUnitNorm { x, eps } => {
                    let (x, eps) = (*x, *eps);
                    let gv = as_c3(&g)?;
                    let xv = as_c3(&before[x.0].value)?;
                    let dx = ops::channel_unit_norm_backward(&gv, &xv, eps);
                    accumulate(before, x, dx.into_dyn());
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(nodes: &mut [Node<T>], v: Var, contrib: ArrayD<T>) {
    let n = &mut nodes[v.0];
    if !n.needs_grad {
        return;
    }
    match &mut n.grad {
        Some(g) => *g += &contrib,
        None => n.grad = Some(contrib),
    }
}
