//! Reverse-mode automatic differentiation over a recorded forward pass.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value
//! and whatever the backward pass needs. [`Graph::backward`] walks the tape
//! in reverse with a fixed summation order, so gradients are bit-reproducible
//! for identical inputs.

use super::ops::{dropout_mask, layer_norm_kernel, relu_kernel, softmax_rows_kernel, Mode};
use super::{NnError, Tensor2};
use ndarray::Array2;
use rand::Rng;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    /// C = A·B
    MatMul(NodeId, NodeId),
    /// C = A·Bᵀ
    MatMulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// X (n×d) plus a 1×d bias row broadcast over rows.
    AddRowBias(NodeId, NodeId),
    Relu(NodeId),
    Dropout {
        x: NodeId,
        mask: Array2<f64>,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        shift: NodeId,
        xhat: Array2<f64>,
        inv_sd: Vec<f64>,
    },
    SoftmaxRows(NodeId),
    Scale(NodeId, f64),
    ConcatCols(Vec<NodeId>),
    /// r×c reshaped to 1×(r·c), row-major.
    ReshapeRow(NodeId),
    /// out[i, :] = factors[i] · W[i, :]
    ScaleRows {
        w: NodeId,
        factors: Vec<f64>,
    },
    /// Mean squared error of an n×1 prediction column against targets.
    Mse {
        pred: NodeId,
        targets: Vec<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Parameter gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to the node, if the node
    /// participates in the differentiated subgraph.
    pub fn get(&self, id: NodeId) -> Option<Tensor2> {
        self.grads
            .get(id.0)
            .and_then(|g| g.as_ref())
            .map(|a| Tensor2::from_array(a.clone()))
    }

    /// Gradient as a tensor, zeros if the node has none recorded.
    pub fn get_or_zeros(&self, id: NodeId, shape: (usize, usize)) -> Tensor2 {
        self.get(id)
            .unwrap_or_else(|| Tensor2::zeros(shape.0, shape.1))
    }
}

/// A recorded forward pass.
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

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId, op: &'static str) -> Result<(), NnError> {
        if id.0 >= self.nodes.len() {
            return Err(NnError::UnknownNode { op, id: id.0 });
        }
        Ok(())
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub(crate) fn val(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Value of a node as a tensor (cloned).
    pub fn value(&self, id: NodeId) -> Tensor2 {
        Tensor2::from_array(self.nodes[id.0].value.clone())
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.dim()
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.shape(id), (1, 1));
        self.nodes[id.0].value[(0, 0)]
    }

    /// Record a constant (no gradient tracked).
    pub fn constant(&mut self, t: &Tensor2) -> NodeId {
        self.push(t.array().clone(), Op::Leaf, false)
    }

    /// Record a trainable parameter.
    pub fn param(&mut self, t: &Tensor2) -> NodeId {
        self.push(t.array().clone(), Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.check(a, "matmul")?;
        self.check(b, "matmul")?;
        let (av, bv) = (self.val(a), self.val(b));
        if av.ncols() != bv.nrows() {
            return Err(NnError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} · {:?}", av.dim(), bv.dim()),
            });
        }
        let value = av.dot(bv);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    /// `A·Bᵀ` without materializing the transpose on the tape.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.check(a, "matmul_nt")?;
        self.check(b, "matmul_nt")?;
        let (av, bv) = (self.val(a), self.val(b));
        if av.ncols() != bv.ncols() {
            return Err(NnError::ShapeMismatch {
                op: "matmul_nt",
                detail: format!("{:?} · {:?}ᵀ", av.dim(), bv.dim()),
            });
        }
        let value = av.dot(&bv.t());
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMulNT(a, b), needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.check(a, "add")?;
        self.check(b, "add")?;
        if self.val(a).dim() != self.val(b).dim() {
            return Err(NnError::ShapeMismatch {
                op: "add",
                detail: format!("{:?} + {:?}", self.val(a).dim(), self.val(b).dim()),
            });
        }
        let value = self.val(a) + self.val(b);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    /// `X + b` with `b` a 1×d row broadcast over the rows of X.
    pub fn add_row_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.check(x, "add_row_bias")?;
        self.check(b, "add_row_bias")?;
        let (xv, bv) = (self.val(x), self.val(b));
        if bv.nrows() != 1 || bv.ncols() != xv.ncols() {
            return Err(NnError::ShapeMismatch {
                op: "add_row_bias",
                detail: format!("X {:?}, b {:?}", xv.dim(), bv.dim()),
            });
        }
        let mut value = xv.clone();
        for mut row in value.rows_mut() {
            for (v, bj) in row.iter_mut().zip(bv.row(0)) {
                *v += bj;
            }
        }
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(value, Op::AddRowBias(x, b), needs))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, NnError> {
        self.check(x, "relu")?;
        let value = relu_kernel(self.val(x));
        let needs = self.needs(x);
        Ok(self.push(value, Op::Relu(x), needs))
    }

    /// Inverted dropout with a freshly drawn mask; identity when `p = 0` or
    /// in eval mode.
    pub fn dropout(
        &mut self,
        x: NodeId,
        p: f64,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<NodeId, NnError> {
        self.check(x, "dropout")?;
        match dropout_mask(self.val(x).dim(), p, mode, rng)? {
            None => Ok(x),
            Some(mask) => {
                let value = self.val(x) * &mask;
                let needs = self.needs(x);
                Ok(self.push(value, Op::Dropout { x, mask }, needs))
            }
        }
    }

    /// Row-wise layer normalization with a 1×d gain and shift.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        shift: NodeId,
        eps: f64,
    ) -> Result<NodeId, NnError> {
        self.check(x, "layer_norm")?;
        self.check(gain, "layer_norm")?;
        self.check(shift, "layer_norm")?;
        let d = self.val(x).ncols();
        if d < 2 {
            return Err(NnError::ShapeMismatch {
                op: "layer_norm",
                detail: format!("need width ≥ 2, got {d}"),
            });
        }
        for (name, id) in [("gain", gain), ("shift", shift)] {
            if self.val(id).dim() != (1, d) {
                return Err(NnError::ShapeMismatch {
                    op: "layer_norm",
                    detail: format!("{name} must be 1×{d}, got {:?}", self.val(id).dim()),
                });
            }
        }
        let gain_row: Vec<f64> = self.val(gain).row(0).to_vec();
        let shift_row: Vec<f64> = self.val(shift).row(0).to_vec();
        let (value, xhat, inv_sd) = layer_norm_kernel(self.val(x), &gain_row, &shift_row, eps);
        let needs = self.needs(x) || self.needs(gain) || self.needs(shift);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_sd,
            },
            needs,
        ))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId, NnError> {
        self.check(x, "softmax_rows")?;
        let value = softmax_rows_kernel(self.val(x));
        let needs = self.needs(x);
        Ok(self.push(value, Op::SoftmaxRows(x), needs))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId, NnError> {
        self.check(x, "scale")?;
        let value = self.val(x) * c;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Scale(x, c), needs))
    }

    /// Horizontal concatenation of equal-height matrices.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, NnError> {
        if parts.is_empty() {
            return Err(NnError::ShapeMismatch {
                op: "concat_cols",
                detail: "no inputs".to_string(),
            });
        }
        for &p in parts {
            self.check(p, "concat_cols")?;
        }
        let rows = self.val(parts[0]).nrows();
        if parts.iter().any(|&p| self.val(p).nrows() != rows) {
            return Err(NnError::ShapeMismatch {
                op: "concat_cols",
                detail: "row counts differ".to_string(),
            });
        }
        let views: Vec<_> = parts.iter().map(|&p| self.val(p).view()).collect();
        let value = ndarray::concatenate(ndarray::Axis(1), &views).expect("checked rows");
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Flatten r×c to 1×(r·c) in row-major order.
    pub fn reshape_row(&mut self, x: NodeId) -> Result<NodeId, NnError> {
        self.check(x, "reshape_row")?;
        let v = self.val(x);
        let (r, c) = v.dim();
        let value = v
            .to_shape((1, r * c))
            .expect("row-major reshape")
            .to_owned();
        let needs = self.needs(x);
        Ok(self.push(value, Op::ReshapeRow(x), needs))
    }

    /// `out[i, :] = factors[i] · W[i, :]` — the per-feature tokenizer stem
    /// where each row of W is scaled by one input feature.
    pub fn scale_rows(&mut self, w: NodeId, factors: &[f64]) -> Result<NodeId, NnError> {
        self.check(w, "scale_rows")?;
        let wv = self.val(w);
        if wv.nrows() != factors.len() {
            return Err(NnError::ShapeMismatch {
                op: "scale_rows",
                detail: format!("{} rows vs {} factors", wv.nrows(), factors.len()),
            });
        }
        let mut value = wv.clone();
        for (mut row, &f) in value.rows_mut().into_iter().zip(factors) {
            row.mapv_inplace(|v| v * f);
        }
        let needs = self.needs(w);
        Ok(self.push(
            value,
            Op::ScaleRows {
                w,
                factors: factors.to_vec(),
            },
            needs,
        ))
    }

    /// Mean squared error between an n×1 prediction column and targets;
    /// yields a 1×1 node.
    pub fn mse(&mut self, pred: NodeId, targets: &[f64]) -> Result<NodeId, NnError> {
        self.check(pred, "mse")?;
        let pv = self.val(pred);
        if pv.ncols() != 1 || pv.nrows() != targets.len() {
            return Err(NnError::ShapeMismatch {
                op: "mse",
                detail: format!("pred {:?} vs {} targets", pv.dim(), targets.len()),
            });
        }
        let n = targets.len() as f64;
        let loss = pv
            .column(0)
            .iter()
            .zip(targets)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let value = Array2::from_elem((1, 1), loss);
        let needs = self.needs(pred);
        Ok(self.push(
            value,
            Op::Mse {
                pred,
                targets: targets.to_vec(),
            },
            needs,
        ))
    }

    /// Reverse-mode gradients of a scalar loss node for every parameter on
    /// the tape.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, NnError> {
        if self.nodes.is_empty() {
            return Err(NnError::BackwardBeforeForward);
        }
        self.check(loss, "backward")?;
        if self.shape(loss) != (1, 1) {
            return Err(NnError::LossNotScalar(self.shape(loss)));
        }
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        let add_into = |slot: &mut Option<Array2<f64>>, delta: Array2<f64>| match slot {
            Some(acc) => *acc += &delta,
            None => *slot = Some(delta),
        };

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                // Re-store for callers that inspect non-parameter grads of
                // the loss itself.
                grads[idx] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let da = g.dot(&self.val(*b).t());
                        add_into(&mut grads[a.0], da);
                    }
                    if self.needs(*b) {
                        let db = self.val(*a).t().dot(&g);
                        add_into(&mut grads[b.0], db);
                    }
                }
                Op::MatMulNT(a, b) => {
                    if self.needs(*a) {
                        add_into(&mut grads[a.0], g.dot(self.val(*b)));
                    }
                    if self.needs(*b) {
                        add_into(&mut grads[b.0], g.t().dot(self.val(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        add_into(&mut grads[a.0], g.clone());
                    }
                    if self.needs(*b) {
                        add_into(&mut grads[b.0], g.clone());
                    }
                }
                Op::AddRowBias(x, b) => {
                    if self.needs(*x) {
                        add_into(&mut grads[x.0], g.clone());
                    }
                    if self.needs(*b) {
                        let db = g.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
                        add_into(&mut grads[b.0], db);
                    }
                }
                Op::Relu(x) => {
                    if self.needs(*x) {
                        let xv = self.val(*x);
                        let mut dx = g.clone();
                        dx.zip_mut_with(xv, |gv, &x| {
                            if x <= 0.0 {
                                *gv = 0.0;
                            }
                        });
                        add_into(&mut grads[x.0], dx);
                    }
                }
                Op::Dropout { x, mask } => {
                    if self.needs(*x) {
                        add_into(&mut grads[x.0], &g * mask);
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    shift,
                    xhat,
                    inv_sd,
                } => {
                    let d = xhat.ncols() as f64;
                    if self.needs(*gain) {
                        let dg = (&g * xhat)
                            .sum_axis(ndarray::Axis(0))
                            .insert_axis(ndarray::Axis(0));
                        add_into(&mut grads[gain.0], dg);
                    }
                    if self.needs(*shift) {
                        let ds = g.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
                        add_into(&mut grads[shift.0], ds);
                    }
                    if self.needs(*x) {
                        let gain_row = self.val(*gain).row(0).to_owned();
                        let mut dx = Array2::zeros(xhat.dim());
                        for (i, inv) in inv_sd.iter().enumerate() {
                            let g_row = g.row(i);
                            let h_row = xhat.row(i);
                            let mut m1 = 0.0;
                            let mut m2 = 0.0;
                            let dxhat: Vec<f64> = g_row
                                .iter()
                                .zip(gain_row.iter())
                                .map(|(gv, gn)| gv * gn)
                                .collect();
                            for (dh, h) in dxhat.iter().zip(h_row.iter()) {
                                m1 += dh;
                                m2 += dh * h;
                            }
                            m1 /= d;
                            m2 /= d;
                            for j in 0..xhat.ncols() {
                                dx[(i, j)] = inv * (dxhat[j] - m1 - h_row[j] * m2);
                            }
                        }
                        add_into(&mut grads[x.0], dx);
                    }
                }
                Op::SoftmaxRows(x) => {
                    if self.needs(*x) {
                        let y = &node.value;
                        let mut dx = Array2::zeros(y.dim());
                        for i in 0..y.nrows() {
                            let dot: f64 = g
                                .row(i)
                                .iter()
                                .zip(y.row(i).iter())
                                .map(|(gv, yv)| gv * yv)
                                .sum();
                            for j in 0..y.ncols() {
                                dx[(i, j)] = y[(i, j)] * (g[(i, j)] - dot);
                            }
                        }
                        add_into(&mut grads[x.0], dx);
                    }
                }
                Op::Scale(x, c) => {
                    if self.needs(*x) {
                        add_into(&mut grads[x.0], &g * *c);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.val(p).ncols();
                        if self.needs(p) {
                            let slice = g
                                .slice(ndarray::s![.., offset..offset + w])
                                .to_owned();
                            add_into(&mut grads[p.0], slice);
                        }
                        offset += w;
                    }
                }
                Op::ReshapeRow(x) => {
                    if self.needs(*x) {
                        let (r, c) = self.val(*x).dim();
                        let dx = g.to_shape((r, c)).expect("row-major reshape").to_owned();
                        add_into(&mut grads[x.0], dx);
                    }
                }
                Op::ScaleRows { w, factors } => {
                    if self.needs(*w) {
                        let mut dw = g.clone();
                        for (mut row, &f) in dw.rows_mut().into_iter().zip(factors) {
                            row.mapv_inplace(|v| v * f);
                        }
                        add_into(&mut grads[w.0], dw);
                    }
                }
                Op::Mse { pred, targets } => {
                    if self.needs(*pred) {
                        let n = targets.len() as f64;
                        let scale = 2.0 * g[(0, 0)] / n;
                        let pv = self.val(*pred);
                        let mut dp = Array2::zeros(pv.dim());
                        for (i, t) in targets.iter().enumerate() {
                            dp[(i, 0)] = scale * (pv[(i, 0)] - t);
                        }
                        add_into(&mut grads[pred.0], dp);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}
