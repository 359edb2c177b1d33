//! Pure forward operations: dense layers, activations, dropout, layer
//! normalization, softmax, and attention.

use super::{NnError, Tensor2};
use ndarray::{Array2, Axis};
use rand::Rng;

/// Whether stochastic layers (dropout) are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `Y = X·W + b`, `b` broadcast over rows.
pub fn linear_forward(w: &Tensor2, b: &[f64], x: &Tensor2) -> Result<Tensor2, NnError> {
    if x.cols() != w.rows() {
        return Err(NnError::ShapeMismatch {
            op: "linear_forward",
            detail: format!("X is {}×{}, W is {}×{}", x.rows(), x.cols(), w.rows(), w.cols()),
        });
    }
    if b.len() != w.cols() {
        return Err(NnError::ShapeMismatch {
            op: "linear_forward",
            detail: format!("bias length {} ≠ output width {}", b.len(), w.cols()),
        });
    }
    let mut y = x.array().dot(w.array());
    for mut row in y.rows_mut() {
        for (v, bj) in row.iter_mut().zip(b) {
            *v += bj;
        }
    }
    Ok(Tensor2::from_array(y))
}

/// Elementwise `max(0, ·)`.
pub fn relu(x: &Tensor2) -> Tensor2 {
    Tensor2::from_array(x.array().mapv(|v| v.max(0.0)))
}

pub(crate) fn relu_kernel(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Inverted dropout. In train mode entries are zeroed with probability `p`
/// and survivors scaled by `1/(1−p)`; in eval mode this is the identity.
pub fn dropout(
    x: &Tensor2,
    p: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<Tensor2, NnError> {
    let mask = dropout_mask(x.shape(), p, mode, rng)?;
    match mask {
        None => Ok(x.clone()),
        Some(m) => Ok(Tensor2::from_array(x.array() * &m)),
    }
}

/// Multiplicative dropout mask with entries `0` or `1/(1−p)`, or `None` when
/// dropout is inactive.
pub(crate) fn dropout_mask(
    shape: (usize, usize),
    p: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<Option<Array2<f64>>, NnError> {
    if !(0.0..1.0).contains(&p) {
        return Err(NnError::InvalidProbability(p));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(None);
    }
    let keep = 1.0 / (1.0 - p);
    let mut mask = Array2::zeros(shape);
    for v in mask.iter_mut() {
        if rng.random::<f64>() >= p {
            *v = keep;
        }
    }
    Ok(Some(mask))
}

/// Row-wise layer normalization with population variance:
/// `y = gain ⊙ (x − mean)/√(popvar + eps) + shift`.
pub fn layer_norm(x: &[f64], gain: &[f64], shift: &[f64], eps: f64) -> Result<Vec<f64>, NnError> {
    let d = x.len();
    if d < 2 {
        return Err(NnError::ShapeMismatch {
            op: "layer_norm",
            detail: format!("need at least 2 entries, got {d}"),
        });
    }
    if gain.len() != d || shift.len() != d {
        return Err(NnError::ShapeMismatch {
            op: "layer_norm",
            detail: "gain/shift length mismatch".to_string(),
        });
    }
    let xm = Tensor2::row(x);
    let (y, _, _) = layer_norm_kernel(xm.array(), gain, shift, eps);
    Ok(y.row(0).to_vec())
}

/// Row-wise layer norm over a matrix; returns (output, xhat, inv_sd) for
/// gradient reuse.
pub(crate) fn layer_norm_kernel(
    x: &Array2<f64>,
    gain: &[f64],
    shift: &[f64],
    eps: f64,
) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let (n, d) = x.dim();
    let mut xhat = Array2::zeros((n, d));
    let mut out = Array2::zeros((n, d));
    let mut inv_sd = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_sd.push(inv);
        for j in 0..d {
            let h = (row[j] - mean) * inv;
            xhat[(i, j)] = h;
            out[(i, j)] = gain[j] * h + shift[j];
        }
    }
    (out, xhat, inv_sd)
}

/// Row-wise softmax with row-max subtraction for stability.
pub fn softmax_rows(m: &Tensor2) -> Tensor2 {
    Tensor2::from_array(softmax_rows_kernel(m.array()))
}

pub(crate) fn softmax_rows_kernel(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// `weights = softmax(Q·Kᵀ/√d_k)`, `output = weights·V`.
pub fn scaled_dot_attention(
    q: &Tensor2,
    k: &Tensor2,
    v: &Tensor2,
) -> Result<(Tensor2, Tensor2), NnError> {
    if q.cols() != k.cols() {
        return Err(NnError::ShapeMismatch {
            op: "scaled_dot_attention",
            detail: format!("Q width {} ≠ K width {}", q.cols(), k.cols()),
        });
    }
    if k.rows() != v.rows() {
        return Err(NnError::ShapeMismatch {
            op: "scaled_dot_attention",
            detail: format!("K has {} rows, V has {}", k.rows(), v.rows()),
        });
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let scores = q.array().dot(&k.array().t()) * scale;
    let weights = softmax_rows_kernel(&scores);
    let output = weights.dot(v.array());
    Ok((Tensor2::from_array(output), Tensor2::from_array(weights)))
}

/// Per-head projection matrices and the output projection of one
/// multi-head self-attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// Per-head query projections, each `d_model × d_head`.
    pub w_q: Vec<Tensor2>,
    pub w_k: Vec<Tensor2>,
    pub w_v: Vec<Tensor2>,
    /// Output projection, `(h·d_head) × d_model`.
    pub w_o: Tensor2,
}

impl AttentionParams {
    pub fn heads(&self) -> usize {
        self.w_q.len()
    }

    pub fn d_model(&self) -> usize {
        self.w_q.first().map_or(0, Tensor2::rows)
    }

    pub fn d_head(&self) -> usize {
        self.w_q.first().map_or(0, Tensor2::cols)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let h = self.heads();
        if h == 0 || self.w_k.len() != h || self.w_v.len() != h {
            return Err(NnError::ShapeMismatch {
                op: "attention_params",
                detail: "head count mismatch across Q/K/V".to_string(),
            });
        }
        let (dm, dh) = (self.d_model(), self.d_head());
        for w in self.w_q.iter().chain(&self.w_k).chain(&self.w_v) {
            if w.shape() != (dm, dh) {
                return Err(NnError::ShapeMismatch {
                    op: "attention_params",
                    detail: format!("projection is {:?}, expected ({dm}, {dh})", w.shape()),
                });
            }
        }
        if h * dh != dm {
            return Err(NnError::ShapeMismatch {
                op: "attention_params",
                detail: format!("h·d_head = {} must equal d_model = {dm}", h * dh),
            });
        }
        if self.w_o.shape() != (h * dh, dm) {
            return Err(NnError::ShapeMismatch {
                op: "attention_params",
                detail: format!("W_O is {:?}, expected ({}, {dm})", self.w_o.shape(), h * dh),
            });
        }
        Ok(())
    }
}

/// Multi-head self-attention: concatenated per-head attention outputs
/// projected by `W_O`.
pub fn multi_head_attention(
    params: &AttentionParams,
    tokens: &Tensor2,
) -> Result<Tensor2, NnError> {
    params.validate()?;
    if tokens.cols() != params.d_model() {
        return Err(NnError::ShapeMismatch {
            op: "multi_head_attention",
            detail: format!(
                "token width {} ≠ d_model {}",
                tokens.cols(),
                params.d_model()
            ),
        });
    }
    let mut heads = Vec::with_capacity(params.heads());
    for h in 0..params.heads() {
        let q = Tensor2::from_array(tokens.array().dot(params.w_q[h].array()));
        let k = Tensor2::from_array(tokens.array().dot(params.w_k[h].array()));
        let v = Tensor2::from_array(tokens.array().dot(params.w_v[h].array()));
        let (out, _) = scaled_dot_attention(&q, &k, &v)?;
        heads.push(out);
    }
    let views: Vec<_> = heads.iter().map(|t| t.array().view()).collect();
    let cat = ndarray::concatenate(Axis(1), &views).expect("equal row counts");
    Ok(Tensor2::from_array(cat.dot(params.w_o.array())))
}
