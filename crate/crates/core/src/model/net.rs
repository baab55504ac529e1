//! Transformer encoder-decoder internals: parameters, the teacher-forced
//! forward/backward pair used in training, and the incremental forward used
//! by beam search.
//!
//! Post-norm residual blocks, shared embedding matrix for the source side,
//! the target side and the softmax projection. Backward passes are written
//! by hand and validated against finite differences.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

use super::matrix::Matrix;
use super::pe::positional_vector;
use super::ModelConfig;

const LN_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// parameters

#[derive(Debug, Clone)]
pub struct AttnParams<F> {
    pub wq: Matrix<F>,
    pub wk: Matrix<F>,
    pub wv: Matrix<F>,
    pub wo: Matrix<F>,
}

#[derive(Debug, Clone)]
pub struct LayerNormParams<F> {
    pub gain: Matrix<F>,
    pub bias: Matrix<F>,
}

#[derive(Debug, Clone)]
pub struct FfnParams<F> {
    pub w1: Matrix<F>,
    pub b1: Matrix<F>,
    pub w2: Matrix<F>,
    pub b2: Matrix<F>,
}

#[derive(Debug, Clone)]
pub struct EncLayerParams<F> {
    pub attn: AttnParams<F>,
    pub ln1: LayerNormParams<F>,
    pub ffn: FfnParams<F>,
    pub ln2: LayerNormParams<F>,
}

#[derive(Debug, Clone)]
pub struct DecLayerParams<F> {
    pub self_attn: AttnParams<F>,
    pub ln1: LayerNormParams<F>,
    pub cross_attn: AttnParams<F>,
    pub ln2: LayerNormParams<F>,
    pub ffn: FfnParams<F>,
    pub ln3: LayerNormParams<F>,
}

/// Every learned tensor of the model. The embedding matrix doubles as the
/// softmax projection.
#[derive(Debug, Clone)]
pub struct Params<F> {
    pub embed: Matrix<F>,
    pub enc: Vec<EncLayerParams<F>>,
    pub dec: Vec<DecLayerParams<F>>,
}

fn xavier<F: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<F> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| {
        F::from_f64_lossy(rng.gen_range(-limit..limit))
    })
}

fn layer_norm_init<F: Scalar>(d: usize) -> LayerNormParams<F> {
    LayerNormParams {
        gain: Matrix::from_fn(1, d, |_, _| F::one()),
        bias: Matrix::zeros(1, d),
    }
}

fn attn_init<F: Scalar>(d: usize, rng: &mut ChaCha8Rng) -> AttnParams<F> {
    AttnParams {
        wq: xavier(d, d, rng),
        wk: xavier(d, d, rng),
        wv: xavier(d, d, rng),
        wo: xavier(d, d, rng),
    }
}

fn ffn_init<F: Scalar>(d: usize, ffn_dim: usize, rng: &mut ChaCha8Rng) -> FfnParams<F> {
    FfnParams {
        w1: xavier(d, ffn_dim, rng),
        b1: Matrix::zeros(1, ffn_dim),
        w2: xavier(ffn_dim, d, rng),
        b2: Matrix::zeros(1, d),
    }
}

impl<F: Scalar> Params<F> {
    pub fn init(cfg: &ModelConfig, vocab_len: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        let embed_limit = (3.0 / d as f64).sqrt();
        let embed = Matrix::from_fn(vocab_len, d, |_, _| {
            F::from_f64_lossy(rng.gen_range(-embed_limit..embed_limit))
        });
        let enc = (0..cfg.n_enc_layers)
            .map(|_| EncLayerParams {
                attn: attn_init(d, rng),
                ln1: layer_norm_init(d),
                ffn: ffn_init(d, cfg.ffn_dim, rng),
                ln2: layer_norm_init(d),
            })
            .collect();
        let dec = (0..cfg.n_dec_layers)
            .map(|_| DecLayerParams {
                self_attn: attn_init(d, rng),
                ln1: layer_norm_init(d),
                cross_attn: attn_init(d, rng),
                ln2: layer_norm_init(d),
                ffn: ffn_init(d, cfg.ffn_dim, rng),
                ln3: layer_norm_init(d),
            })
            .collect();
        Params { embed, enc, dec }
    }

    pub fn zeros_like(&self) -> Self {
        let zl = |m: &Matrix<F>| m.zeros_like();
        Params {
            embed: zl(&self.embed),
            enc: self
                .enc
                .iter()
                .map(|l| EncLayerParams {
                    attn: AttnParams {
                        wq: zl(&l.attn.wq),
                        wk: zl(&l.attn.wk),
                        wv: zl(&l.attn.wv),
                        wo: zl(&l.attn.wo),
                    },
                    ln1: LayerNormParams {
                        gain: zl(&l.ln1.gain),
                        bias: zl(&l.ln1.bias),
                    },
                    ffn: FfnParams {
                        w1: zl(&l.ffn.w1),
                        b1: zl(&l.ffn.b1),
                        w2: zl(&l.ffn.w2),
                        b2: zl(&l.ffn.b2),
                    },
                    ln2: LayerNormParams {
                        gain: zl(&l.ln2.gain),
                        bias: zl(&l.ln2.bias),
                    },
                })
                .collect(),
            dec: self
                .dec
                .iter()
                .map(|l| DecLayerParams {
                    self_attn: AttnParams {
                        wq: zl(&l.self_attn.wq),
                        wk: zl(&l.self_attn.wk),
                        wv: zl(&l.self_attn.wv),
                        wo: zl(&l.self_attn.wo),
                    },
                    ln1: LayerNormParams {
                        gain: zl(&l.ln1.gain),
                        bias: zl(&l.ln1.bias),
                    },
                    cross_attn: AttnParams {
                        wq: zl(&l.cross_attn.wq),
                        wk: zl(&l.cross_attn.wk),
                        wv: zl(&l.cross_attn.wv),
                        wo: zl(&l.cross_attn.wo),
                    },
                    ln2: LayerNormParams {
                        gain: zl(&l.ln2.gain),
                        bias: zl(&l.ln2.bias),
                    },
                    ffn: FfnParams {
                        w1: zl(&l.ffn.w1),
                        b1: zl(&l.ffn.b1),
                        w2: zl(&l.ffn.w2),
                        b2: zl(&l.ffn.b2),
                    },
                    ln3: LayerNormParams {
                        gain: zl(&l.ln3.gain),
                        bias: zl(&l.ln3.bias),
                    },
                })
                .collect(),
        }
    }

    /// All tensors in declaration order; this order defines the checkpoint
    /// layout and the optimizer state layout.
    pub fn matrices(&self) -> Vec<&Matrix<F>> {
        let mut out = vec![&self.embed];
        for l in &self.enc {
            out.extend([&l.attn.wq, &l.attn.wk, &l.attn.wv, &l.attn.wo]);
            out.extend([&l.ln1.gain, &l.ln1.bias]);
            out.extend([&l.ffn.w1, &l.ffn.b1, &l.ffn.w2, &l.ffn.b2]);
            out.extend([&l.ln2.gain, &l.ln2.bias]);
        }
        for l in &self.dec {
            out.extend([
                &l.self_attn.wq,
                &l.self_attn.wk,
                &l.self_attn.wv,
                &l.self_attn.wo,
            ]);
            out.extend([&l.ln1.gain, &l.ln1.bias]);
            out.extend([
                &l.cross_attn.wq,
                &l.cross_attn.wk,
                &l.cross_attn.wv,
                &l.cross_attn.wo,
            ]);
            out.extend([&l.ln2.gain, &l.ln2.bias]);
            out.extend([&l.ffn.w1, &l.ffn.b1, &l.ffn.w2, &l.ffn.b2]);
            out.extend([&l.ln3.gain, &l.ln3.bias]);
        }
        out
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut Matrix<F>> {
        let mut out: Vec<&mut Matrix<F>> = vec![&mut self.embed];
        for l in &mut self.enc {
            out.push(&mut l.attn.wq);
            out.push(&mut l.attn.wk);
            out.push(&mut l.attn.wv);
            out.push(&mut l.attn.wo);
            out.push(&mut l.ln1.gain);
            out.push(&mut l.ln1.bias);
            out.push(&mut l.ffn.w1);
            out.push(&mut l.ffn.b1);
            out.push(&mut l.ffn.w2);
            out.push(&mut l.ffn.b2);
            out.push(&mut l.ln2.gain);
            out.push(&mut l.ln2.bias);
        }
        for l in &mut self.dec {
            out.push(&mut l.self_attn.wq);
            out.push(&mut l.self_attn.wk);
            out.push(&mut l.self_attn.wv);
            out.push(&mut l.self_attn.wo);
            out.push(&mut l.ln1.gain);
            out.push(&mut l.ln1.bias);
            out.push(&mut l.cross_attn.wq);
            out.push(&mut l.cross_attn.wk);
            out.push(&mut l.cross_attn.wv);
            out.push(&mut l.cross_attn.wo);
            out.push(&mut l.ln2.gain);
            out.push(&mut l.ln2.bias);
            out.push(&mut l.ffn.w1);
            out.push(&mut l.ffn.b1);
            out.push(&mut l.ffn.w2);
            out.push(&mut l.ffn.b2);
            out.push(&mut l.ln3.gain);
            out.push(&mut l.ln3.bias);
        }
        out
    }

    pub fn add_assign(&mut self, other: &Params<F>) {
        let theirs = other.matrices();
        for (mine, other) in self.matrices_mut().into_iter().zip(theirs) {
            mine.add_assign(other);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.matrices().iter().map(|m| m.data().len()).sum()
    }
}

// ---------------------------------------------------------------------------
// building blocks

fn softmax_rows<F: Scalar>(m: &mut Matrix<F>) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

struct LnTrace<F> {
    xhat: Matrix<F>,
    inv_std: Vec<F>,
}

fn layer_norm_forward<F: Scalar>(x: &Matrix<F>, p: &LayerNormParams<F>) -> (Matrix<F>, LnTrace<F>) {
    let (rows, d) = (x.rows(), x.cols());
    let eps = F::from_f64_lossy(LN_EPS);
    let dn = F::from_f64_lossy(d as f64);
    let mut out = Matrix::zeros(rows, d);
    let mut xhat = Matrix::zeros(rows, d);
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().cloned().sum::<F>() / dn;
        let var = row
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<F>()
            / dn;
        let istd = (var + eps).sqrt().recip();
        inv_std.push(istd);
        for c in 0..d {
            let xh = (row[c] - mean) * istd;
            xhat.set(r, c, xh);
            out.set(r, c, p.gain.get(0, c) * xh + p.bias.get(0, c));
        }
    }
    (out, LnTrace { xhat, inv_std })
}

fn layer_norm_backward<F: Scalar>(
    dout: &Matrix<F>,
    trace: &LnTrace<F>,
    p: &LayerNormParams<F>,
    grad: &mut LayerNormParams<F>,
) -> Matrix<F> {
    let (rows, d) = (dout.rows(), dout.cols());
    let dn = F::from_f64_lossy(d as f64);
    let mut dx = Matrix::zeros(rows, d);
    for r in 0..rows {
        let dout_row = dout.row(r);
        let xhat_row = trace.xhat.row(r);
        let istd = trace.inv_std[r];
        let mut m1 = F::zero();
        let mut m2 = F::zero();
        for c in 0..d {
            let dxhat = dout_row[c] * p.gain.get(0, c);
            m1 += dxhat;
            m2 += dxhat * xhat_row[c];
            grad.gain.row_mut(0)[c] += dout_row[c] * xhat_row[c];
            grad.bias.row_mut(0)[c] += dout_row[c];
        }
        m1 /= dn;
        m2 /= dn;
        for c in 0..d {
            let dxhat = dout_row[c] * p.gain.get(0, c);
            dx.set(r, c, istd * (dxhat - m1 - xhat_row[c] * m2));
        }
    }
    dx
}

struct AttnTrace<F> {
    q: Matrix<F>,
    k: Matrix<F>,
    v: Matrix<F>,
    /// Softmaxed attention weights per head.
    weights: Vec<Matrix<F>>,
    concat: Matrix<F>,
}

fn head_scores<F: Scalar>(
    q: &Matrix<F>,
    k: &Matrix<F>,
    h0: usize,
    dk: usize,
    causal: bool,
) -> Matrix<F> {
    let scale = F::from_f64_lossy(1.0 / (dk as f64).sqrt());
    let (tq, tk) = (q.rows(), k.rows());
    let mut s = Matrix::zeros(tq, tk);
    for i in 0..tq {
        let qr = &q.row(i)[h0..h0 + dk];
        for j in 0..tk {
            if causal && j > i {
                s.set(i, j, F::neg_infinity());
                continue;
            }
            let kr = &k.row(j)[h0..h0 + dk];
            let mut acc = F::zero();
            for p in 0..dk {
                acc += qr[p] * kr[p];
            }
            s.set(i, j, acc * scale);
        }
    }
    s
}

fn attention_forward<F: Scalar>(
    q_in: &Matrix<F>,
    kv_in: &Matrix<F>,
    p: &AttnParams<F>,
    n_heads: usize,
    causal: bool,
) -> (Matrix<F>, AttnTrace<F>) {
    let d = q_in.cols();
    let dk = d / n_heads;
    let q = q_in.matmul(&p.wq);
    let k = kv_in.matmul(&p.wk);
    let v = kv_in.matmul(&p.wv);
    let mut concat = Matrix::zeros(q.rows(), d);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let h0 = h * dk;
        let mut s = head_scores(&q, &k, h0, dk, causal);
        softmax_rows(&mut s);
        // context into the head's column block
        for i in 0..s.rows() {
            for j in 0..s.cols() {
                let w = s.get(i, j);
                if w == F::zero() {
                    continue;
                }
                let v_row = &v.row(j)[h0..h0 + dk];
                let out_row = &mut concat.row_mut(i)[h0..h0 + dk];
                for (o, &vv) in out_row.iter_mut().zip(v_row) {
                    *o += w * vv;
                }
            }
        }
        weights.push(s);
    }
    let out = concat.matmul(&p.wo);
    (
        out,
        AttnTrace {
            q,
            k,
            v,
            weights,
            concat,
        },
    )
}

/// Returns gradients wrt the query-side input and the key/value-side input.
fn attention_backward<F: Scalar>(
    dout: &Matrix<F>,
    trace: &AttnTrace<F>,
    q_in: &Matrix<F>,
    kv_in: &Matrix<F>,
    p: &AttnParams<F>,
    grad: &mut AttnParams<F>,
    n_heads: usize,
) -> (Matrix<F>, Matrix<F>) {
    let d = q_in.cols();
    let dk = d / n_heads;
    let scale = F::from_f64_lossy(1.0 / (dk as f64).sqrt());

    trace.concat.matmul_transa_into(dout, &mut grad.wo);
    let dconcat = dout.matmul_transb(&p.wo);

    let mut dq = Matrix::zeros(trace.q.rows(), d);
    let mut dk_m = Matrix::zeros(trace.k.rows(), d);
    let mut dv = Matrix::zeros(trace.v.rows(), d);

    for h in 0..n_heads {
        let h0 = h * dk;
        let a = &trace.weights[h];
        let (tq, tk) = (a.rows(), a.cols());
        // dA = dconcat_h · V_hᵀ, dV_h += Aᵀ · dconcat_h
        let mut da = Matrix::zeros(tq, tk);
        for i in 0..tq {
            let dc = &dconcat.row(i)[h0..h0 + dk];
            for j in 0..tk {
                let vr = &trace.v.row(j)[h0..h0 + dk];
                let mut acc = F::zero();
                for pidx in 0..dk {
                    acc += dc[pidx] * vr[pidx];
                }
                da.set(i, j, acc);
                let w = a.get(i, j);
                if w != F::zero() {
                    let dv_row = &mut dv.row_mut(j)[h0..h0 + dk];
                    for (o, &g) in dv_row.iter_mut().zip(dc) {
                        *o += w * g;
                    }
                }
            }
        }
        // softmax backward row-wise: dS = A ⊙ (dA − Σ dA⊙A)
        for i in 0..tq {
            let mut dot = F::zero();
            for j in 0..tk {
                dot += da.get(i, j) * a.get(i, j);
            }
            for j in 0..tk {
                let ds = a.get(i, j) * (da.get(i, j) - dot);
                da.set(i, j, ds);
            }
        }
        // dQ_h += dS · K_h · scale, dK_h += dSᵀ · Q_h · scale
        for i in 0..tq {
            let dq_row = &mut dq.row_mut(i)[h0..h0 + dk];
            for j in 0..tk {
                let ds = da.get(i, j) * scale;
                if ds == F::zero() {
                    continue;
                }
                let kr = &trace.k.row(j)[h0..h0 + dk];
                for (o, &kk) in dq_row.iter_mut().zip(kr) {
                    *o += ds * kk;
                }
            }
        }
        for j in 0..tk {
            let dk_row = &mut dk_m.row_mut(j)[h0..h0 + dk];
            for i in 0..tq {
                let ds = da.get(i, j) * scale;
                if ds == F::zero() {
                    continue;
                }
                let qr = &trace.q.row(i)[h0..h0 + dk];
                for (o, &qq) in dk_row.iter_mut().zip(qr) {
                    *o += ds * qq;
                }
            }
        }
    }

    q_in.matmul_transa_into(&dq, &mut grad.wq);
    kv_in.matmul_transa_into(&dk_m, &mut grad.wk);
    kv_in.matmul_transa_into(&dv, &mut grad.wv);

    let dq_in = dq.matmul_transb(&p.wq);
    let mut dkv_in = dk_m.matmul_transb(&p.wk);
    dkv_in.add_assign(&dv.matmul_transb(&p.wv));
    (dq_in, dkv_in)
}

struct FfnTrace<F> {
    /// Pre-activation of the hidden layer.
    pre: Matrix<F>,
    hidden: Matrix<F>,
}

fn ffn_forward<F: Scalar>(x: &Matrix<F>, p: &FfnParams<F>) -> (Matrix<F>, FfnTrace<F>) {
    let mut pre = x.matmul(&p.w1);
    for r in 0..pre.rows() {
        let row = pre.row_mut(r);
        for (v, &b) in row.iter_mut().zip(p.b1.row(0)) {
            *v += b;
        }
    }
    let mut hidden = pre.clone();
    for v in hidden.data_mut() {
        if *v < F::zero() {
            *v = F::zero();
        }
    }
    let mut out = hidden.matmul(&p.w2);
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for (v, &b) in row.iter_mut().zip(p.b2.row(0)) {
            *v += b;
        }
    }
    (out, FfnTrace { pre, hidden })
}

fn ffn_backward<F: Scalar>(
    dout: &Matrix<F>,
    trace: &FfnTrace<F>,
    x: &Matrix<F>,
    p: &FfnParams<F>,
    grad: &mut FfnParams<F>,
) -> Matrix<F> {
    trace.hidden.matmul_transa_into(dout, &mut grad.w2);
    for r in 0..dout.rows() {
        for (g, &d) in grad.b2.row_mut(0).iter_mut().zip(dout.row(r)) {
            *g += d;
        }
    }
    let mut dhidden = dout.matmul_transb(&p.w2);
    for (dh, &pre) in dhidden.data_mut().iter_mut().zip(trace.pre.data()) {
        if pre <= F::zero() {
            *dh = F::zero();
        }
    }
    x.matmul_transa_into(&dhidden, &mut grad.w1);
    for r in 0..dhidden.rows() {
        for (g, &d) in grad.b1.row_mut(0).iter_mut().zip(dhidden.row(r)) {
            *g += d;
        }
    }
    dhidden.matmul_transb(&p.w1)
}

fn dropout_forward<F: Scalar>(
    x: &mut Matrix<F>,
    p: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Option<Matrix<F>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep_scale = F::from_f64_lossy(1.0 / (1.0 - p));
    let mut mask = x.zeros_like();
    for (m, v) in mask.data_mut().iter_mut().zip(x.data_mut()) {
        if rng.gen::<f64>() < p {
            *m = F::zero();
            *v = F::zero();
        } else {
            *m = keep_scale;
            *v *= keep_scale;
        }
    }
    Some(mask)
}

fn dropout_backward<F: Scalar>(d: &mut Matrix<F>, mask: &Option<Matrix<F>>) {
    if let Some(mask) = mask {
        for (v, &m) in d.data_mut().iter_mut().zip(mask.data()) {
            *v *= m;
        }
    }
}

// ---------------------------------------------------------------------------
// full (teacher-forced) forward and backward

struct EncLayerTrace<F> {
    x_in: Matrix<F>,
    attn: AttnTrace<F>,
    drop1: Option<Matrix<F>>,
    ln1: LnTrace<F>,
    ln1_out: Matrix<F>,
    ffn: FfnTrace<F>,
    drop2: Option<Matrix<F>>,
    ln2: LnTrace<F>,
}

struct DecLayerTrace<F> {
    x_in: Matrix<F>,
    self_attn: AttnTrace<F>,
    drop1: Option<Matrix<F>>,
    ln1: LnTrace<F>,
    ln1_out: Matrix<F>,
    cross: AttnTrace<F>,
    drop2: Option<Matrix<F>>,
    ln2: LnTrace<F>,
    ln2_out: Matrix<F>,
    ffn: FfnTrace<F>,
    drop3: Option<Matrix<F>>,
    ln3: LnTrace<F>,
}

/// Everything the backward pass needs from one forward pass.
pub struct FullTrace<F> {
    src_ids: Vec<usize>,
    dec_in_ids: Vec<usize>,
    enc_traces: Vec<EncLayerTrace<F>>,
    enc_out: Matrix<F>,
    dec_traces: Vec<DecLayerTrace<F>>,
    pub dec_out: Matrix<F>,
    /// Softmax over the vocabulary for each target position.
    pub probs: Matrix<F>,
}

/// Summed losses over the target positions of one sequence.
#[derive(Debug, Clone, Copy)]
pub struct LossStats {
    /// Label-smoothed cross entropy (training objective).
    pub smoothed_sum: f64,
    /// Plain cross entropy, used for perplexity reporting.
    pub plain_sum: f64,
    pub tokens: usize,
}

fn embed_sequence<F: Scalar>(
    embed: &Matrix<F>,
    ids: &[usize],
    positions: &[i64],
    d: usize,
) -> Matrix<F> {
    debug_assert_eq!(ids.len(), positions.len());
    let scale = F::from_f64_lossy((d as f64).sqrt());
    let mut x = Matrix::zeros(ids.len(), d);
    for (r, (&id, &pos)) in ids.iter().zip(positions).enumerate() {
        let pe: Vec<F> = positional_vector(pos, d);
        let e_row = embed.row(id);
        let x_row = x.row_mut(r);
        for c in 0..d {
            x_row[c] = e_row[c] * scale + pe[c];
        }
    }
    x
}

fn encoder_forward<F: Scalar>(
    params: &Params<F>,
    cfg: &ModelConfig,
    x0: Matrix<F>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Matrix<F>, Vec<EncLayerTrace<F>>) {
    let mut x = x0;
    let mut traces = Vec::with_capacity(params.enc.len());
    for layer in &params.enc {
        let x_in = x;
        let (mut attn_out, attn) = attention_forward(&x_in, &x_in, &layer.attn, cfg.n_heads, false);
        let drop1 = dropout_forward(&mut attn_out, cfg.dropout, rng.as_deref_mut());
        attn_out.add_assign(&x_in);
        let (ln1_out, ln1) = layer_norm_forward(&attn_out, &layer.ln1);
        let (mut ffn_out, ffn) = ffn_forward(&ln1_out, &layer.ffn);
        let drop2 = dropout_forward(&mut ffn_out, cfg.dropout, rng.as_deref_mut());
        ffn_out.add_assign(&ln1_out);
        let (ln2_out, ln2) = layer_norm_forward(&ffn_out, &layer.ln2);
        x = ln2_out;
        traces.push(EncLayerTrace {
            x_in,
            attn,
            drop1,
            ln1,
            ln1_out,
            ffn,
            drop2,
            ln2,
        });
    }
    (x, traces)
}

fn decoder_forward<F: Scalar>(
    params: &Params<F>,
    cfg: &ModelConfig,
    x0: Matrix<F>,
    enc_out: &Matrix<F>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Matrix<F>, Vec<DecLayerTrace<F>>) {
    let mut x = x0;
    let mut traces = Vec::with_capacity(params.dec.len());
    for layer in &params.dec {
        let x_in = x;
        let (mut self_out, self_attn) =
            attention_forward(&x_in, &x_in, &layer.self_attn, cfg.n_heads, true);
        let drop1 = dropout_forward(&mut self_out, cfg.dropout, rng.as_deref_mut());
        self_out.add_assign(&x_in);
        let (ln1_out, ln1) = layer_norm_forward(&self_out, &layer.ln1);

        let (mut cross_out, cross) =
            attention_forward(&ln1_out, enc_out, &layer.cross_attn, cfg.n_heads, false);
        let drop2 = dropout_forward(&mut cross_out, cfg.dropout, rng.as_deref_mut());
        cross_out.add_assign(&ln1_out);
        let (ln2_out, ln2) = layer_norm_forward(&cross_out, &layer.ln2);

        let (mut ffn_out, ffn) = ffn_forward(&ln2_out, &layer.ffn);
        let drop3 = dropout_forward(&mut ffn_out, cfg.dropout, rng.as_deref_mut());
        ffn_out.add_assign(&ln2_out);
        let (ln3_out, ln3) = layer_norm_forward(&ffn_out, &layer.ln3);
        x = ln3_out;
        traces.push(DecLayerTrace {
            x_in,
            self_attn,
            drop1,
            ln1,
            ln1_out,
            cross,
            drop2,
            ln2,
            ln2_out,
            ffn,
            drop3,
            ln3,
        });
    }
    (x, traces)
}

/// Teacher-forced forward pass over one sentence pair.
///
/// `dec_positions` carries the decoder positional-encoding argument per
/// input position: absolute indices or countdown remainders depending on
/// the encoding mode. Pass a dropout RNG only in training.
pub fn forward_full<F: Scalar>(
    params: &Params<F>,
    cfg: &ModelConfig,
    src_ids: &[usize],
    dec_in_ids: &[usize],
    dec_out_ids: &[usize],
    dec_positions: &[i64],
    mut rng: Option<&mut ChaCha8Rng>,
) -> (FullTrace<F>, LossStats) {
    let d = cfg.d_model;
    let enc_positions: Vec<i64> = (0..src_ids.len() as i64).collect();
    let enc_x = embed_sequence(&params.embed, src_ids, &enc_positions, d);
    let (enc_out, enc_traces) = encoder_forward(params, cfg, enc_x, rng.as_deref_mut());

    let dec_x = embed_sequence(&params.embed, dec_in_ids, dec_positions, d);
    let (dec_out, dec_traces) = decoder_forward(params, cfg, dec_x, &enc_out, rng);

    let mut logits = dec_out.matmul_transb(&params.embed);
    softmax_rows(&mut logits);
    let probs = logits;

    let vocab_len = params.embed.rows();
    let eps = cfg.label_smoothing;
    let mut smoothed_sum = 0.0;
    let mut plain_sum = 0.0;
    // clamp away exact zeros but let NaN through so training aborts loudly
    let safe_ln = |p: f64| {
        if p.is_nan() {
            f64::NAN
        } else {
            p.max(f64::MIN_POSITIVE).ln()
        }
    };
    for (t, &gold) in dec_out_ids.iter().enumerate() {
        let row = probs.row(t);
        let plain = -safe_ln(row[gold].to_f64_lossy());
        let mut sum_log = 0.0;
        if eps > 0.0 {
            for &p in row {
                sum_log += safe_ln(p.to_f64_lossy());
            }
        }
        smoothed_sum += (1.0 - eps) * plain - eps / vocab_len as f64 * sum_log;
        plain_sum += plain;
    }

    (
        FullTrace {
            src_ids: src_ids.to_vec(),
            dec_in_ids: dec_in_ids.to_vec(),
            enc_traces,
            enc_out,
            dec_traces,
            dec_out,
            probs,
        },
        LossStats {
            smoothed_sum,
            plain_sum,
            tokens: dec_out_ids.len(),
        },
    )
}

#[allow(clippy::too_many_arguments)]
fn enc_layer_backward<F: Scalar>(
    layer: &EncLayerParams<F>,
    trace: &EncLayerTrace<F>,
    cfg: &ModelConfig,
    dout: &Matrix<F>,
    grad: &mut EncLayerParams<F>,
) -> Matrix<F> {
    // ln2
    let dsum2 = layer_norm_backward(dout, &trace.ln2, &layer.ln2, &mut grad.ln2);
    // sum2 = ln1_out + dropout(ffn_out)
    let mut dffn = dsum2.clone();
    dropout_backward(&mut dffn, &trace.drop2);
    let mut dln1_out = ffn_backward(&dffn, &trace.ffn, &trace.ln1_out, &layer.ffn, &mut grad.ffn);
    dln1_out.add_assign(&dsum2);
    // ln1
    let dsum1 = layer_norm_backward(&dln1_out, &trace.ln1, &layer.ln1, &mut grad.ln1);
    let mut dattn = dsum1.clone();
    dropout_backward(&mut dattn, &trace.drop1);
    let (dq_in, dkv_in) = attention_backward(
        &dattn,
        &trace.attn,
        &trace.x_in,
        &trace.x_in,
        &layer.attn,
        &mut grad.attn,
        cfg.n_heads,
    );
    let mut dx = dsum1;
    dx.add_assign(&dq_in);
    dx.add_assign(&dkv_in);
    dx
}

#[allow(clippy::too_many_arguments)]
fn dec_layer_backward<F: Scalar>(
    layer: &DecLayerParams<F>,
    trace: &DecLayerTrace<F>,
    cfg: &ModelConfig,
    enc_out: &Matrix<F>,
    dout: &Matrix<F>,
    grad: &mut DecLayerParams<F>,
    denc_out: &mut Matrix<F>,
) -> Matrix<F> {
    // ln3 / ffn
    let dsum3 = layer_norm_backward(dout, &trace.ln3, &layer.ln3, &mut grad.ln3);
    let mut dffn = dsum3.clone();
    dropout_backward(&mut dffn, &trace.drop3);
    let mut dln2_out = ffn_backward(&dffn, &trace.ffn, &trace.ln2_out, &layer.ffn, &mut grad.ffn);
    dln2_out.add_assign(&dsum3);
    // ln2 / cross attention
    let dsum2 = layer_norm_backward(&dln2_out, &trace.ln2, &layer.ln2, &mut grad.ln2);
    let mut dcross = dsum2.clone();
    dropout_backward(&mut dcross, &trace.drop2);
    let (dq_cross, dkv_cross) = attention_backward(
        &dcross,
        &trace.cross,
        &trace.ln1_out,
        enc_out,
        &layer.cross_attn,
        &mut grad.cross_attn,
        cfg.n_heads,
    );
    denc_out.add_assign(&dkv_cross);
    let mut dln1_out = dq_cross;
    dln1_out.add_assign(&dsum2);
    // ln1 / self attention
    let dsum1 = layer_norm_backward(&dln1_out, &trace.ln1, &layer.ln1, &mut grad.ln1);
    let mut dself = dsum1.clone();
    dropout_backward(&mut dself, &trace.drop1);
    let (dq_self, dkv_self) = attention_backward(
        &dself,
        &trace.self_attn,
        &trace.x_in,
        &trace.x_in,
        &layer.self_attn,
        &mut grad.self_attn,
        cfg.n_heads,
    );
    let mut dx = dsum1;
    dx.add_assign(&dq_self);
    dx.add_assign(&dkv_self);
    dx
}

/// Backward pass for [`forward_full`]; accumulates into `grads`.
///
/// `scale` multiplies the per-position label-smoothed loss gradient, which
/// lets callers normalize by the number of tokens in a batch.
pub fn backward_full<F: Scalar>(
    params: &Params<F>,
    cfg: &ModelConfig,
    trace: &FullTrace<F>,
    dec_out_ids: &[usize],
    scale: F,
    grads: &mut Params<F>,
) {
    let d = cfg.d_model;
    let vocab_len = params.embed.rows();
    let eps = F::from_f64_lossy(cfg.label_smoothing);
    let one_m_eps = F::one() - eps;
    let eps_over_v = eps / F::from_f64_lossy(vocab_len as f64);

    // d logits = (p - q) · scale
    let mut dlogits = trace.probs.clone();
    for (t, &gold) in dec_out_ids.iter().enumerate() {
        let row = dlogits.row_mut(t);
        for (i, v) in row.iter_mut().enumerate() {
            let mut q = eps_over_v;
            if i == gold {
                q += one_m_eps;
            }
            *v = (*v - q) * scale;
        }
    }

    // logits = dec_out · embedᵀ
    let mut ddec = dlogits.matmul(&params.embed);
    dlogits.matmul_transa_into(&trace.dec_out, &mut grads.embed);

    // decoder stack
    let mut denc_out = trace.enc_out.zeros_like();
    for (i, (layer, ltrace)) in params.dec.iter().zip(&trace.dec_traces).enumerate().rev() {
        ddec = dec_layer_backward(
            layer,
            ltrace,
            cfg,
            &trace.enc_out,
            &ddec,
            &mut grads.dec[i],
            &mut denc_out,
        );
    }
    // decoder embedding rows
    let scale_embed = F::from_f64_lossy((d as f64).sqrt());
    for (r, &id) in trace.dec_in_ids.iter().enumerate() {
        let grow = grads.embed.row_mut(id);
        for (g, &v) in grow.iter_mut().zip(ddec.row(r)) {
            *g += v * scale_embed;
        }
    }

    // encoder stack
    let mut denc = denc_out;
    for (i, (layer, ltrace)) in params.enc.iter().zip(&trace.enc_traces).enumerate().rev() {
        denc = enc_layer_backward(layer, ltrace, cfg, &denc, &mut grads.enc[i]);
    }
    for (r, &id) in trace.src_ids.iter().enumerate() {
        let grow = grads.embed.row_mut(id);
        for (g, &v) in grow.iter_mut().zip(denc.row(r)) {
            *g += v * scale_embed;
        }
    }
}

// ---------------------------------------------------------------------------
// incremental decoding

/// Encoder output plus per-layer cross-attention keys/values, computed once
/// per source sentence.
pub struct EncodedSource<F> {
    pub enc_out: Matrix<F>,
    cross_k: Vec<Matrix<F>>,
    cross_v: Vec<Matrix<F>>,
}

/// Per-hypothesis decoder state: cached self-attention keys/values.
#[derive(Clone)]
pub struct DecState<F> {
    self_k: Vec<Matrix<F>>,
    self_v: Vec<Matrix<F>>,
    pub len: usize,
}

pub fn encode_source<F: Scalar>(
    params: &Params<F>,
    cfg: &ModelConfig,
    src_ids: &[usize],
) -> EncodedSource<F> {
    let enc_positions: Vec<i64> = (0..src_ids.len() as i64).collect();
    let enc_x = embed_sequence(&params.embed, src_ids, &enc_positions, cfg.d_model);
    let (enc_out, _) = encoder_forward(params, cfg, enc_x, None);
    let cross_k = params
        .dec
        .iter()
        .map(|l| enc_out.matmul(&l.cross_attn.wk))
        .collect();
    let cross_v = params
        .dec
        .iter()
        .map(|l| enc_out.matmul(&l.cross_attn.wv))
        .collect();
    EncodedSource {
        enc_out,
        cross_k,
        cross_v,
    }
}

pub fn new_dec_state<F: Scalar>(n_layers: usize) -> DecState<F> {
    DecState {
        self_k: (0..n_layers).map(|_| Matrix::zeros(0, 0)).collect(),
        self_v: (0..n_layers).map(|_| Matrix::zeros(0, 0)).collect(),
        len: 0,
    }
}

fn vec_mat<F: Scalar>(x: &[F], w: &Matrix<F>) -> Vec<F> {
    debug_assert_eq!(x.len(), w.rows());
    let n = w.cols();
    let mut out = vec![F::zero(); n];
    for (p, &xv) in x.iter().enumerate() {
        if xv == F::zero() {
            continue;
        }
        let w_row = w.row(p);
        for (o, &wv) in out.iter_mut().zip(w_row) {
            *o += xv * wv;
        }
    }
    out
}

fn row_layer_norm<F: Scalar>(x: &[F], p: &LayerNormParams<F>) -> Vec<F> {
    let d = x.len();
    let dn = F::from_f64_lossy(d as f64);
    let eps = F::from_f64_lossy(LN_EPS);
    let mean = x.iter().cloned().sum::<F>() / dn;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / dn;
    let istd = (var + eps).sqrt().recip();
    (0..d)
        .map(|c| p.gain.get(0, c) * (x[c] - mean) * istd + p.bias.get(0, c))
        .collect()
}

fn row_attention<F: Scalar>(
    q: &[F],
    k: &Matrix<F>,
    v: &Matrix<F>,
    n_heads: usize,
) -> Vec<F> {
    let d = q.len();
    let dk = d / n_heads;
    let scale = F::from_f64_lossy(1.0 / (dk as f64).sqrt());
    let t = k.rows();
    let mut ctx = vec![F::zero(); d];
    let mut scores = vec![F::zero(); t];
    for h in 0..n_heads {
        let h0 = h * dk;
        let qh = &q[h0..h0 + dk];
        let mut max = F::neg_infinity();
        for (j, s) in scores.iter_mut().enumerate() {
            let kr = &k.row(j)[h0..h0 + dk];
            let mut acc = F::zero();
            for p in 0..dk {
                acc += qh[p] * kr[p];
            }
            *s = acc * scale;
            max = max.max(*s);
        }
        let mut sum = F::zero();
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        for (j, s) in scores.iter().enumerate() {
            let w = *s / sum;
            let vr = &v.row(j)[h0..h0 + dk];
            let cr = &mut ctx[h0..h0 + dk];
            for (o, &vv) in cr.iter_mut().zip(vr) {
                *o += w * vv;
            }
        }
    }
    ctx
}

/// Feeds one token through the decoder, appending to the cached state, and
/// returns log-probabilities over the vocabulary for the next token.
pub fn decode_step<F: Scalar>(
    params: &Params<F>,
    cfg: &ModelConfig,
    enc: &EncodedSource<F>,
    state: &mut DecState<F>,
    token_id: usize,
    position_value: i64,
) -> Vec<F> {
    let d = cfg.d_model;
    let scale = F::from_f64_lossy((d as f64).sqrt());
    let pe: Vec<F> = positional_vector(position_value, d);
    let mut x: Vec<F> = params
        .embed
        .row(token_id)
        .iter()
        .zip(&pe)
        .map(|(&e, &p)| e * scale + p)
        .collect();

    for (l, layer) in params.dec.iter().enumerate() {
        // self attention over cached keys/values plus this position
        let q = vec_mat(&x, &layer.self_attn.wq);
        let k_new = vec_mat(&x, &layer.self_attn.wk);
        let v_new = vec_mat(&x, &layer.self_attn.wv);
        state.self_k[l].push_row(&k_new);
        state.self_v[l].push_row(&v_new);
        let ctx = row_attention(&q, &state.self_k[l], &state.self_v[l], cfg.n_heads);
        let attn_out = vec_mat(&ctx, &layer.self_attn.wo);
        let summed: Vec<F> = x.iter().zip(&attn_out).map(|(&a, &b)| a + b).collect();
        let ln1_out = row_layer_norm(&summed, &layer.ln1);

        // cross attention against the precomputed source projection
        let qc = vec_mat(&ln1_out, &layer.cross_attn.wq);
        let ctx_c = row_attention(&qc, &enc.cross_k[l], &enc.cross_v[l], cfg.n_heads);
        let cross_out = vec_mat(&ctx_c, &layer.cross_attn.wo);
        let summed: Vec<F> = ln1_out.iter().zip(&cross_out).map(|(&a, &b)| a + b).collect();
        let ln2_out = row_layer_norm(&summed, &layer.ln2);

        // feed forward
        let mut hidden = vec_mat(&ln2_out, &layer.ffn.w1);
        for (h, &b) in hidden.iter_mut().zip(layer.ffn.b1.row(0)) {
            *h = (*h + b).max(F::zero());
        }
        let mut ffn_out = vec_mat(&hidden, &layer.ffn.w2);
        for (o, &b) in ffn_out.iter_mut().zip(layer.ffn.b2.row(0)) {
            *o += b;
        }
        let summed: Vec<F> = ln2_out.iter().zip(&ffn_out).map(|(&a, &b)| a + b).collect();
        x = row_layer_norm(&summed, &layer.ln3);
    }
    state.len += 1;

    // logits against the shared embedding, returned as log-probabilities
    let vocab_len = params.embed.rows();
    let mut logits = vec![F::zero(); vocab_len];
    for (i, logit) in logits.iter_mut().enumerate() {
        let e_row = params.embed.row(i);
        let mut acc = F::zero();
        for (p, &xv) in x.iter().enumerate() {
            acc += xv * e_row[p];
        }
        *logit = acc;
    }
    let max = logits.iter().cloned().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for l in &logits {
        sum += (*l - max).exp();
    }
    let log_z = max + sum.ln();
    for l in logits.iter_mut() {
        *l = *l - log_z;
    }
    logits
}
