use ndarray::{linalg::general_mat_mul, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{mat_mut, vec_mut, ModelParams, TensorRef, LAYER_NORM_EPS};
use crate::corpus::{Mode, MASK_ID};
use crate::error::{Error, Result};

/// One input sequence: token ids plus the context vector in SOC mode.
#[derive(Clone, Copy, Debug)]
pub struct SeqInput<'a> {
    pub ids: &'a [u32],
    pub sc: Option<&'a [f64]>,
}

/// A masked-LM target: token position `pos` of sequence `seq` should be `id`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Target {
    pub seq: usize,
    pub pos: usize,
    pub id: u32,
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Token { id: u32, pos: usize },
    Context,
    Pad,
}

/// Row layout of a padded batch: sequence `b` occupies rows
/// `b * slots .. (b + 1) * slots`, tokens first, then the context slot.
struct Frame {
    slots: usize,
    kinds: Vec<Slot>,
}

impl Frame {
    fn rows(&self) -> usize {
        self.kinds.len()
    }

    fn is_key(&self, row: usize) -> bool {
        !matches!(self.kinds[row], Slot::Pad)
    }
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<f64>,
    ctx: Array2<f64>,
    attn_drop: Option<Array2<f64>>,
    ln1: LnCache,
    x1: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
    ff_drop: Option<Array2<f64>>,
    ln2: LnCache,
}

/// Activations kept from the encoder body for the backward pass.
pub struct ForwardCache {
    frame: Frame,
    emb_ln: LnCache,
    layers: Vec<LayerCache>,
    hidden: Array2<f64>,
}

struct HeadCache {
    rows: Vec<usize>,
    xs: Array2<f64>,
    z: Array2<f64>,
    ln: LnCache,
    t: Array2<f64>,
}

pub struct MlmOutput {
    /// One row per token position; the context slot never gets a row.
    pub logits: Array2<f64>,
    pub cache: ForwardCache,
}

impl ForwardCache {
    /// Number of sequence elements attention ran over for sequence 0.
    pub fn attended_len(&self) -> usize {
        (0..self.frame.slots).filter(|&r| self.frame.is_key(r)).count()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn layer_norm(x: &Array2<f64>, g: ArrayView1<f64>, b: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        *r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let rs = *r;
        row.mapv_inplace(|v| (v - mean) * rs);
    }
    let y = &xhat * &g + b;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward(dy: &Array2<f64>, c: &LnCache, g: ArrayView1<f64>, grads: &mut [f64], gt: TensorRef, bt: TensorRef) -> Array2<f64> {
    vec_mut(grads, gt).scaled_add(1.0, &(dy * &c.xhat).sum_axis(Axis(0)));
    vec_mut(grads, bt).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    let d = dy.ncols() as f64;
    let mut dx = dy * &g;
    for ((mut row, xh), &rs) in dx.rows_mut().into_iter().zip(c.xhat.rows()).zip(c.rstd.iter()) {
        let m1 = row.sum() / d;
        let m2 = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        for (v, &xv) in row.iter_mut().zip(xh.iter()) {
            *v = rs * (*v - m1 - xv * m2);
        }
    }
    dx
}

fn linear(x: &Array2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

/// Accumulates weight/bias gradients of `y = x W + b` and returns dL/dx.
fn linear_backward(x: &Array2<f64>, dy: &Array2<f64>, w: ArrayView2<f64>, grads: &mut [f64], wt: TensorRef, bt: TensorRef) -> Array2<f64> {
    general_mat_mul(1.0, &x.t(), dy, 1.0, &mut mat_mut(grads, wt));
    vec_mut(grads, bt).scaled_add(1.0, &dy.sum_axis(Axis(0)));
    dy.dot(&w.t())
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < rate { 0.0 } else { keep })
}

fn check_inputs(params: &ModelParams, seqs: &[SeqInput]) -> Result<()> {
    let cfg = &params.config;
    if seqs.is_empty() {
        return Err(Error::InputDomain("empty batch".into()));
    }
    for s in seqs {
        if s.ids.is_empty() {
            return Err(Error::InputDomain("sequence has no tokens".into()));
        }
        if let Some(&bad) = s.ids.iter().find(|&&i| i as usize >= cfg.vocab_size) {
            return Err(Error::InputDomain(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
        }
        match (cfg.mode, s.sc) {
            (Mode::Soc, Some(sc)) => {
                if sc.len() != cfg.hidden {
                    return Err(Error::Mode(format!(
                        "context vector has dim {}, model hidden size is {}",
                        sc.len(),
                        cfg.hidden
                    )));
                }
            }
            (Mode::Soc, None) => return Err(Error::Mode("SOC model needs a context vector".into())),
            (mode, Some(_)) => return Err(Error::Mode(format!("{mode} model does not take a context vector"))),
            (_, None) => {}
        }
        if s.ids.len() > cfg.max_tokens() {
            return Err(Error::InputDomain(format!(
                "sequence of {} tokens exceeds the {} the model accepts in {} mode",
                s.ids.len(),
                cfg.max_tokens(),
                cfg.mode
            )));
        }
    }
    Ok(())
}

fn attention_forward(fr: &Frame, q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, heads: usize) -> (Vec<f64>, Array2<f64>) {
    let (rows, d) = q.dim();
    let dh = d / heads;
    let s = fr.slots;
    let nb = rows / s;
    let scale = 1.0 / (dh as f64).sqrt();
    let (qs, ks, vs) = (q.as_slice().unwrap(), k.as_slice().unwrap(), v.as_slice().unwrap());
    let mut probs = vec![0.0; nb * heads * s * s];
    let mut ctx = Array2::<f64>::zeros((rows, d));
    let cs = ctx.as_slice_mut().unwrap();
    for b in 0..nb {
        for h in 0..heads {
            let col = h * dh;
            for i in 0..s {
                let qi = &qs[(b * s + i) * d + col..][..dh];
                let p = &mut probs[((b * heads + h) * s + i) * s..][..s];
                let mut max = f64::NEG_INFINITY;
                for j in 0..s {
                    if fr.is_key(b * s + j) {
                        let kj = &ks[(b * s + j) * d + col..][..dh];
                        p[j] = qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>() * scale;
                        max = max.max(p[j]);
                    }
                }
                let mut sum = 0.0;
                for j in 0..s {
                    if fr.is_key(b * s + j) {
                        p[j] = (p[j] - max).exp();
                        sum += p[j];
                    } else {
                        p[j] = 0.0;
                    }
                }
                let out = &mut cs[(b * s + i) * d + col..][..dh];
                for j in 0..s {
                    p[j] /= sum;
                    if p[j] != 0.0 {
                        let vj = &vs[(b * s + j) * d + col..][..dh];
                        for (o, &x) in out.iter_mut().zip(vj) {
                            *o += p[j] * x;
                        }
                    }
                }
            }
        }
    }
    (probs, ctx)
}

fn attention_backward(
    fr: &Frame,
    c: &LayerCache,
    dctx: &Array2<f64>,
    heads: usize,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (rows, d) = dctx.dim();
    let dh = d / heads;
    let s = fr.slots;
    let nb = rows / s;
    let scale = 1.0 / (dh as f64).sqrt();
    let (qs, ks, vs) = (c.q.as_slice().unwrap(), c.k.as_slice().unwrap(), c.v.as_slice().unwrap());
    let dcs = dctx.as_slice().unwrap();
    let mut dq = Array2::<f64>::zeros((rows, d));
    let mut dk = Array2::<f64>::zeros((rows, d));
    let mut dv = Array2::<f64>::zeros((rows, d));
    let (dqs, dks, dvs) = (dq.as_slice_mut().unwrap(), dk.as_slice_mut().unwrap(), dv.as_slice_mut().unwrap());
    let mut dp = vec![0.0; s];
    for b in 0..nb {
        for h in 0..heads {
            let col = h * dh;
            for i in 0..s {
                let p = &c.probs[((b * heads + h) * s + i) * s..][..s];
                let dci = &dcs[(b * s + i) * d + col..][..dh];
                let mut dot = 0.0;
                for j in 0..s {
                    if p[j] == 0.0 {
                        dp[j] = 0.0;
                        continue;
                    }
                    let vj = &vs[(b * s + j) * d + col..][..dh];
                    dp[j] = dci.iter().zip(vj).map(|(a, x)| a * x).sum();
                    dot += p[j] * dp[j];
                    let dvj = &mut dvs[(b * s + j) * d + col..][..dh];
                    for (o, &g) in dvj.iter_mut().zip(dci) {
                        *o += p[j] * g;
                    }
                }
                let qi_off = (b * s + i) * d + col;
                for j in 0..s {
                    if p[j] == 0.0 {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - dot) * scale;
                    let kj_off = (b * s + j) * d + col;
                    for t in 0..dh {
                        dqs[qi_off + t] += ds * ks[kj_off + t];
                        dks[kj_off + t] += ds * qs[qi_off + t];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

fn forward_body(params: &ModelParams, seqs: &[SeqInput], mut dropout: Option<&mut ChaCha8Rng>) -> Result<ForwardCache> {
    check_inputs(params, seqs)?;
    let cfg = &params.config;
    let lay = &params.layout;
    let d = cfg.hidden;
    let slots = seqs.iter().map(|s| s.ids.len() + usize::from(s.sc.is_some())).max().unwrap();
    let mut kinds = Vec::with_capacity(seqs.len() * slots);
    for s in seqs {
        kinds.extend(s.ids.iter().enumerate().map(|(pos, &id)| Slot::Token { id, pos }));
        if s.sc.is_some() {
            kinds.push(Slot::Context);
        }
        kinds.resize(kinds.len() + slots - s.ids.len() - usize::from(s.sc.is_some()), Slot::Pad);
    }
    let frame = Frame { slots, kinds };
    let rows = frame.rows();

    let tok = params.mat(lay.tok_emb);
    let pos = params.mat(lay.pos_emb);
    let mut e = Array2::<f64>::zeros((rows, d));
    for (r, kind) in frame.kinds.iter().enumerate() {
        if let Slot::Token { id, pos: p } = *kind {
            let mut row = e.row_mut(r);
            row.assign(&tok.row(id as usize));
            row += &pos.row(p);
        }
    }
    let (mut x, emb_ln) = layer_norm(&e, params.vec(lay.emb_ln_g), params.vec(lay.emb_ln_b));
    for (r, kind) in frame.kinds.iter().enumerate() {
        match kind {
            Slot::Token { .. } => {}
            Slot::Context => {
                let sc = seqs[r / slots].sc.unwrap();
                x.row_mut(r).assign(&ArrayView1::from(sc));
            }
            Slot::Pad => x.row_mut(r).fill(0.0),
        }
    }

    let rate = cfg.dropout;
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in &lay.layers {
        let q = linear(&x, params.mat(l.q_w), params.vec(l.q_b));
        let k = linear(&x, params.mat(l.k_w), params.vec(l.k_b));
        let v = linear(&x, params.mat(l.v_w), params.vec(l.v_b));
        let (probs, ctx) = attention_forward(&frame, &q, &k, &v, cfg.heads);
        let mut a = linear(&ctx, params.mat(l.o_w), params.vec(l.o_b));
        let attn_drop = match dropout.as_deref_mut() {
            Some(rng) if rate > 0.0 => {
                let m = dropout_mask(rows, d, rate, rng);
                a *= &m;
                Some(m)
            }
            _ => None,
        };
        let (x1, ln1) = layer_norm(&(&x + &a), params.vec(l.ln1_g), params.vec(l.ln1_b));
        let pre = linear(&x1, params.mat(l.ff1_w), params.vec(l.ff1_b));
        let act = pre.mapv(gelu);
        let mut f = linear(&act, params.mat(l.ff2_w), params.vec(l.ff2_b));
        let ff_drop = match dropout.as_deref_mut() {
            Some(rng) if rate > 0.0 => {
                let m = dropout_mask(rows, d, rate, rng);
                f *= &m;
                Some(m)
            }
            _ => None,
        };
        let (x2, ln2) = layer_norm(&(&x1 + &f), params.vec(l.ln2_g), params.vec(l.ln2_b));
        layers.push(LayerCache { input: x, q, k, v, probs, ctx, attn_drop, ln1, x1, pre, act, ff_drop, ln2 });
        x = x2;
    }
    Ok(ForwardCache { frame, emb_ln, layers, hidden: x })
}

fn backward_body(params: &ModelParams, cache: &ForwardCache, mut dx: Array2<f64>, grads: &mut [f64]) {
    let cfg = &params.config;
    let lay = &params.layout;
    for (l, c) in lay.layers.iter().zip(&cache.layers).rev() {
        let dy2 = layer_norm_backward(&dx, &c.ln2, params.vec(l.ln2_g), grads, l.ln2_g, l.ln2_b);
        let mut df = dy2.clone();
        if let Some(m) = &c.ff_drop {
            df *= m;
        }
        let mut dpre = linear_backward(&c.act, &df, params.mat(l.ff2_w), grads, l.ff2_w, l.ff2_b);
        dpre.zip_mut_with(&c.pre, |g, &p| *g *= gelu_grad(p));
        let mut dx1 = linear_backward(&c.x1, &dpre, params.mat(l.ff1_w), grads, l.ff1_w, l.ff1_b);
        dx1 += &dy2;
        let dy1 = layer_norm_backward(&dx1, &c.ln1, params.vec(l.ln1_g), grads, l.ln1_g, l.ln1_b);
        let mut da = dy1.clone();
        if let Some(m) = &c.attn_drop {
            da *= m;
        }
        let dctx = linear_backward(&c.ctx, &da, params.mat(l.o_w), grads, l.o_w, l.o_b);
        let (dq, dk, dv) = attention_backward(&cache.frame, c, &dctx, cfg.heads);
        let mut dinput = dy1;
        dinput += &linear_backward(&c.input, &dq, params.mat(l.q_w), grads, l.q_w, l.q_b);
        dinput += &linear_backward(&c.input, &dk, params.mat(l.k_w), grads, l.k_w, l.k_b);
        dinput += &linear_backward(&c.input, &dv, params.mat(l.v_w), grads, l.v_w, l.v_b);
        dx = dinput;
    }
    // the context slot is frozen and pads are inert: only token rows flow back
    for (r, kind) in cache.frame.kinds.iter().enumerate() {
        if !matches!(kind, Slot::Token { .. }) {
            dx.row_mut(r).fill(0.0);
        }
    }
    let de = layer_norm_backward(&dx, &cache.emb_ln, params.vec(lay.emb_ln_g), grads, lay.emb_ln_g, lay.emb_ln_b);
    for (r, kind) in cache.frame.kinds.iter().enumerate() {
        if let Slot::Token { id, pos } = *kind {
            mat_mut(grads, lay.tok_emb).row_mut(id as usize).scaled_add(1.0, &de.row(r));
            mat_mut(grads, lay.pos_emb).row_mut(pos).scaled_add(1.0, &de.row(r));
        }
    }
}

fn head_forward(params: &ModelParams, hidden: &Array2<f64>, rows: Vec<usize>) -> (Array2<f64>, HeadCache) {
    let lay = &params.layout;
    let xs = hidden.select(Axis(0), &rows);
    let z = linear(&xs, params.mat(lay.head_w), params.vec(lay.head_b));
    let (t, ln) = layer_norm(&z.mapv(gelu), params.vec(lay.head_ln_g), params.vec(lay.head_ln_b));
    let mut logits = t.dot(&params.mat(lay.tok_emb).t());
    logits += &params.vec(lay.out_bias);
    (logits, HeadCache { rows, xs, z, ln, t })
}

fn head_backward(params: &ModelParams, hc: &HeadCache, dlogits: &Array2<f64>, grads: &mut [f64], dhidden: &mut Array2<f64>) {
    let lay = &params.layout;
    vec_mut(grads, lay.out_bias).scaled_add(1.0, &dlogits.sum_axis(Axis(0)));
    general_mat_mul(1.0, &dlogits.t(), &hc.t, 1.0, &mut mat_mut(grads, lay.tok_emb));
    let dt = dlogits.dot(&params.mat(lay.tok_emb));
    let mut dz = layer_norm_backward(&dt, &hc.ln, params.vec(lay.head_ln_g), grads, lay.head_ln_g, lay.head_ln_b);
    dz.zip_mut_with(&hc.z, |g, &z| *g *= gelu_grad(z));
    let dxs = linear_backward(&hc.xs, &dz, params.mat(lay.head_w), grads, lay.head_w, lay.head_b);
    for (i, &r) in hc.rows.iter().enumerate() {
        dhidden.row_mut(r).scaled_add(1.0, &dxs.row(i));
    }
}

/// Logits for every token position of one sequence.
pub fn forward_mlm(params: &ModelParams, token_ids: &[u32], sc: Option<&[f64]>) -> Result<MlmOutput> {
    let cache = forward_body(params, &[SeqInput { ids: token_ids, sc }], None)?;
    let (logits, _) = head_forward(params, &cache.hidden, (0..token_ids.len()).collect());
    Ok(MlmOutput { logits, cache })
}

/// Logits at the single `[MASK]` position of `token_ids`.
pub fn mask_logits(params: &ModelParams, token_ids: &[u32], sc: Option<&[f64]>) -> Result<Vec<f64>> {
    let masks: Vec<usize> = token_ids.iter().enumerate().filter(|(_, &t)| t == MASK_ID).map(|(i, _)| i).collect();
    if masks.len() != 1 {
        return Err(Error::InputDomain(format!("cloze input must contain exactly one [MASK], found {}", masks.len())));
    }
    let cache = forward_body(params, &[SeqInput { ids: token_ids, sc }], None)?;
    let (logits, _) = head_forward(params, &cache.hidden, masks);
    Ok(logits.row(0).to_vec())
}

/// Token ids ordered by logit, highest first; ties go to the lower id.
pub fn rank_by_logits(logits: &[f64]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..logits.len() as u32).collect();
    order.sort_by(|&a, &b| logits[b as usize].total_cmp(&logits[a as usize]).then(a.cmp(&b)));
    order
}

/// The full vocabulary ranked by the model's score at the `[MASK]` position.
pub fn predict_ranked(params: &ModelParams, token_ids: &[u32], sc: Option<&[f64]>) -> Result<Vec<u32>> {
    Ok(rank_by_logits(&mask_logits(params, token_ids, sc)?))
}

/// Mean cross-entropy over `targets` and its gradient with respect to every
/// parameter. With no targets the loss is 0 and the gradient is all zeros.
pub fn loss_and_grad(
    params: &ModelParams,
    seqs: &[SeqInput],
    targets: &[Target],
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<f64>)> {
    let mut grads = vec![0.0; params.num_params()];
    if targets.is_empty() {
        check_inputs(params, seqs)?;
        return Ok((0.0, grads));
    }
    let cache = forward_body(params, seqs, dropout)?;
    let slots = cache.frame.slots;
    for t in targets {
        if t.seq >= seqs.len() || t.pos >= seqs[t.seq].ids.len() {
            return Err(Error::InputDomain(format!("target {t:?} is not a token position")));
        }
    }
    let rows: Vec<usize> = targets.iter().map(|t| t.seq * slots + t.pos).collect();
    let (logits, hc) = head_forward(params, &cache.hidden, rows);
    let m = targets.len() as f64;
    let mut loss = 0.0;
    let mut dlogits = logits;
    for (mut row, t) in dlogits.rows_mut().into_iter().zip(targets) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        loss += sum.ln() - row[t.id as usize].ln();
        row.mapv_inplace(|v| v / sum / m);
        row[t.id as usize] -= 1.0 / m;
    }
    let mut dhidden = Array2::<f64>::zeros(cache.hidden.dim());
    head_backward(params, &hc, &dlogits, &mut grads, &mut dhidden);
    backward_body(params, &cache, dhidden, &mut grads);
    Ok((loss / m, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_model, ModelConfig};

    fn model(mode: Mode) -> ModelParams {
        init_model(&ModelConfig { hidden: 16, layers: 2, heads: 2, ff: 32, max_len: 8, vocab_size: 12, mode, seed: 5, ..ModelConfig::default() }).unwrap()
    }

    #[test]
    fn soc_shapes() {
        let p = model(Mode::Soc);
        let sc = vec![0.3; 16];
        let out = forward_mlm(&p, &[3, 4, 5, 6, 7, 8], Some(&sc)).unwrap();
        assert_eq!(out.logits.dim(), (6, 12));
        assert_eq!(out.cache.attended_len(), 7);
    }

    #[test]
    fn soc_logits_depend_on_context_vector() {
        let p = model(Mode::Soc);
        let a: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..16).map(|i| (i as f64).cos()).collect();
        let la = forward_mlm(&p, &[3, 2, 5], Some(&a)).unwrap().logits;
        let lb = forward_mlm(&p, &[3, 2, 5], Some(&b)).unwrap().logits;
        assert_ne!(la, lb);
    }

    #[test]
    fn none_and_ctrl_share_the_code_path() {
        let mut ctrl = model(Mode::Ctrl);
        let none = model(Mode::None);
        assert_eq!(ctrl.data, none.data);
        let a = forward_mlm(&none, &[3, 4, 2], None).unwrap().logits;
        let b = forward_mlm(&ctrl, &[3, 4, 2], None).unwrap().logits;
        assert_eq!(a, b);
        ctrl.config.mode = Mode::Ctrl;
        assert_eq!(forward_mlm(&ctrl, &[3, 4, 2], None).unwrap().logits, a);
    }

    #[test]
    fn mode_and_length_errors() {
        let soc = model(Mode::Soc);
        assert!(matches!(forward_mlm(&soc, &[3, 4], None), Err(Error::Mode(_))));
        assert!(matches!(forward_mlm(&soc, &[3, 4], Some(&[0.0; 3])), Err(Error::Mode(_))));
        // max_len 8 leaves 7 token slots in SOC mode
        assert!(forward_mlm(&soc, &[3; 7], Some(&[0.0; 16])).is_ok());
        assert!(matches!(forward_mlm(&soc, &[3; 8], Some(&[0.0; 16])), Err(Error::InputDomain(_))));
        let none = model(Mode::None);
        assert!(forward_mlm(&none, &[3; 8], None).is_ok());
        assert!(matches!(forward_mlm(&none, &[3; 2], Some(&[0.0; 16])), Err(Error::Mode(_))));
        assert!(forward_mlm(&none, &[], None).is_err());
        assert!(forward_mlm(&none, &[99], None).is_err());
    }

    #[test]
    fn ranking_is_a_permutation_with_id_tiebreak() {
        assert_eq!(rank_by_logits(&[0.5, 1.0, 0.5, -1.0]), vec![1, 0, 2, 3]);
        let p = model(Mode::None);
        let ranked = predict_ranked(&p, &[3, 2, 4], None).unwrap();
        let mut sorted = ranked.clone();
        sorted.sort();
        assert_eq!(sorted, (0..12).collect::<Vec<u32>>());
        assert_eq!(ranked, predict_ranked(&p, &[3, 2, 4], None).unwrap());
        assert!(predict_ranked(&p, &[3, 4], None).is_err());
        assert!(predict_ranked(&p, &[2, 2], None).is_err());
    }

    #[test]
    fn padding_does_not_change_results() {
        let p = model(Mode::Soc);
        let sc = vec![0.1; 16];
        let short = [3u32, 2, 5];
        let long = [4u32, 6, 7, 8, 9];
        let alone = forward_mlm(&p, &short, Some(&sc)).unwrap().logits;
        let cache = forward_body(&p, &[SeqInput { ids: &long, sc: Some(&sc) }, SeqInput { ids: &short, sc: Some(&sc) }], None).unwrap();
        let slots = cache.frame.slots;
        let (batched, _) = head_forward(&p, &cache.hidden, (0..3).map(|i| slots + i).collect());
        for (a, b) in alone.iter().zip(batched.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn no_targets_means_zero_loss_and_gradient() {
        let p = model(Mode::None);
        let (loss, g) = loss_and_grad(&p, &[SeqInput { ids: &[3, 4], sc: None }], &[], None).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }
}
