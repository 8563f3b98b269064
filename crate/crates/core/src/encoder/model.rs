use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{
    add_bias, bias_grad, gelu_grad_with, gelu_parts, gemm, layernorm_backward, layernorm_forward, softmax_in_place,
};
use super::loss::{cross_entropy, head_loss, HeadGrad};
use super::params::{LayerLayout, ModelParams};
use super::{EncoderError, HeadOutput, SpanScorer};
use crate::corpus::Token;
use crate::formulate::{FormulatedInstance, Label};
use crate::rng::{stream_rng, tag};

/// Token ids of one sequence plus the rows the heads read.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedInput {
    pub ids: Vec<u32>,
    pub is_entity_pos: Option<usize>,
    pub which_type_pos: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LossTarget {
    /// Separate is-entity and which-type heads.
    Split(Label),
    /// One which-type head with a trailing "no entity" class.
    Joint(Label),
    /// Masked-token prediction: `(position, original id)` pairs.
    Mlm(Vec<(usize, u32)>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub input: EncodedInput,
    pub target: LossTarget,
}

#[derive(Clone, Debug)]
pub struct GradientResult {
    /// Mean of `per_example`.
    pub loss: f64,
    pub per_example: Vec<f64>,
    /// Gradient of `loss`, laid out like `ModelParams::data`.
    pub grad: Vec<f64>,
}

struct LayerCache {
    xhat1: Vec<f64>,
    rstd1: Vec<f64>,
    a1: Vec<f64>,
    qkv: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    mask1: Option<Vec<f64>>,
    xhat2: Vec<f64>,
    rstd2: Vec<f64>,
    a2: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
    sig: Vec<f64>,
    mask2: Option<Vec<f64>>,
}

struct Activations {
    /// `(first row, length)` of each packed sequence.
    segments: Vec<(usize, usize)>,
    /// Offset of each segment's attention probabilities within a layer.
    prob_offsets: Vec<usize>,
    mask0: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
    xhatf: Vec<f64>,
    rstdf: Vec<f64>,
    hidden: Vec<f64>,
}

fn dropout_mask(len: usize, p: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some((0..len).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect())
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
}

/// Two disjoint mutable views into the gradient buffer.
fn pair_mut<'a>(buf: &'a mut [f64], a: &std::ops::Range<usize>, b: &std::ops::Range<usize>) -> (&'a mut [f64], &'a mut [f64]) {
    assert!(a.end <= b.start, "ranges must be ordered and disjoint");
    let (lo, hi) = buf.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

impl ModelParams {
    pub fn encode_tokens(&self, tokens: &[Token]) -> Vec<u32> {
        tokens.iter().map(|t| self.config.vocab.id(t.as_str())).collect()
    }

    pub fn encode(&self, inst: &FormulatedInstance) -> Result<EncodedInput, EncoderError> {
        let input = EncodedInput {
            ids: self.encode_tokens(&inst.tokens),
            is_entity_pos: inst.is_entity_pos,
            which_type_pos: inst.which_type_pos,
        };
        if input.which_type_pos.is_none() {
            return Err(EncoderError::MissingSlot);
        }
        self.check_input(&input)?;
        Ok(input)
    }

    fn check_input(&self, input: &EncodedInput) -> Result<(), EncoderError> {
        let len = input.ids.len();
        if len == 0 || len > self.config.max_len {
            return Err(EncoderError::TooLong { len, max_len: self.config.max_len });
        }
        for pos in [input.is_entity_pos, input.which_type_pos].into_iter().flatten() {
            if pos >= len {
                return Err(EncoderError::PositionOutOfRange { pos, len });
            }
        }
        if let Some(&bad) = input.ids.iter().find(|&&id| id as usize >= self.config.vocab.len()) {
            return Err(EncoderError::Config(format!("token id {bad} outside the vocabulary")));
        }
        Ok(())
    }

    fn forward(&self, inputs: &[&EncodedInput], mut rng: Option<&mut ChaCha8Rng>) -> Activations {
        let cfg = &self.config;
        let lay = &self.layout;
        let d = cfg.dim;
        let f = d * cfg.ffn_mult;
        let heads = cfg.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let p = cfg.dropout;

        let mut segments = Vec::with_capacity(inputs.len());
        let mut prob_offsets = Vec::with_capacity(inputs.len());
        let mut rows = 0;
        let mut probs_len = 0;
        for inp in inputs {
            let len = inp.ids.len();
            segments.push((rows, len));
            prob_offsets.push(probs_len);
            rows += len;
            probs_len += heads * len * len;
        }

        let tok = self.slice(&lay.tok_emb);
        let pos = self.slice(&lay.pos_emb);
        let mut x = vec![0.0; rows * d];
        for (inp, &(start, _)) in inputs.iter().zip(&segments) {
            for (t, &id) in inp.ids.iter().enumerate() {
                let row = &mut x[(start + t) * d..(start + t + 1) * d];
                let e = &tok[id as usize * d..(id as usize + 1) * d];
                let pe = &pos[t * d..(t + 1) * d];
                for j in 0..d {
                    row[j] = e[j] + pe[j];
                }
            }
        }
        let mask0 = dropout_mask(rows * d, p, rng.as_deref_mut());
        apply_mask(&mut x, &mask0);

        let mut layers = Vec::with_capacity(cfg.layers);
        for l in &lay.layers {
            let mut a1 = vec![0.0; rows * d];
            let mut xhat1 = vec![0.0; rows * d];
            let mut rstd1 = vec![0.0; rows];
            layernorm_forward(&x, self.slice(&l.ln1_g), self.slice(&l.ln1_b), &mut a1, &mut xhat1, &mut rstd1);

            let mut qkv = vec![0.0; rows * 3 * d];
            gemm(rows, d, 3 * d, &a1, false, self.slice(&l.w_qkv), false, &mut qkv, false);
            add_bias(&mut qkv, self.slice(&l.b_qkv));

            let mut probs = vec![0.0; probs_len];
            let mut ctx = vec![0.0; rows * d];
            for (&(start, len), &off) in segments.iter().zip(&prob_offsets) {
                let seg = &qkv[start * 3 * d..(start + len) * 3 * d];
                let cseg = &mut ctx[start * d..(start + len) * d];
                for h in 0..heads {
                    let pbase = off + h * len * len;
                    let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
                    for i in 0..len {
                        let qi = &seg[i * 3 * d + qo..i * 3 * d + qo + dh];
                        let prow = &mut probs[pbase + i * len..pbase + (i + 1) * len];
                        for (j, pj) in prow.iter_mut().enumerate() {
                            let kj = &seg[j * 3 * d + ko..j * 3 * d + ko + dh];
                            *pj = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        }
                        softmax_in_place(prow);
                        let ci = &mut cseg[i * d + qo..i * d + qo + dh];
                        for (j, &pj) in prow.iter().enumerate() {
                            let vj = &seg[j * 3 * d + vo..j * 3 * d + vo + dh];
                            ci.iter_mut().zip(vj).for_each(|(c, v)| *c += pj * v);
                        }
                    }
                }
            }

            let mut o = vec![0.0; rows * d];
            gemm(rows, d, d, &ctx, false, self.slice(&l.w_o), false, &mut o, false);
            add_bias(&mut o, self.slice(&l.b_o));
            let mask1 = dropout_mask(rows * d, p, rng.as_deref_mut());
            apply_mask(&mut o, &mask1);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);

            let mut a2 = vec![0.0; rows * d];
            let mut xhat2 = vec![0.0; rows * d];
            let mut rstd2 = vec![0.0; rows];
            layernorm_forward(&x, self.slice(&l.ln2_g), self.slice(&l.ln2_b), &mut a2, &mut xhat2, &mut rstd2);

            let mut u = vec![0.0; rows * f];
            gemm(rows, d, f, &a2, false, self.slice(&l.w_fc1), false, &mut u, false);
            add_bias(&mut u, self.slice(&l.b_fc1));
            let (g, sig): (Vec<f64>, Vec<f64>) = u.iter().map(|&v| gelu_parts(v)).unzip();
            let mut z = vec![0.0; rows * d];
            gemm(rows, f, d, &g, false, self.slice(&l.w_fc2), false, &mut z, false);
            add_bias(&mut z, self.slice(&l.b_fc2));
            let mask2 = dropout_mask(rows * d, p, rng.as_deref_mut());
            apply_mask(&mut z, &mask2);
            x.iter_mut().zip(&z).for_each(|(a, b)| *a += b);

            layers.push(LayerCache { xhat1, rstd1, a1, qkv, probs, ctx, mask1, xhat2, rstd2, a2, u, g, sig, mask2 });
        }

        let mut hidden = vec![0.0; rows * d];
        let mut xhatf = vec![0.0; rows * d];
        let mut rstdf = vec![0.0; rows];
        layernorm_forward(&x, self.slice(&lay.lnf_g), self.slice(&lay.lnf_b), &mut hidden, &mut xhatf, &mut rstdf);

        Activations { segments, prob_offsets, mask0, layers, xhatf, rstdf, hidden }
    }

    fn linear_head(&self, h: &[f64], w: &std::ops::Range<usize>, b: &std::ops::Range<usize>) -> Vec<f64> {
        let width = b.len();
        let w = self.slice(w);
        let mut out = self.slice(b).to_vec();
        for (k, &hk) in h.iter().enumerate() {
            let wr = &w[k * width..(k + 1) * width];
            out.iter_mut().zip(wr).for_each(|(o, wv)| *o += hk * wv);
        }
        out
    }

    fn head_output(&self, acts: &Activations, seg: usize, input: &EncodedInput) -> HeadOutput {
        let d = self.config.dim;
        let start = acts.segments[seg].0;
        let row = |p: usize| &acts.hidden[(start + p) * d..(start + p + 1) * d];
        let lay = &self.layout;
        let is_entity_logits = input.is_entity_pos.map(|p| {
            let v = self.linear_head(row(p), &lay.ent_w, &lay.ent_b);
            [v[0], v[1]]
        });
        let which_type_logits = input
            .which_type_pos
            .map(|p| self.linear_head(row(p), &lay.type_w, &lay.type_b))
            .unwrap_or_default();
        HeadOutput { is_entity_logits, which_type_logits }
    }

    /// Final-layer hidden states of one sequence in eval mode, row-major
    /// `len × dim`.
    pub fn hidden_states(&self, input: &EncodedInput) -> Result<Vec<f64>, EncoderError> {
        self.check_input(input)?;
        Ok(self.forward(&[input], None).hidden)
    }

    /// Eval-mode head outputs.
    pub fn score_inputs(&self, inputs: &[EncodedInput]) -> Result<Vec<HeadOutput>, EncoderError> {
        self.score_inputs_with(inputs, None)
    }

    /// Head outputs in train mode: dropout masks come from a stream seeded
    /// by `dropout_seed`, so the same seed reproduces the same outputs.
    pub fn score_inputs_train(&self, inputs: &[EncodedInput], dropout_seed: u64) -> Result<Vec<HeadOutput>, EncoderError> {
        let mut rng = stream_rng(dropout_seed, &[tag::DROPOUT]);
        self.score_inputs_with(inputs, Some(&mut rng))
    }

    fn score_inputs_with(&self, inputs: &[EncodedInput], rng: Option<&mut ChaCha8Rng>) -> Result<Vec<HeadOutput>, EncoderError> {
        for i in inputs {
            self.check_input(i)?;
        }
        let refs: Vec<&EncodedInput> = inputs.iter().collect();
        let acts = self.forward(&refs, rng);
        let out: Vec<HeadOutput> = inputs.iter().enumerate().map(|(s, i)| self.head_output(&acts, s, i)).collect();
        if out.iter().any(|o| {
            o.which_type_logits.iter().any(|v| !v.is_finite())
                || o.is_entity_logits.is_some_and(|e| e.iter().any(|v| !v.is_finite()))
        }) {
            return Err(EncoderError::NonFinite("logits"));
        }
        Ok(out)
    }

    fn mlm_logits(&self, acts: &Activations, seg: usize, positions: &[(usize, u32)]) -> Vec<f64> {
        let d = self.config.dim;
        let v = self.config.vocab.len();
        let start = acts.segments[seg].0;
        let mut rows = Vec::with_capacity(positions.len() * d);
        for &(p, _) in positions {
            rows.extend_from_slice(&acts.hidden[(start + p) * d..(start + p + 1) * d]);
        }
        let mut logits = vec![0.0; positions.len() * v];
        gemm(positions.len(), d, v, &rows, false, self.slice(&self.layout.tok_emb), true, &mut logits, false);
        add_bias(&mut logits, self.slice(&self.layout.mlm_b));
        logits
    }

    fn check_target(&self, ex: &TrainExample) -> Result<(), EncoderError> {
        self.check_input(&ex.input)?;
        match &ex.target {
            LossTarget::Mlm(pos) => {
                if pos.is_empty() {
                    return Err(EncoderError::LabelMismatch("masked-token target with no positions".into()));
                }
                for &(p, id) in pos {
                    if p >= ex.input.ids.len() || id as usize >= self.config.vocab.len() {
                        return Err(EncoderError::LabelMismatch(format!("bad masked-token target ({p}, {id})")));
                    }
                }
            }
            LossTarget::Split(_) | LossTarget::Joint(_) => {
                if ex.input.which_type_pos.is_none() {
                    return Err(EncoderError::MissingSlot);
                }
                let joint = matches!(ex.target, LossTarget::Joint(_));
                if joint != self.config.joint_none_class {
                    return Err(EncoderError::LabelMismatch("target head layout differs from the model's".into()));
                }
            }
        }
        Ok(())
    }

    /// Per-example losses in eval mode (or with the given dropout seed).
    pub fn example_losses(&self, batch: &[TrainExample], dropout_seed: Option<u64>) -> Result<Vec<f64>, EncoderError> {
        Ok(self.losses_and_grads(batch, dropout_seed, false)?.per_example)
    }

    /// Mean loss over `batch` and its gradient with respect to every
    /// parameter. Fails on non-finite loss or gradient.
    pub fn gradient(&self, batch: &[TrainExample], dropout_seed: Option<u64>) -> Result<GradientResult, EncoderError> {
        self.losses_and_grads(batch, dropout_seed, true)
    }

    fn losses_and_grads(&self, batch: &[TrainExample], dropout_seed: Option<u64>, backprop: bool) -> Result<GradientResult, EncoderError> {
        if batch.is_empty() {
            return Err(EncoderError::EmptyBatch);
        }
        for ex in batch {
            self.check_target(ex)?;
        }
        let mut rng = dropout_seed.map(|s| stream_rng(s, &[tag::DROPOUT]));
        let refs: Vec<&EncodedInput> = batch.iter().map(|e| &e.input).collect();
        let acts = self.forward(&refs, rng.as_mut());

        let d = self.config.dim;
        let v = self.config.vocab.len();
        let inv_b = 1.0 / batch.len() as f64;
        let mut per_example = Vec::with_capacity(batch.len());
        let mut grad = if backprop { vec![0.0; self.layout.total] } else { Vec::new() };
        let mut dhidden = if backprop { vec![0.0; acts.hidden.len()] } else { Vec::new() };

        for (seg, ex) in batch.iter().enumerate() {
            let start = acts.segments[seg].0;
            match &ex.target {
                LossTarget::Split(label) | LossTarget::Joint(label) => {
                    let out = self.head_output(&acts, seg, &ex.input);
                    let joint = matches!(ex.target, LossTarget::Joint(_));
                    let (loss, hg) = head_loss(&out, *label, joint)?;
                    per_example.push(loss);
                    if backprop {
                        self.head_backward(&acts, start, &ex.input, &hg, inv_b, &mut grad, &mut dhidden);
                    }
                }
                LossTarget::Mlm(positions) => {
                    let logits = self.mlm_logits(&acts, seg, positions);
                    let inv_p = 1.0 / positions.len() as f64;
                    let mut loss = 0.0;
                    let mut dlogits = vec![0.0; logits.len()];
                    for (k, &(_, target)) in positions.iter().enumerate() {
                        let (l, g) = cross_entropy(&logits[k * v..(k + 1) * v], target as usize);
                        loss += l * inv_p;
                        dlogits[k * v..(k + 1) * v].iter_mut().zip(g).for_each(|(dl, gv)| *dl = gv * inv_p * inv_b);
                    }
                    per_example.push(loss);
                    if backprop {
                        let np = positions.len();
                        let mut rows = Vec::with_capacity(np * d);
                        for &(p, _) in positions {
                            rows.extend_from_slice(&acts.hidden[(start + p) * d..(start + p + 1) * d]);
                        }
                        let lay = &self.layout;
                        gemm(v, np, d, &dlogits, true, &rows, false, &mut grad[lay.tok_emb.clone()], true);
                        bias_grad(&mut grad[lay.mlm_b.clone()], &dlogits);
                        let mut drows = vec![0.0; np * d];
                        gemm(np, v, d, &dlogits, false, self.slice(&lay.tok_emb), false, &mut drows, false);
                        for (k, &(p, _)) in positions.iter().enumerate() {
                            let dst = &mut dhidden[(start + p) * d..(start + p + 1) * d];
                            dst.iter_mut().zip(&drows[k * d..(k + 1) * d]).for_each(|(a, b)| *a += b);
                        }
                    }
                }
            }
        }

        let loss = per_example.iter().sum::<f64>() * inv_b;
        if !loss.is_finite() {
            return Err(EncoderError::NonFinite("loss"));
        }
        if backprop {
            self.backward(&acts, &refs, &dhidden, &mut grad);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(EncoderError::NonFinite("gradient"));
            }
        }
        Ok(GradientResult { loss, per_example, grad })
    }

    #[allow(clippy::too_many_arguments)]
    fn head_backward(
        &self,
        acts: &Activations,
        start: usize,
        input: &EncodedInput,
        hg: &HeadGrad,
        scale: f64,
        grad: &mut [f64],
        dhidden: &mut [f64],
    ) {
        let d = self.config.dim;
        let lay = &self.layout;
        let mut one = |pos: usize, dl: &[f64], w: &std::ops::Range<usize>, b: &std::ops::Range<usize>| {
            let width = dl.len();
            let h = &acts.hidden[(start + pos) * d..(start + pos + 1) * d];
            let wv = self.slice(w);
            let dh = &mut dhidden[(start + pos) * d..(start + pos + 1) * d];
            for k in 0..d {
                let mut acc = 0.0;
                for c in 0..width {
                    grad[w.start + k * width + c] += h[k] * dl[c] * scale;
                    acc += wv[k * width + c] * dl[c];
                }
                dh[k] += acc * scale;
            }
            for c in 0..width {
                grad[b.start + c] += dl[c] * scale;
            }
        };
        if let (Some(p), Some(dl)) = (input.is_entity_pos, hg.is_entity) {
            one(p, &dl, &lay.ent_w, &lay.ent_b);
        }
        if let (Some(p), Some(dl)) = (input.which_type_pos, hg.which_type.as_ref()) {
            one(p, dl, &lay.type_w, &lay.type_b);
        }
    }

    fn backward(&self, acts: &Activations, inputs: &[&EncodedInput], dhidden: &[f64], grad: &mut [f64]) {
        let cfg = &self.config;
        let lay = &self.layout;
        let d = cfg.dim;
        let f = d * cfg.ffn_mult;
        let heads = cfg.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let rows = acts.hidden.len() / d;

        let mut dx = vec![0.0; rows * d];
        {
            let (dg, db) = pair_mut(grad, &lay.lnf_g, &lay.lnf_b);
            layernorm_backward(dhidden, &acts.xhatf, &acts.rstdf, self.slice(&lay.lnf_g), &mut dx, dg, db);
        }

        for (l, c) in lay.layers.iter().zip(&acts.layers).rev() {
            self.layer_backward(l, c, acts, &mut dx, grad, rows, d, f, heads, dh, scale);
        }

        apply_mask(&mut dx, &acts.mask0);
        for (inp, &(start, _)) in inputs.iter().zip(&acts.segments) {
            for (t, &id) in inp.ids.iter().enumerate() {
                let src = &dx[(start + t) * d..(start + t + 1) * d];
                let te = lay.tok_emb.start + id as usize * d;
                let pe = lay.pos_emb.start + t * d;
                for j in 0..d {
                    grad[te + j] += src[j];
                    grad[pe + j] += src[j];
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward(
        &self,
        l: &LayerLayout,
        c: &LayerCache,
        acts: &Activations,
        dx: &mut [f64],
        grad: &mut [f64],
        rows: usize,
        d: usize,
        f: usize,
        heads: usize,
        dh: usize,
        scale: f64,
    ) {
        // x_out = x_mid + dropout(g W2 + b2)
        let mut dz = dx.to_vec();
        apply_mask(&mut dz, &c.mask2);
        gemm(f, rows, d, &c.g, true, &dz, false, &mut grad[l.w_fc2.clone()], true);
        bias_grad(&mut grad[l.b_fc2.clone()], &dz);
        let mut du = vec![0.0; rows * f];
        gemm(rows, d, f, &dz, false, self.slice(&l.w_fc2), true, &mut du, false);
        du.iter_mut().zip(c.u.iter().zip(&c.sig)).for_each(|(g, (&u, &s))| *g *= gelu_grad_with(u, s));
        gemm(d, rows, f, &c.a2, true, &du, false, &mut grad[l.w_fc1.clone()], true);
        bias_grad(&mut grad[l.b_fc1.clone()], &du);
        let mut da2 = vec![0.0; rows * d];
        gemm(rows, f, d, &du, false, self.slice(&l.w_fc1), true, &mut da2, false);
        {
            let (dg, db) = pair_mut(grad, &l.ln2_g, &l.ln2_b);
            layernorm_backward(&da2, &c.xhat2, &c.rstd2, self.slice(&l.ln2_g), dx, dg, db);
        }

        // x_mid = x_in + dropout(ctx Wo + bo)
        let mut dout = dx.to_vec();
        apply_mask(&mut dout, &c.mask1);
        gemm(d, rows, d, &c.ctx, true, &dout, false, &mut grad[l.w_o.clone()], true);
        bias_grad(&mut grad[l.b_o.clone()], &dout);
        let mut dctx = vec![0.0; rows * d];
        gemm(rows, d, d, &dout, false, self.slice(&l.w_o), true, &mut dctx, false);

        let mut dqkv = vec![0.0; rows * 3 * d];
        let mut dp = Vec::new();
        let mut dqi = vec![0.0; dh];
        for (&(start, len), &off) in acts.segments.iter().zip(&acts.prob_offsets) {
            dp.resize(len, 0.0);
            let qkv = &c.qkv[start * 3 * d..(start + len) * 3 * d];
            let dseg = &mut dqkv[start * 3 * d..(start + len) * 3 * d];
            for h in 0..heads {
                let pbase = off + h * len * len;
                let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
                for i in 0..len {
                    let prow = &c.probs[pbase + i * len..pbase + (i + 1) * len];
                    let dci = &dctx[(start + i) * d + h * dh..][..dh];
                    for ((j, dpj), &pj) in dp.iter_mut().enumerate().zip(prow) {
                        let row = j * 3 * d;
                        let vj = &qkv[row + vo..row + vo + dh];
                        *dpj = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                        let dvj = &mut dseg[row + vo..row + vo + dh];
                        dvj.iter_mut().zip(dci).for_each(|(dv, g)| *dv += pj * g);
                    }
                    let row_dot: f64 = prow.iter().zip(dp.iter()).map(|(p, g)| p * g).sum();
                    let qi = &qkv[i * 3 * d + qo..i * 3 * d + qo + dh];
                    dqi.iter_mut().for_each(|v| *v = 0.0);
                    for (j, (&pj, &dpj)) in prow.iter().zip(dp.iter()).enumerate() {
                        let ds = pj * (dpj - row_dot) * scale;
                        let row = j * 3 * d;
                        let kj = &qkv[row + ko..row + ko + dh];
                        dqi.iter_mut().zip(kj).for_each(|(a, &k)| *a += ds * k);
                        let dkj = &mut dseg[row + ko..row + ko + dh];
                        dkj.iter_mut().zip(qi).for_each(|(a, &q)| *a += ds * q);
                    }
                    let dq = &mut dseg[i * 3 * d + qo..i * 3 * d + qo + dh];
                    dq.iter_mut().zip(&dqi).for_each(|(a, b)| *a += b);
                }
            }
        }

        gemm(d, rows, 3 * d, &c.a1, true, &dqkv, false, &mut grad[l.w_qkv.clone()], true);
        bias_grad(&mut grad[l.b_qkv.clone()], &dqkv);
        let mut da1 = vec![0.0; rows * d];
        gemm(rows, 3 * d, d, &dqkv, false, self.slice(&l.w_qkv), true, &mut da1, false);
        let (dg, db) = pair_mut(grad, &l.ln1_g, &l.ln1_b);
        layernorm_backward(&da1, &c.xhat1, &c.rstd1, self.slice(&l.ln1_g), dx, dg, db);
    }
}

impl SpanScorer for ModelParams {
    fn type_count(&self) -> usize {
        self.config.type_count
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn mask_token(&self) -> &str {
        self.config.vocab.mask_token()
    }

    fn score_batch(&self, instances: &[FormulatedInstance]) -> Result<Vec<HeadOutput>, EncoderError> {
        let inputs = instances.iter().map(|i| self.encode(i)).collect::<Result<Vec<_>, _>>()?;
        self.score_inputs(&inputs)
    }
}
