//! Forward pass of the policy network, recorded on a [`Tape`] so the same code
//! serves inference and gradient computation.

use super::params::{AttentionIds, LstmIds};
use super::{DocumentInput, PolicyParams};
use crate::autodiff::{Matrix, Tape, Var};

/// Per-document encodings, computed once and reused at every extraction step.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub local: Var,
    pub global: Var,
    pub sentences: usize,
}

/// Extractor outputs over the remaining sentences of one step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutputs {
    /// `m x 1` raw sentence scores.
    pub scores: Var,
    /// `m x 1` per-sentence stop logits.
    pub stop_logits: Var,
}

pub struct Forward<'p> {
    pub tape: Tape,
    params: &'p PolicyParams,
    vars: Vec<Option<Var>>,
}

impl<'p> Forward<'p> {
    pub fn new(params: &'p PolicyParams) -> Self {
        Forward { tape: Tape::new(), params, vars: vec![None; params.tensors().len()] }
    }

    pub fn params(&self) -> &'p PolicyParams {
        self.params
    }

    /// Tape variable of parameter tensor `id`, registered on first use.
    pub fn param(&mut self, id: usize) -> Var {
        if let Some(v) = self.vars[id] {
            return v;
        }
        let v = self.tape.input(self.params.tensors()[id].clone());
        self.vars[id] = Some(v);
        v
    }

    /// Parameter ids with their tape variables, for those used so far.
    pub fn registered(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.vars.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v)))
    }

    fn hidden(&self) -> usize {
        self.params.config().hidden_dim
    }

    /// One LSTM direction over the rows of `inputs`; returns hidden states in row order.
    fn lstm(&mut self, ids: LstmIds, inputs: Var, reverse: bool) -> Var {
        let w_in = self.param(ids.w_input);
        let w_h = self.param(ids.w_hidden);
        let bias = self.param(ids.bias);
        let h_dim = self.tape.value(w_h).nrows();
        let projected = self.tape.matmul(inputs, w_in);
        let projected = self.tape.add_row(projected, bias);
        let steps = self.tape.value(inputs).nrows();

        let mut states = vec![None; steps];
        let mut carry: Option<(Var, Var)> = None;
        let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
        for t in order {
            let mut gates = self.tape.select_rows(projected, &[t]);
            if let Some((h, _)) = carry {
                let recur = self.tape.matmul(h, w_h);
                gates = self.tape.add(gates, recur);
            }
            let i = self.tape.slice_cols(gates, 0, h_dim);
            let i = self.tape.sigmoid(i);
            let g = self.tape.slice_cols(gates, 2 * h_dim, 3 * h_dim);
            let g = self.tape.tanh(g);
            let o = self.tape.slice_cols(gates, 3 * h_dim, 4 * h_dim);
            let o = self.tape.sigmoid(o);
            let mut c = self.tape.mul(i, g);
            if let Some((_, c_prev)) = carry {
                let f = self.tape.slice_cols(gates, h_dim, 2 * h_dim);
                let f = self.tape.sigmoid(f);
                let kept = self.tape.mul(f, c_prev);
                c = self.tape.add(c, kept);
            }
            let c_act = self.tape.tanh(c);
            let h = self.tape.mul(o, c_act);
            states[t] = Some(h);
            carry = Some((h, c));
        }
        let states: Vec<Var> = states.into_iter().map(|s| s.expect("every step visited")).collect();
        self.tape.concat_rows(&states)
    }

    fn bilstm(&mut self, fwd: LstmIds, bwd: LstmIds, inputs: Var) -> Var {
        let f = self.lstm(fwd, inputs, false);
        let b = self.lstm(bwd, inputs, true);
        self.tape.concat_cols(&[f, b])
    }

    /// Embed, run the token bi-LSTM and pool with one learned query per head.
    fn encode_sentence(&mut self, token_ids: &[usize]) -> Var {
        let layout = &self.params.layout;
        let (embedding, fwd, bwd) = (layout.embedding, layout.local_fwd, layout.local_bwd);
        let (queries, value, out_w, out_b) =
            (layout.pool_queries, layout.pool_value, layout.pool_out_w, layout.pool_out_b);
        let heads = self.params.config().heads;
        let head_dim = self.hidden() / heads;

        let table = self.param(embedding);
        let embedded = self.tape.select_rows(table, token_ids);
        let states = self.bilstm(fwd, bwd, embedded);

        let queries = self.param(queries);
        let scores = self.tape.matmul_t(queries, states);
        let weights = self.tape.softmax_rows(scores);
        let w_value = self.param(value);
        let values = self.tape.matmul(states, w_value);
        let pooled: Vec<Var> = (0..heads)
            .map(|k| {
                let w = self.tape.select_rows(weights, &[k]);
                let v = self.tape.slice_cols(values, k * head_dim, (k + 1) * head_dim);
                self.tape.matmul(w, v)
            })
            .collect();
        let pooled = self.tape.concat_cols(&pooled);
        let w_out = self.param(out_w);
        let b_out = self.param(out_b);
        let projected = self.tape.matmul(pooled, w_out);
        self.tape.add_row(projected, b_out)
    }

    /// `N x d_h` sentence embeddings.
    pub fn encode_local(&mut self, input: &DocumentInput) -> Var {
        let rows: Vec<Var> = input.token_ids.iter().map(|ids| self.encode_sentence(ids)).collect();
        self.tape.concat_rows(&rows)
    }

    /// Bi-LSTM over the sentence sequence, projected back to `d_h`.
    pub fn encode_global(&mut self, local: Var) -> Var {
        let layout = &self.params.layout;
        let (fwd, bwd, out_w, out_b) = (layout.global_fwd, layout.global_bwd, layout.global_out_w, layout.global_out_b);
        let states = self.bilstm(fwd, bwd, local);
        let w = self.param(out_w);
        let b = self.param(out_b);
        let projected = self.tape.matmul(states, w);
        self.tape.add_row(projected, b)
    }

    fn attention_layer(&mut self, ids: AttentionIds, queries: Var, memory: Option<Var>) -> Var {
        let rows = self.tape.value(queries).nrows();
        let context = match memory {
            None => {
                let null = self.param(ids.null_context);
                self.tape.broadcast_rows(null, rows)
            }
            Some(memory) => {
                let heads = self.params.config().heads;
                let head_dim = self.hidden() / heads;
                let scale = 1.0 / (head_dim as f64).sqrt();
                let (wq, wk, wv) = (self.param(ids.w_query), self.param(ids.w_key), self.param(ids.w_value));
                let q = self.tape.matmul(queries, wq);
                let k = self.tape.matmul(memory, wk);
                let v = self.tape.matmul(memory, wv);
                let per_head: Vec<Var> = (0..heads)
                    .map(|h| {
                        let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
                        let qh = self.tape.slice_cols(q, lo, hi);
                        let kh = self.tape.slice_cols(k, lo, hi);
                        let vh = self.tape.slice_cols(v, lo, hi);
                        let scores = self.tape.matmul_t(qh, kh);
                        let scores = self.tape.scale(scores, scale);
                        let weights = self.tape.softmax_rows(scores);
                        self.tape.matmul(weights, vh)
                    })
                    .collect();
                let joined = self.tape.concat_cols(&per_head);
                let wo = self.param(ids.w_out);
                let bo = self.param(ids.b_out);
                let out = self.tape.matmul(joined, wo);
                self.tape.add_row(out, bo)
            }
        };
        let residual = self.tape.add(queries, context);
        let normed = self.tape.layer_norm_rows(residual);
        let gain = self.param(ids.ln_gain);
        let bias = self.param(ids.ln_bias);
        let scaled = self.tape.mul_row(normed, gain);
        self.tape.add_row(scaled, bias)
    }

    /// Every sentence row attends over the extracted sentences' local
    /// embeddings through the stacked attention layers. With nothing
    /// extracted each layer's context is its learned null vector.
    pub fn encode_history(&mut self, local: Var, extracted: &[usize]) -> Var {
        let memory = (!extracted.is_empty()).then(|| self.tape.select_rows(local, extracted));
        let layers = self.params.layout.history.clone();
        layers.into_iter().fold(local, |x, ids| self.attention_layer(ids, x, memory))
    }

    pub fn encode(&mut self, input: &DocumentInput) -> Encoded {
        let local = self.encode_local(input);
        let global = self.encode_global(local);
        Encoded { local, global, sentences: input.len() }
    }

    /// Extractor scores for the `remaining` sentences given the extraction history.
    pub fn step(&mut self, encoded: &Encoded, extracted: &[usize], remaining: &[usize]) -> StepOutputs {
        let history = self.encode_history(encoded.local, extracted);
        let local = self.tape.select_rows(encoded.local, remaining);
        let global = self.tape.select_rows(encoded.global, remaining);
        let history = self.tape.select_rows(history, remaining);
        let features = self.tape.concat_cols(&[local, global, history]);

        let layout = &self.params.layout;
        let (hw, hb, ow, ob) = (layout.ext_hidden_w, layout.ext_hidden_b, layout.ext_out_w, layout.ext_out_b);
        let (hw, hb, ow, ob) = (self.param(hw), self.param(hb), self.param(ow), self.param(ob));
        let hidden = self.tape.matmul(features, hw);
        let hidden = self.tape.add_row(hidden, hb);
        let hidden = self.tape.tanh(hidden);
        let out = self.tape.matmul(hidden, ow);
        let out = self.tape.add_row(out, ob);
        StepOutputs { scores: self.tape.slice_cols(out, 0, 1), stop_logits: self.tape.slice_cols(out, 1, 2) }
    }

    /// Mean stop logit over the remaining sentences (`1 x 1`).
    pub fn stop_logit(&mut self, outputs: &StepOutputs) -> Var {
        self.tape.mean_rows(outputs.stop_logits)
    }

    /// `log pi(action)` for one step, on the tape. `choice` is the position of
    /// the selected sentence within `remaining`; `None` means stop.
    pub fn log_prob(&mut self, outputs: &StepOutputs, choice: Option<usize>) -> Var {
        let stop = self.stop_logit(outputs);
        let remaining = self.tape.value(outputs.scores).nrows();
        match choice {
            None => {
                let log_stop = self.tape.log_sigmoid(stop);
                let uniform = self.tape.input(Matrix::from_elem((1, 1), -(remaining as f64).ln()));
                self.tape.add(log_stop, uniform)
            }
            Some(k) => {
                let not_stop = self.tape.scale(stop, -1.0);
                let log_continue = self.tape.log_sigmoid(not_stop);
                let chosen = self.tape.select_rows(outputs.scores, &[k]);
                let log_u = self.tape.log_sigmoid(chosen);
                let u = self.tape.sigmoid(outputs.scores);
                let total = self.tape.sum(u);
                let log_total = self.tape.log(total);
                let neg_log_total = self.tape.scale(log_total, -1.0);
                let partial = self.tape.add(log_continue, log_u);
                self.tape.add(partial, neg_log_total)
            }
        }
    }
}
