//! Recurrent semantic decoder: received density maps in, vehicle counts out.
//!
//! Each frame's map Z is flattened, linearly projected, and fed through
//! stacked peephole LSTM layers; a fully connected head maps the final
//! hidden state to a scalar, and a partial residual adds `p * sum(Z)`, so
//! the network only learns the correction on top of the map-implied count.
//!
//! Two implementations of the cell exist on purpose: [`lstm_cell_step`]
//! works on plain slices and serves as the reference the graph-based
//! [`CountDecoder::decode`] is checked against (they match bit for bit).

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, ParamId, ParamStore};
use crate::scalar::{real, Scalar};
use crate::tensor::Tensor;

/// Decoder hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    /// Stacked LSTM layers.
    pub layers: usize,
    /// Hidden (and cell) width per layer.
    pub hidden: usize,
    /// Partial-residual weight in [0, 1].
    pub p: f64,
    /// Width of the learned projection from the flattened map.
    pub input_size: usize,
    /// Frames per sequence; state resets to zero at sequence start.
    pub sequence_length: usize,
    /// Dropout rate applied between stacked layers during training.
    pub dropout: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { layers: 3, hidden: 100, p: 0.8, input_size: 128, sequence_length: 4, dropout: 0.1 }
    }
}

impl DecoderConfig {
    /// Tiny config for gradient checks.
    pub fn micro() -> Self {
        Self { layers: 2, hidden: 5, p: 0.8, input_size: 6, sequence_length: 2, dropout: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.input_size == 0 || self.sequence_length == 0
        {
            return Err(Error::Config("decoder sizes must be positive".into()));
        }
        check_p(self.p)?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }

    /// Replace the residual weight; rejects values outside [0, 1].
    pub fn set_p(&mut self, p: f64) -> Result<()> {
        check_p(p)?;
        self.p = p;
        Ok(())
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain("residual weight", format!("p = {} outside [0,1]", p)));
    }
    Ok(())
}

/// Cell and hidden vectors of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<F: Scalar> {
    pub c: Vec<F>,
    pub h: Vec<F>,
}

impl<F: Scalar> LstmState<F> {
    pub fn zeros(hidden: usize) -> Self {
        Self { c: vec![F::zero(); hidden], h: vec![F::zero(); hidden] }
    }
}

/// Plain-slice parameters of one peephole LSTM cell. Matrix weights are
/// row-major `[rows, hidden]`; peephole weights act diagonally on the cell.
#[derive(Debug, Clone)]
pub struct LstmCellParams<F: Scalar> {
    pub input_size: usize,
    pub hidden: usize,
    pub w_xi: Vec<F>,
    pub w_hi: Vec<F>,
    pub w_ci: Vec<F>,
    pub w_xf: Vec<F>,
    pub w_hf: Vec<F>,
    pub w_cf: Vec<F>,
    pub w_xo: Vec<F>,
    pub w_ho: Vec<F>,
    pub w_co: Vec<F>,
    pub w_xc: Vec<F>,
    pub w_hc: Vec<F>,
    pub b_i: Vec<F>,
    pub b_f: Vec<F>,
    pub b_o: Vec<F>,
    pub b_c: Vec<F>,
}

impl<F: Scalar> LstmCellParams<F> {
    /// All-zero parameters (useful for the closed-form gate examples).
    pub fn zeros(input_size: usize, hidden: usize) -> Self {
        Self {
            input_size,
            hidden,
            w_xi: vec![F::zero(); input_size * hidden],
            w_hi: vec![F::zero(); hidden * hidden],
            w_ci: vec![F::zero(); hidden],
            w_xf: vec![F::zero(); input_size * hidden],
            w_hf: vec![F::zero(); hidden * hidden],
            w_cf: vec![F::zero(); hidden],
            w_xo: vec![F::zero(); input_size * hidden],
            w_ho: vec![F::zero(); hidden * hidden],
            w_co: vec![F::zero(); hidden],
            w_xc: vec![F::zero(); input_size * hidden],
            w_hc: vec![F::zero(); hidden * hidden],
            b_i: vec![F::zero(); hidden],
            b_f: vec![F::zero(); hidden],
            b_o: vec![F::zero(); hidden],
            b_c: vec![F::zero(); hidden],
        }
    }
}

fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// `out[j] = sum_l x[l] * w[l*cols + j]`, accumulating in ascending l like
/// the graph matmul, so both routes round identically.
fn matvec<F: Scalar>(x: &[F], w: &[F], cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); cols];
    for (l, &xl) in x.iter().enumerate() {
        for (j, o) in out.iter_mut().enumerate() {
            *o += xl * w[l * cols + j];
        }
    }
    out
}

/// One peephole LSTM step on plain slices:
/// gates see the cell state (previous for i and f, updated for o), so
///   i = sigma(xW_xi + hW_hi + c.w_ci + b_i)
///   f = sigma(xW_xf + hW_hf + c.w_cf + b_f)
///   c' = f.c + i.tanh(xW_xc + hW_hc + b_c)
///   o = sigma(xW_xo + hW_ho + c'.w_co + b_o)
///   h' = o.tanh(c')
pub fn lstm_cell_step<F: Scalar>(
    x: &[F],
    state: &LstmState<F>,
    params: &LstmCellParams<F>,
) -> Result<LstmState<F>> {
    let (n_in, h) = (params.input_size, params.hidden);
    if x.len() != n_in {
        return Err(Error::shape("lstm_cell_step", format!("input {} vs {}", x.len(), n_in)));
    }
    if state.c.len() != h || state.h.len() != h {
        return Err(Error::shape(
            "lstm_cell_step",
            format!("state ({}, {}) vs hidden {}", state.c.len(), state.h.len(), h),
        ));
    }
    let xi = matvec(x, &params.w_xi, h);
    let hi = matvec(&state.h, &params.w_hi, h);
    let xf = matvec(x, &params.w_xf, h);
    let hf = matvec(&state.h, &params.w_hf, h);
    let xo = matvec(x, &params.w_xo, h);
    let ho = matvec(&state.h, &params.w_ho, h);
    let xc = matvec(x, &params.w_xc, h);
    let hc = matvec(&state.h, &params.w_hc, h);

    let mut c_new = vec![F::zero(); h];
    let mut h_new = vec![F::zero(); h];
    for j in 0..h {
        let i_gate = sigmoid(((xi[j] + hi[j]) + state.c[j] * params.w_ci[j]) + params.b_i[j]);
        let f_gate = sigmoid(((xf[j] + hf[j]) + state.c[j] * params.w_cf[j]) + params.b_f[j]);
        let c_tilde = ((xc[j] + hc[j]) + params.b_c[j]).tanh();
        let c = f_gate * state.c[j] + i_gate * c_tilde;
        let o_gate = sigmoid(((xo[j] + ho[j]) + c * params.w_co[j]) + params.b_o[j]);
        c_new[j] = c;
        h_new[j] = o_gate * c.tanh();
    }
    Ok(LstmState { c: c_new, h: h_new })
}

struct LayerIds {
    w_xi: ParamId,
    w_hi: ParamId,
    w_ci: ParamId,
    w_xf: ParamId,
    w_hf: ParamId,
    w_cf: ParamId,
    w_xo: ParamId,
    w_ho: ParamId,
    w_co: ParamId,
    w_xc: ParamId,
    w_hc: ParamId,
    b_i: ParamId,
    b_f: ParamId,
    b_o: ParamId,
    b_c: ParamId,
}

/// Graph-route decoder holding parameter handles.
pub struct CountDecoder<F: Scalar> {
    config: DecoderConfig,
    map_len: usize,
    proj_w: ParamId,
    proj_b: ParamId,
    layers: Vec<LayerIds>,
    head_w: ParamId,
    head_b: ParamId,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Scalar> CountDecoder<F> {
    pub fn new(
        config: DecoderConfig,
        map_len: usize,
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        if map_len == 0 {
            return Err(Error::Config("map length must be positive".into()));
        }
        let h = config.hidden;
        let mat = |store: &mut ParamStore<F>, rows: usize, rng: &mut ChaCha8Rng| {
            store.register(Tensor::uniform(&[rows, h], 1.0 / (rows as f64).sqrt(), rng))
        };
        let diag = |store: &mut ParamStore<F>, rng: &mut ChaCha8Rng| {
            store.register(Tensor::uniform(&[h], 1.0 / (h as f64).sqrt(), rng))
        };

        let proj_bound = 1.0 / (map_len as f64).sqrt();
        let proj_w =
            store.register(Tensor::uniform(&[map_len, config.input_size], proj_bound, rng));
        let proj_b = store.register(Tensor::zeros(&[config.input_size]));

        let mut layers = Vec::with_capacity(config.layers);
        let mut in_size = config.input_size;
        for _ in 0..config.layers {
            layers.push(LayerIds {
                w_xi: mat(store, in_size, rng),
                w_hi: mat(store, h, rng),
                w_ci: diag(store, rng),
                w_xf: mat(store, in_size, rng),
                w_hf: mat(store, h, rng),
                w_cf: diag(store, rng),
                w_xo: mat(store, in_size, rng),
                w_ho: mat(store, h, rng),
                w_co: diag(store, rng),
                w_xc: mat(store, in_size, rng),
                w_hc: mat(store, h, rng),
                b_i: store.register(Tensor::zeros(&[h])),
                // forget gates start open so early gradients reach back in time
                b_f: store.register(Tensor::filled(&[h], F::one())),
                b_o: store.register(Tensor::zeros(&[h])),
                b_c: store.register(Tensor::zeros(&[h])),
            });
            in_size = h;
        }

        let head_w = store.register(Tensor::uniform(&[h, 1], 1.0 / (h as f64).sqrt(), rng));
        let head_b = store.register(Tensor::zeros(&[1]));

        Ok(Self {
            config,
            map_len,
            proj_w,
            proj_b,
            layers,
            head_w,
            head_b,
            _marker: std::marker::PhantomData,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn map_len(&self) -> usize {
        self.map_len
    }

    /// Change the residual weight without touching parameters.
    pub fn set_p(&mut self, p: f64) -> Result<()> {
        self.config.set_p(p)
    }

    /// Change the between-layer dropout rate without touching parameters.
    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::domain("set_dropout", format!("rate {} outside [0,1)", rate)));
        }
        self.config.dropout = rate;
        Ok(())
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.proj_w, self.proj_b];
        for l in &self.layers {
            ids.extend([
                l.w_xi, l.w_hi, l.w_ci, l.w_xf, l.w_hf, l.w_cf, l.w_xo, l.w_ho, l.w_co, l.w_xc,
                l.w_hc, l.b_i, l.b_f, l.b_o, l.b_c,
            ]);
        }
        ids.extend([self.head_w, self.head_b]);
        ids
    }

    /// Copy one layer's parameters out as plain slices for the reference
    /// cell implementation.
    pub fn cell_params(&self, store: &ParamStore<F>, layer: usize) -> LstmCellParams<F> {
        let l = &self.layers[layer];
        let input_size = if layer == 0 { self.config.input_size } else { self.config.hidden };
        let v = |id: ParamId| store.value(id).data().to_vec();
        LstmCellParams {
            input_size,
            hidden: self.config.hidden,
            w_xi: v(l.w_xi),
            w_hi: v(l.w_hi),
            w_ci: v(l.w_ci),
            w_xf: v(l.w_xf),
            w_hf: v(l.w_hf),
            w_cf: v(l.w_cf),
            w_xo: v(l.w_xo),
            w_ho: v(l.w_ho),
            w_co: v(l.w_co),
            w_xc: v(l.w_xc),
            w_hc: v(l.w_hc),
            b_i: v(l.b_i),
            b_f: v(l.b_f),
            b_o: v(l.b_o),
            b_c: v(l.b_c),
        }
    }

    /// Projection weights as plain slices (row-major `[map_len, input_size]`).
    pub fn projection_params(&self, store: &ParamStore<F>) -> (Vec<F>, Vec<F>) {
        (store.value(self.proj_w).data().to_vec(), store.value(self.proj_b).data().to_vec())
    }

    /// Head weights as plain slices (`[hidden, 1]`).
    pub fn head_params(&self, store: &ParamStore<F>) -> (Vec<F>, Vec<F>) {
        (store.value(self.head_w).data().to_vec(), store.value(self.head_b).data().to_vec())
    }

    /// Decode a batch of whole sequences: `z` is `[B, map_len]` with rows in
    /// frame order (sequence-major, `B = sequences * sequence_length`);
    /// returns counts `[B, 1]` in the same order.
    pub fn decode(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        z: NodeId,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        let shape = g.value(z).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.map_len {
            return Err(Error::shape(
                "decode",
                format!("expected [B,{}], got {:?}", self.map_len, shape),
            ));
        }
        let t_len = self.config.sequence_length;
        let batch = shape[0];
        if batch == 0 || batch % t_len != 0 {
            return Err(Error::shape(
                "decode",
                format!("{} rows do not form whole sequences of length {}", batch, t_len),
            ));
        }
        let seqs = batch / t_len;
        let h = self.config.hidden;
        let p = real::<F>(self.config.p);

        let proj_w = g.param(store, self.proj_w);
        let proj_b = g.param(store, self.proj_b);
        let head_w = g.param(store, self.head_w);
        let head_b = g.param(store, self.head_b);
        struct LayerNodes {
            w_xi: NodeId,
            w_hi: NodeId,
            w_ci: NodeId,
            w_xf: NodeId,
            w_hf: NodeId,
            w_cf: NodeId,
            w_xo: NodeId,
            w_ho: NodeId,
            w_co: NodeId,
            w_xc: NodeId,
            w_hc: NodeId,
            b_i: NodeId,
            b_f: NodeId,
            b_o: NodeId,
            b_c: NodeId,
        }
        let layer_nodes: Vec<LayerNodes> = self
            .layers
            .iter()
            .map(|l| LayerNodes {
                w_xi: g.param(store, l.w_xi),
                w_hi: g.param(store, l.w_hi),
                w_ci: g.param(store, l.w_ci),
                w_xf: g.param(store, l.w_xf),
                w_hf: g.param(store, l.w_hf),
                w_cf: g.param(store, l.w_cf),
                w_xo: g.param(store, l.w_xo),
                w_ho: g.param(store, l.w_ho),
                w_co: g.param(store, l.w_co),
                w_xc: g.param(store, l.w_xc),
                w_hc: g.param(store, l.w_hc),
                b_i: g.param(store, l.b_i),
                b_f: g.param(store, l.b_f),
                b_o: g.param(store, l.b_o),
                b_c: g.param(store, l.b_c),
            })
            .collect();

        let mut states: Vec<(NodeId, NodeId)> = (0..self.config.layers)
            .map(|_| {
                let c = g.constant(Tensor::zeros(&[seqs, h]));
                let hh = g.constant(Tensor::zeros(&[seqs, h]));
                (c, hh)
            })
            .collect();

        let mut per_step: Vec<NodeId> = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let rows: Vec<usize> = (0..seqs).map(|s| s * t_len + t).collect();
            let z_t = g.select_rows(z, &rows)?;
            let mut x = g.fully_connected(z_t, proj_w, proj_b)?;

            for (li, ln) in layer_nodes.iter().enumerate() {
                let (c_prev, h_prev) = states[li];

                let gate = |g: &mut Graph<F>,
                            x: NodeId,
                            wx: NodeId,
                            wh: NodeId,
                            peep: Option<(NodeId, NodeId)>,
                            b: NodeId|
                 -> Result<NodeId> {
                    let xw = g.matmul(x, wx)?;
                    let hw = g.matmul(h_prev, wh)?;
                    let mut s = g.add(xw, hw)?;
                    if let Some((cell, wc)) = peep {
                        let pw = g.mul_row(cell, wc)?;
                        s = g.add(s, pw)?;
                    }
                    g.add_row(s, b)
                };

                let pre_i = gate(g, x, ln.w_xi, ln.w_hi, Some((c_prev, ln.w_ci)), ln.b_i)?;
                let i_gate = g.sigmoid(pre_i);
                let pre_f = gate(g, x, ln.w_xf, ln.w_hf, Some((c_prev, ln.w_cf)), ln.b_f)?;
                let f_gate = g.sigmoid(pre_f);
                let pre_c = gate(g, x, ln.w_xc, ln.w_hc, None, ln.b_c)?;
                let c_tilde = g.tanh(pre_c);
                let keep = g.mul(f_gate, c_prev)?;
                let write = g.mul(i_gate, c_tilde)?;
                let c_new = g.add(keep, write)?;
                let pre_o = gate(g, x, ln.w_xo, ln.w_ho, Some((c_new, ln.w_co)), ln.b_o)?;
                let o_gate = g.sigmoid(pre_o);
                let c_act = g.tanh(c_new);
                let h_new = g.mul(o_gate, c_act)?;

                states[li] = (c_new, h_new);
                x = h_new;
                if li + 1 < layer_nodes.len() {
                    x = g.dropout(x, self.config.dropout, training, rng)?;
                }
            }

            let head = g.fully_connected(x, head_w, head_b)?;
            let base = g.row_sum(z_t)?;
            let residual = g.scale(base, p);
            per_step.push(g.add(head, residual)?);
        }

        // per_step[t] rows are sequence-ordered; restore frame order s*T + t
        let stacked = g.concat_rows(&per_step)?;
        let perm: Vec<usize> =
            (0..batch).map(|b| (b % t_len) * seqs + b / t_len).collect();
        g.select_rows(stacked, &perm)
    }
}
