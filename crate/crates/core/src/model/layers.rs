//! Forward and hand-derived backward passes for each network stage.

use crate::numerics::{dot, relu, sigmoid, softmax, Matrix};

use super::{LstmLayer, ModelError, Result};

/// Probability clip used by the loss.
pub const PROB_CLIP: f64 = 1e-12;

fn shape_err(what: &str, got: (usize, usize), want: (usize, usize)) -> ModelError {
    ModelError::ShapeMismatch(format!("{what}: got {}x{}, expected {}x{}", got.0, got.1, want.0, want.1))
}

// ---------------------------------------------------------------- GCN

/// Activations cached by [`gcn_forward_traced`].
#[derive(Debug, Clone)]
pub struct GcnTrace {
    /// `Â H^(l)` per layer.
    pub propagated: Vec<Matrix>,
    /// `Â H^(l) W^(l)` per layer, before the activation.
    pub pre: Vec<Matrix>,
    /// Final output `H^(L)`.
    pub out: Matrix,
}

fn check_gcn(a_hat: &Matrix, x: &Matrix, weights: &[Matrix]) -> Result<()> {
    let n = x.rows();
    if a_hat.shape() != (n, n) {
        return Err(shape_err("normalized adjacency", a_hat.shape(), (n, n)));
    }
    if weights.is_empty() {
        return Err(ModelError::ShapeMismatch("GCN needs at least one layer".into()));
    }
    let mut width = x.cols();
    for w in weights {
        if w.rows() != width {
            return Err(shape_err("GCN weight", w.shape(), (width, w.cols())));
        }
        width = w.cols();
    }
    Ok(())
}

/// `H^(l+1) = ReLU(Â H^(l) W^(l))` for hidden layers; the last layer is
/// linear.
pub fn gcn_forward(a_hat: &Matrix, x: &Matrix, weights: &[Matrix]) -> Result<Matrix> {
    Ok(gcn_forward_traced(a_hat, x, weights)?.out)
}

pub fn gcn_forward_traced(a_hat: &Matrix, x: &Matrix, weights: &[Matrix]) -> Result<GcnTrace> {
    check_gcn(a_hat, x, weights)?;
    let last = weights.len() - 1;
    let mut propagated = Vec::with_capacity(weights.len());
    let mut pre = Vec::with_capacity(weights.len());
    let mut h = x.clone();
    for (l, w) in weights.iter().enumerate() {
        let p = a_hat.matmul(&h)?;
        let s = p.matmul(w)?;
        h = if l == last { s.clone() } else { s.map(relu) };
        propagated.push(p);
        pre.push(s);
    }
    Ok(GcnTrace {
        propagated,
        pre,
        out: h,
    })
}

/// Weight gradients given `d_out = ∂loss/∂H^(L)`.
pub fn gcn_backward(a_hat: &Matrix, trace: &GcnTrace, weights: &[Matrix], d_out: &Matrix) -> Result<Vec<Matrix>> {
    let last = weights.len() - 1;
    let mut grads = vec![Matrix::zeros(0, 0); weights.len()];
    let mut d_h = d_out.clone();
    for l in (0..weights.len()).rev() {
        let mut d_s = d_h;
        if l != last {
            for (g, s) in d_s.as_mut_slice().iter_mut().zip(trace.pre[l].as_slice()) {
                if *s <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        grads[l] = trace.propagated[l].t_matmul(&d_s)?;
        if l == 0 {
            break;
        }
        let d_p = d_s.matmul_t(&weights[l])?;
        d_h = a_hat.t_matmul(&d_p)?;
    }
    Ok(grads)
}

// ---------------------------------------------------------- attention

#[derive(Debug, Clone)]
pub struct AttentionTrace {
    /// `Z_i W_a` per graph (`n × w`).
    pub projected: Vec<Matrix>,
    /// `alpha[i][r]`: weight of graph `i` at node `r`.
    pub alpha: Vec<Vec<f64>>,
}

/// Per-node softmax over graphs of `Z_i W_a q`, then
/// `Z[r] = Σ_i α_i[r] Z_i[r]`.
pub fn attention_aggregate(z_list: &[Matrix], w_a: &Matrix, q: &Matrix) -> Result<(Matrix, Vec<Vec<f64>>)> {
    let (z, trace) = attention_forward_traced(z_list, w_a, q)?;
    Ok((z, trace.alpha))
}

pub fn attention_forward_traced(z_list: &[Matrix], w_a: &Matrix, q: &Matrix) -> Result<(Matrix, AttentionTrace)> {
    let Some(first) = z_list.first() else {
        return Err(ModelError::NoGraphs);
    };
    let (n, f) = first.shape();
    for z in z_list {
        if z.shape() != (n, f) {
            return Err(shape_err("graph output", z.shape(), (n, f)));
        }
    }
    if w_a.rows() != f || q.shape() != (w_a.cols(), 1) {
        return Err(shape_err("attention query", q.shape(), (w_a.cols(), 1)));
    }
    let projected: Vec<Matrix> = z_list.iter().map(|z| z.matmul(w_a)).collect::<std::result::Result<_, _>>()?;
    let logits: Vec<Matrix> = projected.iter().map(|u| u.matmul(q)).collect::<std::result::Result<_, _>>()?;
    let g = z_list.len();
    let mut alpha = vec![vec![0.0; n]; g];
    let mut out = Matrix::zeros(n, f);
    let mut node_logits = vec![0.0; g];
    #[allow(clippy::needless_range_loop)]
    for r in 0..n {
        for (i, e) in logits.iter().enumerate() {
            node_logits[i] = e.get(r, 0);
        }
        let a = softmax(&node_logits)?;
        for (i, z) in z_list.iter().enumerate() {
            alpha[i][r] = a[i];
            for (o, v) in out.row_mut(r).iter_mut().zip(z.row(r)) {
                *o += a[i] * v;
            }
        }
    }
    Ok((out, AttentionTrace { projected, alpha }))
}

pub struct AttentionGrads {
    pub d_z: Vec<Matrix>,
    pub d_w_a: Matrix,
    pub d_q: Matrix,
}

pub fn attention_backward(
    z_list: &[Matrix],
    w_a: &Matrix,
    q: &Matrix,
    trace: &AttentionTrace,
    d_out: &Matrix,
) -> Result<AttentionGrads> {
    let g = z_list.len();
    let (n, _) = d_out.shape();
    let mut d_z: Vec<Matrix> = z_list.iter().map(|z| Matrix::zeros(z.rows(), z.cols())).collect();
    let mut d_logits = vec![Matrix::zeros(n, 1); g];
    let mut d_alpha = vec![0.0; g];
    for r in 0..n {
        let dz_row = d_out.row(r);
        for i in 0..g {
            d_alpha[i] = dot(dz_row, z_list[i].row(r));
            let a = trace.alpha[i][r];
            for (o, v) in d_z[i].row_mut(r).iter_mut().zip(dz_row) {
                *o += a * v;
            }
        }
        let mean: f64 = (0..g).map(|i| trace.alpha[i][r] * d_alpha[i]).sum();
        for i in 0..g {
            d_logits[i].set(r, 0, trace.alpha[i][r] * (d_alpha[i] - mean));
        }
    }
    let mut d_w_a = Matrix::zeros(w_a.rows(), w_a.cols());
    let mut d_q = Matrix::zeros(q.rows(), 1);
    for i in 0..g {
        d_q.add_assign(&trace.projected[i].t_matmul(&d_logits[i])?)?;
        let d_u = d_logits[i].matmul_t(q)?;
        d_w_a.add_assign(&z_list[i].t_matmul(&d_u)?)?;
        d_z[i].add_assign(&d_u.matmul_t(w_a)?)?;
    }
    Ok(AttentionGrads { d_z, d_w_a, d_q })
}

/// Row-wise `[x | z]`.
pub fn concat_features(x: &Matrix, z: &Matrix) -> Result<Matrix> {
    if x.rows() != z.rows() {
        return Err(ModelError::RowMismatch(x.rows(), z.rows()));
    }
    let mut out = Matrix::zeros(x.rows(), x.cols() + z.cols());
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        row[..x.cols()].copy_from_slice(x.row(r));
        row[x.cols()..].copy_from_slice(z.row(r));
    }
    Ok(out)
}

// --------------------------------------------------------------- LSTM

/// Cached activations of one LSTM layer over a sequence.
#[derive(Debug, Clone, Default)]
pub struct LstmLayerTrace {
    pub inputs: Vec<Vec<f64>>,
    /// Gate activations per step: input, forget, output, candidate.
    pub gates: Vec<Vec<f64>>,
    pub cells: Vec<Vec<f64>>,
    pub tanh_cells: Vec<Vec<f64>>,
    pub hiddens: Vec<Vec<f64>>,
}

fn lstm_layer_forward(layer: &LstmLayer, inputs: Vec<Vec<f64>>) -> Result<LstmLayerTrace> {
    let h = layer.hidden();
    let in_dim = layer.input();
    let mut tr = LstmLayerTrace {
        gates: Vec::with_capacity(inputs.len()),
        cells: Vec::with_capacity(inputs.len()),
        tanh_cells: Vec::with_capacity(inputs.len()),
        hiddens: Vec::with_capacity(inputs.len()),
        ..Default::default()
    };
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    for x in &inputs {
        if x.len() != in_dim {
            return Err(ModelError::ShapeMismatch(format!(
                "LSTM step has {} inputs, layer expects {in_dim}",
                x.len()
            )));
        }
        let mut a = layer.b.as_slice().to_vec();
        for (k, &xv) in x.iter().enumerate() {
            if xv != 0.0 {
                for (o, w) in a.iter_mut().zip(layer.w.row(k)) {
                    *o += xv * w;
                }
            }
        }
        for (k, &hv) in h_prev.iter().enumerate() {
            if hv != 0.0 {
                for (o, u) in a.iter_mut().zip(layer.u.row(k)) {
                    *o += hv * u;
                }
            }
        }
        for v in &mut a[..3 * h] {
            *v = sigmoid(*v);
        }
        for v in &mut a[3 * h..] {
            *v = v.tanh();
        }
        let (i_g, rest) = a.split_at(h);
        let (f_g, rest) = rest.split_at(h);
        let (o_g, c_g) = rest.split_at(h);
        let c: Vec<f64> = (0..h).map(|j| f_g[j] * c_prev[j] + i_g[j] * c_g[j]).collect();
        let tc: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let hn: Vec<f64> = (0..h).map(|j| o_g[j] * tc[j]).collect();
        tr.gates.push(a);
        tr.cells.push(c.clone());
        tr.tanh_cells.push(tc);
        tr.hiddens.push(hn.clone());
        h_prev = hn;
        c_prev = c;
    }
    tr.inputs = inputs;
    Ok(tr)
}

/// Runs the stacked LSTM over `sequence` (oldest first) from zero state.
/// Returns one trace per layer; the top layer's last hidden state is the
/// sequence summary.
pub fn lstm_forward_traced(sequence: Vec<Vec<f64>>, layers: &[LstmLayer]) -> Result<Vec<LstmLayerTrace>> {
    if sequence.is_empty() {
        return Err(ModelError::ShapeMismatch("empty LSTM sequence".into()));
    }
    let mut traces = Vec::with_capacity(layers.len());
    let mut inputs = sequence;
    for layer in layers {
        let tr = lstm_layer_forward(layer, inputs)?;
        inputs = tr.hiddens.clone();
        traces.push(tr);
    }
    Ok(traces)
}

/// Top-layer hidden state after the last step.
pub fn lstm_forward(sequence: Vec<Vec<f64>>, layers: &[LstmLayer]) -> Result<Vec<f64>> {
    let traces = lstm_forward_traced(sequence, layers)?;
    Ok(traces
        .last()
        .and_then(|t| t.hiddens.last().cloned())
        .expect("non-empty sequence and at least one layer"))
}

/// Backpropagation through time. `d_hidden` holds `∂loss/∂h_t` from above
/// for every step; returns `∂loss/∂x_t` and accumulates weight gradients
/// into `grad`.
fn lstm_layer_backward(layer: &LstmLayer, tr: &LstmLayerTrace, d_hidden: &[Vec<f64>], grad: &mut LstmLayer) -> Vec<Vec<f64>> {
    let h = layer.hidden();
    let steps = tr.inputs.len();
    let mut d_inputs = vec![Vec::new(); steps];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let zeros = vec![0.0; h];
    let mut da = vec![0.0; 4 * h];
    for t in (0..steps).rev() {
        let gates = &tr.gates[t];
        let c_prev = if t == 0 { &zeros } else { &tr.cells[t - 1] };
        let h_prev = if t == 0 { &zeros } else { &tr.hiddens[t - 1] };
        for j in 0..h {
            let (ig, fg, og, cg) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let tc = tr.tanh_cells[t][j];
            let dh = d_hidden[t][j] + dh_next[j];
            let d_o = dh * tc;
            let dc = dh * og * (1.0 - tc * tc) + dc_next[j];
            da[j] = dc * cg * ig * (1.0 - ig);
            da[h + j] = dc * c_prev[j] * fg * (1.0 - fg);
            da[2 * h + j] = d_o * og * (1.0 - og);
            da[3 * h + j] = dc * ig * (1.0 - cg * cg);
            dc_next[j] = dc * fg;
        }
        for (k, &xv) in tr.inputs[t].iter().enumerate() {
            if xv != 0.0 {
                for (g, d) in grad.w.row_mut(k).iter_mut().zip(&da) {
                    *g += xv * d;
                }
            }
        }
        for (k, &hv) in h_prev.iter().enumerate() {
            if hv != 0.0 {
                for (g, d) in grad.u.row_mut(k).iter_mut().zip(&da) {
                    *g += hv * d;
                }
            }
        }
        for (g, d) in grad.b.as_mut_slice().iter_mut().zip(&da) {
            *g += d;
        }
        d_inputs[t] = (0..layer.input()).map(|k| dot(layer.w.row(k), &da)).collect();
        for (k, v) in dh_next.iter_mut().enumerate() {
            *v = dot(layer.u.row(k), &da);
        }
    }
    d_inputs
}

/// Gradients of the stacked LSTM given `∂loss/∂h` of the top layer's last
/// step. Returns `∂loss/∂x_t` for every input step.
pub fn lstm_backward(layers: &[LstmLayer], traces: &[LstmLayerTrace], d_last: &[f64], grads: &mut [LstmLayer]) -> Vec<Vec<f64>> {
    let steps = traces[0].inputs.len();
    let top_h = layers.last().expect("at least one layer").hidden();
    let mut d_hidden = vec![vec![0.0; top_h]; steps];
    d_hidden[steps - 1].copy_from_slice(d_last);
    for k in (0..layers.len()).rev() {
        d_hidden = lstm_layer_backward(&layers[k], &traces[k], &d_hidden, &mut grads[k]);
    }
    d_hidden
}

// --------------------------------------------------------------- head

/// FC layer plus two-way softmax. Returns `(p_up, p_down)`.
pub fn predict(hidden: &[f64], fc_w: &Matrix, fc_b: &Matrix) -> Result<(f64, f64)> {
    if fc_w.shape() != (hidden.len(), 2) || fc_b.shape() != (1, 2) {
        return Err(shape_err("FC head", fc_w.shape(), (hidden.len(), 2)));
    }
    let mut logits = [fc_b.get(0, 0), fc_b.get(0, 1)];
    for (k, &h) in hidden.iter().enumerate() {
        logits[0] += h * fc_w.get(k, 0);
        logits[1] += h * fc_w.get(k, 1);
    }
    let p = softmax(&logits)?;
    Ok((p[0], p[1]))
}

/// Binary cross entropy `−Σ [y ln p + (1−y) ln(1−p)]` with `p` clipped to
/// `[1e-12, 1 − 1e-12]`.
pub fn bce_loss(p_up: &[f64], y: &[u8]) -> Result<f64> {
    if p_up.len() != y.len() {
        return Err(ModelError::LengthMismatch(p_up.len(), y.len()));
    }
    Ok(p_up
        .iter()
        .zip(y)
        .map(|(&p, &label)| {
            let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            if label == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum())
}
