use crate::exec::par_map;
use crate::graph::RelationGraph;
use crate::numerics::{Matrix, Rng};

use super::layers::{
    attention_backward, attention_forward_traced, bce_loss, gcn_backward, gcn_forward_traced, lstm_backward,
    lstm_forward_traced, predict, AttentionTrace, GcnTrace, LstmLayerTrace,
};
use super::{LstmLayer, MgrnParams, ModelConfig, ModelError, Result};

/// Samples per backward work unit. Fixed so the gradient reduction order
/// does not depend on the thread count.
const CHUNK: usize = 8;

/// A prediction target: stock row `stock` on calendar day index `day`.
/// Its window covers days `day - lookback ..= day`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sample {
    pub stock: usize,
    pub day: usize,
}

/// Graph-stage activations for one day.
#[derive(Debug, Clone)]
pub struct DayTrace {
    pub x: Matrix,
    pub gcn: Vec<GcnTrace>,
    pub attn: AttentionTrace,
    /// Fused graph output `Z_d`.
    pub z: Matrix,
}

impl DayTrace {
    pub fn z_list(&self) -> Vec<Matrix> {
        self.gcn.iter().map(|t| t.out.clone()).collect()
    }

    /// Attention weights `alpha[graph][stock]`.
    pub fn alpha(&self) -> &[Vec<f64>] {
        &self.attn.alpha
    }
}

#[derive(Debug, Clone)]
struct SampleTrace {
    lstm: Vec<LstmLayerTrace>,
    hidden: Vec<f64>,
    p_up: f64,
}

/// Everything a forward pass over a batch caches for [`Mgrn::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    generation: u64,
    a_hats: Vec<Matrix>,
    /// Sorted calendar indices of the days in `days`.
    day_index: Vec<usize>,
    days: Vec<DayTrace>,
    samples: Vec<Sample>,
    sample_traces: Vec<SampleTrace>,
}

impl ForwardTrace {
    pub fn p_up(&self) -> Vec<f64> {
        self.sample_traces.iter().map(|t| t.p_up).collect()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn day(&self, day: usize) -> Option<&DayTrace> {
        self.day_index.binary_search(&day).ok().map(|i| &self.days[i])
    }
}

/// A configured network bound to an ordered list of graph names.
#[derive(Debug, Clone, PartialEq)]
pub struct Mgrn {
    config: ModelConfig,
    graph_names: Vec<String>,
    params: MgrnParams,
    generation: u64,
}

struct HeadGrads {
    lstm: Vec<LstmLayer>,
    fc_w: Matrix,
    fc_b: Matrix,
    /// `(position in day list, stock, ∂loss/∂Z_d[stock])`.
    d_z_rows: Vec<(usize, usize, Vec<f64>)>,
}

struct GraphGrads {
    gcn: Vec<Vec<Matrix>>,
    attn_w: Matrix,
    attn_q: Matrix,
}

impl Mgrn {
    pub fn new(config: ModelConfig, graph_names: Vec<String>, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if graph_names.is_empty() {
            return Err(ModelError::NoGraphs);
        }
        let params = MgrnParams::init(&config, graph_names.len(), rng);
        Ok(Self {
            config,
            graph_names,
            params,
            generation: 0,
        })
    }

    pub fn from_params(config: ModelConfig, graph_names: Vec<String>, params: MgrnParams) -> Result<Self> {
        config.validate()?;
        if graph_names.is_empty() {
            return Err(ModelError::NoGraphs);
        }
        if !params.matches(&config, graph_names.len()) {
            return Err(ModelError::ShapeMismatch("parameters do not match the config".into()));
        }
        Ok(Self {
            config,
            graph_names,
            params,
            generation: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn graph_names(&self) -> &[String] {
        &self.graph_names
    }

    pub fn params(&self) -> &MgrnParams {
        &self.params
    }

    /// Mutates the parameters. Traces recorded before the call become stale.
    pub fn update_params(&mut self, f: impl FnOnce(&mut MgrnParams)) {
        f(&mut self.params);
        self.generation += 1;
    }

    pub fn into_params(self) -> MgrnParams {
        self.params
    }

    fn check_inputs(&self, features: &[Matrix], graphs: &[RelationGraph]) -> Result<()> {
        if graphs.is_empty() {
            return Err(ModelError::NoGraphs);
        }
        if graphs.len() != self.params.num_graphs() {
            return Err(ModelError::ShapeMismatch(format!(
                "model has {} graphs, got {}",
                self.params.num_graphs(),
                graphs.len()
            )));
        }
        let n = graphs[0].n();
        if graphs.iter().any(|g| g.n() != n) {
            return Err(ModelError::ShapeMismatch("graphs disagree on universe size".into()));
        }
        if let Some(x) = features.iter().find(|x| x.shape() != (n, self.config.d)) {
            return Err(ModelError::ShapeMismatch(format!(
                "feature matrix is {}x{}, expected {n}x{}",
                x.rows(),
                x.cols(),
                self.config.d
            )));
        }
        Ok(())
    }

    fn window(&self, features: &[Matrix], s: &Sample) -> Result<std::ops::RangeInclusive<usize>> {
        let lb = self.config.lookback;
        if s.day < lb || s.day >= features.len() {
            return Err(ModelError::MissingDay { day: s.day });
        }
        Ok(s.day - lb..=s.day)
    }

    /// Graph stage for one day: every GCN, attention fusion.
    pub fn day_forward(&self, graphs: &[RelationGraph], x: &Matrix) -> Result<DayTrace> {
        let gcn = graphs
            .iter()
            .zip(&self.params.gcn)
            .map(|(g, ws)| gcn_forward_traced(&g.a_hat, x, ws))
            .collect::<Result<Vec<_>>>()?;
        let z_list: Vec<Matrix> = gcn.iter().map(|t| t.out.clone()).collect();
        let (z, attn) = attention_forward_traced(&z_list, &self.params.attn_w, &self.params.attn_q)?;
        Ok(DayTrace {
            x: x.clone(),
            gcn,
            attn,
            z,
        })
    }

    fn days_forward(&self, features: &[Matrix], graphs: &[RelationGraph], samples: &[Sample]) -> Result<(Vec<usize>, Vec<DayTrace>)> {
        self.check_inputs(features, graphs)?;
        let mut needed = Vec::new();
        for s in samples {
            needed.extend(self.window(features, s)?);
            if s.stock >= graphs[0].n() {
                return Err(ModelError::ShapeMismatch(format!("stock index {} out of range", s.stock)));
            }
        }
        needed.sort_unstable();
        needed.dedup();
        let days = par_map(&needed, |&d| self.day_forward(graphs, &features[d]))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok((needed, days))
    }

    fn sequence(&self, day_index: &[usize], days: &[DayTrace], s: &Sample) -> Vec<Vec<f64>> {
        let start = day_index.binary_search(&(s.day - self.config.lookback)).expect("window day present");
        days[start..=start + self.config.lookback]
            .iter()
            .map(|t| {
                let mut step = Vec::with_capacity(self.config.lstm_input_dim());
                step.extend_from_slice(t.x.row(s.stock));
                step.extend_from_slice(t.z.row(s.stock));
                step
            })
            .collect()
    }

    /// Batch forward pass. Each needed day's graph stage runs once and is
    /// shared by every sample whose window covers it.
    pub fn forward(&self, features: &[Matrix], graphs: &[RelationGraph], samples: &[Sample]) -> Result<ForwardTrace> {
        let (day_index, days) = self.days_forward(features, graphs, samples)?;
        let sample_traces = par_map(samples, |s| -> Result<SampleTrace> {
            let lstm = lstm_forward_traced(self.sequence(&day_index, &days, s), &self.params.lstm)?;
            let hidden = lstm.last().and_then(|t| t.hiddens.last()).cloned().expect("non-empty");
            let (p_up, _) = predict(&hidden, &self.params.fc_w, &self.params.fc_b)?;
            Ok(SampleTrace { lstm, hidden, p_up })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(ForwardTrace {
            generation: self.generation,
            a_hats: graphs.iter().map(|g| g.a_hat.clone()).collect(),
            day_index,
            days,
            samples: samples.to_vec(),
            sample_traces,
        })
    }

    /// `p_up` per sample without keeping traces.
    pub fn predict(&self, features: &[Matrix], graphs: &[RelationGraph], samples: &[Sample]) -> Result<Vec<f64>> {
        let (day_index, days) = self.days_forward(features, graphs, samples)?;
        par_map(samples, |s| -> Result<f64> {
            let lstm = lstm_forward_traced(self.sequence(&day_index, &days, s), &self.params.lstm)?;
            let hidden = lstm.last().and_then(|t| t.hiddens.last()).expect("non-empty");
            Ok(predict(hidden, &self.params.fc_w, &self.params.fc_b)?.0)
        })
        .into_iter()
        .collect()
    }

    /// Up-probability for one stock on one day.
    pub fn forward_window(&self, features: &[Matrix], graphs: &[RelationGraph], stock: usize, day: usize) -> Result<f64> {
        Ok(self.predict(features, graphs, &[Sample { stock, day }])?[0])
    }

    /// Exact gradients of the summed cross-entropy over the traced batch.
    /// Returns the gradients and the loss.
    pub fn backward(&self, trace: &ForwardTrace, labels: &[u8]) -> Result<(MgrnParams, f64)> {
        if trace.generation != self.generation {
            return Err(ModelError::StaleTrace);
        }
        if labels.len() != trace.samples.len() {
            return Err(ModelError::LengthMismatch(labels.len(), trace.samples.len()));
        }
        let loss = bce_loss(&trace.p_up(), labels)?;
        let lookback = self.config.lookback;
        let d = self.config.d;
        let p = &self.params;
        let idx: Vec<usize> = (0..trace.samples.len()).collect();
        let chunks: Vec<&[usize]> = idx.chunks(CHUNK).collect();

        let head_parts = par_map(&chunks, |chunk| {
            let mut g = HeadGrads {
                lstm: p
                    .lstm
                    .iter()
                    .map(|l| LstmLayer {
                        w: Matrix::zeros(l.w.rows(), l.w.cols()),
                        u: Matrix::zeros(l.u.rows(), l.u.cols()),
                        b: Matrix::zeros(1, l.b.cols()),
                    })
                    .collect(),
                fc_w: Matrix::zeros(p.fc_w.rows(), 2),
                fc_b: Matrix::zeros(1, 2),
                d_z_rows: Vec::new(),
            };
            for &k in chunk.iter() {
                let st = &trace.sample_traces[k];
                let s = &trace.samples[k];
                let y = f64::from(labels[k]);
                let d_logits = [st.p_up - y, y - st.p_up];
                let mut d_hidden = vec![0.0; st.hidden.len()];
                for (j, &h) in st.hidden.iter().enumerate() {
                    g.fc_w.row_mut(j)[0] += h * d_logits[0];
                    g.fc_w.row_mut(j)[1] += h * d_logits[1];
                    d_hidden[j] = p.fc_w.get(j, 0) * d_logits[0] + p.fc_w.get(j, 1) * d_logits[1];
                }
                g.fc_b.as_mut_slice()[0] += d_logits[0];
                g.fc_b.as_mut_slice()[1] += d_logits[1];
                let d_inputs = lstm_backward(&p.lstm, &st.lstm, &d_hidden, &mut g.lstm);
                let start = trace.day_index.binary_search(&(s.day - lookback)).expect("window day present");
                for (t, d_in) in d_inputs.into_iter().enumerate() {
                    g.d_z_rows.push((start + t, s.stock, d_in[d..].to_vec()));
                }
            }
            g
        });

        let mut grads = p.zeros_like();
        let f_l = self.config.graph_out_dim();
        let n = trace.a_hats[0].rows();
        let mut d_z = vec![Matrix::zeros(n, f_l); trace.days.len()];
        for part in head_parts {
            for (acc, l) in grads.lstm.iter_mut().zip(&part.lstm) {
                acc.w.add_assign(&l.w)?;
                acc.u.add_assign(&l.u)?;
                acc.b.add_assign(&l.b)?;
            }
            grads.fc_w.add_assign(&part.fc_w)?;
            grads.fc_b.add_assign(&part.fc_b)?;
            for (day_pos, stock, row) in part.d_z_rows {
                for (o, v) in d_z[day_pos].row_mut(stock).iter_mut().zip(&row) {
                    *o += v;
                }
            }
        }

        let day_pos: Vec<usize> = (0..trace.days.len()).collect();
        let graph_parts = par_map(&day_pos, |&i| -> Result<GraphGrads> {
            let day = &trace.days[i];
            let z_list = day.z_list();
            let ag = attention_backward(&z_list, &p.attn_w, &p.attn_q, &day.attn, &d_z[i])?;
            let gcn = trace
                .a_hats
                .iter()
                .zip(&day.gcn)
                .zip(&p.gcn)
                .zip(&ag.d_z)
                .map(|(((a_hat, tr), ws), dz)| gcn_backward(a_hat, tr, ws, dz))
                .collect::<Result<Vec<_>>>()?;
            Ok(GraphGrads {
                gcn,
                attn_w: ag.d_w_a,
                attn_q: ag.d_q,
            })
        });
        for part in graph_parts {
            let part = part?;
            for (acc_ws, ws) in grads.gcn.iter_mut().zip(&part.gcn) {
                for (acc, w) in acc_ws.iter_mut().zip(ws) {
                    acc.add_assign(w)?;
                }
            }
            grads.attn_w.add_assign(&part.attn_w)?;
            grads.attn_q.add_assign(&part.attn_q)?;
        }
        Ok((grads, loss))
    }

    /// Summed loss of `samples` under the current parameters.
    pub fn loss(&self, features: &[Matrix], graphs: &[RelationGraph], samples: &[Sample], labels: &[u8]) -> Result<f64> {
        bce_loss(&self.predict(features, graphs, samples)?, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{identity_graph, GraphKind};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            gcn_dims: vec![5, 3],
            attn_w: 4,
            lstm_dims: vec![4],
            lookback: 2,
            ..ModelConfig::new(6)
        }
    }

    fn features(rng: &mut Rng, days: usize, n: usize, d: usize) -> Vec<Matrix> {
        (0..days)
            .map(|_| Matrix::from_vec(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap())
            .collect()
    }

    fn chain_graph(n: usize) -> RelationGraph {
        let mut a = Matrix::identity(n);
        for i in 1..n {
            a.set(i, i - 1, 1.0);
            a.set(i - 1, i, 1.0);
        }
        RelationGraph::from_adjacency("chain", GraphKind::Boolean, a).unwrap()
    }

    #[test]
    fn zero_features_give_even_odds() {
        let cfg = tiny_config();
        let mut model = Mgrn::new(cfg, vec!["identity".into()], &mut Rng::new(1)).unwrap();
        model.update_params(|p| p.fc_b.fill(0.0));
        let feats = vec![Matrix::zeros(4, 6); 3];
        let mut zero_bias = model.clone();
        zero_bias.update_params(|p| p.lstm.iter_mut().for_each(|l| l.b.fill(0.0)));
        let p = zero_bias.forward_window(&feats, &[identity_graph(4)], 1, 2).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn missing_window_days_are_errors() {
        let model = Mgrn::new(tiny_config(), vec!["identity".into()], &mut Rng::new(1)).unwrap();
        let feats = features(&mut Rng::new(2), 3, 4, 6);
        let g = [identity_graph(4)];
        assert!(matches!(model.forward_window(&feats, &g, 0, 1), Err(ModelError::MissingDay { day: 1 })));
        assert!(matches!(model.forward_window(&feats, &g, 0, 3), Err(ModelError::MissingDay { day: 3 })));
        assert!(model.forward_window(&feats, &g, 0, 2).is_ok());
        assert!(matches!(model.forward_window(&feats, &[], 0, 2), Err(ModelError::NoGraphs)));
    }

    #[test]
    fn stale_trace_rejected() {
        let mut model = Mgrn::new(tiny_config(), vec!["chain".into()], &mut Rng::new(1)).unwrap();
        let feats = features(&mut Rng::new(2), 4, 4, 6);
        let g = [chain_graph(4)];
        let trace = model.forward(&feats, &g, &[Sample { stock: 0, day: 3 }]).unwrap();
        model.backward(&trace, &[1]).unwrap();
        model.update_params(|p| p.fc_b.fill(0.1));
        assert!(matches!(model.backward(&trace, &[1]), Err(ModelError::StaleTrace)));
    }

    #[test]
    fn duplicated_sample_doubles_gradient() {
        let model = Mgrn::new(tiny_config(), vec!["chain".into(), "identity".into()], &mut Rng::new(5)).unwrap();
        let feats = features(&mut Rng::new(6), 4, 4, 6);
        let g = [chain_graph(4), identity_graph(4)];
        let s = Sample { stock: 2, day: 3 };
        let (one, l1) = model.backward(&model.forward(&feats, &g, &[s]).unwrap(), &[0]).unwrap();
        let (two, l2) = model.backward(&model.forward(&feats, &g, &[s, s]).unwrap(), &[0, 0]).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
        for (a, b) in one.to_flat().iter().zip(two.to_flat()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn confident_correct_predictions_have_vanishing_gradients() {
        let mut model = Mgrn::new(tiny_config(), vec!["chain".into()], &mut Rng::new(5)).unwrap();
        model.update_params(|p| {
            p.fc_w.fill(0.0);
            p.fc_b.as_mut_slice().copy_from_slice(&[60.0, -60.0]);
        });
        let feats = features(&mut Rng::new(6), 4, 4, 6);
        let g = [chain_graph(4)];
        let samples: Vec<Sample> = (0..4).map(|stock| Sample { stock, day: 3 }).collect();
        let (grads, loss) = model.backward(&model.forward(&feats, &g, &samples).unwrap(), &[1; 4]).unwrap();
        assert!(loss < 1e-9);
        assert!(grads.to_flat().iter().all(|v| v.abs() < 1e-40));
    }

    #[test]
    fn sequential_and_parallel_paths_agree_bitwise() {
        let model = Mgrn::new(tiny_config(), vec!["chain".into(), "identity".into()], &mut Rng::new(9)).unwrap();
        let feats = features(&mut Rng::new(10), 8, 4, 6);
        let g = [chain_graph(4), identity_graph(4)];
        let samples: Vec<Sample> = (2..8).flat_map(|day| (0..4).map(move |stock| Sample { stock, day })).collect();
        let labels: Vec<u8> = (0..samples.len()).map(|i| (i % 2) as u8).collect();
        let par = model.backward(&model.forward(&feats, &g, &samples).unwrap(), &labels).unwrap();
        let seq = crate::exec::sequential(|| model.backward(&model.forward(&feats, &g, &samples).unwrap(), &labels).unwrap());
        assert_eq!(par.0, seq.0);
        assert_eq!(par.1, seq.1);
    }
}
