use crate::numerics::{init_matrix, InitScheme, Matrix, Rng};

use super::ModelConfig;

/// One LSTM layer. Gate blocks along the `4h` axis are ordered
/// input, forget, output, cell candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `in × 4h` input weights.
    pub w: Matrix,
    /// `h × 4h` recurrent weights.
    pub u: Matrix,
    /// `1 × 4h` bias.
    pub b: Matrix,
}

impl LstmLayer {
    pub fn hidden(&self) -> usize {
        self.u.rows()
    }

    pub fn input(&self) -> usize {
        self.w.rows()
    }
}

/// Every trainable tensor of the network. Also used as the gradient and
/// optimizer-moment container.
#[derive(Debug, Clone, PartialEq)]
pub struct MgrnParams {
    /// `gcn[i][l]`: layer `l` weights of graph `i`'s GCN.
    pub gcn: Vec<Vec<Matrix>>,
    /// `f_L × w` attention projection, shared across graphs.
    pub attn_w: Matrix,
    /// `w × 1` attention query.
    pub attn_q: Matrix,
    pub lstm: Vec<LstmLayer>,
    /// `h × 2`; column 0 is the up logit.
    pub fc_w: Matrix,
    pub fc_b: Matrix,
}

impl MgrnParams {
    /// Xavier-uniform weights, zero biases except the forget gate at +1.
    pub fn init(cfg: &ModelConfig, num_graphs: usize, rng: &mut Rng) -> Self {
        let xavier = InitScheme::XavierUniform;
        let gcn = (0..num_graphs)
            .map(|_| {
                let mut fan_in = cfg.d;
                cfg.gcn_dims
                    .iter()
                    .map(|&out| {
                        let w = init_matrix(rng, fan_in, out, xavier);
                        fan_in = out;
                        w
                    })
                    .collect()
            })
            .collect();
        let f_l = cfg.graph_out_dim();
        let attn_w = init_matrix(rng, f_l, cfg.attn_w, xavier);
        let attn_q = init_matrix(rng, cfg.attn_w, 1, xavier);
        let mut fan_in = cfg.lstm_input_dim();
        let lstm = cfg
            .lstm_dims
            .iter()
            .map(|&h| {
                let w = init_matrix(rng, fan_in, 4 * h, xavier);
                let u = init_matrix(rng, h, 4 * h, xavier);
                let mut b = Matrix::zeros(1, 4 * h);
                b.as_mut_slice()[h..2 * h].fill(1.0);
                fan_in = h;
                LstmLayer { w, u, b }
            })
            .collect();
        let fc_w = init_matrix(rng, cfg.hidden_dim(), 2, xavier);
        let fc_b = Matrix::zeros(1, 2);
        Self {
            gcn,
            attn_w,
            attn_q,
            lstm,
            fc_w,
            fc_b,
        }
    }

    pub fn num_graphs(&self) -> usize {
        self.gcn.len()
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            gcn: self.gcn.iter().map(|ws| ws.iter().map(z).collect()).collect(),
            attn_w: z(&self.attn_w),
            attn_q: z(&self.attn_q),
            lstm: self
                .lstm
                .iter()
                .map(|l| LstmLayer {
                    w: z(&l.w),
                    u: z(&l.u),
                    b: z(&l.b),
                })
                .collect(),
            fc_w: z(&self.fc_w),
            fc_b: z(&self.fc_b),
        }
    }

    /// Tensors in checkpoint order: GCN weights graph by graph and layer by
    /// layer, attention projection, attention query, then per LSTM layer
    /// `w`, `u`, `b`, then the FC weights and bias.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = self.gcn.iter().flatten().collect();
        out.push(&self.attn_w);
        out.push(&self.attn_q);
        for l in &self.lstm {
            out.extend([&l.w, &l.u, &l.b]);
        }
        out.push(&self.fc_w);
        out.push(&self.fc_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.gcn.iter_mut().flatten().collect();
        out.push(&mut self.attn_w);
        out.push(&mut self.attn_q);
        for l in &mut self.lstm {
            out.extend([&mut l.w, &mut l.u, &mut l.b]);
        }
        out.push(&mut self.fc_w);
        out.push(&mut self.fc_b);
        out
    }

    /// Human-readable names aligned with [`tensors`](Self::tensors).
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, ws) in self.gcn.iter().enumerate() {
            out.extend((0..ws.len()).map(|l| format!("gcn[{i}].w[{l}]")));
        }
        out.push("attn.w".into());
        out.push("attn.q".into());
        for k in 0..self.lstm.len() {
            out.extend(["w", "u", "b"].map(|p| format!("lstm[{k}].{p}")));
        }
        out.push("fc.w".into());
        out.push("fc.b".into());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|m| m.as_slice().len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors()
            .into_iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    /// Overwrites every tensor from a flat vector in checkpoint order.
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut offset = 0;
        for m in self.tensors_mut() {
            let len = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
    }

    pub fn add_assign(&mut self, other: &MgrnParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b).expect("matching parameter shapes");
        }
    }

    pub fn scale(&mut self, s: f64) {
        for m in self.tensors_mut() {
            m.scale(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }

    /// Shapes agree with `cfg` for `g` graphs.
    pub fn matches(&self, cfg: &ModelConfig, g: usize) -> bool {
        let shapes = |p: &MgrnParams| -> Vec<(usize, usize)> {
            p.tensors().iter().map(|m| m.shape()).collect()
        };
        shapes(self) == shapes(&MgrnParams::init(cfg, g, &mut Rng::new(0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            gcn_dims: vec![5, 3],
            attn_w: 4,
            lstm_dims: vec![4, 2],
            ..ModelConfig::new(6)
        }
    }

    #[test]
    fn shapes_follow_config() {
        let cfg = tiny();
        let p = MgrnParams::init(&cfg, 2, &mut Rng::new(1));
        let shapes: Vec<_> = p.tensors().iter().map(|m| m.shape()).collect();
        assert_eq!(
            shapes,
            vec![
                (6, 5), (5, 3), (6, 5), (5, 3),
                (3, 4), (4, 1),
                (9, 16), (4, 16), (1, 16),
                (4, 8), (2, 8), (1, 8),
                (2, 2), (1, 2),
            ]
        );
        assert_eq!(p.tensor_names().len(), shapes.len());
        assert!(p.matches(&cfg, 2));
        assert!(!p.matches(&cfg, 3));
        assert_eq!(&p.lstm[0].b.as_slice()[4..8], &[1.0; 4]);
        assert_eq!(&p.lstm[0].b.as_slice()[..4], &[0.0; 4]);
    }

    #[test]
    fn flat_roundtrip_and_determinism() {
        let cfg = tiny();
        let a = MgrnParams::init(&cfg, 3, &mut Rng::new(11));
        let b = MgrnParams::init(&cfg, 3, &mut Rng::new(11));
        assert_eq!(a, b);
        let mut c = a.zeros_like();
        c.set_flat(&a.to_flat());
        assert_eq!(a, c);
        assert_eq!(a.to_flat().len(), a.num_params());
    }
}
