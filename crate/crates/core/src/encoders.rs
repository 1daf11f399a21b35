//! Per-modality event encoders producing fixed-dimension embeddings.
//!
//! Three small architectures cover the three stream types: a one-layer 1-D
//! convolution (network), a mean-pooled token-feature embedding with a
//! two-layer feedforward (email), and a single-gate tanh recurrent cell
//! (log sequences). Besides the pooled embedding, each encoder exposes its
//! per-position hidden states so downstream attention has a real key/value
//! sequence to attend over. All nonlinearities are tanh; weights initialize
//! from U[-0.1, 0.1].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::ModalityId;
use crate::numerics::{Graph, NodeId, ParamStore, Tensor2};

/// Kernel width of the 1-D convolution encoder.
pub const CONV_KERNEL_WIDTH: usize = 3;

const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderArch {
    #[serde(rename = "CONV1D")]
    Conv1d,
    #[serde(rename = "POOL_FF")]
    PoolFf,
    #[serde(rename = "RECURRENT")]
    Recurrent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub modality: ModalityId,
    pub arch: EncoderArch,
    /// Expected feature vector length of incoming events.
    pub input_dim: usize,
    /// Embedding dimension d, shared across modalities in one model.
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::config(format!(
                "{} encoder: dimensions must be positive",
                self.modality
            )));
        }
        if self.arch == EncoderArch::Conv1d && self.input_dim < CONV_KERNEL_WIDTH {
            return Err(Error::config(format!(
                "{} encoder: CONV1D needs input_dim >= {CONV_KERNEL_WIDTH}, got {}",
                self.modality, self.input_dim
            )));
        }
        Ok(())
    }

    fn name(&self, suffix: &str) -> String {
        format!("{}.enc.{suffix}", self.modality.key())
    }

    /// Number of per-position states the encoder exposes.
    pub fn state_len(&self) -> usize {
        match self.arch {
            EncoderArch::Conv1d => self.input_dim - CONV_KERNEL_WIDTH + 1,
            EncoderArch::PoolFf | EncoderArch::Recurrent => self.input_dim,
        }
    }
}

/// Registers this encoder's parameters in creation order.
pub fn init_params(cfg: &EncoderConfig, store: &mut ParamStore, rng: &mut impl rand::Rng) -> Result<()> {
    cfg.validate()?;
    let (f, d, h) = (cfg.input_dim, cfg.embed_dim, cfg.hidden_dim);
    let shapes: Vec<(String, usize, usize)> = match cfg.arch {
        EncoderArch::Conv1d => vec![
            (cfg.name("conv.w"), CONV_KERNEL_WIDTH, h),
            (cfg.name("conv.b"), 1, h),
            (cfg.name("proj.w"), h, d),
            (cfg.name("proj.b"), 1, d),
        ],
        EncoderArch::PoolFf => vec![
            (cfg.name("tok.e"), f, h),
            (cfg.name("ff.w1"), h, h),
            (cfg.name("ff.b1"), 1, h),
            (cfg.name("ff.w2"), h, d),
            (cfg.name("ff.b2"), 1, d),
        ],
        EncoderArch::Recurrent => vec![
            (cfg.name("cell.wx"), 1, h),
            (cfg.name("cell.wh"), h, h),
            (cfg.name("cell.b"), 1, h),
            (cfg.name("proj.w"), h, d),
            (cfg.name("proj.b"), 1, d),
        ],
    };
    for (name, rows, cols) in shapes {
        store.insert_uniform(&name, rows, cols, INIT_SCALE, rng)?;
    }
    Ok(())
}

/// Pooled embedding plus the per-position state sequence of one event.
pub struct EncoderStates {
    /// 1 x d summary embedding.
    pub pooled: NodeId,
    /// L x d per-position states for use as attention keys/values.
    pub states: NodeId,
}

/// Builds the encoder forward pass for one event on the given tape.
pub fn encode_states(
    g: &mut Graph,
    store: &ParamStore,
    cfg: &EncoderConfig,
    features: &[f64],
) -> Result<EncoderStates> {
    cfg.validate()?;
    if features.len() != cfg.input_dim {
        return Err(Error::shape(format!(
            "{} encoder: got {} features, expected {}",
            cfg.modality,
            features.len(),
            cfg.input_dim
        )));
    }
    match cfg.arch {
        EncoderArch::Conv1d => {
            let k = CONV_KERNEL_WIDTH;
            let l = features.len() - k + 1;
            let windows: Vec<Vec<f64>> = (0..l).map(|i| features[i..i + k].to_vec()).collect();
            let x = g.constant(Tensor2::from_rows(&windows)?);
            let wk = g.param(store, &cfg.name("conv.w"))?;
            let bk = g.param(store, &cfg.name("conv.b"))?;
            let wp = g.param(store, &cfg.name("proj.w"))?;
            let bp = g.param(store, &cfg.name("proj.b"))?;
            let conv = g.matmul(x, wk)?;
            let conv = g.add_row(conv, bk)?;
            let hidden = g.tanh(conv);
            let states = g.matmul(hidden, wp)?;
            let states = g.add_row(states, bp)?;
            let pooled = g.mean_rows(states);
            Ok(EncoderStates { pooled, states })
        }
        EncoderArch::PoolFf => {
            let f = features.len();
            // Token j is the j-th embedding-table row scaled by feature j.
            let mut diag = Tensor2::zeros(f, f);
            for (j, &v) in features.iter().enumerate() {
                diag.set(j, j, v);
            }
            let scale = g.constant(diag);
            let table = g.param(store, &cfg.name("tok.e"))?;
            let tokens = g.matmul(scale, table)?;
            let w1 = g.param(store, &cfg.name("ff.w1"))?;
            let b1 = g.param(store, &cfg.name("ff.b1"))?;
            let w2 = g.param(store, &cfg.name("ff.w2"))?;
            let b2 = g.param(store, &cfg.name("ff.b2"))?;
            let ff = |g: &mut Graph, input: NodeId| -> Result<NodeId> {
                let hidden = g.matmul(input, w1)?;
                let hidden = g.add_row(hidden, b1)?;
                let hidden = g.tanh(hidden);
                let out = g.matmul(hidden, w2)?;
                g.add_row(out, b2)
            };
            let states = ff(g, tokens)?;
            let mean_token = g.mean_rows(tokens);
            let pooled = ff(g, mean_token)?;
            Ok(EncoderStates { pooled, states })
        }
        EncoderArch::Recurrent => {
            let wx = g.param(store, &cfg.name("cell.wx"))?;
            let wh = g.param(store, &cfg.name("cell.wh"))?;
            let b = g.param(store, &cfg.name("cell.b"))?;
            let wp = g.param(store, &cfg.name("proj.w"))?;
            let bp = g.param(store, &cfg.name("proj.b"))?;
            let mut h = g.constant(Tensor2::zeros(1, cfg.hidden_dim));
            let mut stacked: Option<NodeId> = None;
            for &x_t in features {
                let drive = g.scale(wx, x_t);
                let recur = g.matmul(h, wh)?;
                let pre = g.add(recur, drive)?;
                let pre = g.add(pre, b)?;
                h = g.tanh(pre);
                stacked = Some(match stacked {
                    None => h,
                    Some(prev) => g.concat_rows(prev, h)?,
                });
            }
            let all_h = stacked.expect("input_dim > 0 guarantees at least one step");
            let states = g.matmul(all_h, wp)?;
            let states = g.add_row(states, bp)?;
            let last = g.matmul(h, wp)?;
            let pooled = g.add_row(last, bp)?;
            Ok(EncoderStates { pooled, states })
        }
    }
}

/// Encodes one feature vector to its length-d embedding.
pub fn encode(features: &[f64], cfg: &EncoderConfig, store: &ParamStore) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let out = encode_states(&mut g, store, cfg, features)?;
    Ok(g.value(out.pooled).data.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check_graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn cfg(arch: EncoderArch, input_dim: usize) -> EncoderConfig {
        EncoderConfig {
            modality: ModalityId::Network,
            arch,
            input_dim,
            embed_dim: 4,
            hidden_dim: 3,
        }
    }

    fn seeded_store(cfg: &EncoderConfig, seed: u64) -> ParamStore {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(seed);
        init_params(cfg, &mut store, &mut rng).unwrap();
        store
    }

    fn zero_store(cfg: &EncoderConfig) -> ParamStore {
        let mut store = seeded_store(cfg, 0);
        let names: Vec<String> = store.names().map(String::from).collect();
        for n in names {
            store.get_mut(&n).unwrap().data.fill(0.0);
        }
        store
    }

    #[test]
    fn zero_params_zero_input_give_zero_embedding() {
        for arch in [EncoderArch::Conv1d, EncoderArch::PoolFf, EncoderArch::Recurrent] {
            let c = cfg(arch, 6);
            let store = zero_store(&c);
            let out = encode(&[0.0; 6], &c, &store).unwrap();
            assert_eq!(out, vec![0.0; 4], "{arch:?}");
        }
    }

    #[test]
    fn output_dimension_is_embed_dim() {
        for arch in [EncoderArch::Conv1d, EncoderArch::PoolFf, EncoderArch::Recurrent] {
            let c = cfg(arch, 5);
            let store = seeded_store(&c, 3);
            let out = encode(&[0.5, -1.0, 0.25, 2.0, -0.75], &c, &store).unwrap();
            assert_eq!(out.len(), 4, "{arch:?}");
            assert!(out.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn state_sequence_lengths() {
        let conv = cfg(EncoderArch::Conv1d, 8);
        assert_eq!(conv.state_len(), 6);
        let pool = cfg(EncoderArch::PoolFf, 8);
        assert_eq!(pool.state_len(), 8);
        let rec = cfg(EncoderArch::Recurrent, 8);
        assert_eq!(rec.state_len(), 8);

        for c in [conv, pool, rec] {
            let store = seeded_store(&c, 4);
            let mut g = Graph::new();
            let out = encode_states(&mut g, &store, &c, &[0.1; 8]).unwrap();
            assert_eq!(g.value(out.states).shape(), (c.state_len(), 4));
            assert_eq!(g.value(out.pooled).shape(), (1, 4));
        }
    }

    #[test]
    fn conv_matches_direct_convolution_oracle() {
        let c = cfg(EncoderArch::Conv1d, 8);
        let store = seeded_store(&c, 9);
        let x = [0.7, -0.3, 1.2, 0.0, -1.5, 0.4, 0.9, -0.6];
        let mut g = Graph::new();
        let out = encode_states(&mut g, &store, &c, &x).unwrap();
        let states = g.value(out.states).clone();
        let pooled = g.value(out.pooled).clone();

        let wk = store.get("network.enc.conv.w").unwrap();
        let bk = store.get("network.enc.conv.b").unwrap();
        let wp = store.get("network.enc.proj.w").unwrap();
        let bp = store.get("network.enc.proj.b").unwrap();
        let (h, d) = (c.hidden_dim, c.embed_dim);
        let l = 8 - CONV_KERNEL_WIDTH + 1;
        let mut expect_pooled = vec![0.0; d];
        for pos in 0..l {
            // Direct convolution sum per channel, then tanh, then projection.
            let mut hidden = vec![0.0; h];
            for ch in 0..h {
                let mut acc = bk.get(0, ch);
                for t in 0..CONV_KERNEL_WIDTH {
                    acc += x[pos + t] * wk.get(t, ch);
                }
                hidden[ch] = acc.tanh();
            }
            for j in 0..d {
                let mut acc = bp.get(0, j);
                for ch in 0..h {
                    acc += hidden[ch] * wp.get(ch, j);
                }
                assert!((states.get(pos, j) - acc).abs() < 1e-12);
                expect_pooled[j] += acc / l as f64;
            }
        }
        for j in 0..d {
            assert!((pooled.get(0, j) - expect_pooled[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn recurrent_length_one_is_single_cell() {
        let c = cfg(EncoderArch::Recurrent, 1);
        let store = seeded_store(&c, 12);
        let x = 0.85;
        let out = encode(&[x], &c, &store).unwrap();

        let wx = store.get("network.enc.cell.wx").unwrap();
        let b = store.get("network.enc.cell.b").unwrap();
        let wp = store.get("network.enc.proj.w").unwrap();
        let bp = store.get("network.enc.proj.b").unwrap();
        // h0 = 0 so the recurrent term vanishes: h1 = tanh(x*wx + b).
        let h1: Vec<f64> = (0..c.hidden_dim)
            .map(|i| (x * wx.get(0, i) + b.get(0, i)).tanh())
            .collect();
        for j in 0..c.embed_dim {
            let mut acc = bp.get(0, j);
            for i in 0..c.hidden_dim {
                acc += h1[i] * wp.get(i, j);
            }
            assert!((out[j] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn input_dimension_checked() {
        let c = cfg(EncoderArch::PoolFf, 5);
        let store = seeded_store(&c, 1);
        assert!(encode(&[0.0; 4], &c, &store).is_err());
        let rec = cfg(EncoderArch::Recurrent, 3);
        let store = seeded_store(&rec, 1);
        assert!(encode(&[], &rec, &store).is_err());
    }

    #[test]
    fn conv_requires_kernel_width() {
        let c = cfg(EncoderArch::Conv1d, 2);
        assert!(c.validate().is_err());
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut store = ParamStore::new(0);
        assert!(init_params(&c, &mut store, &mut rng).is_err());
    }

    #[test]
    fn bounded_on_wide_inputs() {
        for arch in [EncoderArch::Conv1d, EncoderArch::PoolFf, EncoderArch::Recurrent] {
            let c = cfg(arch, 6);
            let store = seeded_store(&c, 77);
            for pattern in [[10.0; 6], [-10.0; 6], [10.0, -10.0, 10.0, -10.0, 10.0, -10.0]] {
                let out = encode(&pattern, &c, &store).unwrap();
                assert!(out.iter().all(|v| v.is_finite()), "{arch:?}");
            }
        }
    }

    #[test]
    fn deterministic_given_params() {
        for arch in [EncoderArch::Conv1d, EncoderArch::PoolFf, EncoderArch::Recurrent] {
            let c = cfg(arch, 6);
            let store = seeded_store(&c, 5);
            let x = [0.3, -0.6, 0.9, -1.2, 1.5, -1.8];
            assert_eq!(encode(&x, &c, &store).unwrap(), encode(&x, &c, &store).unwrap());
        }
    }

    #[test]
    fn gradients_check_for_every_arch() {
        for (seed, arch) in [
            (31, EncoderArch::Conv1d),
            (32, EncoderArch::PoolFf),
            (33, EncoderArch::Recurrent),
        ] {
            let c = cfg(arch, 5);
            let store = seeded_store(&c, seed);
            let x = [0.4, -0.8, 1.1, 0.2, -0.5];
            let report = grad_check_graph(&store, 1e-4, |g, s| {
                let out = encode_states(g, s, &c, &x)?;
                let a = g.mean_all(out.pooled);
                let b = g.mean_all(out.states);
                let t = g.add(a, b)?;
                // A nonlinearity after the encoder keeps the check sensitive
                // to second-order terms.
                let t = g.tanh(t);
                Ok(g.sum_all(t))
            })
            .unwrap();
            assert!(report.max_rel_err < 1e-4, "{arch:?}: {}", report.max_rel_err);
        }
    }
}
