use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Activation, Linear, Mlp, ParamSet, Tape, Tensor, Var};

/// Fixed 2D sinusoidal encoding, shape `[d, h·w]` with tokens in row-major order.
///
/// Channel pairs `(2k, 2k+1)` hold `(sin, cos)` of one axis position at one
/// frequency; the first half of the pairs encodes the row, the rest the column.
pub fn positional_encoding(h: usize, w: usize, d: usize) -> Result<Tensor> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::invalid(format!("positional encoding width must be even, got {d}")));
    }
    let pairs = d / 2;
    let row_pairs = pairs.div_ceil(2);
    let col_pairs = pairs - row_pairs;
    let mut data = vec![0.0; d * h * w];
    for k in 0..pairs {
        let (j, n, use_row) = if k < row_pairs { (k, row_pairs, true) } else { (k - row_pairs, col_pairs, false) };
        let omega = 1.0 / 10000f64.powf(j as f64 / n as f64);
        for r in 0..h {
            for c in 0..w {
                let pos = if use_row { r } else { c } as f64;
                let t = r * w + c;
                data[(2 * k) * h * w + t] = (pos * omega).sin();
                data[(2 * k + 1) * h * w + t] = (pos * omega).cos();
            }
        }
    }
    Tensor::new(vec![d, h * w], data)
}

/// Multi-head scaled dot-product attention over row-token matrices.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub width: usize,
}

impl MultiHeadAttention {
    pub fn new(params: &mut ParamSet, name: &str, width: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::invalid(format!("width {width} is not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(params, &format!("{name}.q"), width, width, rng),
            key: Linear::new(params, &format!("{name}.k"), width, width, rng),
            value: Linear::new(params, &format!("{name}.v"), width, width, rng),
            output: Linear::new(params, &format!("{name}.o"), width, width, rng),
            heads,
            width,
        })
    }

    /// `queries[tq, d]` attend to `keys_values[tk, d]`; masked-out keys get zero weight.
    /// Returns the output and one `[tq, tk]` weight matrix per head.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        queries: Var,
        keys_values: Var,
        key_mask: Option<&[bool]>,
    ) -> Result<(Var, Vec<Var>)> {
        let q = self.query.forward(tape, params, queries)?;
        let k = self.key.forward(tape, params, keys_values)?;
        let v = self.value.forward(tape, params, keys_values)?;
        let dh = self.width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let a = match key_mask {
                Some(m) => tape.masked_softmax(scores, 1, m.to_vec())?,
                None => tape.softmax(scores, 1)?,
            };
            outs.push(tape.matmul_order_free(a, vh)?);
            weights.push(a);
        }
        let joined = tape.concat_cols(&outs)?;
        Ok((self.output.forward(tape, params, joined)?, weights))
    }
}

fn feed_forward(params: &mut ParamSet, name: &str, width: usize, hidden: usize, rng: &mut impl Rng) -> Mlp {
    Mlp::new(params, name, &[width, hidden, width], Activation::Relu, false, rng)
}

/// Self-attention then feed-forward, each wrapped in a residual connection.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub ffn: Mlp,
}

impl EncoderLayer {
    pub fn new(params: &mut ParamSet, name: &str, cfg: &TransformerConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(EncoderLayer {
            attention: MultiHeadAttention::new(params, &format!("{name}.attn"), cfg.width, cfg.heads, rng)?,
            ffn: feed_forward(params, &format!("{name}.ffn"), cfg.width, cfg.ffn_width, rng),
        })
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var, trace: &mut Vec<Var>) -> Result<Var> {
        let (a, w) = self.attention.forward(tape, params, x, x, None)?;
        trace.extend(w);
        let x = tape.add(x, a)?;
        let f = self.ffn.forward(tape, params, x)?;
        tape.add(x, f)
    }
}

/// Query self-attention, cross-attention into the memory, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attention: MultiHeadAttention,
    pub cross_attention: MultiHeadAttention,
    pub ffn: Mlp,
}

impl DecoderLayer {
    pub fn new(params: &mut ParamSet, name: &str, cfg: &TransformerConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(DecoderLayer {
            self_attention: MultiHeadAttention::new(params, &format!("{name}.self"), cfg.width, cfg.heads, rng)?,
            cross_attention: MultiHeadAttention::new(params, &format!("{name}.cross"), cfg.width, cfg.heads, rng)?,
            ffn: feed_forward(params, &format!("{name}.ffn"), cfg.width, cfg.ffn_width, rng),
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        target: Var,
        memory: Var,
        memory_mask: Option<&[bool]>,
        trace: &mut Vec<Var>,
    ) -> Result<Var> {
        let (s, w) = self.self_attention.forward(tape, params, target, target, None)?;
        trace.extend(w);
        let t = tape.add(target, s)?;
        let (c, w) = self.cross_attention.forward(tape, params, t, memory, memory_mask)?;
        trace.extend(w);
        let t = tape.add(t, c)?;
        let f = self.ffn.forward(tape, params, t)?;
        tape.add(t, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub width: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
}

#[derive(Clone, Debug)]
pub struct Transformer {
    pub encoder: Vec<EncoderLayer>,
    pub decoder: Vec<DecoderLayer>,
}

impl Transformer {
    pub fn new(params: &mut ParamSet, name: &str, cfg: &TransformerConfig, rng: &mut impl Rng) -> Result<Self> {
        let encoder = (0..cfg.encoder_layers)
            .map(|i| EncoderLayer::new(params, &format!("{name}.enc{i}"), cfg, rng))
            .collect::<Result<_>>()?;
        let decoder = (0..cfg.decoder_layers)
            .map(|i| DecoderLayer::new(params, &format!("{name}.dec{i}"), cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Transformer { encoder, decoder })
    }

    /// Token matrix `[t, d]` → memory `[t, d]`.
    pub fn encode(&self, tape: &mut Tape, params: &ParamSet, mut x: Var, trace: &mut Vec<Var>) -> Result<Var> {
        for layer in &self.encoder {
            x = layer.forward(tape, params, x, trace)?;
        }
        Ok(x)
    }

    /// Queries `[n, d]` and memory `[t, d]` → latent `[n, d]`.
    pub fn decode(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        mut queries: Var,
        memory: Var,
        memory_mask: Option<&[bool]>,
        trace: &mut Vec<Var>,
    ) -> Result<Var> {
        for layer in &self.decoder {
            queries = layer.forward(tape, params, queries, memory, memory_mask, trace)?;
        }
        Ok(queries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encoding_examples() {
        let pe = positional_encoding(3, 4, 8).unwrap();
        assert_eq!(pe.shape(), &[8, 12]);
        for ch in 0..8 {
            let expected = if ch % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(pe.at(ch, 0), expected);
        }
        // Token 4 is row 1, column 0; channel 0 is the unit-frequency row sine.
        assert!((pe.at(0, 4) - 1f64.sin()).abs() < 1e-15);
        assert!((pe.at(0, 4) - 0.8415).abs() < 1e-4);
        assert_eq!(pe, positional_encoding(3, 4, 8).unwrap());
        assert!(positional_encoding(2, 2, 7).is_err());
    }

    fn layer_setup(seed: u64) -> (ParamSet, Transformer, TransformerConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = TransformerConfig {
            width: 8,
            heads: 2,
            ffn_width: 16,
            encoder_layers: 2,
            decoder_layers: 2,
        };
        let mut ps = ParamSet::new();
        let t = Transformer::new(&mut ps, "t", &cfg, &mut rng).unwrap();
        (ps, t, cfg)
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let (ps, t, _) = layer_setup(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::new();
        let x = tape.constant(random(&mut rng, 5, 8));
        let q = tape.constant(random(&mut rng, 3, 8));
        let mut trace = Vec::new();
        let m = t.encode(&mut tape, &ps, x, &mut trace).unwrap();
        t.decode(&mut tape, &ps, q, m, None, &mut trace).unwrap();
        assert_eq!(trace.len(), 2 * 2 + 2 * 4);
        for a in trace {
            let a = tape.value(a);
            for r in 0..a.rows() {
                assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn encoder_is_permutation_equivariant() {
        for seed in 0..10u64 {
            let (ps, t, _) = layer_setup(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let x = random(&mut rng, 6, 8);
            let mut perm: Vec<usize> = (0..6).collect();
            perm.shuffle(&mut rng);
            let run = |input: Tensor| {
                let mut tape = Tape::new();
                let v = tape.constant(input);
                let out = t.encode(&mut tape, &ps, v, &mut Vec::new()).unwrap();
                tape.value(out).clone()
            };
            let permuted = Tensor::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
            let (a, b) = (run(x), run(permuted));
            for (r, &src) in perm.iter().enumerate() {
                assert_eq!(b.row(r), a.row(src), "seed {seed}");
            }
        }
    }

    #[test]
    fn masked_duplicate_memory_token_is_invisible() {
        let (ps, t, _) = layer_setup(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mem = random(&mut rng, 4, 8);
        let queries = random(&mut rng, 3, 8);
        let mut rows: Vec<Vec<f64>> = (0..4).map(|i| mem.row(i).to_vec()).collect();
        rows.push(mem.row(1).to_vec());
        let extended = Tensor::from_rows(&rows).unwrap();
        let run = |m: Tensor, mask: Option<Vec<bool>>| {
            let mut tape = Tape::new();
            let mv = tape.constant(m);
            let qv = tape.constant(queries.clone());
            let out = t.decode(&mut tape, &ps, qv, mv, mask.as_deref(), &mut Vec::new()).unwrap();
            tape.value(out).clone()
        };
        let base = run(mem, None);
        let masked = run(extended.clone(), Some(vec![true, true, true, true, false]));
        assert_eq!(base, masked);
        // Without the mask the duplicate does change the result.
        assert_ne!(base, run(extended, None));
    }

    #[test]
    fn zero_inputs_stay_finite() {
        let (ps, t, _) = layer_setup(7);
        let mut tape = Tape::new();
        let m = tape.constant(Tensor::zeros(&[4, 8]));
        let q = tape.constant(Tensor::zeros(&[3, 8]));
        let out = t.decode(&mut tape, &ps, q, m, None, &mut Vec::new()).unwrap();
        assert!(tape.value(out).all_finite());
        assert_eq!(tape.value(out).shape(), &[3, 8]);
    }

    #[test]
    fn heads_must_divide_width() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(MultiHeadAttention::new(&mut ps, "a", 10, 4, &mut rng).is_err());
    }
}
