use rand::Rng;

use crate::error::{Error, Result};
use crate::models::{binarize_value, BlockCode, CodeMode};
use crate::nn::layers::prelu_layer_gain;
use crate::nn::{Bindings, Checkpoint, Conv2d, Deconv2d, ParamStore, Prelu, Tape, Tensor, Var};

pub const BLOCK_SIZE: usize = 32;
pub const BLOCK_CHANNELS: usize = 3;
pub const BLOCK_LEN: usize = BLOCK_CHANNELS * BLOCK_SIZE * BLOCK_SIZE;

pub const BASE_WIDTHS: [usize; 5] = [64, 128, 256, 512, 1024];
pub const BASE_CODE_DIMS: [usize; 3] = [64, 216, 368];
pub const L2_EPS: f32 = 1e-12;

/// Channel widths scaled by `mult`, never below one channel.
pub fn scaled(base: usize, mult: f64) -> usize {
    ((base as f64 * mult).round() as usize).max(1)
}

pub fn scaled_widths(mult: f64) -> [usize; 5] {
    BASE_WIDTHS.map(|w| scaled(w, mult))
}

pub fn scaled_code_dims(mult: f64) -> [usize; 3] {
    BASE_CODE_DIMS.map(|c| scaled(c, mult))
}

/// Five stride-2 conv + PReLU blocks, a 1x1 conv to `code_dim` channels, sigmoid.
#[derive(Debug, Clone)]
pub struct EncoderNet {
    pub params: ParamStore<f32>,
    convs: Vec<Conv2d>,
    acts: Vec<Prelu>,
    head: Conv2d,
    code_dim: usize,
}

impl EncoderNet {
    pub fn new<R: Rng + ?Sized>(widths: [usize; 5], code_dim: usize, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let mut convs = Vec::new();
        let mut acts = Vec::new();
        let mut in_c = BLOCK_CHANNELS;
        for (i, &w) in widths.iter().enumerate() {
            convs.push(Conv2d::new(
                &mut params,
                rng,
                &format!("conv{i}"),
                in_c,
                w,
                3,
                2,
                prelu_layer_gain(),
            ));
            acts.push(Prelu::new(&mut params, &format!("act{i}"), w));
            in_c = w;
        }
        let head = Conv2d::new(&mut params, rng, "head", in_c, code_dim, 1, 1, 1.0);
        EncoderNet {
            params,
            convs,
            acts,
            head,
            code_dim,
        }
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    /// `[N, 3, 32, 32]` blocks -> `[N, code_dim, 1, 1]` codes in (0, 1).
    pub fn forward(&self, tape: &mut Tape<f32>, b: &Bindings, x: Var) -> Result<Var> {
        let (_, c, h, w) = tape.value(x).dims4("encoder")?;
        if (c, h, w) != (BLOCK_CHANNELS, BLOCK_SIZE, BLOCK_SIZE) {
            return Err(Error::shape(
                "encoder",
                format!("expected N x 3 x 32 x 32 blocks, got {:?}", tape.value(x).shape()),
            ));
        }
        let mut h = x;
        for (conv, act) in self.convs.iter().zip(&self.acts) {
            h = conv.forward(tape, b, h)?;
            h = act.forward(tape, b, h)?;
        }
        let logits = self.head.forward(tape, b, h)?;
        Ok(tape.sigmoid(logits))
    }

    /// Continuous codes for a batch of blocks, without recording gradients.
    pub fn encode_batch(&self, blocks: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let b = tape.bind_frozen(&self.params);
        let x = tape.input(blocks.clone());
        let y = self.forward(&mut tape, &b, x)?;
        Ok(tape.value(y).clone())
    }

    pub fn encode_block(&self, block: &Tensor<f32>) -> Result<BlockCode> {
        let batch = as_block_batch(block)?;
        let codes = self.encode_batch(&batch)?;
        BlockCode::continuous(codes.into_data())
    }

    /// Zeroes the output layer so every code entry is exactly `sigmoid(0)`.
    pub fn zero_head(&mut self) {
        for id in [self.head.weight, self.head.bias] {
            self.params.get_mut(id).value.data_mut().fill(0.0);
        }
    }
}

/// L2 normalization, five deconv + PReLU blocks, a 1x1 conv to RGB, sigmoid.
#[derive(Debug, Clone)]
pub struct DecoderNet {
    pub params: ParamStore<f32>,
    deconvs: Vec<Deconv2d>,
    acts: Vec<Prelu>,
    head: Conv2d,
    code_dim: usize,
}

impl DecoderNet {
    pub fn new<R: Rng + ?Sized>(widths: [usize; 5], code_dim: usize, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let mut deconvs = Vec::new();
        let mut acts = Vec::new();
        let mut in_c = code_dim;
        for (i, &w) in widths.iter().rev().enumerate() {
            deconvs.push(Deconv2d::new(
                &mut params,
                rng,
                &format!("deconv{i}"),
                in_c,
                w,
                prelu_layer_gain(),
            ));
            acts.push(Prelu::new(&mut params, &format!("act{i}"), w));
            in_c = w;
        }
        let head = Conv2d::new(&mut params, rng, "head", in_c, BLOCK_CHANNELS, 1, 1, 1.0);
        DecoderNet {
            params,
            deconvs,
            acts,
            head,
            code_dim,
        }
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    /// `[N, code_dim, 1, 1]` codes -> `[N, 3, 32, 32]` blocks in (0, 1).
    pub fn forward(&self, tape: &mut Tape<f32>, b: &Bindings, code: Var) -> Result<Var> {
        let (_, c, h, w) = tape.value(code).dims4("decoder")?;
        if (c, h, w) != (self.code_dim, 1, 1) {
            return Err(Error::shape(
                "decoder",
                format!(
                    "expected N x {} x 1 x 1 codes, got {:?}",
                    self.code_dim,
                    tape.value(code).shape()
                ),
            ));
        }
        let mut h = tape.l2_normalize(code, L2_EPS)?;
        for (deconv, act) in self.deconvs.iter().zip(&self.acts) {
            h = deconv.forward(tape, b, h)?;
            h = act.forward(tape, b, h)?;
        }
        let logits = self.head.forward(tape, b, h)?;
        Ok(tape.sigmoid(logits))
    }

    pub fn decode_batch(&self, codes: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let b = tape.bind_frozen(&self.params);
        let x = tape.input(codes.clone());
        let y = self.forward(&mut tape, &b, x)?;
        Ok(tape.value(y).clone())
    }

    /// Reconstructs one `[1, 3, 32, 32]` block from a code of either mode.
    pub fn decode_block(&self, code: &BlockCode) -> Result<Tensor<f32>> {
        if code.len() != self.code_dim {
            return Err(Error::shape(
                "decode_block",
                format!("code of length {} for a {}-dim decoder", code.len(), self.code_dim),
            ));
        }
        self.decode_batch(&code.to_tensor())
    }
}

/// One encoder/decoder pair of the family.
#[derive(Debug, Clone)]
pub struct AutoEncoder {
    pub encoder: EncoderNet,
    pub decoder: DecoderNet,
}

impl AutoEncoder {
    pub fn new<R: Rng + ?Sized>(width_mult: f64, code_dim: usize, rng: &mut R) -> Self {
        let widths = scaled_widths(width_mult);
        AutoEncoder {
            encoder: EncoderNet::new(widths, code_dim, rng),
            decoder: DecoderNet::new(widths, code_dim, rng),
        }
    }

    pub fn code_dim(&self) -> usize {
        self.encoder.code_dim
    }

    /// Encodes, optionally binarizes, and decodes a batch of blocks.
    pub fn reconstruct(&self, blocks: &Tensor<f32>, mode: CodeMode) -> Result<Tensor<f32>> {
        let mut codes = self.encoder.encode_batch(blocks)?;
        if mode == CodeMode::Binary {
            codes.data_mut().iter_mut().for_each(|v| *v = binarize_value(*v));
        }
        self.decoder.decode_batch(&codes)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        ckpt.insert_store("encoder.", &self.encoder.params)?;
        ckpt.insert_store("decoder.", &self.decoder.params)?;
        Ok(ckpt)
    }

    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.restore_store("encoder.", &mut self.encoder.params)?;
        ckpt.restore_store("decoder.", &mut self.decoder.params)
    }
}

/// Accepts `[3, 32, 32]` or `[1, 3, 32, 32]`.
pub(crate) fn as_block_batch(block: &Tensor<f32>) -> Result<Tensor<f32>> {
    match block.shape() {
        [3, 32, 32] | [1, 3, 32, 32] => block.clone().reshape(vec![1, 3, 32, 32]),
        other => Err(Error::shape(
            "block",
            format!("expected a 3 x 32 x 32 block, got {other:?}"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![3, 32, 32], (0..BLOCK_LEN).map(|_| rng.random()).collect()).unwrap()
    }

    fn pair(code_dim: usize) -> AutoEncoder {
        AutoEncoder::new(0.125, code_dim, &mut ChaCha8Rng::seed_from_u64(7))
    }

    #[test]
    fn paper_widths_and_scaling() {
        assert_eq!(scaled_widths(1.0), BASE_WIDTHS);
        assert_eq!(scaled_widths(0.25), [16, 32, 64, 128, 256]);
        assert_eq!(scaled_code_dims(0.25), [16, 54, 92]);
    }

    #[test]
    fn encode_decode_shape_chain_for_every_code_dim() {
        for dim in [16, 54, 92] {
            let ae = pair(dim);
            let code = ae.encoder.encode_block(&block(1)).unwrap();
            assert_eq!(code.len(), dim);
            assert!(code.values().iter().all(|&v| v > 0.0 && v < 1.0));
            let out = ae.decoder.decode_block(&code).unwrap();
            assert_eq!(out.shape(), &[1, 3, 32, 32]);
            assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn paper_scale_encoder_emits_216_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = EncoderNet::new(BASE_WIDTHS, 216, &mut rng);
        let code = enc.encode_block(&block(2)).unwrap();
        assert_eq!(code.len(), 216);
        assert!(code.values().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_head_gives_half_everywhere() {
        let mut ae = pair(16);
        ae.encoder.zero_head();
        let code = ae.encoder.encode_block(&block(3)).unwrap();
        assert!(code.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn encoding_and_decoding_are_deterministic() {
        let ae = pair(16);
        let a = ae.encoder.encode_block(&block(4)).unwrap();
        let b = ae.encoder.encode_block(&block(4)).unwrap();
        assert_eq!(a, b);
        let bits = BlockCode::from_bits(&(0..16).map(|i| i % 3 == 0).collect::<Vec<_>>());
        assert_eq!(
            ae.decoder.decode_block(&bits).unwrap(),
            ae.decoder.decode_block(&bits).unwrap()
        );
    }

    #[test]
    fn decoder_is_invariant_to_code_scale() {
        let ae = pair(54);
        let code = ae.encoder.encode_block(&block(5)).unwrap();
        let doubled = BlockCode::unchecked(code.values().iter().map(|v| v * 2.0).collect());
        let a = ae.decoder.decode_block(&code).unwrap();
        let b = ae.decoder.decode_block(&doubled).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn wrong_sizes_are_rejected() {
        let ae = pair(16);
        let small = Tensor::<f32>::zeros(vec![3, 16, 16]);
        assert!(ae.encoder.encode_block(&small).is_err());
        assert!(ae.decoder.decode_block(&BlockCode::from_bits(&[true; 15])).is_err());
    }

    #[test]
    fn checkpoint_round_trip_restores_weights() {
        let ae = pair(16);
        let ckpt = ae.to_checkpoint().unwrap();
        let mut other = AutoEncoder::new(0.125, 16, &mut ChaCha8Rng::seed_from_u64(99));
        assert_ne!(other.encoder.params, ae.encoder.params);
        other.load_checkpoint(&ckpt).unwrap();
        assert_eq!(other.encoder.params, ae.encoder.params);
        assert_eq!(other.decoder.params, ae.decoder.params);
    }
}
