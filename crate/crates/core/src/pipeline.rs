//! Image encode/decode: padding, per-block code optimization and network
//! selection, lossless coding into a container, and reconstruction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bitstream::{
    arithmetic_decode, arithmetic_encode, decode_indicator, difference_decode, difference_encode, encode_indicator,
    parse_container, serialize_container, BitVector, BitstreamError, Container, IndicatorVector,
};
use crate::error::{Error, Result};
use crate::eval::block_psnr;
use crate::imageio::RgbImage;
use crate::models::{
    binarization_noise_offsets, binarize_value, crop, AutoEncoder, BlockCode, NetworkFamily, BLOCK_LEN, BLOCK_SIZE,
    DEFAULT_LAMBDA, DEFAULT_TARGET_PSNR,
};
use crate::nn::{AdamConfig, AdamState, Tape, Tensor};
use crate::training::{meets_target, mix_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    pub target_psnr: f64,
    /// Code-optimization steps per block and network; 0 disables it.
    pub max_steps: usize,
    pub lr: f64,
    pub eval_every: usize,
    pub deblock: bool,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            target_psnr: DEFAULT_TARGET_PSNR,
            max_steps: 100,
            lr: 1e-3,
            eval_every: 10,
            deblock: true,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
        }
    }
}

impl CodecConfig {
    pub fn without_code_opt(mut self) -> Self {
        self.max_steps = 0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_psnr.is_nan() {
            return Err(Error::InvalidArgument("target PSNR must be a number".into()));
        }
        if self.max_steps > 0 && self.eval_every == 0 {
            return Err(Error::InvalidArgument("eval_every must be positive".into()));
        }
        if self.lr.is_nan() || self.lr < 0.0 || self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::InvalidArgument("lr and lambda must be non-negative".into()));
        }
        Ok(())
    }
}

/// Pads on the bottom/right by edge replication to multiples of 32.
/// Returns the padded image and the original `(width, height)`.
pub fn pad_image(img: &RgbImage) -> Result<(RgbImage, (usize, usize))> {
    if img.width == 0 || img.height == 0 {
        return Err(Error::Image("image has zero size".into()));
    }
    let (w, h) = (
        img.width.div_ceil(BLOCK_SIZE) * BLOCK_SIZE,
        img.height.div_ceil(BLOCK_SIZE) * BLOCK_SIZE,
    );
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            data.extend_from_slice(&img.pixel(x.min(img.width - 1), y.min(img.height - 1)));
        }
    }
    Ok((RgbImage::new(w, h, data)?, (img.width, img.height)))
}

/// `[rows*cols, 3, 32, 32]` blocks of a padded image in raster order.
fn image_blocks(padded: &RgbImage) -> Tensor<f32> {
    let t = padded.to_tensor();
    let (w, h) = (padded.width, padded.height);
    let mut data = Vec::with_capacity(w * h * 3);
    for by in (0..h).step_by(BLOCK_SIZE) {
        for bx in (0..w).step_by(BLOCK_SIZE) {
            for c in 0..3 {
                for row in 0..BLOCK_SIZE {
                    let start = (c * h + by + row) * w + bx;
                    data.extend_from_slice(&t.data()[start..start + BLOCK_SIZE]);
                }
            }
        }
    }
    Tensor::new(vec![w * h / (BLOCK_SIZE * BLOCK_SIZE), 3, BLOCK_SIZE, BLOCK_SIZE], data).expect("shape")
}

/// Inverse of `image_blocks`: `[1, 3, rows*32, cols*32]`.
fn stitch_blocks(blocks: &[f32], rows: usize, cols: usize) -> Tensor<f32> {
    let (h, w) = (rows * BLOCK_SIZE, cols * BLOCK_SIZE);
    let mut out = vec![0.0f32; 3 * h * w];
    for (i, block) in blocks.chunks_exact(BLOCK_LEN).enumerate() {
        let (by, bx) = ((i / cols) * BLOCK_SIZE, (i % cols) * BLOCK_SIZE);
        for c in 0..3 {
            for row in 0..BLOCK_SIZE {
                let src = &block[(c * BLOCK_SIZE + row) * BLOCK_SIZE..][..BLOCK_SIZE];
                out[(c * h + by + row) * w + bx..][..BLOCK_SIZE].copy_from_slice(src);
            }
        }
    }
    Tensor::new(vec![1, 3, h, w], out).expect("shape")
}

/// Outcome of coding one block with one network.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeOptResult {
    /// Binary code with the best real-binarized PSNR seen.
    pub code: BlockCode,
    pub psnr: f64,
    /// PSNR of the plain (unoptimized) encoding.
    pub initial_psnr: f64,
    pub steps: usize,
}

fn evaluate_code(pair: &AutoEncoder, enc: &crate::models::EncoderNet, block: &Tensor<f32>) -> Result<(BlockCode, f64)> {
    let bits: Vec<bool> = enc
        .encode_batch(block)?
        .data()
        .iter()
        .map(|&v| binarize_value(v) == 1.0)
        .collect();
    let code = BlockCode::from_bits(&bits);
    let recon = pair.decoder.decode_block(&code)?;
    Ok((code, block_psnr(block.data(), recon.data())))
}

/// Fine-tunes a copy of the pair's encoder on a single block against the
/// frozen decoder. Candidates are scored with real binarization at step 0
/// and every `eval_every` steps; the best one is kept, so the result never
/// scores below the plain encoding. Stops early once the target is met.
pub fn optimize_block_code(
    pair: &AutoEncoder,
    block: &Tensor<f32>,
    cfg: &CodecConfig,
    seed: u64,
) -> Result<CodeOptResult> {
    cfg.validate()?;
    let block = crate::models::as_block_batch(block)?;
    let (code, psnr) = evaluate_code(pair, &pair.encoder, &block)?;
    let mut best = CodeOptResult {
        code,
        psnr,
        initial_psnr: psnr,
        steps: 0,
    };
    if cfg.max_steps == 0 || meets_target(psnr, cfg.target_psnr) {
        return Ok(best);
    }
    let mut enc = pair.encoder.clone();
    enc.params.set_trainable(true);
    let mut opt = AdamState::new(
        &enc.params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for step in 1..=cfg.max_steps {
        let mut tape = Tape::new();
        let eb = tape.bind(&enc.params);
        let db = tape.bind_frozen(&pair.decoder.params);
        let x = tape.input(block.clone());
        let code = enc.forward(&mut tape, &eb, x)?;
        let noise = binarization_noise_offsets(tape.value(code).data(), &mut rng);
        let noisy = tape.offset(code, &noise)?;
        let recon = pair.decoder.forward(&mut tape, &db, noisy)?;
        let mse = tape.mse(recon, x)?;
        let ent = tape.entropy_friendly(code)?;
        let weighted = tape.scale(ent, cfg.lambda as f32);
        let loss = tape.add(mse, weighted)?;
        let mut grads = tape.backward(loss)?;
        enc.params.accumulate_grads(&mut grads, &eb);
        opt.step(&mut enc.params)?;
        enc.params.zero_grad();

        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let (code, psnr) = evaluate_code(pair, &enc, &block)?;
            best.steps = step;
            if psnr > best.psnr {
                best.code = code;
                best.psnr = psnr;
            }
            if meets_target(best.psnr, cfg.target_psnr) {
                break;
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockChoice {
    pub symbol: u8,
    pub code: BlockCode,
    pub psnr: f64,
    /// Plain-encoding PSNR under the chosen network.
    pub initial_psnr: f64,
}

/// Tries the networks from shortest to longest code and keeps the first that
/// meets the target; falls back to the longest.
pub fn select_and_encode_block(
    family: &NetworkFamily,
    block: &Tensor<f32>,
    cfg: &CodecConfig,
    block_index: usize,
) -> Result<BlockChoice> {
    let mut last = None;
    for (i, pair) in family.pairs.iter().enumerate() {
        let seed = mix_seed(&[cfg.seed, block_index as u64, i as u64]);
        let r = optimize_block_code(pair, block, cfg, seed)?;
        let choice = BlockChoice {
            symbol: i as u8,
            code: r.code,
            psnr: r.psnr,
            initial_psnr: r.initial_psnr,
        };
        if meets_target(choice.psnr, cfg.target_psnr) {
            return Ok(choice);
        }
        last = Some(choice);
    }
    last.ok_or_else(|| Error::InvalidArgument("network family is empty".into()))
}

/// Everything carried by a container, before lossless coding.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedImage {
    pub width: usize,
    pub height: usize,
    pub block_rows: usize,
    pub block_cols: usize,
    pub target_psnr: f64,
    pub indicator: IndicatorVector,
    /// Concatenated binary block-codes in raster order.
    pub image_code: BitVector,
}

impl EncodedImage {
    pub fn to_container(&self) -> Result<Container> {
        let too_big = |what: &str| Error::InvalidArgument(format!("{what} does not fit the container"));
        Ok(Container {
            width: u32::try_from(self.width).map_err(|_| too_big("width"))?,
            height: u32::try_from(self.height).map_err(|_| too_big("height"))?,
            block_rows: u16::try_from(self.block_rows).map_err(|_| too_big("block rows"))?,
            block_cols: u16::try_from(self.block_cols).map_err(|_| too_big("block columns"))?,
            target_psnr: self.target_psnr as f32,
            indicator: encode_indicator(&self.indicator),
            code_bits: u32::try_from(self.image_code.len()).map_err(|_| too_big("image code"))?,
            code: arithmetic_encode(&difference_encode(&self.image_code)),
        })
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let (rows, cols) = (c.block_rows as usize, c.block_cols as usize);
        let (w, h) = (c.width as usize, c.height as usize);
        if w == 0 || h == 0 || rows != h.div_ceil(BLOCK_SIZE) || cols != w.div_ceil(BLOCK_SIZE) {
            return Err(
                BitstreamError::Corrupt(format!("{w}x{h} image does not match a {rows}x{cols} block grid")).into(),
            );
        }
        let indicator = decode_indicator(&c.indicator, rows * cols)?;
        let image_code = difference_decode(&arithmetic_decode(&c.code, c.code_bits as usize)?);
        Ok(EncodedImage {
            width: w,
            height: h,
            block_rows: rows,
            block_cols: cols,
            target_psnr: c.target_psnr as f64,
            indicator,
            image_code,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serialize_container(&self.to_container()?))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(&parse_container(bytes)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeReport {
    pub bytes: usize,
    pub pixels: usize,
    pub code_bits: usize,
    pub histogram: [usize; 3],
    /// Real-binarized PSNR of each block (float reconstruction, padded block).
    pub block_psnr: Vec<f64>,
    /// Same, without code optimization, under the chosen network.
    pub initial_block_psnr: Vec<f64>,
}

impl EncodeReport {
    pub fn bpp(&self) -> f64 {
        self.bytes as f64 * 8.0 / self.pixels as f64
    }

    pub fn code_bpp(&self) -> f64 {
        self.code_bits as f64 / self.pixels as f64
    }

    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        format!(
            "bytes={}\npixels={}\nbpp={:.6}\ncode_bits={}\ncode_bpp={:.6}\nblocks_net0={}\nblocks_net1={}\nblocks_net2={}\n",
            self.bytes,
            self.pixels,
            self.bpp(),
            self.code_bits,
            self.code_bpp(),
            self.histogram[0],
            self.histogram[1],
            self.histogram[2]
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeOutcome {
    pub bytes: Vec<u8>,
    pub encoded: EncodedImage,
    pub report: EncodeReport,
}

pub fn encode_image(img: &RgbImage, family: &NetworkFamily, cfg: &CodecConfig) -> Result<EncodeOutcome> {
    family.validate()?;
    cfg.validate()?;
    let (padded, (width, height)) = pad_image(img)?;
    let (rows, cols) = (padded.height / BLOCK_SIZE, padded.width / BLOCK_SIZE);
    let blocks = image_blocks(&padded);
    let mut symbols = Vec::with_capacity(rows * cols);
    let mut image_code = BitVector::new();
    let mut block_psnr = Vec::with_capacity(rows * cols);
    let mut initial_block_psnr = Vec::with_capacity(rows * cols);
    let mut expected_bits = 0;
    for (i, block) in blocks.data().chunks_exact(BLOCK_LEN).enumerate() {
        let block = Tensor::new(vec![1, 3, BLOCK_SIZE, BLOCK_SIZE], block.to_vec())?;
        let choice = select_and_encode_block(family, &block, cfg, i)?;
        let bits = choice
            .code
            .bits()
            .ok_or_else(|| Error::InvalidArgument("selected code is not binary".into()))?;
        expected_bits += family.pairs[choice.symbol as usize].code_dim();
        image_code.extend_from_slice(&bits);
        symbols.push(choice.symbol);
        block_psnr.push(choice.psnr);
        initial_block_psnr.push(choice.initial_psnr);
    }
    if image_code.len() != expected_bits {
        return Err(Error::InvalidArgument(format!(
            "image code has {} bits, indicator implies {expected_bits}",
            image_code.len()
        )));
    }
    let encoded = EncodedImage {
        width,
        height,
        block_rows: rows,
        block_cols: cols,
        target_psnr: cfg.target_psnr,
        indicator: IndicatorVector::new(symbols)?,
        image_code,
    };
    let bytes = encoded.to_bytes()?;
    let report = EncodeReport {
        bytes: bytes.len(),
        pixels: width * height,
        code_bits: encoded.image_code.len(),
        histogram: encoded.indicator.histogram(),
        block_psnr,
        initial_block_psnr,
    };
    Ok(EncodeOutcome { bytes, encoded, report })
}

/// Reconstructs an image from its decoded container contents.
pub fn decode_encoded(encoded: &EncodedImage, family: &NetworkFamily, deblock: bool) -> Result<RgbImage> {
    family.validate()?;
    let symbols = encoded.indicator.symbols();
    let dims: Vec<usize> = symbols.iter().map(|&s| family.pairs[s as usize].code_dim()).collect();
    let expected: usize = dims.iter().sum();
    if expected != encoded.image_code.len() {
        return Err(BitstreamError::Corrupt(format!(
            "indicator implies {expected} code bits, stream carries {}",
            encoded.image_code.len()
        ))
        .into());
    }
    let bits = encoded.image_code.as_slice();
    let mut offsets = Vec::with_capacity(dims.len());
    let mut at = 0;
    for d in &dims {
        offsets.push(at);
        at += d;
    }
    let mut blocks = vec![0.0f32; symbols.len() * BLOCK_LEN];
    for (net, pair) in family.pairs.iter().enumerate() {
        let members: Vec<usize> = (0..symbols.len()).filter(|&b| symbols[b] as usize == net).collect();
        if members.is_empty() {
            continue;
        }
        let d = pair.code_dim();
        let mut codes = Vec::with_capacity(members.len() * d);
        for &b in &members {
            codes.extend(bits[offsets[b]..offsets[b] + d].iter().map(|&x| x as u8 as f32));
        }
        let recon = pair
            .decoder
            .decode_batch(&Tensor::new(vec![members.len(), d, 1, 1], codes)?)?;
        for (&b, r) in members.iter().zip(recon.data().chunks_exact(BLOCK_LEN)) {
            blocks[b * BLOCK_LEN..(b + 1) * BLOCK_LEN].copy_from_slice(r);
        }
    }
    let full = stitch_blocks(&blocks, encoded.block_rows, encoded.block_cols);
    let mut out = crop(&full, encoded.height, encoded.width);
    if deblock {
        if let Some(net) = &family.deblocker {
            out = net.deblock(&out)?;
        }
    }
    RgbImage::from_tensor(&out)
}

pub fn decode_image(bytes: &[u8], family: &NetworkFamily, cfg: &CodecConfig) -> Result<RgbImage> {
    decode_encoded(&EncodedImage::from_bytes(bytes)?, family, cfg.deblock)
}

/// Encode followed by decode.
pub fn reconstruct(img: &RgbImage, family: &NetworkFamily, cfg: &CodecConfig) -> Result<RgbImage> {
    let out = encode_image(img, family, cfg)?;
    decode_encoded(&out.encoded, family, cfg.deblock)
}
