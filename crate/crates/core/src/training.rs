//! Block datasets and the multi-stage training schedule: alternate
//! end-to-end / decoder-only epochs, difficulty partitioning, expert and
//! decoder fine-tuning, and deblocker training.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::block_psnr;
use crate::imageio::RgbImage;
use crate::models::{
    binarization_noise_offsets, binarize_value, AutoEncoder, CodeMode, DeblockNet, NetworkFamily, BLOCK_LEN,
    BLOCK_SIZE, DEFAULT_LAMBDA, DEFAULT_TARGET_PSNR,
};
use crate::nn::{AdamConfig, AdamState, Checkpoint, ParamStore, Tape, Tensor, TensorData};
use crate::pipeline::{self, CodecConfig};

/// Extraction stride without augmentation.
pub const PLAIN_STRIDE: usize = BLOCK_SIZE;
/// Half-overlapping extraction stride.
pub const AUGMENTED_STRIDE: usize = BLOCK_SIZE / 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub width_mult: f64,
    pub target_psnr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch: 256,
            lambda: DEFAULT_LAMBDA,
            epochs: 10,
            seed: 0,
            width_mult: 1.0,
            target_psnr: DEFAULT_TARGET_PSNR,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a finite non-negative number");
        }
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return bad("lambda must be non-negative");
        }
        if !(self.width_mult > 0.0 && self.width_mult <= 1.0) {
            return bad("width multiplier must lie in (0, 1]");
        }
        if self.target_psnr.is_nan() {
            return bad("target PSNR must be a number");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockOrigin {
    pub image: usize,
    pub y: usize,
    pub x: usize,
}

/// 32x32 RGB blocks in [0, 1], stored planar (CHW) one after another.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDataset {
    data: Vec<f32>,
    origins: Vec<BlockOrigin>,
    stride: usize,
}

/// Cuts every image (padded to multiples of 32) into blocks in raster order.
pub fn extract_blocks(images: &[RgbImage], stride: usize) -> Result<BlockDataset> {
    if stride == 0 {
        return Err(Error::InvalidArgument("block stride must be positive".into()));
    }
    let mut data = Vec::new();
    let mut origins = Vec::new();
    for (image, img) in images.iter().enumerate() {
        let (padded, _) = pipeline::pad_image(img)?;
        let t = padded.to_tensor();
        let (w, h) = (padded.width, padded.height);
        for y in (0..=h - BLOCK_SIZE).step_by(stride) {
            for x in (0..=w - BLOCK_SIZE).step_by(stride) {
                for c in 0..3 {
                    for row in 0..BLOCK_SIZE {
                        let start = (c * h + y + row) * w + x;
                        data.extend_from_slice(&t.data()[start..start + BLOCK_SIZE]);
                    }
                }
                origins.push(BlockOrigin { image, y, x });
            }
        }
    }
    Ok(BlockDataset { data, origins, stride })
}

impl BlockDataset {
    /// Builds a dataset from planar blocks; `data.len()` must be a multiple of 3072.
    pub fn from_blocks(data: Vec<f32>, origins: Vec<BlockOrigin>, stride: usize) -> Result<Self> {
        if data.len() != origins.len() * BLOCK_LEN {
            return Err(Error::shape(
                "BlockDataset",
                format!("{} values for {} blocks", data.len(), origins.len()),
            ));
        }
        Ok(BlockDataset { data, origins, stride })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn origins(&self) -> &[BlockOrigin] {
        &self.origins
    }

    pub fn block(&self, i: usize) -> &[f32] {
        &self.data[i * BLOCK_LEN..(i + 1) * BLOCK_LEN]
    }

    pub fn block_tensor(&self, i: usize) -> Tensor<f32> {
        Tensor::new(vec![1, 3, BLOCK_SIZE, BLOCK_SIZE], self.block(i).to_vec()).expect("block shape")
    }

    /// `[B, 3, 32, 32]` tensor of the listed blocks.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let mut data = Vec::with_capacity(indices.len() * BLOCK_LEN);
        for &i in indices {
            data.extend_from_slice(self.block(i));
        }
        Tensor::new(vec![indices.len(), 3, BLOCK_SIZE, BLOCK_SIZE], data).expect("block shape")
    }

    pub fn subset(&self, indices: &[usize]) -> BlockDataset {
        BlockDataset {
            data: self.batch(indices).into_data(),
            origins: indices.iter().map(|&i| self.origins[i]).collect(),
            stride: self.stride,
        }
    }

    /// Stores the blocks in the checkpoint format (`blocks` and `origins` entries).
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        ckpt.push_f32("blocks", vec![self.len(), 3, BLOCK_SIZE, BLOCK_SIZE], self.data.clone())?;
        let origins = self
            .origins
            .iter()
            .flat_map(|o| [o.image as f64, o.y as f64, o.x as f64])
            .collect();
        ckpt.push("origins", vec![self.len(), 3], TensorData::F64(origins))?;
        ckpt.push("stride", vec![1], TensorData::F64(vec![self.stride as f64]))?;
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let data = ckpt.get_f32("blocks")?.to_vec();
        let f64s = |name: &str| match ckpt.get(name).map(|e| &e.data) {
            Some(TensorData::F64(v)) => Ok(v.clone()),
            _ => Err(Error::Checkpoint(format!("missing f64 entry `{name}`"))),
        };
        let origins = f64s("origins")?
            .chunks_exact(3)
            .map(|c| BlockOrigin {
                image: c[0] as usize,
                y: c[1] as usize,
                x: c[2] as usize,
            })
            .collect();
        let stride = f64s("stride")?.first().copied().unwrap_or(PLAIN_STRIDE as f64) as usize;
        Self::from_blocks(data, origins, stride)
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x9E37_79B9_7F4A_7C15u64, |acc, &p| {
        let mut z = acc ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}

const STAGE_E2E: u64 = 1;
const STAGE_DECODER: u64 = 2;
const STAGE_DEBLOCK: u64 = 3;

fn stage_rng(seed: u64, stage: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(&[seed, stage, epoch as u64]))
}

fn shuffled(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochMetrics {
    /// Mean optimized loss per block.
    pub loss: f64,
    /// Mean reconstruction MSE per block, [0, 1] scale.
    pub mse: f64,
    /// Mean entropy-friendly penalty per block (zero for decoder-only epochs).
    pub entropy: f64,
}

/// An auto-encoder with its optimizer state and epoch counter.
#[derive(Debug, Clone)]
pub struct PairTrainer {
    pub pair: AutoEncoder,
    pub encoder_opt: AdamState<f32>,
    pub decoder_opt: AdamState<f32>,
    pub epochs_done: usize,
}

impl PairTrainer {
    pub fn new(pair: AutoEncoder, cfg: &TrainConfig) -> Self {
        let encoder_opt = AdamState::new(&pair.encoder.params, cfg.adam());
        let decoder_opt = AdamState::new(&pair.decoder.params, cfg.adam());
        PairTrainer {
            pair,
            encoder_opt,
            decoder_opt,
            epochs_done: 0,
        }
    }

    /// Weights, Adam moments and counters: everything needed to resume.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = self.pair.to_checkpoint()?;
        for (prefix, store, opt) in [
            ("encoder", &self.pair.encoder.params, &self.encoder_opt),
            ("decoder", &self.pair.decoder.params, &self.decoder_opt),
        ] {
            for ((p, m), v) in store.iter().zip(&opt.first_moment).zip(&opt.second_moment) {
                let shape = p.value.shape().to_vec();
                ckpt.push_f32(format!("adam.m.{prefix}.{}", p.name), shape.clone(), m.clone())?;
                ckpt.push_f32(format!("adam.v.{prefix}.{}", p.name), shape, v.clone())?;
            }
            ckpt.push(
                format!("adam.step.{prefix}"),
                vec![1],
                TensorData::F64(vec![opt.step as f64]),
            )?;
        }
        ckpt.push("epochs_done", vec![1], TensorData::F64(vec![self.epochs_done as f64]))?;
        Ok(ckpt)
    }

    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        self.pair.load_checkpoint(ckpt)?;
        let scalar = |name: &str| match ckpt.get(name).map(|e| &e.data) {
            Some(TensorData::F64(v)) if v.len() == 1 => Ok(v[0]),
            _ => Err(Error::Checkpoint(format!("missing scalar `{name}`"))),
        };
        for (prefix, store, opt) in [
            ("encoder", &self.pair.encoder.params, &mut self.encoder_opt),
            ("decoder", &self.pair.decoder.params, &mut self.decoder_opt),
        ] {
            for (i, p) in store.iter().enumerate() {
                opt.first_moment[i] = ckpt.get_f32(&format!("adam.m.{prefix}.{}", p.name))?.to_vec();
                opt.second_moment[i] = ckpt.get_f32(&format!("adam.v.{prefix}.{}", p.name))?.to_vec();
            }
            opt.step = scalar(&format!("adam.step.{prefix}"))? as u64;
        }
        self.epochs_done = scalar("epochs_done")? as usize;
        Ok(())
    }
}

fn apply_grads(
    store: &mut ParamStore<f32>,
    opt: &mut AdamState<f32>,
    grads: &mut crate::nn::Gradients<f32>,
    b: &crate::nn::Bindings,
) -> Result<()> {
    store.accumulate_grads(grads, b);
    opt.step(store)?;
    store.zero_grad();
    Ok(())
}

/// One pass of end-to-end training with simulated binarization.
pub fn train_epoch_e2e(trainer: &mut PairTrainer, data: &BlockDataset, cfg: &TrainConfig) -> Result<EpochMetrics> {
    cfg.validate()?;
    let mut rng = stage_rng(cfg.seed, STAGE_E2E, trainer.epochs_done);
    let order = shuffled(data.len(), &mut rng);
    let mut sums = EpochMetrics::default();
    let PairTrainer {
        pair,
        encoder_opt,
        decoder_opt,
        ..
    } = trainer;
    pair.encoder.params.set_trainable(true);
    pair.decoder.params.set_trainable(true);
    for chunk in order.chunks(cfg.batch) {
        let mut tape = Tape::new();
        let eb = tape.bind(&pair.encoder.params);
        let db = tape.bind(&pair.decoder.params);
        let x = tape.input(data.batch(chunk));
        let code = pair.encoder.forward(&mut tape, &eb, x)?;
        let noise = binarization_noise_offsets(tape.value(code).data(), &mut rng);
        let noisy = tape.offset(code, &noise)?;
        let recon = pair.decoder.forward(&mut tape, &db, noisy)?;
        let mse = tape.mse(recon, x)?;
        let ent = tape.entropy_friendly(code)?;
        let weighted = tape.scale(ent, cfg.lambda as f32);
        let loss = tape.add(mse, weighted)?;

        let n = chunk.len() as f64;
        sums.loss += tape.value(loss).data()[0] as f64 * n;
        sums.mse += tape.value(mse).data()[0] as f64 * n;
        sums.entropy += tape.value(ent).data()[0] as f64 * n;

        let mut grads = tape.backward(loss)?;
        apply_grads(&mut pair.encoder.params, encoder_opt, &mut grads, &eb)?;
        apply_grads(&mut pair.decoder.params, decoder_opt, &mut grads, &db)?;
    }
    Ok(mean_metrics(sums, data.len()))
}

/// One pass training only the decoder on hard-binarized codes of the frozen encoder.
pub fn train_epoch_decoder(trainer: &mut PairTrainer, data: &BlockDataset, cfg: &TrainConfig) -> Result<EpochMetrics> {
    cfg.validate()?;
    let mut rng = stage_rng(cfg.seed, STAGE_DECODER, trainer.epochs_done);
    let order = shuffled(data.len(), &mut rng);
    let mut sums = EpochMetrics::default();
    let pair = &mut trainer.pair;
    pair.decoder.params.set_trainable(true);
    for chunk in order.chunks(cfg.batch) {
        let blocks = data.batch(chunk);
        let mut codes = pair.encoder.encode_batch(&blocks)?;
        codes.data_mut().iter_mut().for_each(|v| *v = binarize_value(*v));

        let mut tape = Tape::new();
        let db = tape.bind(&pair.decoder.params);
        let x = tape.input(blocks);
        let c = tape.input(codes);
        let recon = pair.decoder.forward(&mut tape, &db, c)?;
        let loss = tape.mse(recon, x)?;
        let v = tape.value(loss).data()[0] as f64 * chunk.len() as f64;
        sums.loss += v;
        sums.mse += v;

        let mut grads = tape.backward(loss)?;
        apply_grads(&mut pair.decoder.params, &mut trainer.decoder_opt, &mut grads, &db)?;
    }
    Ok(mean_metrics(sums, data.len()))
}

fn mean_metrics(sums: EpochMetrics, n: usize) -> EpochMetrics {
    let n = n.max(1) as f64;
    EpochMetrics {
        loss: sums.loss / n,
        mse: sums.mse / n,
        entropy: sums.entropy / n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlternateEpoch {
    pub epoch: usize,
    pub end_to_end: EpochMetrics,
    pub decoder: EpochMetrics,
}

/// Runs alternate epochs until `cfg.epochs` are done. With a checkpoint
/// path, the full trainer state is written there after every epoch.
pub fn alternate_train(
    trainer: &mut PairTrainer,
    data: &BlockDataset,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<Vec<AlternateEpoch>> {
    let mut log = Vec::new();
    while trainer.epochs_done < cfg.epochs {
        let end_to_end = train_epoch_e2e(trainer, data, cfg)?;
        let decoder = train_epoch_decoder(trainer, data, cfg)?;
        trainer.epochs_done += 1;
        if let Some(path) = checkpoint {
            trainer.to_checkpoint()?.save(path)?;
        }
        log.push(AlternateEpoch {
            epoch: trainer.epochs_done,
            end_to_end,
            decoder,
        });
    }
    Ok(log)
}

/// Block indices assigned to each network.
#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyPartition {
    pub sets: [Vec<usize>; 3],
    pub target_psnr: f64,
    /// Real-binarized PSNR of every block under every network.
    pub block_psnr: Vec<[f64; 3]>,
}

impl DifficultyPartition {
    pub fn assignment(&self, block: usize) -> Option<u8> {
        (0..3u8).find(|&i| self.sets[i as usize].binary_search(&block).is_ok())
    }

    pub fn len(&self) -> usize {
        self.block_psnr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.block_psnr.is_empty()
    }

    /// Plain-text form: a `target_psnr=` line, then `network psnr0 psnr1 psnr2` per block.
    pub fn to_text(&self) -> String {
        let mut s = format!("target_psnr={}\n", self.target_psnr);
        for (b, p) in self.block_psnr.iter().enumerate() {
            let net = self.assignment(b).unwrap_or(2);
            s.push_str(&format!("{net} {} {} {}\n", p[0], p[1], p[2]));
        }
        s
    }

    /// Parses [`to_text`](Self::to_text) output. Assignments are re-derived
    /// from the stored PSNRs and checked against the recorded ones.
    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidArgument(format!("partition file: {m}"));
        let mut lines = text.lines();
        let target = lines
            .next()
            .and_then(|l| l.strip_prefix("target_psnr="))
            .ok_or_else(|| bad("missing target_psnr line".into()))?
            .trim()
            .parse::<f64>()
            .map_err(|e| bad(e.to_string()))?;
        let mut psnr = Vec::new();
        let mut recorded = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("line {}: {e}", i + 2)))?;
            if f.len() != 4 {
                return Err(bad(format!("line {}: expected 4 fields", i + 2)));
            }
            recorded.push(f[0] as u8);
            psnr.push([f[1], f[2], f[3]]);
        }
        let p = partition_from_psnr(psnr, target);
        if (0..p.len()).any(|b| p.assignment(b) != Some(recorded[b])) {
            return Err(bad("recorded assignments disagree with the PSNR values".into()));
        }
        Ok(p)
    }
}

/// Whether a measured PSNR meets the target. An infinite target is never met.
pub fn meets_target(psnr: f64, target: f64) -> bool {
    target.is_finite() && psnr >= target
}

/// Smallest network index meeting the target, else the largest network.
pub fn assign_network(psnrs: &[f64; 3], target: f64) -> u8 {
    (0..3u8).find(|&i| meets_target(psnrs[i as usize], target)).unwrap_or(2)
}

const EVAL_BATCH: usize = 256;

/// Per-block PSNR of hard-binarized reconstructions under one network.
pub fn binarized_block_psnr(pair: &AutoEncoder, data: &BlockDataset) -> Result<Vec<f64>> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let blocks = data.batch(chunk);
        let recon = pair.reconstruct(&blocks, CodeMode::Binary)?;
        for (orig, rec) in blocks.data().chunks(BLOCK_LEN).zip(recon.data().chunks(BLOCK_LEN)) {
            out.push(block_psnr(orig, rec));
        }
    }
    Ok(out)
}

pub fn partition_blocks_by_difficulty(
    family: &NetworkFamily,
    data: &BlockDataset,
    target_psnr: f64,
) -> Result<DifficultyPartition> {
    family.validate()?;
    let per_net = family
        .pairs
        .iter()
        .map(|p| binarized_block_psnr(p, data))
        .collect::<Result<Vec<_>>>()?;
    let block_psnr: Vec<[f64; 3]> = (0..data.len())
        .map(|b| [per_net[0][b], per_net[1][b], per_net[2][b]])
        .collect();
    Ok(partition_from_psnr(block_psnr, target_psnr))
}

pub fn partition_from_psnr(block_psnr: Vec<[f64; 3]>, target_psnr: f64) -> DifficultyPartition {
    let mut sets: [Vec<usize>; 3] = Default::default();
    for (b, p) in block_psnr.iter().enumerate() {
        sets[assign_network(p, target_psnr) as usize].push(b);
    }
    DifficultyPartition {
        sets,
        target_psnr,
        block_psnr,
    }
}

/// Further alternate training of each network on its own blocks only.
/// Networks with no blocks are left untouched.
pub fn expert_finetune(
    family: &mut NetworkFamily,
    data: &BlockDataset,
    partition: &DifficultyPartition,
    cfg: &TrainConfig,
) -> Result<Vec<Vec<AlternateEpoch>>> {
    let mut logs = Vec::new();
    for (i, pair) in family.pairs.iter_mut().enumerate() {
        let subset = &partition.sets[i];
        if subset.is_empty() {
            logs.push(Vec::new());
            continue;
        }
        let sub_cfg = TrainConfig {
            seed: mix_seed(&[cfg.seed, 0xE7, i as u64]),
            ..cfg.clone()
        };
        let mut trainer = PairTrainer::new(pair.clone(), &sub_cfg);
        logs.push(alternate_train(&mut trainer, &data.subset(subset), &sub_cfg, None)?);
        *pair = trainer.pair;
    }
    Ok(logs)
}

/// Decoder-only epochs per expert on its own blocks; encoders stay frozen.
pub fn decoder_finetune(
    family: &mut NetworkFamily,
    data: &BlockDataset,
    partition: &DifficultyPartition,
    cfg: &TrainConfig,
) -> Result<Vec<Vec<EpochMetrics>>> {
    let mut logs = Vec::new();
    for (i, pair) in family.pairs.iter_mut().enumerate() {
        let subset = &partition.sets[i];
        if subset.is_empty() {
            logs.push(Vec::new());
            continue;
        }
        let sub_cfg = TrainConfig {
            seed: mix_seed(&[cfg.seed, 0xDF, i as u64]),
            ..cfg.clone()
        };
        let sub = data.subset(subset);
        let mut trainer = PairTrainer::new(pair.clone(), &sub_cfg);
        let mut log = Vec::new();
        for epoch in 0..cfg.epochs {
            trainer.epochs_done = epoch;
            log.push(train_epoch_decoder(&mut trainer, &sub, &sub_cfg)?);
        }
        *pair = trainer.pair;
        logs.push(log);
    }
    Ok(logs)
}

/// Trains the deblocker on (codec reconstruction without deblocking,
/// original) pairs, one image per step. Returns the mean MSE of each epoch.
pub fn train_deblocker(
    deblocker: &mut DeblockNet,
    family: &NetworkFamily,
    images: &[RgbImage],
    cfg: &TrainConfig,
    codec: &CodecConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let codec = CodecConfig {
        deblock: false,
        ..codec.clone()
    };
    let mut pairs = Vec::with_capacity(images.len());
    for img in images {
        let recon = pipeline::reconstruct(img, family, &codec)?;
        let (ph, pw) = (img.height.div_ceil(4) * 4, img.width.div_ceil(4) * 4);
        pairs.push((
            crate::models::reflect_pad(&recon.to_tensor(), ph, pw),
            crate::models::reflect_pad(&img.to_tensor(), ph, pw),
        ));
    }
    train_deblocker_on_pairs(deblocker, &pairs, cfg)
}

/// Deblocker training on precomputed `(input, target)` tensors whose sides are multiples of 4.
pub fn train_deblocker_on_pairs(
    deblocker: &mut DeblockNet,
    pairs: &[(Tensor<f32>, Tensor<f32>)],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut opt = AdamState::new(&deblocker.params, cfg.adam());
    deblocker.params.set_trainable(true);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = stage_rng(cfg.seed, STAGE_DEBLOCK, epoch);
        let order = shuffled(pairs.len(), &mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (input, target) = &pairs[i];
            let mut tape = Tape::new();
            let b = tape.bind(&deblocker.params);
            let out = deblocker.forward(&mut tape, &b, input)?;
            let t = tape.input(target.clone());
            let loss = tape.mse(out, t)?;
            total += tape.value(loss).data()[0] as f64;
            let mut grads = tape.backward(loss)?;
            apply_grads(&mut deblocker.params, &mut opt, &mut grads, &b)?;
        }
        history.push(total / pairs.len().max(1) as f64);
    }
    Ok(history)
}

/// Convenience for the `train` CLI stage: fresh trainers for all three networks.
pub fn family_trainers(family: &NetworkFamily, cfg: &TrainConfig) -> Vec<PairTrainer> {
    family.pairs.iter().map(|p| PairTrainer::new(p.clone(), cfg)).collect()
}

/// Path of the resume checkpoint for network `i` inside a family directory.
pub fn trainer_checkpoint_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("net{i}.train.ntw"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthetic_set;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            batch: 8,
            epochs: 1,
            width_mult: 0.0625,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn tiny_pair(seed: u64) -> AutoEncoder {
        AutoEncoder::new(0.0625, 8, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn extraction_counts() {
        let img = synthetic_set(1, 64, 64, 0);
        assert_eq!(extract_blocks(&img, PLAIN_STRIDE).unwrap().len(), 4);
        assert_eq!(extract_blocks(&img, AUGMENTED_STRIDE).unwrap().len(), 9);
        let small = synthetic_set(1, 32, 32, 0);
        assert_eq!(extract_blocks(&small, PLAIN_STRIDE).unwrap().len(), 1);
        assert_eq!(extract_blocks(&small, AUGMENTED_STRIDE).unwrap().len(), 1);
    }

    #[test]
    fn extraction_is_raster_ordered_and_scaled() {
        let imgs = synthetic_set(2, 70, 40, 5);
        let ds = extract_blocks(&imgs, PLAIN_STRIDE).unwrap();
        // 70x40 pads to 96x64: 3 x 2 blocks per image.
        assert_eq!(ds.len(), 12);
        assert_eq!(ds.origins()[1], BlockOrigin { image: 0, y: 0, x: 32 });
        assert_eq!(ds.origins()[3], BlockOrigin { image: 0, y: 32, x: 0 });
        assert_eq!(ds.origins()[6].image, 1);
        let px = imgs[0].pixel(33, 1);
        assert_eq!(ds.block(1)[32 + 1], px[0] as f32 / 255.0);
        assert_eq!(ds.block(1)[1024 + 32 + 1], px[1] as f32 / 255.0);
        assert!(ds.block(5).iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn augmented_extraction_yields_more_blocks() {
        let imgs = synthetic_set(1, 96, 64, 2);
        let plain = extract_blocks(&imgs, PLAIN_STRIDE).unwrap();
        let aug = extract_blocks(&imgs, AUGMENTED_STRIDE).unwrap();
        assert!(aug.len() > plain.len());
    }

    #[test]
    fn dataset_checkpoint_round_trip() {
        let ds = extract_blocks(&synthetic_set(1, 64, 32, 1), PLAIN_STRIDE).unwrap();
        let back = BlockDataset::from_checkpoint(&ds.to_checkpoint().unwrap()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let ds = extract_blocks(&synthetic_set(1, 64, 64, 1), PLAIN_STRIDE).unwrap();
        let cfg = TrainConfig { lr: 0.0, ..tiny_cfg() };
        let mut t = PairTrainer::new(tiny_pair(1), &cfg);
        let before = t.pair.clone();
        train_epoch_e2e(&mut t, &ds, &cfg).unwrap();
        assert_eq!(t.pair.encoder.params, before.encoder.params);
        assert_eq!(t.pair.decoder.params, before.decoder.params);
    }

    #[test]
    fn decoder_epoch_leaves_encoder_untouched() {
        let ds = extract_blocks(&synthetic_set(1, 64, 64, 1), PLAIN_STRIDE).unwrap();
        let cfg = tiny_cfg();
        let mut t = PairTrainer::new(tiny_pair(2), &cfg);
        let before = t.pair.clone();
        train_epoch_decoder(&mut t, &ds, &cfg).unwrap();
        assert_eq!(t.pair.encoder.params, before.encoder.params);
        assert_ne!(t.pair.decoder.params, before.decoder.params);
    }

    #[test]
    fn same_seed_same_result() {
        let ds = extract_blocks(&synthetic_set(1, 64, 64, 1), PLAIN_STRIDE).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            ..tiny_cfg()
        };
        let run = || {
            let mut t = PairTrainer::new(tiny_pair(3), &cfg);
            let log = alternate_train(&mut t, &ds, &cfg, None).unwrap();
            (log, t.pair.encoder.params)
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn partition_rules() {
        let psnr = vec![[10.0, 20.0, 30.0], [25.0, 26.0, 27.0], [5.0, 6.0, 7.0]];
        let p = partition_from_psnr(psnr.clone(), 0.0);
        assert_eq!(p.sets, [vec![0, 1, 2], vec![], vec![]]);
        let p = partition_from_psnr(psnr.clone(), f64::INFINITY);
        assert_eq!(p.sets, [vec![], vec![], vec![0, 1, 2]]);
        let p = partition_from_psnr(psnr, 20.0);
        assert_eq!(p.sets, [vec![1], vec![0], vec![2]]);
        assert_eq!(p.assignment(0), Some(1));
        assert_eq!(DifficultyPartition::from_text(&p.to_text()).unwrap(), p);
        // A perfect reconstruction still never meets an infinite target.
        assert_eq!(assign_network(&[f64::INFINITY; 3], f64::INFINITY), 2);
    }
}
