//! Full-image deblocking filter: a two-scale encoder/decoder with skip
//! concatenations, applied as a residual in logit space. The output conv is
//! zero-initialized, so an untrained filter passes its input through.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layers::prelu_layer_gain;
use crate::nn::{Bindings, Checkpoint, Conv2d, Deconv2d, ParamStore, Prelu, Tape, Tensor, Var};

pub const DEFAULT_DEBLOCK_WIDTHS: [usize; 2] = [16, 32];
const LOGIT_CLAMP: f32 = 1e-4;

#[derive(Debug, Clone)]
pub struct DeblockNet {
    pub params: ParamStore<f32>,
    widths: [usize; 2],
    enc0: (Conv2d, Prelu),
    enc1: (Conv2d, Prelu),
    bottom: (Conv2d, Prelu),
    up1: (Deconv2d, Prelu),
    dec1: (Conv2d, Prelu),
    up0: (Deconv2d, Prelu),
    dec0: (Conv2d, Prelu),
    head: Conv2d,
}

impl DeblockNet {
    pub fn new<R: Rng + ?Sized>(widths: [usize; 2], rng: &mut R) -> Self {
        let [c0, c1] = widths;
        let g = prelu_layer_gain();
        let mut p = ParamStore::new();
        let enc0 = (
            Conv2d::new(&mut p, rng, "enc0", 3, c0, 3, 1, g),
            Prelu::new(&mut p, "enc0.act", c0),
        );
        let enc1 = (
            Conv2d::new(&mut p, rng, "enc1", c0, c1, 3, 2, g),
            Prelu::new(&mut p, "enc1.act", c1),
        );
        let bottom = (
            Conv2d::new(&mut p, rng, "bottom", c1, c1, 3, 2, g),
            Prelu::new(&mut p, "bottom.act", c1),
        );
        let up1 = (
            Deconv2d::new(&mut p, rng, "up1", c1, c1, g),
            Prelu::new(&mut p, "up1.act", c1),
        );
        let dec1 = (
            Conv2d::new(&mut p, rng, "dec1", 2 * c1, c0, 3, 1, g),
            Prelu::new(&mut p, "dec1.act", c0),
        );
        let up0 = (
            Deconv2d::new(&mut p, rng, "up0", c0, c0, g),
            Prelu::new(&mut p, "up0.act", c0),
        );
        let dec0 = (
            Conv2d::new(&mut p, rng, "dec0", 2 * c0, c0, 3, 1, g),
            Prelu::new(&mut p, "dec0.act", c0),
        );
        let head = Conv2d::new(&mut p, rng, "head", c0, 3, 1, 1, 1.0);
        for id in [head.weight, head.bias] {
            p.get_mut(id).value.data_mut().fill(0.0);
        }
        DeblockNet {
            params: p,
            widths,
            enc0,
            enc1,
            bottom,
            up1,
            dec1,
            up0,
            dec0,
            head,
        }
    }

    pub fn widths(&self) -> [usize; 2] {
        self.widths
    }

    /// `[N, 3, H, W]` images in [0, 1] with H, W divisible by 4.
    pub fn forward(&self, tape: &mut Tape<f32>, b: &Bindings, image: &Tensor<f32>) -> Result<Var> {
        let (_, c, h, w) = image.dims4("deblock")?;
        if c != 3 || h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::shape(
                "deblock",
                format!(
                    "expected N x 3 x H x W with H, W multiples of 4, got {:?}",
                    image.shape()
                ),
            ));
        }
        let logits: Vec<f32> = image
            .data()
            .iter()
            .map(|&v| {
                let v = v.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
                (v / (1.0 - v)).ln()
            })
            .collect();
        let x = tape.input(image.clone());
        let block = |tape: &mut Tape<f32>, layer: &(Conv2d, Prelu), x: Var| -> Result<Var> {
            let y = layer.0.forward(tape, b, x)?;
            layer.1.forward(tape, b, y)
        };
        let e0 = block(tape, &self.enc0, x)?;
        let e1 = block(tape, &self.enc1, e0)?;
        let m = block(tape, &self.bottom, e1)?;
        let u1 = self.up1.0.forward(tape, b, m)?;
        let u1 = self.up1.1.forward(tape, b, u1)?;
        let cat1 = tape.concat_channels(u1, e1)?;
        let d1 = block(tape, &self.dec1, cat1)?;
        let u0 = self.up0.0.forward(tape, b, d1)?;
        let u0 = self.up0.1.forward(tape, b, u0)?;
        let cat0 = tape.concat_channels(u0, e0)?;
        let d0 = block(tape, &self.dec0, cat0)?;
        let residual = self.head.forward(tape, b, d0)?;
        let out = tape.offset(residual, &logits)?;
        Ok(tape.sigmoid(out))
    }

    /// Filters one `[1, 3, H, W]` image of any size; reflect-pads to a
    /// multiple of 4 internally and crops back.
    pub fn deblock(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (n, c, h, w) = image.dims4("deblock")?;
        if n != 1 || c != 3 || h == 0 || w == 0 {
            return Err(Error::shape(
                "deblock",
                format!("expected 1 x 3 x H x W, got {:?}", image.shape()),
            ));
        }
        let (ph, pw) = (h.div_ceil(4) * 4, w.div_ceil(4) * 4);
        let padded = reflect_pad(image, ph, pw);
        let mut tape = Tape::new();
        let b = tape.bind_frozen(&self.params);
        let y = self.forward(&mut tape, &b, &padded)?;
        Ok(crop(tape.value(y), h, w))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        ckpt.insert_store("deblock.", &self.params)?;
        Ok(ckpt)
    }

    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.restore_store("deblock.", &mut self.params)
    }
}

fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Pads a `[1, C, H, W]` image on the bottom/right by mirror reflection.
pub(crate) fn reflect_pad(image: &Tensor<f32>, ph: usize, pw: usize) -> Tensor<f32> {
    let s = image.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let mut out = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        for y in 0..ph {
            let sy = reflect_index(y, h);
            for x in 0..pw {
                out.push(image.data()[(ch * h + sy) * w + reflect_index(x, w)]);
            }
        }
    }
    Tensor::new(vec![1, c, ph, pw], out).expect("shape")
}

/// Top-left `h x w` window of a `[1, C, H, W]` image.
pub(crate) fn crop(image: &Tensor<f32>, h: usize, w: usize) -> Tensor<f32> {
    let s = image.shape();
    let (c, ih, iw) = (s[1], s[2], s[3]);
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            out.extend_from_slice(&image.data()[(ch * ih + y) * iw..][..w]);
        }
    }
    Tensor::new(vec![1, c, h, w], out).expect("shape")
}
