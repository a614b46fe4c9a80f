use blockcodec::bitstream::{arithmetic_decode, arithmetic_encode, difference_encode, BitVector};
use blockcodec::models::{AutoEncoder, CodeMode};
use blockcodec::nn::{Tape, Tensor};
use blockcodec::pipeline::{encode_image, optimize_block_code, CodecConfig};
use blockcodec::synth::synthetic_image;
use blockcodec::training::{extract_blocks, PLAIN_STRIDE};
use blockcodec::NetworkFamily;
use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random::<f32>() - 0.5).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_tensor(vec![16, 32, 16, 16], &mut rng);
    let w = random_tensor(vec![64, 32, 3, 3], &mut rng);
    let b = random_tensor(vec![64], &mut rng);
    let mut g = c.benchmark_group("conv2d 16x32x16x16 -> 64, stride 2");
    g.bench_function("forward", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let (xv, wv, bv) = (t.input(x.clone()), t.leaf(w.clone(), true), t.leaf(b.clone(), true));
            black_box(t.conv2d(xv, wv, bv, 2, 1).unwrap());
        })
    });
    g.bench_function("forward+backward", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let (xv, wv, bv) = (t.input(x.clone()), t.leaf(w.clone(), true), t.leaf(b.clone(), true));
            let y = t.conv2d(xv, wv, bv, 2, 1).unwrap();
            let s = t.sum(y);
            black_box(t.backward(s).unwrap());
        })
    });
    g.finish();
}

fn arithmetic(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bits = BitVector::from((0..100_000).map(|_| rng.random_bool(0.1)).collect::<Vec<_>>());
    let bytes = arithmetic_encode(&bits);
    let mut g = c.benchmark_group("arithmetic coder, 1e5 bits p=0.1");
    g.throughput(Throughput::Elements(bits.len() as u64));
    g.bench_function("encode", |b| b.iter(|| black_box(arithmetic_encode(&bits))));
    g.bench_function("decode", |b| {
        b.iter(|| black_box(arithmetic_decode(&bytes, bits.len()).unwrap()))
    });
    g.bench_function("difference+encode", |b| {
        b.iter(|| black_box(arithmetic_encode(&difference_encode(&bits))))
    });
    g.finish();
}

fn blocks(c: &mut Criterion) {
    let pair = AutoEncoder::new(0.25, 54, &mut ChaCha8Rng::seed_from_u64(2));
    let data = extract_blocks(&[synthetic_image(128, 64, 3)], PLAIN_STRIDE).unwrap();
    let batch = data.batch(&(0..data.len()).collect::<Vec<_>>());
    let block = data.block_tensor(0);
    let mut g = c.benchmark_group("width 0.25, code 54");
    g.bench_function("reconstruct 8 blocks", |b| {
        b.iter(|| black_box(pair.reconstruct(&batch, CodeMode::Binary).unwrap()))
    });
    let cfg = CodecConfig {
        target_psnr: f64::INFINITY,
        max_steps: 10,
        ..CodecConfig::default()
    };
    g.sample_size(10);
    g.bench_function("optimize_block_code 10 steps", |b| {
        b.iter(|| black_box(optimize_block_code(&pair, &block, &cfg, 0).unwrap()))
    });
    let family = NetworkFamily::new(0.25, 4);
    let img = synthetic_image(64, 64, 5);
    let plain = CodecConfig::default().without_code_opt();
    g.bench_function("encode_image 64x64, no code optimization", |b| {
        b.iter_batched(
            || img.clone(),
            |img| black_box(encode_image(&img, &family, &plain).unwrap()),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

criterion_group!(benches, conv, arithmetic, blocks);
criterion_main!(benches);
