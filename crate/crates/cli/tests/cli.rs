use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blockcodec"))
}

fn run_ok(args: &[&str], dir: &Path) -> Output {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn kv(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no `{key}` in:\n{text}"))
        .to_string()
}

#[test]
fn full_pipeline_on_tiny_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(
        d.join("run.toml"),
        "# tiny settings for the smoke test\nwidth_mult = 0.0625\nbatch = 16\nepochs = 2\ncode_opt_steps = 2\neval_every = 1\n",
    )
    .unwrap();
    let common = ["--config", "run.toml", "--seed", "3", "--target-psnr", "20"];
    fn with<'a>(args: &[&'a str], common: &[&'a str]) -> Vec<&'a str> {
        [args, common].concat()
    }

    run_ok(
        &[
            "synth", "--out", "imgs", "--count", "4", "--width", "64", "--height", "48",
        ],
        d,
    );
    run_ok(&with(&["train", "--images", "imgs", "--family", "fam"], &common), d);
    assert!(d.join("fam/family.toml").exists());
    assert!(d.join("fam/net2.ntw").exists());

    let part = run_ok(&with(&["partition", "--images", "imgs", "--family", "fam"], &common), d);
    let part = String::from_utf8(part.stdout).unwrap();
    let total: usize = (0..3)
        .map(|i| kv(&part, &format!("blocks_net{i}")).parse::<usize>().unwrap())
        .sum();
    // 64x48 pads to 64x64: 3x3 half-overlapping blocks per image.
    assert_eq!(total, 36);

    run_ok(
        &with(
            &[
                "finetune-experts",
                "--images",
                "imgs",
                "--family",
                "fam",
                "--epochs",
                "1",
            ],
            &common,
        ),
        d,
    );
    run_ok(
        &with(
            &[
                "finetune-decoders",
                "--images",
                "imgs",
                "--family",
                "fam",
                "--epochs",
                "1",
            ],
            &common,
        ),
        d,
    );
    run_ok(
        &with(
            &[
                "train-deblocker",
                "--images",
                "imgs",
                "--family",
                "fam",
                "--epochs",
                "1",
            ],
            &common,
        ),
        d,
    );
    assert!(d.join("fam/deblock.ntw").exists());

    let enc = run_ok(
        &with(
            &["encode", "imgs/synth000.ppm", "-o", "a.ntc", "--family", "fam"],
            &common,
        ),
        d,
    );
    let report = String::from_utf8(enc.stdout).unwrap();
    let bytes = std::fs::metadata(d.join("a.ntc")).unwrap().len();
    assert_eq!(kv(&report, "bytes"), bytes.to_string());
    run_ok(
        &with(&["decode", "a.ntc", "-o", "a.ppm", "--family", "fam"], &common),
        d,
    );
    run_ok(
        &with(
            &["encode", "a.ppm", "-o", "b.ntc", "--family", "fam", "--no-code-opt"],
            &common,
        ),
        d,
    );
    run_ok(
        &with(
            &["decode", "b.ntc", "-o", "b.ppm", "--family", "fam", "--no-deblock"],
            &common,
        ),
        d,
    );
    let a = blockcodec::imageio::read_ppm(&d.join("a.ppm")).unwrap();
    let b = blockcodec::imageio::read_ppm(&d.join("b.ppm")).unwrap();
    assert_eq!((a.width, a.height), (64, 48));
    assert_eq!((b.width, b.height), (64, 48));

    std::fs::write(d.join("imgs/broken.ppm"), b"P6 nonsense").unwrap();
    run_ok(
        &with(
            &["eval", "--images", "imgs", "--family", "fam", "--out", "report"],
            &common,
        ),
        d,
    );
    let kvs = std::fs::read_to_string(d.join("report/eval.kv")).unwrap();
    assert_eq!(kv(&kvs, "images"), "4");
    assert_eq!(kv(&kvs, "skipped"), "1");
    for key in ["mse", "psnr", "bpp", "code_bpp"] {
        assert!(kv(&kvs, key).parse::<f64>().unwrap().is_finite());
    }
    assert!(std::fs::read_to_string(d.join("report/eval.txt"))
        .unwrap()
        .contains("pooled"));
}

#[test]
fn gradcheck_exit_status() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(&["gradcheck", "--cases", "2"], tmp.path());
    let strict = bin()
        .args(["gradcheck", "--cases", "2", "--tolerance", "0"])
        .output()
        .unwrap();
    assert!(!strict.status.success());
}

#[test]
fn usage_errors_exit_nonzero() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = bin().args(["encode", "--bogus"]).output().unwrap();
    assert!(!out.status.success());
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "no_such_key = 1\n").unwrap();
    let out = bin()
        .current_dir(tmp.path())
        .args(["gradcheck", "--config", "bad.toml"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
