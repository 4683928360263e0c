use std::path::Path;
use std::process::Command;

use roiml::hierarchy::TensorMap;
use roiml::mask::{BinaryMask, ProbabilityMask};
use roiml::pnm::Pnm;

fn roiml(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_roiml")).args(args).output().expect("spawn roiml");
    assert!(
        out.status.success(),
        "roiml {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_image(path: &Path, h: usize, w: usize) {
    let mut t = TensorMap::zeros(3, h, w);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let blade = (10..26).contains(&y);
                let v = if blade { 170 + (x % 7) as i32 - c as i32 * 5 } else { 60 + ((x + y) % 11) as i32 };
                t.set(c, y, x, v as f32);
            }
        }
    }
    Pnm::from_tensor(&t).unwrap().write(path).unwrap();
}

fn stat(line: &str, key: &str) -> f64 {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing in {line}"))
        .parse()
        .unwrap()
}

#[test]
fn compress_decompress_and_parallel_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    roiml(&["toy-models", "--dir", p(d), "--patch-size", "16", "--depth", "2"]);
    let manifest = d.join("manifest.txt");
    let img = d.join("img.ppm");
    write_image(&img, 48, 40);
    let mask = d.join("mask.pgm");
    Pnm::from_mask(&BinaryMask::from_fn(48, 40, |y, _| (10..26).contains(&y))).write(&mask).unwrap();

    // Whole-image lossless round trip is bit-identical.
    let c3 = d.join("lossless.rmlc");
    let out3 = d.join("lossless.ppm");
    roiml(&["compress", "--input", p(&img), "--mode", "lossless", "--models", p(&manifest), "--blade-model", "3", "--output", p(&c3)]);
    roiml(&["decompress", "--input", p(&c3), "--models", p(&manifest), "--output", p(&out3)]);
    assert_eq!(std::fs::read(&img).unwrap(), std::fs::read(&out3).unwrap());

    // Region mode: lossless blade costs more per pixel than heavy-lossy background.
    let mut files = Vec::new();
    for n in ["1", "4"] {
        let c = d.join(format!("roi{n}.rmlc"));
        let line = roiml(&[
            "compress", "--input", p(&img), "--mask", p(&mask), "--mode", "lossy-lossless", "--models", p(&manifest),
            "--blade-model", "3", "--bg-model", "1", "--parallel", n, "--output", p(&c),
        ]);
        assert!(stat(&line, "blade_bpp") > stat(&line, "background_bpp"), "{line}");
        files.push(std::fs::read(&c).unwrap());
    }
    assert_eq!(files[0], files[1]);

    let back = d.join("roi.ppm");
    roiml(&["decompress", "--input", p(&d.join("roi1.rmlc")), "--models", p(&manifest), "--parallel", "2", "--output", p(&back)]);
    let a = Pnm::read(&img).unwrap().to_tensor().unwrap();
    let b = Pnm::read(&back).unwrap().to_tensor().unwrap();
    for c in 0..3 {
        for y in 0..48 {
            for x in 0..40 {
                if (8..32).contains(&y) {
                    assert_eq!(a.get(c, y, x), b.get(c, y, x));
                }
            }
        }
    }
}

#[test]
fn missing_input_fails_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_roiml"))
        .args(["decompress", "--input", "/nonexistent.rmlc", "--models", "/nonexistent.txt", "--output", "/tmp/x.ppm"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}

#[test]
fn segment_fills_a_donut_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let img = d.join("img.ppm");
    write_image(&img, 36, 40);
    let probs: Vec<f32> = (0..36 * 40)
        .map(|i| {
            let (y, x) = (i / 40, i % 40);
            if (10..26).contains(&y) && !(y == 18 && x == 20) { 0.95 } else { 0.02 }
        })
        .collect();
    let pm = d.join("probs.pgm");
    Pnm::from_probability(&ProbabilityMask::new(36, 40, probs).unwrap()).write(&pm).unwrap();
    let mut hashes = Vec::new();
    for run in 0..2 {
        let out = d.join(format!("mask{run}.pgm"));
        roiml(&["segment", "--probs", p(&pm), "--image", p(&img), "--seed", "9", "--output", p(&out)]);
        hashes.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(hashes[0], hashes[1]);
    let m = Pnm::parse(&hashes[0]).unwrap().to_mask().unwrap();
    assert!(m.get(18, 20));
    assert_eq!(m, BinaryMask::from_fn(36, 40, |y, _| (10..26).contains(&y)));
}

#[test]
fn eval_curves_reports_the_mean() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let csv = d.join("sims.csv");
    std::fs::write(&csv, "0.5\n1.0\n").unwrap();
    let out = d.join("curve.csv");
    let line = roiml(&["eval-curves", "--input", p(&csv), "--grid", "100", "--output", p(&out)]);
    assert_eq!(stat(&line, "auc"), 0.75);
    let curve = std::fs::read_to_string(&out).unwrap();
    assert_eq!(curve.lines().count(), 102);
    assert!(curve.starts_with("tau,ratio\n0,1\n"));

    std::fs::write(&csv, "0.3\n").unwrap();
    let line = roiml(&["eval-curves", "--input", p(&csv), "--grid", "10", "--output", p(&out)]);
    assert_eq!(stat(&line, "auc"), 0.3);
}
