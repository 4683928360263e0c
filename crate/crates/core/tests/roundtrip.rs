use proptest::prelude::*;

use roiml::container::{CodedContainer, Mode};
use roiml::hierarchy::{toy_hyperprior, toy_model, TensorMap};
use roiml::manifest::{format_manifest, load_registry, ManifestEntry, ModelKind};
use roiml::mask::BinaryMask;
use roiml::par::Parallelism;
use roiml::roi::{roi_compress, roi_decompress, ModelChoice, ModelRegistry, RoiOptions};
use roiml::weights::{write_file, ModelFile};

const PS: usize = 16;

fn models() -> Vec<(u16, ModelKind, &'static str, ModelFile)> {
    vec![
        (1, ModelKind::Hyperprior, "bg.rmlw", ModelFile::Hyperprior(toy_hyperprior(PS, 24.0).unwrap())),
        (2, ModelKind::Hyperprior, "lossy.rmlw", ModelFile::Hyperprior(toy_hyperprior(PS, 6.0).unwrap())),
        (3, ModelKind::Bitswap, "blade.rmlw", ModelFile::Bitswap(toy_model(2, PS, 11).unwrap())),
    ]
}

fn registry() -> ModelRegistry {
    let mut r = ModelRegistry::new();
    for (id, _, _, m) in models() {
        r.insert(id, m);
    }
    r
}

fn image(h: usize, w: usize, salt: usize) -> TensorMap {
    let mut t = TensorMap::zeros(3, h, w);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                t.set(c, y, x, ((x * 5 + y * 3 + c * 50 + salt) % 180 + 40) as f32);
            }
        }
    }
    t
}

#[test]
fn registry_loaded_from_disk_codes_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut entries = Vec::new();
    for (id, kind, file, model) in models() {
        write_file(&dir.path().join(file), &model).unwrap();
        entries.push(ManifestEntry {
            id,
            kind,
            file: file.into(),
            param: None,
        });
    }
    let manifest = dir.path().join("models.txt");
    std::fs::write(&manifest, format_manifest(&entries)).unwrap();
    let disk = load_registry(&manifest).unwrap();

    let img = image(40, 36, 3);
    let mask = BinaryMask::from_fn(40, 36, |y, _| (14..30).contains(&y));
    let choice = ModelChoice { blade: 3, background: 1 };
    let a = roi_compress(&img, Some(&mask), Mode::LossyLossless, &registry(), choice, RoiOptions::default()).unwrap();
    let b = roi_compress(&img, Some(&mask), Mode::LossyLossless, &disk, choice, RoiOptions::default()).unwrap();
    assert_eq!(a.container.to_bytes(), b.container.to_bytes());
    let back = roi_decompress(&b.container, &disk, Parallelism::Sequential).unwrap();
    assert_eq!(back, roi_decompress(&a.container, &registry(), Parallelism::Threads(3)).unwrap());
}

#[test]
fn lossy_lossy_decodes_the_same_under_any_parallelism() {
    let reg = registry();
    let img = image(50, 45, 9);
    let mask = BinaryMask::from_fn(50, 45, |y, x| y + x > 40 && y + x < 70);
    let choice = ModelChoice { blade: 2, background: 1 };
    let enc = roi_compress(&img, Some(&mask), Mode::LossyLossy, &reg, choice, RoiOptions::default()).unwrap();
    let parsed = CodedContainer::from_bytes(&enc.container.to_bytes()).unwrap();
    let outs: Vec<TensorMap> = [Parallelism::Sequential, Parallelism::Threads(2), Parallelism::Threads(5)]
        .into_iter()
        .map(|p| roi_decompress(&parsed, &reg, p).unwrap())
        .collect();
    assert!(outs.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(outs[0].shape(), (3, 50, 45));
}

#[test]
fn all_background_mask_still_round_trips() {
    let reg = registry();
    let img = image(20, 20, 1);
    let mask = BinaryMask::filled(20, 20, false);
    let choice = ModelChoice { blade: 3, background: 1 };
    let enc = roi_compress(&img, Some(&mask), Mode::LossyLossless, &reg, choice, RoiOptions::default()).unwrap();
    let back = roi_decompress(&enc.container, &reg, Parallelism::Sequential).unwrap();
    assert_eq!(back.shape(), img.shape());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn blade_pixels_survive_any_layout(h in 8usize..60, w in 8usize..60, top in 0usize..40, len in 1usize..30, salt in 0usize..100) {
        let reg = registry();
        let img = image(h, w, salt);
        let mask = BinaryMask::from_fn(h, w, |y, _| y >= top && y < top + len);
        let choice = ModelChoice { blade: 3, background: 1 };
        let enc = roi_compress(&img, Some(&mask), Mode::LossyLossless, &reg, choice, RoiOptions::default()).unwrap();
        let back = roi_decompress(&CodedContainer::from_bytes(&enc.container.to_bytes()).unwrap(), &reg, Parallelism::Threads(2)).unwrap();
        prop_assert_eq!(back.shape(), img.shape());
        for y in 0..h {
            for x in 0..w {
                if mask.get(y, x) {
                    for c in 0..3 {
                        prop_assert_eq!(back.get(c, y, x), img.get(c, y, x));
                    }
                }
            }
        }
    }
}
