use std::fs;

use ifan::io::write_png;
use ifan::synth::load_paired_dir;
use ifan::{Error, Tensor4};

fn img(seed: u64) -> Tensor4 {
    Tensor4::rand_uniform((1, 3, 8, 8), 0.0, 1.0, seed).map(|v| ifan::io::quantize(v) as f64 / 255.0)
}

#[test]
fn empty_source_yields_nothing() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("source")).unwrap();
    fs::create_dir_all(dir.path().join("target")).unwrap();
    let d = load_paired_dir(dir.path()).unwrap();
    assert!(d.is_empty());
    assert_eq!(d.iter().count(), 0);
}

#[test]
fn matched_files_load_in_name_order() {
    let dir = tempfile::tempdir().unwrap();
    for (i, name) in ["c.png", "a.png", "b.png"].iter().enumerate() {
        write_png(dir.path().join("source").join(name), &img(i as u64)).unwrap();
        write_png(dir.path().join("target").join(name), &img(10 + i as u64)).unwrap();
    }
    let d = load_paired_dir(dir.path()).unwrap();
    assert_eq!(d.names(), ["a.png", "b.png", "c.png"]);
    let samples: Vec<_> = d.iter().map(Result::unwrap).collect();
    assert_eq!(samples.len(), 3);
    assert_eq!(samples[0].blurred.data(), img(1).data());
    assert_eq!(samples[2].sharp.data(), img(10).data());
    assert!(!d.has_dual_pixel() && samples[0].left.is_none());
}

#[test]
fn unmatched_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    write_png(dir.path().join("source").join("lonely.png"), &img(0)).unwrap();
    write_png(dir.path().join("source").join("pair.png"), &img(1)).unwrap();
    write_png(dir.path().join("target").join("pair.png"), &img(2)).unwrap();
    match load_paired_dir(dir.path()) {
        Err(e @ Error::Manifest(_)) => {
            assert!(e.to_string().contains("lonely"), "{e}");
            assert_eq!(e.exit_code(), 1);
        }
        Err(e) => panic!("expected a manifest error, got {e}"),
        Ok(_) => panic!("expected a manifest error"),
    }
}
