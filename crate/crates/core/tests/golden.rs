//! The committed golden corpus was written by an independent encoder
//! (`fixtures/make_golden.py`); these tests pin the reader and writer to it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cgl_core::alignment::ProbeWeights;
use cgl_core::tensor_io::{read_axt, write_axt, ActivationSet, AxtTensor, Dtype, ExtractionManifest, TensorData};
use sha2::{Digest, Sha256};

fn golden() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

fn sums() -> BTreeMap<String, String> {
    fs::read_to_string(golden().join("SHA256SUMS"))
        .unwrap()
        .lines()
        .map(|l| {
            let (hash, name) = l.split_once("  ").unwrap();
            (name.to_string(), hash.to_string())
        })
        .collect()
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn pattern(i: usize, j: usize, k: usize) -> f64 {
    ((i * 7 + j * 3 + k) % 17) as f64 / 4.0 - 2.0
}

#[test]
fn corpus_hashes_match() {
    let sums = sums();
    assert_eq!(sums.len(), 7);
    for (name, hash) in &sums {
        let bytes = fs::read(golden().join(name)).unwrap();
        assert_eq!(&sha256(&bytes), hash, "{name}");
    }
}

#[test]
fn rewriting_reproduces_every_file_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    for name in sums().keys() {
        let original = fs::read(golden().join(name)).unwrap();
        let t = read_axt(golden().join(name)).unwrap();
        let out = dir.path().join(name);
        write_axt(&t, &out).unwrap();
        assert_eq!(fs::read(&out).unwrap(), original, "{name}");
        assert_eq!(t.to_bytes(), original);
    }
}

#[test]
fn parsing_is_stable_across_runs() {
    for name in sums().keys() {
        let a = read_axt(golden().join(name)).unwrap();
        let b = read_axt(golden().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn decoded_values() {
    let s = read_axt(golden().join("scalar_f64.axt")).unwrap();
    assert_eq!((s.dims(), s.dtype(), s.name()), (&[1u64][..], Dtype::F64, None));
    assert_eq!(s.to_f64_vec(), vec![3.0]);
    assert_eq!(fs::metadata(golden().join("scalar_f64.axt")).unwrap().len(), 29);

    let m = read_axt(golden().join("matrix_f32.axt")).unwrap();
    assert_eq!((m.dims(), m.dtype(), m.name()), (&[2u64, 3][..], Dtype::F32, Some("probe")));
    let TensorData::F32(v) = m.data() else { panic!("f32 payload") };
    assert_eq!(v[..5], [1.0f32, -2.5, 0.125, 1e-3, 65504.0]);
    assert_eq!(v[5].to_bits(), (-0.0f32).to_bits());
    assert_eq!(m.to_matrix().unwrap()[(1, 0)], 1e-3f32 as f64);

    let sp = read_axt(golden().join("special_f64.axt")).unwrap().to_f64_vec();
    assert!(sp[0].is_nan());
    assert_eq!(sp[1..3], [f64::INFINITY, f64::NEG_INFINITY]);
    assert_eq!(sp[3].to_bits(), (-0.0f64).to_bits());
    assert_eq!(sp[4], 5e-324);
    assert_eq!(sp[5], f64::MAX);

    let cube = read_axt(golden().join("cube_f64.axt")).unwrap();
    assert_eq!(cube.dims(), &[2, 3, 4]);
    assert_eq!(cube.to_f64_vec(), (0..24).map(f64::from).collect::<Vec<_>>());
}

#[test]
fn activation_fixture_with_sidecar() {
    let a = ActivationSet::load(golden().join("layer_11.axt")).unwrap();
    assert_eq!((a.n_images(), a.n_tokens(), a.dim()), (2, 261, 8));
    assert_eq!(a.layer_index(), Some(11));
    assert_eq!((a.layout().n_cls, a.layout().n_reg, a.layout().n_patch), (1, 4, 256));
    for i in 0..2 {
        for j in [0, 1, 4, 5, 100, 260] {
            for k in 0..8 {
                assert_eq!(a.token(i, j)[k], pattern(i, j, k));
            }
        }
    }
}

#[test]
fn manifest_fixture() {
    let m = ExtractionManifest::load(golden()).unwrap();
    assert_eq!(m.layers, vec![11]);
    assert_eq!(m.layout.n_tokens(), 261);
    assert_eq!(m.image_list_hash, sha256(b"img_000.png\nimg_001.png\n"));
    let a = m.activations(&golden(), 11).unwrap();
    assert_eq!(a, ActivationSet::load(golden().join("layer_11.axt")).unwrap());
    assert!(m.activations(&golden(), 3).is_err());
}

#[test]
fn manifest_rejects_inconsistent_entries() {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(golden().join("layer_11.axt"), dir.path().join("layer_11.axt")).unwrap();
    let text = fs::read_to_string(golden().join("manifest.json")).unwrap();
    let write = |t: String| fs::write(dir.path().join("manifest.json"), t).unwrap();

    write(text.replace("\"f32\"", "\"f64\""));
    assert!(ExtractionManifest::load(dir.path()).is_err());
    write(text.replace("\"n_reg\": 4", "\"n_reg\": 3"));
    assert!(ExtractionManifest::load(dir.path()).is_err());
    write(text.replace("layer_11.axt", "missing.axt"));
    assert!(ExtractionManifest::load(dir.path()).is_err());
    write(text.clone());
    assert!(ExtractionManifest::load(dir.path()).is_ok());
}

#[test]
fn probe_fixture_loads() {
    let w = read_axt(golden().join("probe_weights.axt")).unwrap().to_matrix().unwrap();
    let b = read_axt(golden().join("probe_bias.axt")).unwrap().to_vector().unwrap();
    let probe = ProbeWeights::new(w, b, "fixture").unwrap();
    assert_eq!(probe.n_outputs(), 3);
    assert_eq!(probe.weights[(2, 5)], pattern(0, 2, 5));
    assert_eq!(probe.bias.as_slice(), &[0.5, -1.0, 2.0]);
}

#[test]
fn tensor_built_in_rust_matches_golden_bytes() {
    let t = AxtTensor::from_f64(vec![2, 3, 4], (0..24).map(f64::from).collect())
        .unwrap()
        .with_name("cube")
        .unwrap();
    assert_eq!(t.to_bytes(), fs::read(golden().join("cube_f64.axt")).unwrap());
}
