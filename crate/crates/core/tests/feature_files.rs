use actgraph::features::{
    load_bundle, read_captions, save_bundle, synth_generate, write_captions, FeatureError, NamedTensor, Pattern, SynthDims,
    TensorArchive, OBJECT, VISUAL_TEXT,
};
use proptest::prelude::*;

fn sample_bytes(seed: u64) -> Vec<u8> {
    let s = synth_generate(seed, 4, 2, SynthDims::default(), Pattern::Burst).unwrap();
    s.bundle.to_archive().unwrap().encode().unwrap()
}

#[test]
fn bundle_round_trips_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    for p in Pattern::ALL {
        let s = synth_generate(11, 8, 3, SynthDims::default(), p).unwrap();
        let path = dir.path().join(format!("{}.vft", s.bundle.video_id));
        save_bundle(&s.bundle, &path).unwrap();
        let back = load_bundle(&path).unwrap();
        assert_eq!(back, s.bundle);
        let first = std::fs::read(&path).unwrap();
        save_bundle(&back, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }
}

#[test]
fn captions_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("captions.jsonl");
    let records: Vec<_> = (0..5)
        .map(|i| synth_generate(i, 4, 2, SynthDims::default(), Pattern::ALL[i as usize % 3]).unwrap().record)
        .collect();
    write_captions(&path, &records).unwrap();
    assert_eq!(read_captions(&path).unwrap(), records);
}

#[test]
fn missing_tensor_is_named() {
    let s = synth_generate(3, 4, 2, SynthDims::default(), Pattern::Drift).unwrap();
    let full = s.bundle.to_archive().unwrap();
    let mut partial = TensorArchive::new();
    for t in full.tensors.iter().filter(|t| t.name != VISUAL_TEXT) {
        partial.push(t.clone());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip.vft");
    partial.write(&path).unwrap();
    match load_bundle(&path) {
        Err(FeatureError::MissingTensor(name)) => assert_eq!(name, VISUAL_TEXT),
        other => panic!("expected missing tensor, got {other:?}"),
    }
}

#[test]
fn non_finite_values_are_rejected() {
    let mut a = TensorArchive::new();
    a.push(NamedTensor::from_f64(OBJECT, vec![1, 1, 2], &[1.0, f64::NAN]));
    assert!(a.encode().is_err() || TensorArchive::decode(&a.encode().unwrap()).is_err());
}

#[test]
fn every_truncation_fails_cleanly() {
    let bytes = sample_bytes(5);
    for len in 0..bytes.len() {
        assert!(TensorArchive::decode(&bytes[..len]).is_err(), "prefix of {len} bytes decoded");
    }
    assert!(TensorArchive::decode(&bytes).is_ok());
}

proptest! {
    #[test]
    fn corrupted_bytes_never_panic(seed in 0u64..50, flips in proptest::collection::vec((any::<usize>(), any::<u8>()), 1..8)) {
        let mut bytes = sample_bytes(seed);
        for (pos, val) in flips {
            let i = pos % bytes.len();
            bytes[i] ^= val | 1;
        }
        if let Ok(archive) = TensorArchive::decode(&bytes) {
            let _ = actgraph::features::FeatureBundle::from_archive("fuzz", &archive);
        }
    }

    #[test]
    fn random_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = TensorArchive::decode(&bytes);
    }
}
