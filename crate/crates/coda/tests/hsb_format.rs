//! HSB round trips, corruption handling and client-written files.

use coda::hsb::{self, HsbError, FIXED_HEADER_LEN};
use coda_core::batch::{pair_source, Dtype, HiddenStateBatch};
use coda_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bits(b: &HiddenStateBatch) -> Vec<u64> {
    b.values().as_slice().iter().map(|x| x.to_bits()).collect()
}

fn random_value(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..8) {
        0 => -0.0,
        1 => f64::from_bits(rng.random_range(1..1u64 << 52)), // subnormal
        2 => rng.random_range(-1e300..1e300),
        3 => (rng.random_range(-1e30..1e30) as f32) as f64,
        _ => rng.random_range(-10.0..10.0),
    }
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const PIECES: [&str; 6] = ["source", "target", "é", "層", "/", "🙂"];
    (0..rng.random_range(0..6)).map(|_| PIECES[rng.random_range(0..PIECES.len())]).collect()
}

pub fn random_batch(rng: &mut ChaCha8Rng, dtype: Dtype) -> HiddenStateBatch {
    let (n, d) = (rng.random_range(1..=20), rng.random_range(1..=20));
    let values = Matrix::from_fn(n, d, |_, _| {
        let x = random_value(rng);
        // values outside the f32 range cannot be stored as f32
        if dtype == Dtype::F32 && x.abs() > f32::MAX as f64 { 1.5 } else { x }
    });
    let layer = rng.random_range(0..=i32::MAX as u32);
    HiddenStateBatch::new(values, random_text(rng), layer, random_text(rng), dtype).unwrap()
}

#[test]
fn thousand_random_round_trips_per_dtype() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for dtype in [Dtype::F32, Dtype::F64] {
        for _ in 0..1000 {
            let b = random_batch(&mut rng, dtype);
            let mut bytes = Vec::new();
            hsb::write_hsb(&b, &mut bytes).unwrap();
            let back = hsb::read_hsb(&mut bytes.as_slice()).unwrap();
            assert_eq!(back, b);
            assert_eq!(bits(&back), bits(&b));
            assert_eq!(hsb::encode(&back), bytes);
        }
    }
}

/// Offsets of the structural header bytes: magic, version, dtype, N, d, and
/// the two length prefixes. The layer index and the text bytes can change
/// into other valid values, and the format has no checksum.
fn structural_offsets(b: &HiddenStateBatch) -> Vec<usize> {
    let tag_len_at = FIXED_HEADER_LEN - 2;
    let model_len_at = FIXED_HEADER_LEN + b.domain_tag().len();
    let mut v: Vec<usize> = (0..4 + 4 + 1 + 8 + 8).collect();
    v.extend([tag_len_at, tag_len_at + 1, model_len_at, model_len_at + 1]);
    v
}

#[test]
fn every_single_byte_header_corruption_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for i in 0..60 {
        let dtype = if i % 2 == 0 { Dtype::F32 } else { Dtype::F64 };
        let b = random_batch(&mut rng, dtype);
        let bytes = hsb::encode(&b);
        for at in structural_offsets(&b) {
            for value in 0..=255u8 {
                if value == bytes[at] {
                    continue;
                }
                let mut bad = bytes.clone();
                bad[at] = value;
                assert!(
                    hsb::decode(&bad).is_err(),
                    "byte {at} set to {value} accepted (batch {}x{} {:?})",
                    b.n(),
                    b.d(),
                    dtype
                );
            }
        }
    }
}

#[test]
fn negative_layer_and_bad_text_are_rejected() {
    let b = HiddenStateBatch::new(Matrix::zeros(2, 2), "ab", 5, "m", Dtype::F32).unwrap();
    let bytes = hsb::encode(&b);
    let layer_at = 4 + 4 + 1 + 8 + 8;
    let mut neg = bytes.clone();
    neg[layer_at + 3] = 0x80;
    assert!(matches!(hsb::decode(&neg), Err(HsbError::NegativeLayer(_))));
    let mut text = bytes.clone();
    text[FIXED_HEADER_LEN] = 0xff;
    assert!(matches!(hsb::decode(&text), Err(HsbError::BadText("tag"))));
}

#[test]
fn every_truncation_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let b = random_batch(&mut rng, Dtype::F64);
    let bytes = hsb::encode(&b);
    for len in 0..bytes.len() {
        assert!(hsb::decode(&bytes[..len]).is_err(), "prefix of {len} bytes accepted");
    }
}

#[test]
fn huge_declared_shape_fails_without_allocating() {
    let b = HiddenStateBatch::new(Matrix::zeros(1, 1), "", 0, "", Dtype::F64).unwrap();
    let mut bytes = hsb::encode(&b);
    // N = 2^40 rows
    bytes[9..17].copy_from_slice(&(1u64 << 40).to_le_bytes());
    match hsb::decode(&bytes) {
        Err(HsbError::TruncatedPayload { expected, found: 8 }) => assert_eq!(expected, (1u64 << 40) * 8),
        other => panic!("{other:?}"),
    }
    bytes[9..17].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(matches!(hsb::decode(&bytes), Err(HsbError::BadShape { .. })));
}

fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

/// Bytes laid out by hand, field by field, independent of the encoder.
fn hand_built(values: &[[f32; 3]], tag: &str, layer: i32, model: &str) -> Vec<u8> {
    let mut out = b"HSB1".to_vec();
    out.extend(1u32.to_le_bytes());
    out.push(0);
    out.extend((values.len() as u64).to_le_bytes());
    out.extend(3u64.to_le_bytes());
    out.extend(layer.to_le_bytes());
    out.extend((tag.len() as u16).to_le_bytes());
    out.extend(tag.as_bytes());
    out.extend((model.len() as u16).to_le_bytes());
    out.extend(model.as_bytes());
    for row in values {
        for x in row {
            out.extend(x.to_le_bytes());
        }
    }
    out
}

#[test]
fn client_written_files_decode_and_pair() {
    let raw = hsb::decode(&fixture("client_source_raw.hsb")).unwrap();
    let teacher = hsb::decode(&fixture("client_source_teacher.hsb")).unwrap();
    assert_eq!((raw.n(), raw.d(), raw.dtype(), raw.layer_index()), (6, 8, Dtype::F32, 20));
    assert_eq!(raw.model_id(), "google/gemma-3-12b-it");
    assert_eq!(raw.values()[(0, 1)], 1f64.sin() as f32 as f64);
    let source = pair_source(raw.clone(), teacher, None).unwrap();
    assert_eq!(source.len(), 6);
    // the decoded batch re-encodes to the same bytes
    assert_eq!(hsb::encode(&raw), fixture("client_source_raw.hsb"));

    let a = hand_built(&[[1.0, -2.5, 0.125], [3.0, 4.0, -0.0]], "source", 12, "m");
    let b = hand_built(&[[1.5, -2.0, 0.0], [3.5, 4.5, 1.0]], "source:teacher", 12, "m");
    let pa = hsb::decode(&a).unwrap();
    assert_eq!(hsb::encode(&pa), a);
    pair_source(pa, hsb::decode(&b).unwrap(), None).unwrap();

    let short = hand_built(&[[1.0, 2.0, 3.0]], "source:teacher", 12, "m");
    let err = pair_source(hsb::decode(&a).unwrap(), hsb::decode(&short).unwrap(), None).unwrap_err();
    assert!(err.to_string().contains("2 vs 1 rows"), "{err}");
    let other_layer = hand_built(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], "source:teacher", 13, "m");
    assert!(pair_source(hsb::decode(&a).unwrap(), hsb::decode(&other_layer).unwrap(), None).is_err());
}
