//! Frozen wire-format fixtures.
//!
//! Every builder here is fully deterministic (fixed signing seed, fixed
//! data, fixed owner), so the bytes it produces must match the checked-in
//! fixture exactly. A mismatch means the on-disk format changed; that is
//! only acceptable together with a format version bump, and the fixtures
//! are then refreshed with:
//!
//!     UDFVAULT_REGEN_GOLDEN=1 cargo test -p udfvault --test golden

use std::fs;
use std::path::{Path, PathBuf};

use udfvault::container::{AttrValue, Container, DatasetRequest};
use udfvault::dtype::DType;
use udfvault::engine::{canonical_json, AttachOptions, Engine, UdfPayload};
use udfvault::exprlang;
use udfvault::filters::FilterSpec;
use udfvault::trust::Owner;

const SIGNING_SEED: [u8; 32] = [7; 32];

fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

/// Compares `bytes` against the fixture, or rewrites the fixture when
/// `UDFVAULT_REGEN_GOLDEN=1`.
fn check(name: &str, bytes: &[u8]) {
    let path = golden_path(name);
    if std::env::var_os("UDFVAULT_REGEN_GOLDEN").is_some_and(|v| v == "1") {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, bytes).unwrap();
        return;
    }
    let want = fs::read(&path)
        .unwrap_or_else(|e| panic!("missing fixture {name} ({e}); regenerate with UDFVAULT_REGEN_GOLDEN=1"));
    if want != bytes {
        let at = want
            .iter()
            .zip(bytes.iter())
            .position(|(a, b)| a != b)
            .unwrap_or(want.len().min(bytes.len()));
        panic!(
            "fixture {name} differs: stored {} bytes, built {} bytes, first difference at offset {at}",
            want.len(),
            bytes.len()
        );
    }
}

/// Builds the sample container with a fixed identity and returns the
/// container file bytes plus the stored payload block.
fn build_sample(dir: &Path) -> (Vec<u8>, Vec<u8>) {
    let trust_root = dir.join("trust");
    fs::create_dir_all(trust_root.join("identity")).unwrap();
    fs::write(trust_root.join("identity/secret.key"), SIGNING_SEED).unwrap();
    let owner = Owner {
        name: "golden".into(),
        email: "golden@example.org".into(),
    };
    let engine = Engine::new(&trust_root, &owner).unwrap();

    let path = dir.join("sample.sdc");
    let mut container = Container::create(&path).unwrap();

    // Two 4x4 Int16 bands, chunked 2x2 behind shuffle+deflate.
    let band = |base: i16| -> Vec<u8> {
        (0..16i16)
            .flat_map(|i| (base + i * 3).to_le_bytes())
            .collect()
    };
    for (name, base) in [("/Band4", 100i16), ("/Band5", 900i16)] {
        container
            .create_dataset(
                DatasetRequest::chunked(name, DType::Int16, &[4, 4], &[2, 2]).with_filters(vec![
                    FilterSpec::shuffle(2),
                    FilterSpec::deflate(6),
                ]),
                &band(base),
            )
            .unwrap();
    }
    container.ensure_group("/meta").unwrap();
    container
        .set_attr("/meta", "instrument", AttrValue::Text("sampler".into()))
        .unwrap();

    engine
        .attach(
            &mut container,
            &AttachOptions {
                backend: "expr".into(),
                source: "(nir - red) / (nir + red)".into(),
                output: "/NDVI".into(),
                output_dtype: DType::Float64,
                output_shape: vec![4, 4],
                inputs: vec![
                    ("nir".into(), "/Band5".into()),
                    ("red".into(), "/Band4".into()),
                ],
                embed_source: true,
            },
        )
        .unwrap();

    let payload = container.udf_payload("/NDVI").unwrap();
    drop(container);
    (fs::read(&path).unwrap(), payload)
}

#[test]
fn bytecode_wire_bytes_are_frozen() {
    let zero = exprlang::compile("0", &[]).unwrap();
    check("zero.bc", &zero.serialize());

    let ndvi = exprlang::compile("(nir - red) / (nir + red)", &["nir", "red"]).unwrap();
    check("ndvi.bc", &ndvi.serialize());
}

#[test]
fn sample_container_bytes_are_frozen() {
    let dir = tempfile::tempdir().unwrap();
    let (file_bytes, payload) = build_sample(dir.path());
    check("sample.sdc", &file_bytes);
    check("ndvi.payload", &payload);
}

#[test]
fn identical_builds_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (file_a, payload_a) = build_sample(a.path());
    let (file_b, payload_b) = build_sample(b.path());
    assert_eq!(file_a, file_b);
    assert_eq!(payload_a, payload_b);
}

#[test]
fn stored_payload_layout_is_header_nul_object_padding() {
    let dir = tempfile::tempdir().unwrap();
    let (_, block) = build_sample(dir.path());

    let nul = block.iter().position(|&b| b == 0).unwrap();
    let payload = UdfPayload::decode(&block).unwrap();

    // Header bytes are the canonical JSON of the metadata, nothing else.
    assert_eq!(&block[..nul], &canonical_json(&payload.metadata).unwrap()[..]);

    // The object follows the NUL and is exactly bytecode_size long.
    let object_end = nul + 1 + payload.metadata.bytecode_size as usize;
    assert_eq!(&block[nul + 1..object_end], &payload.object[..]);

    // Everything after it is padding zeros up to the block size.
    assert!(block[object_end..].iter().all(|&b| b == 0));
    assert_eq!(block.len() % udfvault::engine::PAYLOAD_BLOCK, 0);

    // The embedded signature verifies and the object is the NDVI program.
    assert!(payload.verify().unwrap());
    let program = exprlang::Program::deserialize(&payload.object).unwrap();
    let reference = exprlang::compile("(nir - red) / (nir + red)", &["nir", "red"]).unwrap();
    assert_eq!(program, reference);
}
