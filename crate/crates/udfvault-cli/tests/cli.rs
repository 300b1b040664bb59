//! End-to-end tests against the compiled binary.
//!
//! Every test gets its own `UDFVAULT_HOME`, so trust state never leaks
//! between tests and the suite can run in parallel.

use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use udfvault::bench::{generate_band, DEFAULT_SEED};
use udfvault::container::{Container, DatasetRequest};
use udfvault::dtype::DType;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_udfvault")
}

struct Setup {
    _dir: tempfile::TempDir,
    home: PathBuf,
    work: PathBuf,
}

fn setup() -> Setup {
    let dir = tempfile::tempdir().unwrap();
    let home = dir.path().join("home");
    let work = dir.path().join("work");
    std::fs::create_dir_all(&work).unwrap();
    Setup {
        home,
        work,
        _dir: dir,
    }
}

impl Setup {
    fn run(&self, args: &[&str]) -> Output {
        Command::new(bin())
            .args(args)
            .env("UDFVAULT_HOME", &self.home)
            .current_dir(&self.work)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "command {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn path(&self, name: &str) -> String {
        self.work.join(name).to_str().unwrap().to_string()
    }

    fn write(&self, name: &str, text: &str) -> String {
        let path = self.work.join(name);
        std::fs::write(&path, text).unwrap();
        path.to_str().unwrap().to_string()
    }
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process was signalled")
}

/// NDVI over the generated bands, in the exact arithmetic the engine
/// uses: Int16 widened to f64, then (nir - red) / (nir + red).
fn ndvi_f64(red: &[u8], nir: &[u8]) -> Vec<u8> {
    red.chunks_exact(2)
        .zip(nir.chunks_exact(2))
        .flat_map(|(r, n)| {
            let r = i16::from_le_bytes(r.try_into().unwrap()) as f64;
            let n = i16::from_le_bytes(n.try_into().unwrap()) as f64;
            ((n - r) / (n + r)).to_le_bytes()
        })
        .collect()
}

#[test]
fn udf_csv_output_is_byte_identical_to_a_precomputed_dataset() {
    let s = setup();
    let elements = 1440 * 720;
    let red = generate_band(DEFAULT_SEED, elements);
    let nir = generate_band(DEFAULT_SEED + 1, elements);
    let precomputed = ndvi_f64(&red, &nir);

    let file = s.path("grid.sdc");
    let mut container = Container::create(Path::new(&file)).unwrap();
    container
        .create_dataset(
            DatasetRequest::contiguous("/Band4", DType::Int16, &[1440, 720]),
            &red,
        )
        .unwrap();
    container
        .create_dataset(
            DatasetRequest::contiguous("/Band5", DType::Int16, &[1440, 720]),
            &nir,
        )
        .unwrap();
    container
        .create_dataset(
            DatasetRequest::contiguous("/NDVI_pre", DType::Float64, &[1440, 720]),
            &precomputed,
        )
        .unwrap();
    drop(container);

    let source = s.write("ndvi.expr", "(nir - red) / (nir + red)");
    s.ok(&[
        "attach", &file,
        "--source", &source,
        "--output", "/NDVI",
        "--dtype", "float64",
        "--shape", "1440x720",
        "--input", "nir=/Band5",
        "--input", "red=/Band4",
    ]);

    // The invariant: a function dataset and a precomputed dataset holding
    // the same values print the same CSV, byte for byte.
    let via_udf = s.ok(&["read", &file, "/NDVI", "--format", "csv"]);
    let via_data = s.ok(&["read", &file, "/NDVI_pre", "--format", "csv"]);
    assert_eq!(via_udf, via_data);
    assert_eq!(via_udf.lines().count(), 1440);
    assert_eq!(via_udf.lines().next().unwrap().split(',').count(), 720);

    // Raw output is the precomputed buffer exactly.
    let raw = s.run(&["read", &file, "/NDVI", "--format", "raw"]);
    assert!(raw.status.success());
    assert_eq!(raw.stdout, precomputed);

    // Spot-check the first element against the frozen generator vectors:
    // seed 42 yields 5414, seed 43 yields 5161.
    let first = (5161.0 - 5414.0) / (5161.0 + 5414.0f64);
    assert!(via_udf.starts_with(&format!("{first}")));
}

#[test]
fn inspect_reports_the_header_without_touching_the_trust_store() {
    let s = setup();
    let file = s.path("sample.sdc");
    s.ok(&["create-sample", &file, "--n", "16"]);
    let source = s.write("ndvi.expr", "(nir - red) / (nir + red)");
    s.ok(&[
        "attach", &file,
        "--source", &source,
        "--output", "/NDVI",
        "--dtype", "float64",
        "--shape", "16x16",
        "--input", "nir=/Band5",
        "--input", "red=/Band4",
        "--embed-source",
    ]);

    let report: serde_json::Value =
        serde_json::from_str(&s.ok(&["inspect", &file, "/NDVI"])).unwrap();
    let meta = &report["metadata"];
    assert_eq!(meta["backend"], "expr");
    assert_eq!(meta["output_dataset"], "/NDVI");
    assert_eq!(meta["output_datatype"], "float64");
    assert_eq!(meta["output_resolution"], serde_json::json!([16, 16]));
    assert_eq!(
        meta["input_datasets"],
        serde_json::json!(["/Band5", "/Band4"])
    );
    assert_eq!(meta["source_code"], "(nir - red) / (nir + red)");
    assert!(meta["bytecode_size"].as_u64().unwrap() > 0);
    for field in ["email", "name", "public_key", "payload_signature"] {
        assert!(meta["signature"][field].is_string());
    }
    assert_eq!(report["verified"], true);
    assert!(report["fingerprint"].is_string());
    // No read has happened yet, so the signer is in no profile: inspect
    // itself must not import keys.
    assert_eq!(report["profile"], serde_json::Value::Null);

    s.ok(&["read", &file, "/NDVI"]);
    let report: serde_json::Value =
        serde_json::from_str(&s.ok(&["inspect", &file, "/NDVI"])).unwrap();
    assert_eq!(report["profile"], "untrusted");
}

#[test]
fn hosted_functions_cross_the_trust_boundary_with_keys_move() {
    let s = setup();
    let file = s.path("sample.sdc");
    s.ok(&["create-sample", &file, "--n", "8"]);
    let source = s.write("fn.txt", "fill_index");
    s.ok(&[
        "attach", &file,
        "--backend", "hosted",
        "--source", &source,
        "--output", "/idx",
        "--dtype", "float64",
        "--shape", "8",
    ]);

    // First read: the unknown signer lands in `untrusted`, and hosted
    // execution there is a policy violation.
    let out = s.run(&["read", &file, "/idx"]);
    assert_eq!(exit_code(&out), 2);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("trust policy violation"),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    // `keys list` prints profile headers flush left and keys indented;
    // this maps each fingerprint to the profile it sits under.
    fn keyed_profiles(listing: &str) -> Vec<(String, String)> {
        let mut profile = String::new();
        let mut out = Vec::new();
        for line in listing.lines() {
            if !line.starts_with(' ') {
                profile = line.trim().to_string();
            } else {
                let fp = line.trim().split(' ').next().unwrap().to_string();
                out.push((fp, profile.clone()));
            }
        }
        out
    }

    let keys = keyed_profiles(&s.ok(&["keys", "list"]));
    let (fingerprint, profile) = keys.first().expect("key in listing").clone();
    assert_eq!(profile, "untrusted");

    s.ok(&["keys", "move", &fingerprint, "trusted"]);
    let keys = keyed_profiles(&s.ok(&["keys", "list"]));
    assert_eq!(keys, vec![(fingerprint, "trusted".to_string())]);

    // Same read now succeeds: /idx materializes 0..8.
    let csv = s.ok(&["read", &file, "/idx"]);
    assert_eq!(csv, "0\n1\n2\n3\n4\n5\n6\n7\n");
}

#[test]
fn a_consumer_closing_the_pipe_is_not_an_error() {
    let s = setup();
    let file = s.path("pipe.sdc");
    s.ok(&["create-sample", &file, "--n", "200"]);
    let expr = s.write("ndvi.expr", "(nir - red) / (nir + red)");
    s.ok(&["attach", &file, "--source", &expr, "--output", "/NDVI",
        "--dtype", "float64", "--shape", "200x200",
        "--input", "nir=/Band5", "--input", "red=/Band4"]);

    // The 200x200 CSV is far larger than a pipe buffer, so the writer
    // is guaranteed to still be writing when the read end vanishes;
    // the small writers cover the same contract on their code paths.
    let big: &[&str] = &["read", &file, "/Band4"];
    let small_json: &[&str] = &["inspect", &file, "/NDVI"];
    let small_lines: &[&str] = &["keys", "list"];
    for args in [big, small_json, small_lines] {
        let mut child = Command::new(bin())
            .args(args)
            .env("UDFVAULT_HOME", &s.home)
            .current_dir(&s.work)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        drop(child.stdout.take());
        let out = child.wait_with_output().unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "command {args:?} with closed stdout: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(
            out.stderr.is_empty(),
            "command {args:?} wrote to stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn exit_codes_separate_usage_from_operational_failures() {
    let s = setup();

    // Usage errors: clap-level parse failures exit 1 and explain on
    // stderr.
    let out = s.run(&["read"]);
    assert_eq!(exit_code(&out), 1);
    assert!(!out.stderr.is_empty());

    let out = s.run(&["attach", "x.sdc", "--source", "s", "--output", "/o",
        "--dtype", "float64", "--shape", "12xx"]);
    assert_eq!(exit_code(&out), 1);

    let out = s.run(&["--definitely-not-a-flag"]);
    assert_eq!(exit_code(&out), 1);

    // Operational errors: well-formed invocations that fail exit 2.
    let out = s.run(&["read", &s.path("missing.sdc"), "/x"]);
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let file = s.path("sample.sdc");
    s.ok(&["create-sample", &file, "--n", "4"]);
    let out = s.run(&["read", &file, "/nope"]);
    assert_eq!(exit_code(&out), 2);

    // Success exits 0.
    let out = s.run(&["--version"]);
    assert_eq!(exit_code(&out), 0);
}

#[test]
fn create_sample_bands_match_the_generator() {
    let s = setup();
    let file = s.path("sample.sdc");
    s.ok(&["create-sample", &file, "--n", "6"]);

    let out = s.run(&["read", &file, "/Band4", "--format", "raw"]);
    assert!(out.status.success());
    assert_eq!(out.stdout, generate_band(DEFAULT_SEED, 36));

    let out = s.run(&["read", &file, "/Band5", "--format", "raw"]);
    assert_eq!(out.stdout, generate_band(DEFAULT_SEED + 1, 36));

    // CSV of an Int16 dataset prints exact integers; the first frozen
    // generator values are 5414 then 2292.
    let csv = s.ok(&["read", &file, "/Band4"]);
    assert!(csv.starts_with("5414,2292,"));
}

#[test]
fn csv_strings_are_quoted_per_rfc4180() {
    let s = setup();
    let file = s.path("strings.sdc");
    let mut container = Container::create(Path::new(&file)).unwrap();
    let mut data = Vec::new();
    for text in ["plain", "a,b", "q\"q", ""] {
        let mut cell = text.as_bytes().to_vec();
        cell.resize(8, 0);
        data.extend(cell);
    }
    container
        .create_dataset(
            DatasetRequest::contiguous("/names", DType::FixedString(8), &[4]),
            &data,
        )
        .unwrap();
    drop(container);

    let csv = s.ok(&["read", &file, "/names"]);
    assert_eq!(csv, "plain\n\"a,b\"\n\"q\"\"q\"\n\n");
}
