//! Command-line front end: attach functions to containers, read and
//! inspect datasets, manage trust, generate samples, run measurements.
//!
//! Exit codes: 0 success, 1 usage error (bad flags or argument formats,
//! reported by the parser on stderr), 2 operational error (reported as
//! `error: ...` on stderr).

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use udfvault::bench::{self, BenchConfig};
use udfvault::container::{varstr, Container, DatasetRequest};
use udfvault::dtype::{parse_name, DType};
use udfvault::engine::{AttachOptions, Engine};
use udfvault::filters::FilterSpec;
use udfvault::runtime::{build_compound_view, ViewMember};
use udfvault::trust::{KeyRecord, Owner, TrustStore, HOME_ENV};

type CliResult = Result<(), Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "udfvault", version, about = "Storage-embedded user-defined functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Debug)]
struct Shape(Vec<u64>);

/// `AxB[xC...]` with positive decimal extents.
fn parse_shape(text: &str) -> Result<Shape, String> {
    let extents: Result<Vec<u64>, _> = text.split('x').map(str::parse::<u64>).collect();
    match extents {
        Ok(e) if !e.is_empty() && e.iter().all(|&x| x > 0) => Ok(Shape(e)),
        _ => Err(format!("`{text}` is not a shape like 1440x720")),
    }
}

#[derive(Clone, Debug)]
struct Binding {
    alias: String,
    path: String,
}

/// `alias=/dataset/path`.
fn parse_binding(text: &str) -> Result<Binding, String> {
    match text.split_once('=') {
        Some((alias, path)) if !alias.is_empty() && !path.is_empty() => Ok(Binding {
            alias: alias.to_string(),
            path: path.to_string(),
        }),
        _ => Err(format!("`{text}` is not a binding like nir=/Band5")),
    }
}

fn parse_dtype(text: &str) -> Result<DType, String> {
    parse_name(text).map_err(|e| e.to_string())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    /// Raw little-endian element bytes.
    Raw,
    /// Comma-separated values, one row per leading dimension index.
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Compile, sign, and store a function as a dataset.
    Attach {
        /// Container file.
        file: PathBuf,
        /// Backend that compiles the source.
        #[arg(long, default_value = "expr")]
        backend: String,
        /// File holding the source text (an expression, or a hosted
        /// function name).
        #[arg(long)]
        source: PathBuf,
        /// Dataset path the function materializes.
        #[arg(long)]
        output: String,
        /// Output element type, e.g. float64 or string(8).
        #[arg(long, value_parser = parse_dtype)]
        dtype: DType,
        /// Output shape, extents joined by `x`, e.g. 1440x720.
        #[arg(long, value_parser = parse_shape)]
        shape: Shape,
        /// Input binding alias=dataset-path; repeatable, order defines
        /// input indices.
        #[arg(long = "input", value_parser = parse_binding)]
        inputs: Vec<Binding>,
        /// Store the source text inside the payload.
        #[arg(long)]
        embed_source: bool,
    },
    /// Print a dataset's values; function datasets are executed.
    Read {
        file: PathBuf,
        dataset: String,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Print a stored function's header and verification status as JSON.
    Inspect { file: PathBuf, dataset: String },
    /// Manage the trust store.
    Keys {
        #[command(subcommand)]
        action: KeysAction,
    },
    /// Create a container with synthetic /Band4 and /Band5 grids.
    CreateSample {
        file: PathBuf,
        /// Grid extent; the bands are NxN Int16 datasets.
        #[arg(long)]
        n: u64,
    },
    /// Measure storage and read scenarios; CSV on stdout.
    Bench {
        /// Working directory for containers and the measurement trust
        /// store.
        #[arg(long)]
        dir: PathBuf,
        /// Largest grid size to measure.
        #[arg(long, default_value_t = 16000)]
        max_n: u64,
        /// Base seed for the synthetic bands.
        #[arg(long, default_value_t = bench::DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum KeysAction {
    /// List profiles and the keys they hold.
    List,
    /// Import a key record (JSON file) into a profile.
    Import { file: PathBuf, profile: String },
    /// Move a key, by fingerprint prefix, to a profile.
    Move { keyid: String, profile: String },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests land here too; only real usage
            // errors exit nonzero.
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(e) = run(cli) {
        // A consumer like `head` closing stdout is not an error.
        if is_broken_pipe(e.as_ref()) {
            std::process::exit(0);
        }
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}

fn is_broken_pipe(e: &(dyn std::error::Error + 'static)) -> bool {
    if let Some(io) = e.downcast_ref::<std::io::Error>() {
        return io.kind() == std::io::ErrorKind::BrokenPipe;
    }
    if let Some(udfvault::Error::Io(io)) = e.downcast_ref::<udfvault::Error>() {
        return io.kind() == std::io::ErrorKind::BrokenPipe;
    }
    false
}

/// Trust store root: `UDFVAULT_HOME`, else `~/.udfvault`.
fn trust_root() -> Result<PathBuf, String> {
    if let Some(home) = std::env::var_os(HOME_ENV) {
        return Ok(PathBuf::from(home));
    }
    match std::env::var_os("HOME") {
        Some(home) => Ok(PathBuf::from(home).join(".udfvault")),
        None => Err(format!("set {HOME_ENV} to locate the trust store")),
    }
}

/// Engine over the user's trust store, with the demo hosted function
/// `fill_index` (writes each element's flat index) registered.
fn cli_engine() -> Result<Engine, Box<dyn std::error::Error>> {
    let user = std::env::var("USER").unwrap_or_else(|_| "udfvault".to_string());
    let owner = Owner {
        name: user.clone(),
        email: format!("{user}@localhost"),
    };
    let engine = Engine::new(&trust_root()?, &owner)?;
    engine.register_hosted_function("fill_index", |env| {
        let (_, dtype, _, out) = env.split_inputs_output();
        if !dtype.is_numeric() {
            return Err(udfvault::Error::InputDTypeUnsupported(format!(
                "fill_index cannot produce {dtype}"
            )));
        }
        let mut buf = Vec::with_capacity(out.len());
        for i in 0..out.len() / dtype.size() {
            udfvault::dtype::write_scalar_f64(dtype, i as f64, &mut buf);
        }
        out.copy_from_slice(&buf);
        Ok(())
    });
    Ok(engine)
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Attach {
            file,
            backend,
            source,
            output,
            dtype,
            shape,
            inputs,
            embed_source,
        } => {
            let text = fs::read_to_string(&source)
                .map_err(|e| format!("reading {}: {e}", source.display()))?;
            let engine = cli_engine()?;
            let mut container = Container::open_rw(&file)?;
            engine.attach(
                &mut container,
                &AttachOptions {
                    backend,
                    source: text,
                    output: output.clone(),
                    output_dtype: dtype,
                    output_shape: shape.0,
                    inputs: inputs.into_iter().map(|b| (b.alias, b.path)).collect(),
                    embed_source,
                },
            )?;
            eprintln!("attached {output} in {}", file.display());
            Ok(())
        }
        Command::Read {
            file,
            dataset,
            format,
        } => {
            let engine = cli_engine()?;
            let container = Container::open(&file)?;
            let meta = container.dataset(&dataset)?.clone();
            let bytes = engine.read(&container, &dataset)?;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            match format {
                Format::Raw => out.write_all(&bytes)?,
                Format::Csv => write_csv(&mut out, &meta.dtype, &meta.shape, &bytes)?,
            }
            Ok(())
        }
        Command::Inspect { file, dataset } => {
            let engine = cli_engine()?;
            let container = Container::open(&file)?;
            let report = engine.inspect(&container, &dataset)?;
            writeln!(
                std::io::stdout().lock(),
                "{}",
                serde_json::to_string_pretty(&report)?
            )?;
            Ok(())
        }
        Command::Keys { action } => {
            let store = TrustStore::open(&trust_root()?)?;
            match action {
                KeysAction::List => {
                    let keys = store.scan()?;
                    let stdout = std::io::stdout();
                    let mut out = stdout.lock();
                    for profile in store.profiles()? {
                        writeln!(out, "{profile}")?;
                        for (_, record) in keys.iter().filter(|(p, _)| *p == profile) {
                            writeln!(
                                out,
                                "  {} {} <{}>",
                                record.fingerprint(),
                                record.owner_name,
                                record.owner_email
                            )?;
                        }
                    }
                }
                KeysAction::Import { file, profile } => {
                    let text = fs::read_to_string(&file)
                        .map_err(|e| format!("reading {}: {e}", file.display()))?;
                    let record: KeyRecord = serde_json::from_str(&text)?;
                    store.import_key(&profile, &record)?;
                    writeln!(
                        std::io::stdout().lock(),
                        "imported {} into {profile}",
                        record.fingerprint()
                    )?;
                }
                KeysAction::Move { keyid, profile } => {
                    store.move_key(&keyid, &profile)?;
                    writeln!(std::io::stdout().lock(), "moved {keyid} to {profile}")?;
                }
            }
            Ok(())
        }
        Command::CreateSample { file, n } => {
            if n == 0 {
                return Err("--n must be at least 1".into());
            }
            let mut container = Container::create(&file)?;
            let chunk = vec![n, n.min(100)];
            for (name, seed) in [
                ("/Band4", bench::DEFAULT_SEED),
                ("/Band5", bench::DEFAULT_SEED + 1),
            ] {
                let band = bench::generate_band(seed, (n * n) as usize);
                container.create_dataset(
                    DatasetRequest::chunked(name, DType::Int16, &[n, n], &chunk)
                        .with_filters(vec![FilterSpec::deflate(1)]),
                    &band,
                )?;
            }
            eprintln!("created {} with /Band4 and /Band5 ({n}x{n})", file.display());
            Ok(())
        }
        Command::Bench { dir, max_n, seed } => {
            let rows = bench::run(&BenchConfig { dir, max_n, seed })?;
            write!(std::io::stdout().lock(), "{}", bench::to_csv(&rows))?;
            Ok(())
        }
    }
}

/// One row per leading dimension index, elements comma-joined. Integer
/// elements print exactly; floats print the shortest digits that parse
/// back to the same value, so equal bytes always render as equal text.
fn write_csv(
    out: &mut impl std::io::Write,
    dtype: &DType,
    shape: &[u64],
    bytes: &[u8],
) -> CliResult {
    let elements: u64 = shape.iter().product();
    let per_row = (elements / shape[0]) as usize;

    // Variable strings arrive as one offsets-plus-heap buffer.
    let strings = if *dtype == DType::VarString {
        Some(varstr::decode(bytes, elements as usize)?)
    } else {
        None
    };

    let mut line = String::new();
    for row in 0..shape[0] as usize {
        line.clear();
        for col in 0..per_row {
            if col > 0 {
                line.push(',');
            }
            let idx = row * per_row + col;
            match &strings {
                Some(strings) => line.push_str(&csv_escape(&strings[idx])),
                None => format_element(&mut line, dtype, bytes, idx),
            }
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Appends element `idx` of `bytes` to `line`.
fn format_element(line: &mut String, dtype: &DType, bytes: &[u8], idx: usize) {
    use std::fmt::Write as _;
    let size = dtype.size();
    let at = idx * size;
    let b = &bytes[at..at + size];
    match dtype {
        DType::Int8 => write!(line, "{}", i8::from_le_bytes([b[0]])).unwrap(),
        DType::Int16 => write!(line, "{}", i16::from_le_bytes([b[0], b[1]])).unwrap(),
        DType::Int32 => write!(line, "{}", i32::from_le_bytes(b.try_into().unwrap())).unwrap(),
        DType::Int64 => write!(line, "{}", i64::from_le_bytes(b.try_into().unwrap())).unwrap(),
        DType::UInt8 => write!(line, "{}", b[0]).unwrap(),
        DType::UInt16 => write!(line, "{}", u16::from_le_bytes([b[0], b[1]])).unwrap(),
        DType::UInt32 => write!(line, "{}", u32::from_le_bytes(b.try_into().unwrap())).unwrap(),
        DType::UInt64 => write!(line, "{}", u64::from_le_bytes(b.try_into().unwrap())).unwrap(),
        DType::Float32 => write!(line, "{}", f32::from_le_bytes(b.try_into().unwrap())).unwrap(),
        DType::Float64 => write!(line, "{}", f64::from_le_bytes(b.try_into().unwrap())).unwrap(),
        DType::FixedString(_) => {
            let end = b.iter().position(|&c| c == 0).unwrap_or(b.len());
            line.push_str(&csv_escape(&String::from_utf8_lossy(&b[..end])));
        }
        DType::VarString => unreachable!("var strings are decoded up front"),
        DType::Compound(_) => {
            // Members in offset order; padding holes are skipped.
            let view = build_compound_view(dtype).expect("validated at storage time");
            let mut first = true;
            for member in &view.members {
                if let ViewMember::Field {
                    offset,
                    dtype: member_dtype,
                    ..
                } = member
                {
                    if !first {
                        line.push(',');
                    }
                    first = false;
                    format_element(line, member_dtype, &b[*offset..], 0);
                }
            }
        }
    }
}

/// RFC 4180 quoting, applied only when the text needs it.
fn csv_escape(text: &str) -> String {
    if text.contains(['"', ',', '\n', '\r']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}
