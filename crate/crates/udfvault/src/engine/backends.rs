//! Execution backends: strategies for compiling and running stored
//! functions.
//!
//! The `expr` backend compiles the expression language to portable
//! bytecode and can state its exact operation count up front, so it runs
//! for any signer. The `hosted` backend stores only a function *name*;
//! the implementation is native code registered by the embedding process,
//! so executing it requires a trust profile that allows hosted functions.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::payload::canonical_json;
use crate::exprlang::{self, evaluate_range, EvalInput, Program};
use crate::runtime::ExecutionEnv;
use crate::{Error, Result};

/// Compilation context a backend may need beyond the source text.
#[derive(Debug, Clone, Default)]
pub struct CompileOptions {
    /// Input aliases in attach order; alias `n` names input `n` of the
    /// execution environment.
    pub aliases: Vec<String>,
}

/// One way of turning source text into a storable object and later
/// running that object over an [`ExecutionEnv`].
///
/// Implementations must tolerate hostile objects: `execute` sees bytes
/// that passed a signature check, not bytes it produced itself.
pub trait Backend: Send + Sync {
    /// Registry name; recorded in every payload this backend compiles.
    fn name(&self) -> &str;

    /// Compiles source text into the object bytes stored in the payload.
    fn compile(&self, source: &str, options: &CompileOptions) -> Result<Vec<u8>>;

    /// Runs a compiled object, filling the environment's output buffer.
    fn execute(&self, object: &[u8], env: &mut ExecutionEnv) -> Result<()>;

    /// Whether executing this backend's objects requires the signer's
    /// trust profile to allow hosted functions.
    fn requires_trust(&self) -> bool;

    /// Exact execution cost in abstract operations, when the backend can
    /// compute one from the object alone. Checked against the op budget
    /// before execution starts; `None` means the cost is unknowable and
    /// only runtime limits apply.
    fn static_cost(&self, _object: &[u8], _out_elements: u64) -> Result<Option<u64>> {
        Ok(None)
    }
}

/// Elements evaluated per slab; bounds transient memory to ~32 MiB while
/// large outputs are written in place.
const SLAB_ELEMENTS: usize = 1 << 22;

/// The expression-language backend.
pub struct ExprBackend;

impl Backend for ExprBackend {
    fn name(&self) -> &str {
        "expr"
    }

    fn compile(&self, source: &str, options: &CompileOptions) -> Result<Vec<u8>> {
        let aliases: Vec<&str> = options.aliases.iter().map(String::as_str).collect();
        Ok(exprlang::compile(source, &aliases)?.serialize())
    }

    fn execute(&self, object: &[u8], env: &mut ExecutionEnv) -> Result<()> {
        let program = Program::deserialize(object)?;
        run_slabs(&program, env, SLAB_ELEMENTS)
    }

    fn requires_trust(&self) -> bool {
        false
    }

    fn static_cost(&self, object: &[u8], out_elements: u64) -> Result<Option<u64>> {
        let (ops, _) = Program::deserialize(object)?.decode()?;
        // Saturating: a cost too large for u64 exceeds any real budget.
        Ok(Some((ops.len() as u64).saturating_mul(out_elements)))
    }
}

/// Evaluates `program` slab by slab into the environment's output buffer,
/// observing the cancel flag between slabs so an abandoned run stops
/// burning CPU shortly after its supervisor times out.
fn run_slabs(program: &Program, env: &mut ExecutionEnv, slab: usize) -> Result<()> {
    let budget = env.limits.op_budget;
    let cancel = env.cancel_handle();
    let (inputs, out_dtype, out_shape, out) = env.split_inputs_output();
    let eval_inputs: Vec<EvalInput<'_>> = inputs
        .iter()
        .map(|(_, dtype, _, data)| EvalInput {
            buffer: data,
            dtype,
        })
        .collect();
    let esize = out_dtype.size();
    let elements = out.len() / esize;
    let mut start = 0;
    while start < elements {
        if cancel.is_cancelled() {
            return Err(Error::Timeout);
        }
        let end = (start + slab).min(elements);
        let chunk = evaluate_range(
            program,
            &eval_inputs,
            out_shape,
            out_dtype,
            budget,
            start,
            end,
        )?;
        out[start * esize..end * esize].copy_from_slice(&chunk);
        start = end;
    }
    Ok(())
}

type HostedFn = Arc<dyn Fn(&mut ExecutionEnv) -> Result<()> + Send + Sync>;

/// The object stored for a hosted function: just a name to resolve in the
/// reading process.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HostedObject {
    function: String,
}

/// The hosted-function backend.
///
/// `compile` accepts a function name and does not require it to be
/// registered locally: the name is resolved at execution time, in
/// whatever process reads the dataset, so a container can travel to an
/// application that provides the implementation.
#[derive(Default)]
pub struct HostedBackend {
    functions: RwLock<BTreeMap<String, HostedFn>>,
}

impl HostedBackend {
    pub fn new() -> HostedBackend {
        HostedBackend::default()
    }

    /// Registers (or replaces) the implementation behind `name`.
    pub fn register<F>(&self, name: &str, function: F)
    where
        F: Fn(&mut ExecutionEnv) -> Result<()> + Send + Sync + 'static,
    {
        self.functions
            .write()
            .expect("hosted registry poisoned")
            .insert(name.to_string(), Arc::new(function));
    }

    pub fn function_names(&self) -> Vec<String> {
        self.functions
            .read()
            .expect("hosted registry poisoned")
            .keys()
            .cloned()
            .collect()
    }

    fn lookup(&self, name: &str) -> Result<HostedFn> {
        self.functions
            .read()
            .expect("hosted registry poisoned")
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownHostedFunction(name.to_string()))
    }
}

impl Backend for HostedBackend {
    fn name(&self) -> &str {
        "hosted"
    }

    fn compile(&self, source: &str, _options: &CompileOptions) -> Result<Vec<u8>> {
        let name = source.trim();
        let valid = !name.is_empty()
            && name
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'_');
        if !valid {
            return Err(Error::CompileError {
                backend: "hosted".into(),
                message: format!("`{source}` is not a function name"),
            });
        }
        canonical_json(&HostedObject {
            function: name.to_string(),
        })
    }

    fn execute(&self, object: &[u8], env: &mut ExecutionEnv) -> Result<()> {
        let parsed: HostedObject = serde_json::from_slice(object)
            .map_err(|e| Error::MalformedBytecode(format!("hosted object: {e}")))?;
        (self.lookup(&parsed.function)?)(env)
    }

    fn requires_trust(&self) -> bool {
        true
    }
}
