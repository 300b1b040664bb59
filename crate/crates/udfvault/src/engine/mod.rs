//! The engine that attaches user-defined functions to containers and
//! executes them on read.
//!
//! Attaching compiles source through a named [`Backend`], wraps the
//! object in a signed payload (see [`payload`]), and stores it as a UDF
//! dataset. Reading resolves the dataset through the engine, which acts
//! as the container's [`UdfResolver`]:
//!
//! 1. decode the stored block and verify its signature; any failure on
//!    this path reports [`Error::SignatureInvalid`], so a flipped byte
//!    anywhere in the block is indistinguishable from a forged one,
//! 2. resolve the signer's key to a trust profile, importing unknown
//!    keys into the `untrusted` profile,
//! 3. refuse trust-requiring backends unless the profile allows them,
//! 4. check the backend's static cost against the profile's op budget,
//! 5. prefetch every input dataset (recursively, so functions can read
//!    other functions; cycles are detected per thread),
//! 6. run the backend in a sandbox under the profile's limits.
//!
//! [`Engine::inspect`] decodes and verifies without executing anything
//! and without touching the trust store.

mod backends;
mod payload;

pub use backends::{Backend, CompileOptions, ExprBackend, HostedBackend};
pub use payload::{canonical_json, SignatureBlock, UdfMetadata, UdfPayload, PAYLOAD_BLOCK};

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use ed25519_dalek::SigningKey;
use serde::Serialize;

use crate::container::{normalize_path, Container, DatasetMeta, UdfResolver};
use crate::dtype::{self, DType};
use crate::runtime::{run_sandboxed, ExecutionEnv};
use crate::trust::{self, KeyRecord, Owner, TrustStore};
use crate::{Error, Result};

/// What [`Engine::attach`] needs to know about one function.
#[derive(Debug, Clone)]
pub struct AttachOptions {
    /// Registered backend name, `"expr"` or `"hosted"` out of the box.
    pub backend: String,
    /// Backend-specific source text: an expression, or a hosted function
    /// name.
    pub source: String,
    /// Dataset path the function materializes.
    pub output: String,
    pub output_dtype: DType,
    pub output_shape: Vec<u64>,
    /// `(alias, dataset path)` pairs; position is the input index the
    /// compiled object refers to.
    pub inputs: Vec<(String, String)>,
    /// Store the source text in the payload for later inspection.
    pub embed_source: bool,
}

/// What [`Engine::inspect`] reports about a stored function.
#[derive(Debug, Clone, Serialize)]
pub struct InspectReport {
    pub metadata: UdfMetadata,
    /// Whether the embedded signature verifies against the embedded key.
    pub verified: bool,
    /// Fingerprint of the embedded key; absent if the key is malformed.
    pub fingerprint: Option<String>,
    /// Trust profile currently holding that key, if any. Inspection never
    /// imports keys.
    pub profile: Option<String>,
}

thread_local! {
    /// Output paths currently executing on this thread, outermost first.
    static EXEC_STACK: RefCell<Vec<String>> = const { RefCell::new(Vec::new()) };
}

/// Pops one frame of [`EXEC_STACK`] however the call returns.
struct StackGuard;

impl Drop for StackGuard {
    fn drop(&mut self) {
        EXEC_STACK.with(|s| {
            s.borrow_mut().pop();
        });
    }
}

pub struct Engine {
    backends: BTreeMap<String, Arc<dyn Backend>>,
    hosted: Arc<HostedBackend>,
    store: TrustStore,
    owner: Owner,
    record: KeyRecord,
    signing: SigningKey,
}

impl Engine {
    /// Opens (creating on first use) the trust store and signing identity
    /// under `trust_root`, and registers the built-in `expr` and `hosted`
    /// backends.
    pub fn new(trust_root: &Path, owner: &Owner) -> Result<Engine> {
        let store = TrustStore::open(trust_root)?;
        let (record, signing) = trust::ensure_keypair(trust_root, owner)?;
        let hosted = Arc::new(HostedBackend::new());
        let mut backends: BTreeMap<String, Arc<dyn Backend>> = BTreeMap::new();
        backends.insert("expr".into(), Arc::new(ExprBackend));
        backends.insert("hosted".into(), hosted.clone());
        Ok(Engine {
            backends,
            hosted,
            store,
            owner: owner.clone(),
            record,
            signing,
        })
    }

    pub fn trust_store(&self) -> &TrustStore {
        &self.store
    }

    pub fn owner(&self) -> &Owner {
        &self.owner
    }

    /// The engine's own signing key record.
    pub fn key_record(&self) -> &KeyRecord {
        &self.record
    }

    pub fn backend_names(&self) -> Vec<String> {
        self.backends.keys().cloned().collect()
    }

    /// Adds a backend under its own name.
    pub fn register_backend(&mut self, backend: Arc<dyn Backend>) -> Result<()> {
        let name = backend.name().to_string();
        if self.backends.contains_key(&name) {
            return Err(Error::DuplicateBackend(name));
        }
        self.backends.insert(name, backend);
        Ok(())
    }

    /// Registers (or replaces) a hosted function implementation.
    pub fn register_hosted_function<F>(&self, name: &str, function: F)
    where
        F: Fn(&mut ExecutionEnv) -> Result<()> + Send + Sync + 'static,
    {
        self.hosted.register(name, function);
    }

    pub fn hosted_function_names(&self) -> Vec<String> {
        self.hosted.function_names()
    }

    /// Compiles, signs, and stores a function as a UDF dataset.
    pub fn attach(&self, container: &mut Container, options: &AttachOptions) -> Result<()> {
        let backend = self
            .backends
            .get(&options.backend)
            .ok_or_else(|| Error::UnknownBackend(options.backend.clone()))?;

        let output = normalize_path(&options.output)?;
        if options.output_dtype == DType::VarString {
            return Err(Error::InvalidDType(
                "a function cannot produce variable-length strings".into(),
            ));
        }

        let mut aliases = Vec::with_capacity(options.inputs.len());
        let mut input_datasets = Vec::with_capacity(options.inputs.len());
        for (alias, path) in &options.inputs {
            let norm = normalize_path(path)?;
            container
                .dataset(&norm)
                .map_err(|_| Error::MissingInput(norm.clone()))?;
            aliases.push(alias.clone());
            input_datasets.push(norm);
        }

        let object = backend
            .compile(&options.source, &CompileOptions { aliases })
            .map_err(|e| match e {
                Error::CompileError { .. } => e,
                other => Error::CompileError {
                    backend: options.backend.clone(),
                    message: other.to_string(),
                },
            })?;

        let mut payload = UdfPayload {
            metadata: UdfMetadata {
                backend: options.backend.clone(),
                bytecode_size: object.len() as u64,
                input_datasets,
                output_dataset: output.clone(),
                output_datatype: options.output_dtype.to_string(),
                output_resolution: options.output_shape.clone(),
                signature: SignatureBlock {
                    email: self.owner.email.clone(),
                    name: self.owner.name.clone(),
                    payload_signature: String::new(),
                    public_key: payload::b64(&self.record.public_key),
                },
                source_code: if options.embed_source {
                    options.source.clone()
                } else {
                    String::new()
                },
            },
            object,
        };
        payload.sign(&self.signing)?;

        let block = payload.encode_padded()?;
        container.create_udf_dataset(&output, options.output_dtype.clone(), &options.output_shape, &block)
    }

    /// Reads any dataset, executing UDF datasets through this engine.
    pub fn read(&self, container: &Container, path: &str) -> Result<Vec<u8>> {
        container.read_dataset_with(path, self)
    }

    /// Decodes and verifies a stored function without executing it or
    /// touching the trust store.
    pub fn inspect(&self, container: &Container, path: &str) -> Result<InspectReport> {
        let block = container.udf_payload(path)?;
        let payload = UdfPayload::decode(&block)?;
        let verified = payload.verify().unwrap_or(false);
        let (fingerprint, profile) = match payload.public_key() {
            Ok(key) => {
                let fp = trust::fingerprint(&key);
                let profile = self
                    .store
                    .scan()?
                    .into_iter()
                    .find(|(_, record)| record.public_key == key)
                    .map(|(profile, _)| profile);
                (Some(fp), profile)
            }
            Err(_) => (None, None),
        };
        Ok(InspectReport {
            metadata: payload.metadata,
            verified,
            fingerprint,
            profile,
        })
    }
}

impl UdfResolver for Engine {
    fn execute_udf(
        &self,
        container: &Container,
        meta: &DatasetMeta,
        block: &[u8],
    ) -> Result<Vec<u8>> {
        // Cycle detection: recursion through input prefetch stays on this
        // thread, so a per-thread stack of output paths sees any loop.
        let cycle = EXEC_STACK.with(|s| {
            let mut stack = s.borrow_mut();
            if stack.iter().any(|p| p == &meta.path) {
                let mut chain = stack.clone();
                chain.push(meta.path.clone());
                return Some(chain);
            }
            stack.push(meta.path.clone());
            None
        });
        if let Some(chain) = cycle {
            return Err(Error::CyclicDependency(chain));
        }
        let _guard = StackGuard;

        // One failure domain up to the signature check: a flipped byte in
        // the header, the object, or the padding must not be
        // distinguishable from a broken signature.
        let payload = UdfPayload::decode(block)
            .map_err(|e| Error::SignatureInvalid(format!("payload does not decode: {e}")))?;
        match payload.verify() {
            Ok(true) => {}
            Ok(false) => {
                return Err(Error::SignatureInvalid(
                    "payload signature does not match its content".into(),
                ))
            }
            Err(e) => {
                return Err(Error::SignatureInvalid(format!(
                    "payload signature cannot be checked: {e}"
                )))
            }
        }

        // The signature only proves the payload is intact, not that it
        // belongs to this dataset; the index entry must agree with it.
        let metadata = &payload.metadata;
        if metadata.output_dataset != meta.path
            || metadata.output_resolution != meta.shape
            || dtype::parse_name(&metadata.output_datatype).ok().as_ref() != Some(&meta.dtype)
        {
            return Err(Error::MalformedHeader(format!(
                "payload describes {} as {} {:?}, the index says {} is {} {:?}",
                metadata.output_dataset,
                metadata.output_datatype,
                metadata.output_resolution,
                meta.path,
                meta.dtype,
                meta.shape,
            )));
        }

        let backend = self
            .backends
            .get(&metadata.backend)
            .ok_or_else(|| Error::UnknownBackend(metadata.backend.clone()))?;

        let signer = Owner {
            name: metadata.signature.name.clone(),
            email: metadata.signature.email.clone(),
        };
        let (profile, rules) = self
            .store
            .resolve_profile(&payload.public_key()?, &signer)?;
        if backend.requires_trust() && !rules.capabilities.hosted_allowed {
            return Err(Error::TrustViolation(format!(
                "profile `{profile}` does not allow `{}` functions",
                metadata.backend
            )));
        }

        // Statically-costed functions are refused before anything runs.
        if let Some(cost) = backend.static_cost(&payload.object, meta.element_count())? {
            if cost > rules.limits.op_budget {
                return Err(Error::BudgetExceeded {
                    cost,
                    budget: rules.limits.op_budget,
                });
            }
        }

        // Prefetch inputs on this thread; the sandboxed body never touches
        // the container.
        let mut env = ExecutionEnv::new(
            &meta.path,
            meta.dtype.clone(),
            &meta.shape,
            rules.limits,
            rules.capabilities,
        )?;
        for path in &metadata.input_datasets {
            let input_meta = container
                .dataset(path)
                .map_err(|_| Error::MissingInput(path.clone()))?;
            let dtype = input_meta.dtype.clone();
            let shape = input_meta.shape.clone();
            let data = container
                .read_dataset_with(path, self)
                .map_err(|e| match e {
                    Error::NotFound(p) => Error::MissingInput(p),
                    other => other,
                })?;
            env.add_input(path, dtype, &shape, data)?;
        }

        let backend = Arc::clone(backend);
        let object = payload.object;
        let env = run_sandboxed(env, move |env| backend.execute(&object, env))?;
        Ok(env.take_output())
    }
}
