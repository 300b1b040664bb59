//! The data-access surface handed to executing user functions.
//!
//! An [`ExecutionEnv`] is built by the engine before a function runs:
//! every input dataset is materialized into memory, the output buffer is
//! allocated, and the trust profile's limits and capabilities are frozen
//! in. The function then works exclusively against this environment:
//! inputs are read-only, the output buffer is the only writable channel
//! back to the caller, and optional resources (filesystem paths) are
//! mediated by capability checks.
//!
//! Names accepted by the accessors, in resolution order:
//!
//! 1. the output dataset's path,
//! 2. an alias declared for an input at attach time,
//! 3. an input dataset's path.
//!
//! A name without a leading `/` is also tried as `/name`, so a function
//! over root-level datasets can say `get_data("NIR")`.

mod compound;
mod sandbox;

pub use compound::{build_compound_view, sanitize_member_name, CompoundView, ViewMember};
pub use sandbox::run_sandboxed;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::container::varstr;
use crate::dtype::DType;
use crate::{Error, Result};

/// Resource ceilings for one execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    /// Maximum static cost (instructions times output elements) for
    /// expression programs.
    pub op_budget: u64,
    /// Maximum resident bytes (inputs plus output) admitted.
    pub memory_cap: u64,
    /// Wall-clock timeout in seconds.
    pub wall_timeout: f64,
}

impl Default for Limits {
    /// Sized for grids in the hundreds of millions of elements.
    fn default() -> Limits {
        Limits {
            op_budget: 10_000_000_000,
            memory_cap: 2 * 1024 * 1024 * 1024,
            wall_timeout: 30.0,
        }
    }
}

/// Optional resources a trust profile may grant.
///
/// Everything defaults to denied; the deny-all value is what the
/// `untrusted` profile runs under.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Capabilities {
    /// Path prefixes readable through [`ExecutionEnv::check_fs_read`].
    pub fs_read: Vec<String>,
    /// Path prefixes writable through [`ExecutionEnv::check_fs_write`].
    pub fs_write: Vec<String>,
    /// Declarative only: network egress is always denied in this version.
    pub network: bool,
    /// Whether hosted-backend functions may run at all.
    pub hosted_allowed: bool,
}

/// Lets a supervising context stop a running function cooperatively.
#[derive(Debug, Clone)]
pub struct CancelHandle(Arc<AtomicBool>);

impl CancelHandle {
    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug)]
struct InputBinding {
    path: String,
    dtype: DType,
    shape: Vec<u64>,
    data: Vec<u8>,
}

#[derive(Debug)]
pub struct ExecutionEnv {
    inputs: Vec<InputBinding>,
    /// alias -> position in `inputs`.
    aliases: Vec<(String, usize)>,
    output_path: String,
    output_dtype: DType,
    output_shape: Vec<u64>,
    output: Vec<u8>,
    pub limits: Limits,
    pub capabilities: Capabilities,
    cancelled: Arc<AtomicBool>,
}

enum Target {
    Output,
    Input(usize),
}

impl ExecutionEnv {
    /// Allocates the (zero-filled) output buffer up front.
    pub fn new(
        output_path: &str,
        output_dtype: DType,
        output_shape: &[u64],
        limits: Limits,
        capabilities: Capabilities,
    ) -> Result<ExecutionEnv> {
        output_dtype.validate()?;
        let elements = element_count(output_shape)?;
        Ok(ExecutionEnv {
            inputs: Vec::new(),
            aliases: Vec::new(),
            output_path: output_path.to_string(),
            output_dtype: output_dtype.clone(),
            output_shape: output_shape.to_vec(),
            output: vec![0; elements * output_dtype.size()],
            limits,
            capabilities,
            cancelled: Arc::new(AtomicBool::new(false)),
        })
    }

    /// Materializes one input dataset.
    ///
    /// `data` is the dataset's flat element buffer; for variable-length
    /// strings it is the encoded reference-plus-heap form, whose length
    /// is data-dependent and therefore not checked against the shape.
    pub fn add_input(
        &mut self,
        path: &str,
        dtype: DType,
        shape: &[u64],
        data: Vec<u8>,
    ) -> Result<()> {
        dtype.validate()?;
        let elements = element_count(shape)?;
        if !matches!(dtype, DType::VarString) && data.len() != elements * dtype.size() {
            return Err(Error::ShapeMismatch(format!(
                "input {path} holds {} bytes, expected {}",
                data.len(),
                elements * dtype.size()
            )));
        }
        if self.inputs.iter().any(|b| b.path == path) {
            return Err(Error::DuplicatePath(path.to_string()));
        }
        self.inputs.push(InputBinding {
            path: path.to_string(),
            dtype,
            shape: shape.to_vec(),
            data,
        });
        Ok(())
    }

    /// Declares an alias for an already-materialized input.
    pub fn add_alias(&mut self, alias: &str, path: &str) -> Result<()> {
        let position = self
            .inputs
            .iter()
            .position(|b| b.path == path)
            .ok_or_else(|| Error::NotFound(path.to_string()))?;
        let taken = alias == self.output_path
            || self.aliases.iter().any(|(a, _)| a == alias)
            || self.inputs.iter().any(|b| b.path == alias);
        if taken {
            return Err(Error::NameCollision(alias.to_string()));
        }
        self.aliases.push((alias.to_string(), position));
        Ok(())
    }

    pub fn cancel_handle(&self) -> CancelHandle {
        CancelHandle(self.cancelled.clone())
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancelled.load(Ordering::SeqCst)
    }

    /// Total bytes pinned by this environment, the quantity admitted
    /// against `limits.memory_cap`.
    pub fn resident_bytes(&self) -> usize {
        self.inputs.iter().map(|b| b.data.len()).sum::<usize>() + self.output.len()
    }

    pub fn output_path(&self) -> &str {
        &self.output_path
    }

    /// Input paths in the order they were materialized, which is the
    /// order the function was attached with.
    pub fn input_paths(&self) -> Vec<&str> {
        self.inputs.iter().map(|b| b.path.as_str()).collect()
    }

    /// Borrows every input (path, dtype, shape, data) alongside the
    /// writable output, for backends that stream inputs into the output
    /// buffer in one pass.
    #[allow(clippy::type_complexity)]
    pub fn split_inputs_output(
        &mut self,
    ) -> (
        Vec<(&str, &DType, &[u64], &[u8])>,
        &DType,
        &[u64],
        &mut [u8],
    ) {
        let inputs = self
            .inputs
            .iter()
            .map(|b| {
                (
                    b.path.as_str(),
                    &b.dtype,
                    b.shape.as_slice(),
                    b.data.as_slice(),
                )
            })
            .collect();
        (
            inputs,
            &self.output_dtype,
            &self.output_shape,
            &mut self.output,
        )
    }

    /// Consumes the environment, yielding the output buffer.
    pub fn take_output(self) -> Vec<u8> {
        self.output
    }

    fn resolve(&self, name: &str) -> Result<Target> {
        let slashed;
        let normalized = if name.starts_with('/') {
            name
        } else {
            slashed = format!("/{name}");
            &slashed
        };
        if name == self.output_path || normalized == self.output_path {
            return Ok(Target::Output);
        }
        if let Some(&(_, position)) = self.aliases.iter().find(|(a, _)| a == name) {
            return Ok(Target::Input(position));
        }
        if let Some(position) = self
            .inputs
            .iter()
            .position(|b| b.path == name || b.path == normalized)
        {
            return Ok(Target::Input(position));
        }
        Err(Error::UnknownName(name.to_string()))
    }

    /// Read-only view of any declared dataset, the output included.
    pub fn get_data(&self, name: &str) -> Result<&[u8]> {
        match self.resolve(name)? {
            Target::Output => Ok(&self.output),
            Target::Input(k) => Ok(&self.inputs[k].data),
        }
    }

    /// Writable view of the output dataset. Inputs are read-only.
    pub fn get_data_mut(&mut self, name: &str) -> Result<&mut [u8]> {
        match self.resolve(name)? {
            Target::Output => Ok(&mut self.output),
            Target::Input(_) => Err(Error::ReadOnly(name.to_string())),
        }
    }

    /// Extents in declaration order.
    pub fn get_dims(&self, name: &str) -> Result<&[u64]> {
        match self.resolve(name)? {
            Target::Output => Ok(&self.output_shape),
            Target::Input(k) => Ok(&self.inputs[k].shape),
        }
    }

    /// Canonical datatype name, e.g. `"int16"` or `"string(8)"`.
    pub fn get_type(&self, name: &str) -> Result<String> {
        match self.resolve(name)? {
            Target::Output => Ok(self.output_dtype.to_string()),
            Target::Input(k) => Ok(self.inputs[k].dtype.to_string()),
        }
    }

    pub fn dtype_of(&self, name: &str) -> Result<&DType> {
        match self.resolve(name)? {
            Target::Output => Ok(&self.output_dtype),
            Target::Input(k) => Ok(&self.inputs[k].dtype),
        }
    }

    /// Decodes the string element at `index`, for either storage form.
    pub fn string_get(&self, name: &str, index: usize) -> Result<String> {
        let (buffer, dtype, elements) = match self.resolve(name)? {
            Target::Output => (
                &self.output,
                &self.output_dtype,
                element_count(&self.output_shape)?,
            ),
            Target::Input(k) => {
                let b = &self.inputs[k];
                (&b.data, &b.dtype, element_count(&b.shape)?)
            }
        };
        match dtype {
            DType::FixedString(n) => {
                let n = *n as usize;
                if index >= elements {
                    return Err(Error::OutOfBounds { index, len: elements });
                }
                let field = &buffer[index * n..(index + 1) * n];
                let end = field.iter().position(|&b| b == 0).unwrap_or(n);
                std::str::from_utf8(&field[..end])
                    .map(str::to_string)
                    .map_err(|_| {
                        Error::CorruptContainer(format!(
                            "fixed string at index {index} is not valid UTF-8"
                        ))
                    })
            }
            DType::VarString => Ok(varstr::get(buffer, elements, index)?.to_string()),
            other => Err(Error::InputDTypeUnsupported(format!(
                "string read from {other} element"
            ))),
        }
    }

    /// Writes a fixed-length string element of the output dataset.
    ///
    /// The text must fit the field; shorter values are zero-padded, a
    /// value of exactly the field length fills it with no terminator.
    pub fn string_set(&mut self, name: &str, index: usize, text: &str) -> Result<()> {
        match self.resolve(name)? {
            Target::Input(_) => return Err(Error::ReadOnly(name.to_string())),
            Target::Output => {}
        }
        let elements = element_count(&self.output_shape)?;
        match &self.output_dtype {
            DType::FixedString(n) => {
                let n = *n as usize;
                if index >= elements {
                    return Err(Error::OutOfBounds { index, len: elements });
                }
                let bytes = text.as_bytes();
                if bytes.len() > n {
                    return Err(Error::StringTooLong { len: bytes.len(), cap: n });
                }
                let field = &mut self.output[index * n..(index + 1) * n];
                field[..bytes.len()].copy_from_slice(bytes);
                field[bytes.len()..].fill(0);
                Ok(())
            }
            DType::VarString => Err(Error::VarStringWriteUnsupported),
            other => Err(Error::InputDTypeUnsupported(format!(
                "string write into {other} element"
            ))),
        }
    }

    /// Checks a filesystem read against the profile's allowlist.
    pub fn check_fs_read(&self, path: &str) -> Result<()> {
        check_prefixes(&self.capabilities.fs_read, path, "read")
    }

    /// Checks a filesystem write against the profile's allowlist.
    pub fn check_fs_write(&self, path: &str) -> Result<()> {
        check_prefixes(&self.capabilities.fs_write, path, "write")
    }

    /// Network egress is denied in this version regardless of profile.
    pub fn check_network(&self) -> Result<()> {
        Err(Error::CapabilityDenied("network access".into()))
    }
}

fn check_prefixes(allow: &[String], path: &str, verb: &str) -> Result<()> {
    if allow.iter().any(|prefix| path.starts_with(prefix.as_str())) {
        Ok(())
    } else {
        Err(Error::CapabilityDenied(format!("{verb} {path}")))
    }
}

fn element_count(shape: &[u64]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::ShapeMismatch("shape is empty".into()));
    }
    shape
        .iter()
        .try_fold(1usize, |a, &e| {
            if e == 0 {
                None
            } else {
                a.checked_mul(e as usize)
            }
        })
        .ok_or_else(|| Error::ShapeMismatch("shape overflows".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ndvi_env() -> ExecutionEnv {
        let mut env = ExecutionEnv::new(
            "/NDVI",
            DType::Float64,
            &[2, 2],
            Limits::default(),
            Capabilities::default(),
        )
        .unwrap();
        let red: Vec<u8> = [10i16, 20, 30, 40]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let nir: Vec<u8> = [50i16, 60, 70, 80]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        env.add_input("/Red", DType::Int16, &[2, 2], red).unwrap();
        env.add_input("/NIR", DType::Int16, &[2, 2], nir).unwrap();
        env.add_alias("r", "/Red").unwrap();
        env
    }

    #[test]
    fn name_resolution_and_handles() {
        let mut env = ndvi_env();
        // Output by bare name gets the writable buffer.
        assert_eq!(env.get_data("NDVI").unwrap().len(), 4 * 8);
        env.get_data_mut("NDVI").unwrap()[0] = 1;
        // Inputs resolve by path, bare name, or alias, and are read-only.
        assert_eq!(env.get_data("/Red").unwrap().len(), 8);
        assert_eq!(env.get_data("Red").unwrap(), env.get_data("r").unwrap());
        assert!(matches!(
            env.get_data_mut("Red"),
            Err(Error::ReadOnly(_))
        ));
        assert!(matches!(
            env.get_data("Bogus"),
            Err(Error::UnknownName(_))
        ));
    }

    #[test]
    fn dims_and_type_names() {
        let env = ndvi_env();
        assert_eq!(env.get_dims("NDVI").unwrap(), &[2, 2]);
        assert_eq!(env.get_dims("NIR").unwrap(), &[2, 2]);
        assert_eq!(env.get_type("Red").unwrap(), "int16");
        assert_eq!(env.get_type("NDVI").unwrap(), "float64");
        assert!(matches!(env.get_dims("nope"), Err(Error::UnknownName(_))));
    }

    #[test]
    fn scalar_shape_reports_one_extent() {
        let env = ExecutionEnv::new(
            "/s",
            DType::Int32,
            &[1],
            Limits::default(),
            Capabilities::default(),
        )
        .unwrap();
        assert_eq!(env.get_dims("/s").unwrap(), &[1]);
    }

    #[test]
    fn alias_collisions_are_rejected() {
        let mut env = ndvi_env();
        assert!(matches!(
            env.add_alias("r", "/NIR"),
            Err(Error::NameCollision(_))
        ));
        assert!(matches!(
            env.add_alias("/Red", "/NIR"),
            Err(Error::NameCollision(_))
        ));
        assert!(matches!(
            env.add_alias("x", "/missing"),
            Err(Error::NotFound(_))
        ));
        assert!(matches!(
            env.add_input("/Red", DType::Int16, &[2, 2], vec![0; 8]),
            Err(Error::DuplicatePath(_))
        ));
    }

    #[test]
    fn fixed_strings_round_trip_with_boundary_checks() {
        let mut env = ExecutionEnv::new(
            "/names",
            DType::FixedString(8),
            &[3],
            Limits::default(),
            Capabilities::default(),
        )
        .unwrap();
        env.string_set("/names", 0, "Red").unwrap();
        env.string_set("/names", 1, "exactly8").unwrap();
        assert_eq!(env.string_get("/names", 0).unwrap(), "Red");
        assert_eq!(env.string_get("/names", 1).unwrap(), "exactly8");
        assert_eq!(env.string_get("/names", 2).unwrap(), "");

        assert!(matches!(
            env.string_set("/names", 0, "Electric Ladyland"),
            Err(Error::StringTooLong { len: 17, cap: 8 })
        ));
        assert!(matches!(
            env.string_set("/names", 3, "x"),
            Err(Error::OutOfBounds { index: 3, len: 3 })
        ));
        assert!(matches!(
            env.string_get("/names", 9),
            Err(Error::OutOfBounds { .. })
        ));

        // Overwriting a longer value leaves no residue.
        env.string_set("/names", 1, "ab").unwrap();
        assert_eq!(env.string_get("/names", 1).unwrap(), "ab");
    }

    #[test]
    fn var_strings_read_but_never_write() {
        let heap = varstr::encode(&["Red", "Green", "NIR"]);
        let mut env = ExecutionEnv::new(
            "/out",
            DType::VarString,
            &[3],
            Limits::default(),
            Capabilities::default(),
        )
        .unwrap();
        env.add_input("/bands", DType::VarString, &[3], heap).unwrap();
        assert_eq!(env.string_get("/bands", 2).unwrap(), "NIR");
        assert!(matches!(
            env.string_set("/out", 0, "x"),
            Err(Error::VarStringWriteUnsupported)
        ));
        // Writing to an input stays a read-only error even for strings.
        assert!(matches!(
            env.string_set("/bands", 0, "x"),
            Err(Error::ReadOnly(_))
        ));
    }

    #[test]
    fn string_ops_reject_numeric_elements() {
        let env = ndvi_env();
        assert!(matches!(
            env.string_get("/Red", 0),
            Err(Error::InputDTypeUnsupported(_))
        ));
        let mut env = ndvi_env();
        assert!(matches!(
            env.string_set("/NDVI", 0, "x"),
            Err(Error::InputDTypeUnsupported(_))
        ));
    }

    #[test]
    fn capability_checks_use_prefix_allowlists() {
        let mut env = ndvi_env();
        env.capabilities.fs_read = vec!["/tmp/allowed/".into()];
        env.check_fs_read("/tmp/allowed/data.csv").unwrap();
        let err = env.check_fs_read("/etc/passwd").unwrap_err();
        match err {
            Error::CapabilityDenied(what) => assert!(what.contains("/etc/passwd")),
            other => panic!("expected CapabilityDenied, got {other:?}"),
        }
        assert!(env.check_fs_write("/tmp/allowed/out.csv").is_err());
        assert!(env.check_network().is_err());
    }
}
