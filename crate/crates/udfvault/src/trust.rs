//! Keys, signatures, and trust profiles.
//!
//! Every stored function is signed by its author. The signing identity is
//! an Ed25519 keypair kept under the tool's home directory; the public
//! half travels inside the function's metadata so any reader can check
//! the payload against it. What a verified function is *allowed to do* is
//! decided separately, by which trust profile the author's public key
//! lives in.
//!
//! A trust store is a directory tree:
//!
//! ```text
//! <root>/profiles/<name>/rules.json    limits and capabilities
//! <root>/profiles/<name>/keys/<fingerprint>.json
//! ```
//!
//! `rules.json` may be absent, in which case the profile grants nothing
//! (default limits, deny-all capabilities). The `untrusted` profile always
//! exists and is where unknown signers land when their functions are first
//! read; an administrator promotes a signer by moving their key file into
//! another profile, with a file manager or `keys move`. Nothing else needs
//! to change: resolution re-reads the directories every time.
//!
//! The store root comes from, in order: an explicit path (the CLI's
//! `--store`), the `UDFVAULT_HOME` environment variable, then
//! `$HOME/.udfvault`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::runtime::{Capabilities, Limits};
use crate::{Error, Result};

pub const UNTRUSTED_PROFILE: &str = "untrusted";
pub const TRUSTED_PROFILE: &str = "trusted";
pub const HOME_ENV: &str = "UDFVAULT_HOME";

/// Advisory identity attached to keys and signatures. Editable by the
/// owner at will; never part of what a signature protects you from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Owner {
    pub name: String,
    pub email: String,
}

/// One public key with its advisory metadata, as stored in key files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRecord {
    pub algorithm: String,
    #[serde(with = "b64_bytes")]
    pub public_key: [u8; 32],
    pub owner_name: String,
    pub owner_email: String,
}

impl KeyRecord {
    pub fn new(public_key: [u8; 32], owner: &Owner) -> KeyRecord {
        KeyRecord {
            algorithm: "Ed25519".to_string(),
            public_key,
            owner_name: owner.name.clone(),
            owner_email: owner.email.clone(),
        }
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.public_key)
    }
}

/// First 16 hex characters of SHA-256 over the raw public key.
pub fn fingerprint(public_key: &[u8; 32]) -> String {
    let digest = Sha256::digest(public_key);
    hex::encode(digest)[..16].to_string()
}

mod b64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let text = String::deserialize(d)?;
        let bytes = STANDARD
            .decode(text.as_bytes())
            .map_err(serde::de::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("public key must be 32 bytes"))
    }
}

/// What a profile grants to functions signed by its keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileRules {
    pub limits: Limits,
    pub capabilities: Capabilities,
}

impl Default for ProfileRules {
    /// Default limits, no capabilities: the deny-all rule set.
    fn default() -> ProfileRules {
        ProfileRules {
            limits: Limits::default(),
            capabilities: Capabilities::default(),
        }
    }
}

/// Ensures a keypair exists under `<root>/identity/`, creating it on
/// first use.
///
/// The secret key file is created with owner-only permissions. An
/// existing public record keeps whatever owner metadata it carries (the
/// fields are user-editable); `owner` only seeds the first write.
pub fn ensure_keypair(root: &Path, owner: &Owner) -> Result<(KeyRecord, SigningKey)> {
    let dir = root.join("identity");
    fs::create_dir_all(&dir).map_err(|e| Error::from_io(e, "creating identity dir"))?;
    let secret_path = dir.join("secret.key");
    let record_path = dir.join("public.json");

    let signing = if secret_path.exists() {
        let bytes = fs::read(&secret_path).map_err(|e| Error::KeyFile {
            path: secret_path.clone(),
            reason: e.to_string(),
        })?;
        let seed: [u8; 32] = bytes.try_into().map_err(|b: Vec<u8>| Error::KeyFile {
            path: secret_path.clone(),
            reason: format!("expected 32 bytes, found {}", b.len()),
        })?;
        SigningKey::from_bytes(&seed)
    } else {
        let mut seed = [0u8; 32];
        use rand::RngCore;
        rand::rngs::OsRng.fill_bytes(&mut seed);
        let signing = SigningKey::from_bytes(&seed);
        write_secret(&secret_path, &seed)?;
        signing
    };

    let public_key = signing.verifying_key().to_bytes();
    let record = if record_path.exists() {
        let record = read_key_record(&record_path)?;
        if record.public_key != public_key {
            return Err(Error::KeyFile {
                path: record_path,
                reason: "public record does not match the secret key".into(),
            });
        }
        record
    } else {
        let record = KeyRecord::new(public_key, owner);
        write_json(&record_path, &record)?;
        record
    };
    Ok((record, signing))
}

#[cfg(unix)]
fn write_secret(path: &Path, seed: &[u8; 32]) -> Result<()> {
    use std::io::Write;
    use std::os::unix::fs::OpenOptionsExt;
    let mut file = fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .mode(0o600)
        .open(path)
        .map_err(|e| Error::from_io(e, "creating secret key"))?;
    file.write_all(seed)
        .map_err(|e| Error::from_io(e, "writing secret key"))?;
    Ok(())
}

#[cfg(not(unix))]
fn write_secret(path: &Path, seed: &[u8; 32]) -> Result<()> {
    fs::write(path, seed).map_err(|e| Error::from_io(e, "writing secret key"))
}

/// Detached Ed25519 signature over `bytes`. Deterministic: the same key
/// and message always produce the same 64 bytes.
pub fn sign(signing: &SigningKey, bytes: &[u8]) -> [u8; 64] {
    signing.sign(bytes).to_bytes()
}

/// Verifies a detached signature. `Ok(false)` means intact key material
/// with a non-matching signature; malformed key or signature material is
/// an error.
pub fn verify(public_key: &[u8], bytes: &[u8], signature: &[u8]) -> Result<bool> {
    let key: [u8; 32] = public_key
        .try_into()
        .map_err(|_| Error::MalformedKey(format!("public key is {} bytes", public_key.len())))?;
    let key = VerifyingKey::from_bytes(&key)
        .map_err(|e| Error::MalformedKey(format!("not a valid Ed25519 point: {e}")))?;
    let signature: [u8; 64] = signature
        .try_into()
        .map_err(|_| Error::MalformedKey(format!("signature is {} bytes", signature.len())))?;
    Ok(key.verify(bytes, &Signature::from_bytes(&signature)).is_ok())
}

/// A profile directory tree rooted at `<root>/profiles`.
#[derive(Debug)]
pub struct TrustStore {
    root: PathBuf,
    import_lock: Mutex<()>,
}

impl TrustStore {
    /// Opens (creating if needed) the store at `root`.
    ///
    /// First use scaffolds the mandatory `untrusted` profile with an
    /// explicit deny-all rule file, plus a `trusted` profile that admits
    /// hosted functions. Opening re-checks that no public key appears in
    /// two profiles.
    pub fn open(root: &Path) -> Result<TrustStore> {
        let store = TrustStore {
            root: root.to_path_buf(),
            import_lock: Mutex::new(()),
        };
        let untrusted = store.profile_dir(UNTRUSTED_PROFILE);
        if !untrusted.exists() {
            store.create_profile(UNTRUSTED_PROFILE, &ProfileRules::default())?;
        }
        if !store.profile_dir(TRUSTED_PROFILE).exists() {
            let rules = ProfileRules {
                capabilities: Capabilities {
                    hosted_allowed: true,
                    ..Capabilities::default()
                },
                ..ProfileRules::default()
            };
            store.create_profile(TRUSTED_PROFILE, &rules)?;
        }
        store.scan()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn profiles_dir(&self) -> PathBuf {
        self.root.join("profiles")
    }

    fn profile_dir(&self, name: &str) -> PathBuf {
        self.profiles_dir().join(name)
    }

    fn keys_dir(&self, profile: &str) -> PathBuf {
        self.profile_dir(profile).join("keys")
    }

    pub fn create_profile(&self, name: &str, rules: &ProfileRules) -> Result<()> {
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(Error::TrustStore(format!("invalid profile name {name:?}")));
        }
        let dir = self.keys_dir(name);
        fs::create_dir_all(&dir).map_err(|e| Error::from_io(e, "creating profile"))?;
        write_json(&self.profile_dir(name).join("rules.json"), rules)
    }

    /// Profile names, sorted.
    pub fn profiles(&self) -> Result<Vec<String>> {
        let mut names = Vec::new();
        let entries = fs::read_dir(self.profiles_dir())
            .map_err(|e| Error::from_io(e, "listing profiles"))?;
        for entry in entries {
            let entry = entry.map_err(Error::Io)?;
            if entry.path().is_dir() {
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        names.sort();
        Ok(names)
    }

    /// The rule set for `name`; a missing `rules.json` grants nothing.
    pub fn rules(&self, name: &str) -> Result<ProfileRules> {
        let dir = self.profile_dir(name);
        if !dir.is_dir() {
            return Err(Error::UnknownProfile(name.to_string()));
        }
        let path = dir.join("rules.json");
        if !path.exists() {
            return Ok(ProfileRules::default());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::from_io(e, "reading rules"))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::TrustStore(format!("{}: {e}", path.display())))
    }

    /// All keys in the store as (profile, record) pairs, sorted by
    /// profile then fingerprint.
    pub fn scan(&self) -> Result<Vec<(String, KeyRecord)>> {
        let mut found: Vec<(String, KeyRecord)> = Vec::new();
        for profile in self.profiles()? {
            let keys_dir = self.keys_dir(&profile);
            if !keys_dir.is_dir() {
                continue;
            }
            let mut paths: Vec<PathBuf> = fs::read_dir(&keys_dir)
                .map_err(|e| Error::from_io(e, "listing keys"))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            paths.sort();
            for path in paths {
                let record = read_key_record(&path)?;
                if let Some((first, _)) = found
                    .iter()
                    .find(|(_, r)| r.public_key == record.public_key)
                {
                    return Err(Error::DuplicateKey {
                        fingerprint: record.fingerprint(),
                        first: first.clone(),
                        second: profile.clone(),
                    });
                }
                found.push((profile.clone(), record));
            }
        }
        Ok(found)
    }

    /// Finds the profile holding `public_key`, importing unknown keys
    /// into `untrusted` so resolution is total.
    pub fn resolve_profile(
        &self,
        public_key: &[u8; 32],
        owner: &Owner,
    ) -> Result<(String, ProfileRules)> {
        if let Some((profile, _)) = self
            .scan()?
            .into_iter()
            .find(|(_, r)| &r.public_key == public_key)
        {
            let rules = self.rules(&profile)?;
            return Ok((profile, rules));
        }
        // Serialize imports so two concurrent resolves cannot race on the
        // same new key file.
        let _guard = self.import_lock.lock().unwrap();
        let record = KeyRecord::new(*public_key, owner);
        let path = self.keys_dir(UNTRUSTED_PROFILE).join(format!(
            "{}.json",
            record.fingerprint()
        ));
        if !path.exists() {
            write_json(&path, &record)?;
        }
        Ok((
            UNTRUSTED_PROFILE.to_string(),
            self.rules(UNTRUSTED_PROFILE)?,
        ))
    }

    /// Adds a key record to a profile. Fails if the key already lives in
    /// any profile.
    pub fn import_key(&self, profile: &str, record: &KeyRecord) -> Result<PathBuf> {
        if !self.profile_dir(profile).is_dir() {
            return Err(Error::UnknownProfile(profile.to_string()));
        }
        if let Some((first, _)) = self
            .scan()?
            .into_iter()
            .find(|(_, r)| r.public_key == record.public_key)
        {
            return Err(Error::DuplicateKey {
                fingerprint: record.fingerprint(),
                first,
                second: profile.to_string(),
            });
        }
        let path = self
            .keys_dir(profile)
            .join(format!("{}.json", record.fingerprint()));
        write_json(&path, record)?;
        Ok(path)
    }

    /// Moves a key between profiles: plain file move, as an administrator
    /// would do by hand.
    pub fn move_key(&self, fingerprint_prefix: &str, to_profile: &str) -> Result<PathBuf> {
        if !self.profile_dir(to_profile).is_dir() {
            return Err(Error::UnknownProfile(to_profile.to_string()));
        }
        let matches: Vec<(String, KeyRecord)> = self
            .scan()?
            .into_iter()
            .filter(|(_, r)| r.fingerprint().starts_with(fingerprint_prefix))
            .collect();
        let (from_profile, record) = match matches.len() {
            0 => return Err(Error::UnknownKey(fingerprint_prefix.to_string())),
            1 => matches.into_iter().next().unwrap(),
            n => {
                return Err(Error::UnknownKey(format!(
                    "{fingerprint_prefix} is ambiguous ({n} matches)"
                )))
            }
        };
        let name = format!("{}.json", record.fingerprint());
        let from = self.keys_dir(&from_profile).join(&name);
        let to = self.keys_dir(to_profile).join(&name);
        fs::rename(&from, &to).map_err(|e| Error::from_io(e, "moving key file"))?;
        Ok(to)
    }
}

fn read_key_record(path: &Path) -> Result<KeyRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::KeyFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let record: KeyRecord = serde_json::from_str(&text).map_err(|e| Error::KeyFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if record.algorithm != "Ed25519" {
        return Err(Error::KeyFile {
            path: path.to_path_buf(),
            reason: format!("unsupported algorithm {:?}", record.algorithm),
        });
    }
    Ok(record)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::TrustStore(format!("encoding {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::from_io(e, "writing json file"))
}
