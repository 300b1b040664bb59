//! The stored form of a user-defined function.
//!
//! A payload is a canonical JSON metadata header, one NUL separator, and
//! the compiled object:
//!
//! ```text
//! { ...sorted keys, no insignificant whitespace... } 0x00 <object bytes>
//! ```
//!
//! Canonical JSON (keys sorted recursively, compact separators) makes the
//! header's byte form a pure function of its contents, which is what lets
//! a detached signature cover it. The header's `bytecode_size` says how
//! many bytes after the NUL belong to the object, so the payload can sit
//! inside a larger zero-padded storage block: whatever follows the object
//! must be zeros.
//!
//! The signature covers the canonical header *minus* its
//! `payload_signature` field, then the NUL, then the object. Signing and
//! verification both rebuild that byte string, so the signature field can
//! live inside the header it protects.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::trust;
use crate::{Error, Result};

/// UDF payloads are stored zero-padded to this block size, which makes
/// the stored size independent of header length variations (a longer
/// `output_resolution`, a different signer name) until the payload
/// actually outgrows a block.
pub const PAYLOAD_BLOCK: usize = 4096;

/// The signer's identity and the payload's detached signature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignatureBlock {
    pub email: String,
    pub name: String,
    /// Base64 Ed25519 signature over the header-without-this-field, the
    /// NUL separator, and the object bytes.
    pub payload_signature: String,
    /// Base64 of the signer's 32-byte public key.
    pub public_key: String,
}

/// The JSON header stored ahead of the compiled object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UdfMetadata {
    pub backend: String,
    /// Byte length of the object that follows the NUL separator.
    pub bytecode_size: u64,
    pub input_datasets: Vec<String>,
    pub output_dataset: String,
    pub output_datatype: String,
    pub output_resolution: Vec<u64>,
    pub signature: SignatureBlock,
    /// Original source text; empty unless the author chose to embed it.
    pub source_code: String,
}

/// Standard base64, the encoding of every binary field in the header.
pub(crate) fn b64(bytes: &[u8]) -> String {
    B64.encode(bytes)
}

/// Serializes any value as canonical JSON: object keys sorted at every
/// level, no insignificant whitespace.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    // Round-tripping through Value sorts keys: the default map behind
    // serde_json::Value is ordered by key.
    let value = serde_json::to_value(value)
        .map_err(|e| Error::MalformedHeader(format!("encoding header: {e}")))?;
    let text = serde_json::to_string(&value)
        .map_err(|e| Error::MalformedHeader(format!("encoding header: {e}")))?;
    Ok(text.into_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct UdfPayload {
    pub metadata: UdfMetadata,
    pub object: Vec<u8>,
}

impl UdfPayload {
    /// Header, NUL, object.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = canonical_json(&self.metadata)?;
        out.push(0x00);
        out.extend(&self.object);
        Ok(out)
    }

    /// [`UdfPayload::encode`] zero-padded to a whole number of
    /// [`PAYLOAD_BLOCK`]s.
    pub fn encode_padded(&self) -> Result<Vec<u8>> {
        let mut out = self.encode()?;
        let len = out.len().div_ceil(PAYLOAD_BLOCK) * PAYLOAD_BLOCK;
        out.resize(len, 0);
        Ok(out)
    }

    /// Parses a stored block back into a payload, strictly.
    ///
    /// The header must re-serialize to exactly its stored bytes (no
    /// alternate formatting tolerated), the object must be all there, and
    /// anything after it must be padding zeros.
    pub fn decode(block: &[u8]) -> Result<UdfPayload> {
        let nul = block
            .iter()
            .position(|&b| b == 0)
            .ok_or_else(|| Error::MalformedHeader("no NUL separator".into()))?;
        let header = &block[..nul];
        let metadata: UdfMetadata = serde_json::from_slice(header)
            .map_err(|e| Error::MalformedHeader(format!("header does not parse: {e}")))?;
        if canonical_json(&metadata)? != header {
            return Err(Error::MalformedHeader(
                "header is not in canonical form".into(),
            ));
        }
        let object_start = nul + 1;
        let object_end = object_start
            .checked_add(metadata.bytecode_size as usize)
            .filter(|&end| end <= block.len())
            .ok_or_else(|| {
                Error::MalformedHeader(format!(
                    "bytecode_size {} exceeds the {} bytes after the separator",
                    metadata.bytecode_size,
                    block.len() - object_start
                ))
            })?;
        let object = block[object_start..object_end].to_vec();
        if block[object_end..].iter().any(|&b| b != 0) {
            return Err(Error::MalformedHeader(
                "non-zero bytes after the object".into(),
            ));
        }
        Ok(UdfPayload { metadata, object })
    }

    /// The byte string the payload signature covers.
    pub fn signed_bytes(&self) -> Result<Vec<u8>> {
        let mut value = serde_json::to_value(&self.metadata)
            .map_err(|e| Error::MalformedHeader(format!("encoding header: {e}")))?;
        value
            .get_mut("signature")
            .and_then(|s| s.as_object_mut())
            .map(|s| s.remove("payload_signature"))
            .ok_or_else(|| Error::MalformedHeader("header lacks a signature block".into()))?;
        let mut out = serde_json::to_string(&value)
            .map_err(|e| Error::MalformedHeader(format!("encoding header: {e}")))?
            .into_bytes();
        out.push(0x00);
        out.extend(&self.object);
        Ok(out)
    }

    /// Signs in place with `signing`, filling `payload_signature`.
    pub fn sign(&mut self, signing: &ed25519_dalek::SigningKey) -> Result<()> {
        let bytes = self.signed_bytes()?;
        self.metadata.signature.payload_signature = B64.encode(trust::sign(signing, &bytes));
        Ok(())
    }

    /// Checks the embedded signature against the embedded public key.
    pub fn verify(&self) -> Result<bool> {
        let public_key = B64
            .decode(&self.metadata.signature.public_key)
            .map_err(|e| Error::MalformedKey(format!("public key base64: {e}")))?;
        let signature = B64
            .decode(&self.metadata.signature.payload_signature)
            .map_err(|e| Error::MalformedKey(format!("signature base64: {e}")))?;
        trust::verify(&public_key, &self.signed_bytes()?, &signature)
    }

    pub fn public_key(&self) -> Result<[u8; 32]> {
        let bytes = B64
            .decode(&self.metadata.signature.public_key)
            .map_err(|e| Error::MalformedKey(format!("public key base64: {e}")))?;
        bytes
            .try_into()
            .map_err(|b: Vec<u8>| Error::MalformedKey(format!("public key is {} bytes", b.len())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trust::{ensure_keypair, Owner};
    use tempfile::TempDir;

    pub(super) fn sample_metadata() -> UdfMetadata {
        UdfMetadata {
            backend: "expr".into(),
            bytecode_size: 4,
            input_datasets: vec!["/Band5".into(), "/Band4".into()],
            output_dataset: "/NDVI".into(),
            output_datatype: "float64".into(),
            output_resolution: vec![1000, 1000],
            signature: SignatureBlock {
                email: "ada@example.org".into(),
                name: "Ada Lovelace".into(),
                payload_signature: String::new(),
                public_key: B64.encode([1u8; 32]),
            },
            source_code: String::new(),
        }
    }

    fn sample_payload() -> UdfPayload {
        UdfPayload {
            metadata: sample_metadata(),
            object: vec![0x01, 0x00, 0x00, 0x00],
        }
    }

    #[test]
    fn canonical_json_sorts_keys_and_strips_whitespace() {
        let bytes = canonical_json(&sample_metadata()).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("{\"backend\":\"expr\",\"bytecode_size\":4,"));
        assert!(!text.contains(": "), "no space after colons");
        // Nested signature keys are sorted too.
        let sig_at = text.find("\"signature\":{\"email\"").unwrap();
        assert!(text[sig_at..].contains("\"name\""));
        assert!(text[sig_at..].find("\"payload_signature\"").unwrap()
            > text[sig_at..].find("\"name\"").unwrap());
    }

    #[test]
    fn encode_decode_round_trip() {
        let payload = sample_payload();
        let encoded = payload.encode().unwrap();
        // Exactly one separator boundary: header parses, object follows.
        assert_eq!(UdfPayload::decode(&encoded).unwrap(), payload);

        let padded = payload.encode_padded().unwrap();
        assert_eq!(padded.len(), PAYLOAD_BLOCK);
        assert_eq!(UdfPayload::decode(&padded).unwrap(), payload);
    }

    #[test]
    fn total_length_is_header_plus_nul_plus_object() {
        let payload = sample_payload();
        let header = canonical_json(&payload.metadata).unwrap();
        let encoded = payload.encode().unwrap();
        assert_eq!(encoded.len(), header.len() + 1 + payload.object.len());
        assert_eq!(encoded[header.len()], 0x00);
    }

    #[test]
    fn decode_rejects_structural_damage() {
        let payload = sample_payload();

        // bytecode_size larger than what follows.
        let mut metadata = payload.metadata.clone();
        metadata.bytecode_size = 4096;
        let broken = UdfPayload { metadata, object: payload.object.clone() };
        assert!(matches!(
            UdfPayload::decode(&broken.encode().unwrap()),
            Err(Error::MalformedHeader(_))
        ));

        // bytecode_size smaller: the leftover object bytes are not zeros.
        let mut metadata = payload.metadata.clone();
        metadata.bytecode_size = 1;
        let broken = UdfPayload { metadata, object: vec![0x01, 0x02, 0x03] };
        assert!(matches!(
            UdfPayload::decode(&broken.encode().unwrap()),
            Err(Error::MalformedHeader(_))
        ));

        // Unknown header fields are refused.
        let text = String::from_utf8(canonical_json(&payload.metadata).unwrap()).unwrap();
        let with_extra = text.replace("{\"backend\"", "{\"attacker\":1,\"backend\"");
        let mut block = with_extra.into_bytes();
        block.push(0);
        block.extend(&payload.object);
        assert!(matches!(
            UdfPayload::decode(&block),
            Err(Error::MalformedHeader(_))
        ));

        // Non-canonical formatting of an otherwise valid header.
        let text = String::from_utf8(canonical_json(&payload.metadata).unwrap()).unwrap();
        let spaced = text.replace("\"backend\":\"expr\"", "\"backend\": \"expr\"");
        let mut block = spaced.into_bytes();
        block.push(0);
        block.extend(&payload.object);
        assert!(matches!(
            UdfPayload::decode(&block),
            Err(Error::MalformedHeader(_))
        ));

        // Missing separator.
        assert!(matches!(
            UdfPayload::decode(b"{\"backend\":\"expr\"}"),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn signature_closure_over_header_and_object() {
        let dir = TempDir::new().unwrap();
        let owner = Owner { name: "Ada".into(), email: "ada@example.org".into() };
        let (record, signing) = ensure_keypair(dir.path(), &owner).unwrap();

        let mut payload = sample_payload();
        payload.metadata.signature.public_key = B64.encode(record.public_key);
        payload.sign(&signing).unwrap();
        assert!(payload.verify().unwrap());

        // Any header change breaks it.
        let mut tampered = payload.clone();
        tampered.metadata.output_resolution = vec![16000, 16000];
        assert!(!tampered.verify().unwrap());

        // Any object change breaks it.
        let mut tampered = payload.clone();
        tampered.object[0] ^= 1;
        assert!(!tampered.verify().unwrap());

        // The signature field itself is outside the signed bytes, so two
        // differently-signed copies of the same content share them.
        let mut resigned = payload.clone();
        resigned.metadata.signature.payload_signature = "AAAA".into();
        assert_eq!(
            payload.signed_bytes().unwrap(),
            resigned.signed_bytes().unwrap()
        );
    }

    #[test]
    fn padded_size_is_resolution_independent() {
        let dir = TempDir::new().unwrap();
        let owner = Owner { name: "Ada".into(), email: "ada@example.org".into() };
        let (record, signing) = ensure_keypair(dir.path(), &owner).unwrap();

        let mut small = sample_payload();
        small.metadata.signature.public_key = B64.encode(record.public_key);
        let mut big = small.clone();
        big.metadata.output_resolution = vec![16000, 16000];
        small.sign(&signing).unwrap();
        big.sign(&signing).unwrap();

        let small_block = small.encode_padded().unwrap();
        let big_block = big.encode_padded().unwrap();
        assert_ne!(small.encode().unwrap().len(), big.encode().unwrap().len());
        assert_eq!(small_block.len(), big_block.len());
    }
}
