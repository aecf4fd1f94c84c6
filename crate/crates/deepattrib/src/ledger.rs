//! Append-only, hash-linked ledger of signed generation records, verified
//! by regeneration.
//!
//! A record pins everything needed to regenerate its image: the model (by
//! content hash, resolvable through a content-addressed model database),
//! the seed (fixed-width encoding), and the noise input (by stream seed and
//! digest). A verifying node replays the generation and compares the hash
//! of the 8-bit quantized image; only then does the record enter a block.
//! Any later single-bit tamper anywhere in history breaks either an entry
//! signature, an entry's regeneration, a block hash, or a link hash, and
//! the audit pinpoints the first broken block.
//!
//! Verification order is regeneration first, then signature: a tampered
//! seed is reported as the image-hash mismatch it causes, while a tampered
//! signature (or substituted key) on an otherwise-honest record is reported
//! as a signature failure.
//!
//! Persistence: one canonical-JSON file per block, filename the
//! zero-padded block index; the model database is a directory whose
//! filenames are the hex digests of their contents.

use std::collections::BTreeMap;
use std::io;
use std::path::PathBuf;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::generators::{GeneratorError, GeneratorModel, NoiseInput};
use crate::rng::{tag, DetRng};
use crate::tensor::{quantize8, Tensor};

/// Fixed width of the seed field: up to 128 f32 components, zero-padded.
pub const SEED_FIELD_BYTES: usize = 512;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("seed dimension {0} exceeds the {SEED_FIELD_BYTES}-byte seed field")]
    SeedTooLong(usize),
    #[error("datetime {0:?} is not in canonical RFC 3339 form (YYYY-MM-DDThh:mm:ssZ)")]
    Datetime(String),
    #[error("entry {record_id} failed verification: {failure}")]
    Verify {
        record_id: u64,
        failure: VerifyFailure,
    },
    #[error("block {index} is malformed: {reason}")]
    BadBlock { index: u64, reason: String },
    #[error("chain audit failed at block {block_index}: {reason}")]
    Audit { block_index: u64, reason: String },
    #[error("model database has no entry for digest {0}")]
    ModelNotFound(String),
    #[error("stored bytes for {digest} hash to {actual}")]
    ModelBytesCorrupt { digest: String, actual: String },
    #[error("block file {0:?} has a non-canonical name")]
    BlockFileName(PathBuf),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}

/// Why an entry failed verification; each tamper class gets its own
/// diagnostic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifyFailure {
    ModelNotFound,
    ModelBytesCorrupt,
    NoiseDigestMismatch,
    ImageHashMismatch,
    SignatureInvalid,
    MalformedEntry(String),
}

impl std::fmt::Display for VerifyFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VerifyFailure::ModelNotFound => write!(f, "model not found in database"),
            VerifyFailure::ModelBytesCorrupt => write!(f, "model bytes do not match their digest"),
            VerifyFailure::NoiseDigestMismatch => write!(f, "regenerated noise digest mismatch"),
            VerifyFailure::ImageHashMismatch => write!(f, "regenerated image hash mismatch"),
            VerifyFailure::SignatureInvalid => write!(f, "signature does not verify"),
            VerifyFailure::MalformedEntry(r) => write!(f, "malformed entry: {r}"),
        }
    }
}

/// Ed25519 keypair identifying an image generator (the registrant).
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    /// Deterministic keypair from a stream seed.
    pub fn generate(seed: u64) -> Self {
        let mut rng = DetRng::derived(seed, &[tag("ledger-key")]);
        let mut secret = [0u8; 32];
        for chunk in secret.chunks_mut(8) {
            chunk.copy_from_slice(&rng.u64().to_le_bytes()[..chunk.len()]);
        }
        KeyPair {
            signing: SigningKey::from_bytes(&secret),
        }
    }

    pub fn public_bytes(&self) -> [u8; 32] {
        self.signing.verifying_key().to_bytes()
    }

    fn sign(&self, message: &[u8]) -> [u8; 64] {
        self.signing.sign(message).to_bytes()
    }
}

mod b64ser {
    use super::{Engine, B64};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        B64.decode(text).map_err(serde::de::Error::custom)
    }
}

/// One signed generation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub record_id: u64,
    /// Submitter-claimed UTC time, canonical RFC 3339 (seconds precision).
    pub datetime: String,
    #[serde(with = "b64ser")]
    pub model_hash: Vec<u8>,
    pub seed_dim: u16,
    /// Little-endian f32 seed components, zero-padded to the fixed width.
    #[serde(with = "b64ser")]
    pub seed_bytes: Vec<u8>,
    /// Stream seed sufficient to regenerate the noise input.
    pub noise_seed: u64,
    pub psi: f32,
    #[serde(with = "b64ser")]
    pub noise_digest: Vec<u8>,
    #[serde(with = "b64ser")]
    pub image_hash: Vec<u8>,
    #[serde(with = "b64ser")]
    pub public_key: Vec<u8>,
    #[serde(with = "b64ser")]
    pub signature: Vec<u8>,
}

impl LedgerEntry {
    /// Canonical signed bytes: every field except the signature, fixed
    /// widths throughout, so the encoding length depends only on seed_dim
    /// (and in fact is constant, thanks to the padded seed field).
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(700);
        out.extend_from_slice(&self.record_id.to_le_bytes());
        out.extend_from_slice(self.datetime.as_bytes()); // fixed 20 bytes
        out.extend_from_slice(&self.model_hash);
        out.extend_from_slice(&self.seed_dim.to_le_bytes());
        out.extend_from_slice(&self.seed_bytes);
        out.extend_from_slice(&self.noise_seed.to_le_bytes());
        out.extend_from_slice(&self.psi.to_le_bytes());
        out.extend_from_slice(&self.noise_digest);
        out.extend_from_slice(&self.image_hash);
        out.extend_from_slice(&self.public_key);
        out
    }

    pub fn seed_tensor(&self) -> Result<Tensor, VerifyFailure> {
        let dim = self.seed_dim as usize;
        if self.seed_bytes.len() != SEED_FIELD_BYTES || dim * 4 > SEED_FIELD_BYTES {
            return Err(VerifyFailure::MalformedEntry(format!(
                "seed field has {} bytes for dim {dim}",
                self.seed_bytes.len()
            )));
        }
        let mut data = Vec::with_capacity(dim);
        for i in 0..dim {
            let b: [u8; 4] = self.seed_bytes[4 * i..4 * i + 4].try_into().unwrap();
            data.push(f32::from_le_bytes(b));
        }
        Tensor::new(vec![dim], data)
            .map_err(|e| VerifyFailure::MalformedEntry(e.to_string()))
    }
}

/// SHA-256 of the 8-bit quantization of an image (with its shape header).
pub fn image_hash(image: &Tensor) -> Vec<u8> {
    let mut h = Sha256::new();
    for &d in image.shape() {
        h.update((d as u32).to_le_bytes());
    }
    h.update(quantize8(image));
    h.finalize().to_vec()
}

fn canonical_datetime(dt: &str) -> Result<(), LedgerError> {
    let ok = dt.len() == 20
        && dt.ends_with('Z')
        && chrono::DateTime::parse_from_rfc3339(dt).is_ok();
    if ok {
        Ok(())
    } else {
        Err(LedgerError::Datetime(dt.to_string()))
    }
}

/// Current UTC time in the canonical entry format.
pub fn now_datetime() -> String {
    chrono::Utc::now()
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Content-addressed store mapping model digests to serialized bytes.
pub struct ModelDatabase {
    dir: PathBuf,
}

impl ModelDatabase {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, LedgerError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| LedgerError::Io {
            path: dir.clone(),
            source: e,
        })?;
        Ok(ModelDatabase { dir })
    }

    /// Store bytes under their digest; returns the digest.
    pub fn store(&self, bytes: &[u8]) -> Result<Vec<u8>, LedgerError> {
        let digest = Sha256::digest(bytes).to_vec();
        let path = self.dir.join(hex::encode(&digest));
        if !path.exists() {
            std::fs::write(&path, bytes).map_err(|e| LedgerError::Io {
                path: path.clone(),
                source: e,
            })?;
        }
        Ok(digest)
    }

    pub fn store_model(&self, model: &GeneratorModel) -> Result<Vec<u8>, LedgerError> {
        self.store(&model.serialize())
    }

    /// Retrieve bytes by digest, re-checking the content hash.
    pub fn get(&self, digest: &[u8]) -> Result<Vec<u8>, LedgerError> {
        let name = hex::encode(digest);
        let path = self.dir.join(&name);
        if !path.exists() {
            return Err(LedgerError::ModelNotFound(name));
        }
        let bytes = std::fs::read(&path).map_err(|e| LedgerError::Io {
            path: path.clone(),
            source: e,
        })?;
        let actual = Sha256::digest(&bytes).to_vec();
        if actual != digest {
            return Err(LedgerError::ModelBytesCorrupt {
                digest: name,
                actual: hex::encode(actual),
            });
        }
        Ok(bytes)
    }

    pub fn contains(&self, digest: &[u8]) -> bool {
        self.dir.join(hex::encode(digest)).exists()
    }
}

/// One block of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub index: u64,
    #[serde(with = "b64ser")]
    pub previous_block_hash: Vec<u8>,
    pub entries: Vec<LedgerEntry>,
    #[serde(with = "b64ser")]
    pub block_hash: Vec<u8>,
}

fn compute_block_hash(index: u64, previous: &[u8], entries: &[LedgerEntry]) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(index.to_le_bytes());
    h.update(previous);
    h.update((entries.len() as u32).to_le_bytes());
    for e in entries {
        h.update(e.canonical_bytes());
        h.update(&e.signature);
    }
    h.finalize().to_vec()
}

const GENESIS_HASH: [u8; 32] = [0u8; 32];

/// The append-only chain, persisted as one canonical-JSON file per block.
/// Appends go through a single writer; reads are free.
pub struct Ledger {
    dir: PathBuf,
    blocks: Vec<Block>,
    /// Next record id to hand out; covers entries registered but not yet
    /// committed to a block.
    next_id: u64,
}

impl Ledger {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, LedgerError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| LedgerError::Io {
            path: dir.clone(),
            source: e,
        })?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| LedgerError::Io {
                path: dir.clone(),
                source: e,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut blocks: Vec<Block> = Vec::new();
        for (i, path) in files.iter().enumerate() {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| LedgerError::BlockFileName(path.clone()))?;
            if stem != format!("block_{i:08}") {
                return Err(LedgerError::BlockFileName(path.clone()));
            }
            let text = std::fs::read_to_string(path).map_err(|e| LedgerError::Io {
                path: path.clone(),
                source: e,
            })?;
            blocks.push(serde_json::from_str(&text)?);
        }
        let next_id = blocks
            .iter()
            .flat_map(|b| b.entries.iter())
            .map(|e| e.record_id + 1)
            .max()
            .unwrap_or(0);
        Ok(Ledger {
            dir,
            blocks,
            next_id,
        })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn entry_count(&self) -> usize {
        self.blocks.iter().map(|b| b.entries.len()).sum()
    }

    pub fn next_record_id(&self) -> u64 {
        self.next_id
    }

    fn tip_hash(&self) -> Vec<u8> {
        self.blocks
            .last()
            .map(|b| b.block_hash.clone())
            .unwrap_or_else(|| GENESIS_HASH.to_vec())
    }

    /// Build and sign a generation record: stores the model in the
    /// database, generates the image, signs the canonical encoding, and
    /// runs node verification before handing the entry back for inclusion.
    #[allow(clippy::too_many_arguments)]
    pub fn register_generation(
        &mut self,
        db: &ModelDatabase,
        model: &GeneratorModel,
        seed: &Tensor,
        noise_seed: u64,
        psi: f32,
        keys: &KeyPair,
        datetime: &str,
    ) -> Result<LedgerEntry, LedgerError> {
        canonical_datetime(datetime)?;
        let dim = seed.numel();
        if dim * 4 > SEED_FIELD_BYTES {
            return Err(LedgerError::SeedTooLong(dim));
        }
        let model_hash = db.store_model(model)?;
        let noise = NoiseInput::sample(model.arch(), noise_seed, psi);
        let image = model.generate(seed, &noise)?;
        let mut seed_bytes = Vec::with_capacity(SEED_FIELD_BYTES);
        for &v in seed.data() {
            seed_bytes.extend_from_slice(&v.to_le_bytes());
        }
        seed_bytes.resize(SEED_FIELD_BYTES, 0);
        let record_id = self.next_id;
        let mut entry = LedgerEntry {
            record_id,
            datetime: datetime.to_string(),
            model_hash,
            seed_dim: dim as u16,
            seed_bytes,
            noise_seed,
            psi,
            noise_digest: noise.digest().to_vec(),
            image_hash: image_hash(&image),
            public_key: keys.public_bytes().to_vec(),
            signature: Vec::new(),
        };
        entry.signature = keys.sign(&entry.canonical_bytes()).to_vec();
        verify_entry(&entry, db).map_err(|failure| LedgerError::Verify {
            record_id: entry.record_id,
            failure,
        })?;
        self.next_id += 1;
        Ok(entry)
    }

    /// Append a block of entries; every entry is re-verified first and the
    /// block is persisted before the method returns. An empty entry list is
    /// a valid heartbeat block.
    pub fn append_block(
        &mut self,
        entries: Vec<LedgerEntry>,
        db: &ModelDatabase,
    ) -> Result<&Block, LedgerError> {
        let mut min_id = self
            .blocks
            .iter()
            .flat_map(|b| b.entries.iter())
            .map(|e| e.record_id + 1)
            .max()
            .unwrap_or(0);
        for e in &entries {
            verify_entry(e, db).map_err(|failure| LedgerError::Verify {
                record_id: e.record_id,
                failure,
            })?;
            if e.record_id < min_id {
                return Err(LedgerError::BadBlock {
                    index: self.blocks.len() as u64,
                    reason: format!(
                        "record id {} repeats or reorders history (next allowed {min_id})",
                        e.record_id
                    ),
                });
            }
            min_id = e.record_id + 1;
        }
        self.next_id = self.next_id.max(min_id);
        let index = self.blocks.len() as u64;
        let previous_block_hash = self.tip_hash();
        let block_hash = compute_block_hash(index, &previous_block_hash, &entries);
        let block = Block {
            index,
            previous_block_hash,
            entries,
            block_hash,
        };
        let path = self.dir.join(format!("block_{index:08}.json"));
        let json = crate::canonical_json(&block)?;
        std::fs::write(&path, json).map_err(|e| LedgerError::Io {
            path: path.clone(),
            source: e,
        })?;
        self.blocks.push(block);
        Ok(self.blocks.last().expect("just pushed"))
    }

    /// All entries whose image hash matches; empty means "never registered"
    /// (the plausible-deniability answer).
    pub fn validate_image(&self, image: &Tensor) -> Vec<&LedgerEntry> {
        let target = image_hash(image);
        self.blocks
            .iter()
            .flat_map(|b| b.entries.iter())
            .filter(|e| e.image_hash == target)
            .collect()
    }

    /// Full-history audit: link hashes, block hashes, and per-entry
    /// verification (including regeneration). Reports the first broken
    /// block.
    pub fn audit(&self, db: &ModelDatabase) -> Result<(), LedgerError> {
        let mut prev = GENESIS_HASH.to_vec();
        for (i, block) in self.blocks.iter().enumerate() {
            let fail = |reason: String| LedgerError::Audit {
                block_index: i as u64,
                reason,
            };
            if block.index != i as u64 {
                return Err(fail(format!("index {} at position {i}", block.index)));
            }
            if block.previous_block_hash != prev {
                return Err(fail("previous-block link broken".into()));
            }
            let recomputed = compute_block_hash(block.index, &block.previous_block_hash, &block.entries);
            if recomputed != block.block_hash {
                return Err(fail("block hash mismatch".into()));
            }
            for e in &block.entries {
                verify_entry(e, db).map_err(|f| fail(format!("entry {}: {f}", e.record_id)))?;
            }
            prev = block.block_hash.clone();
        }
        Ok(())
    }
}

/// Node verification: fetch the model, regenerate noise and image, compare
/// the image hash, then check the signature. See the module docs for why
/// regeneration is checked before the signature.
pub fn verify_entry(entry: &LedgerEntry, db: &ModelDatabase) -> Result<(), VerifyFailure> {
    let bytes = match db.get(&entry.model_hash) {
        Ok(b) => b,
        Err(LedgerError::ModelNotFound(_)) => return Err(VerifyFailure::ModelNotFound),
        Err(LedgerError::ModelBytesCorrupt { .. }) => {
            return Err(VerifyFailure::ModelBytesCorrupt)
        }
        Err(e) => return Err(VerifyFailure::MalformedEntry(e.to_string())),
    };
    let model = GeneratorModel::deserialize(&bytes)
        .map_err(|e| VerifyFailure::MalformedEntry(e.to_string()))?;
    let seed = entry.seed_tensor()?;
    if seed.numel() != model.arch().seed_dim() {
        return Err(VerifyFailure::MalformedEntry(format!(
            "seed dim {} vs model {}",
            seed.numel(),
            model.arch().seed_dim()
        )));
    }
    let noise = NoiseInput::sample(model.arch(), entry.noise_seed, entry.psi);
    if noise.digest().to_vec() != entry.noise_digest {
        return Err(VerifyFailure::NoiseDigestMismatch);
    }
    let image = model
        .generate(&seed, &noise)
        .map_err(|e| VerifyFailure::MalformedEntry(e.to_string()))?;
    if image_hash(&image) != entry.image_hash {
        return Err(VerifyFailure::ImageHashMismatch);
    }
    let key_bytes: [u8; 32] = entry
        .public_key
        .as_slice()
        .try_into()
        .map_err(|_| VerifyFailure::MalformedEntry("public key width".into()))?;
    let key = VerifyingKey::from_bytes(&key_bytes)
        .map_err(|_| VerifyFailure::SignatureInvalid)?;
    let sig_bytes: [u8; 64] = entry
        .signature
        .as_slice()
        .try_into()
        .map_err(|_| VerifyFailure::MalformedEntry("signature width".into()))?;
    let sig = Signature::from_bytes(&sig_bytes);
    key.verify(&entry.canonical_bytes(), &sig)
        .map_err(|_| VerifyFailure::SignatureInvalid)
}

/// Convenience: models referenced by a chain, keyed by hex digest.
pub fn models_in_chain(ledger: &Ledger) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for b in ledger.blocks() {
        for e in &b.entries {
            *counts.entry(hex::encode(&e.model_hash)).or_insert(0) += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::GeneratorArch;

    fn setup(tmp: &std::path::Path) -> (Ledger, ModelDatabase, GeneratorModel, KeyPair) {
        let ledger = Ledger::open(tmp.join("chain")).unwrap();
        let db = ModelDatabase::open(tmp.join("models")).unwrap();
        let model = GeneratorModel::build(GeneratorArch::plain_default(), 7).unwrap();
        let keys = KeyPair::generate(11);
        (ledger, db, model, keys)
    }

    fn register_one(
        ledger: &mut Ledger,
        db: &ModelDatabase,
        model: &GeneratorModel,
        keys: &KeyPair,
        seed_stream: u64,
    ) -> LedgerEntry {
        let mut rng = DetRng::new(seed_stream);
        let seed = rng.standard_normal_tensor(&[model.arch().seed_dim()]);
        ledger
            .register_generation(db, model, &seed, seed_stream, 0.7, keys, "2026-08-10T12:00:00Z")
            .unwrap()
    }

    #[test]
    fn register_then_verify_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let (mut ledger, db, model, keys) = setup(tmp.path());
        let entry = register_one(&mut ledger, &db, &model, &keys, 1);
        assert!(verify_entry(&entry, &db).is_ok());
        ledger.append_block(vec![entry], &db).unwrap();
        assert!(ledger.audit(&db).is_ok());
    }

    #[test]
    fn same_inputs_same_image_hash_distinct_ids() {
        let tmp = tempfile::tempdir().unwrap();
        let (mut ledger, db, model, keys) = setup(tmp.path());
        let e1 = register_one(&mut ledger, &db, &model, &keys, 5);
        ledger.append_block(vec![e1.clone()], &db).unwrap();
        let e2 = register_one(&mut ledger, &db, &model, &keys, 5);
        assert_eq!(e1.image_hash, e2.image_hash);
        assert_ne!(e1.record_id, e2.record_id);
    }

    #[test]
    fn entry_encoding_length_is_fixed() {
        let tmp = tempfile::tempdir().unwrap();
        let (mut ledger, db, model, keys) = setup(tmp.path());
        let mut lens = std::collections::HashSet::new();
        for i in 0..100 {
            let e = register_one(&mut ledger, &db, &model, &keys, 100 + i);
            lens.insert(e.canonical_bytes().len());
            assert_eq!(e.seed_bytes.len(), SEED_FIELD_BYTES);
        }
        assert_eq!(lens.len(), 1, "canonical length varies: {lens:?}");
    }

    #[test]
    fn tampered_seed_reports_image_hash_mismatch() {
        let tmp = tempfile::tempdir().unwrap();
        let (mut ledger, db, model, keys) = setup(tmp.path());
        let mut entry = register_one(&mut ledger, &db, &model, &keys, 2);
        // Corrupt the exponent byte of the first component: the regenerated
        // image visibly changes, so regeneration reports the mismatch.
        entry.seed_bytes[3] ^= 0xff;
        assert_eq!(
            verify_entry(&entry, &db).unwrap_err(),
            VerifyFailure::ImageHashMismatch
        );
        // A low mantissa bit flip regenerates the same 8-bit image; the
        // signature over the canonical bytes still exposes the tamper.
        let mut entry = register_one(&mut ledger, &db, &model, &keys, 2);
        entry.seed_bytes[0] ^= 0x01;
        assert_eq!(
            verify_entry(&entry, &db).unwrap_err(),
            VerifyFailure::SignatureInvalid
        );
    }

    #[test]
    fn swapped_model_hash_fails_regeneration() {
        let tmp = tempfile::tempdir().unwrap();
        let (mut ledger, db, model, keys) = setup(tmp.path());
        let sibling = GeneratorModel::build(GeneratorArch::plain_default(), 8).unwrap();
        db.store_model(&sibling).unwrap();
        let mut entry = register_one(&mut ledger, &db, &model, &keys, 3);
        entry.model_hash = sibling.digest().to_vec();
        assert_eq!(
            verify_entry(&entry, &db).unwrap_err(),
            VerifyFailure::ImageHashMismatch
        );
    }

    #[test]
    fn tampered_signature_and_key_substitution_fail() {
        let tmp = tempfile::tempdir().unwrap();
        let (mut ledger, db, model, keys) = setup(tmp.path());
        let mut entry = register_one(&mut ledger, &db, &model, &keys, 4);
        entry.signature[10] ^= 0x80;
        assert_eq!(
            verify_entry(&entry, &db).unwrap_err(),
            VerifyFailure::SignatureInvalid
        );
        // Key substitution without re-signing.
        let mut entry = register_one(&mut ledger, &db, &model, &keys, 4);
        entry.public_key = KeyPair::generate(99).public_bytes().to_vec();
        assert_eq!(
            verify_entry(&entry, &db).unwrap_err(),
            VerifyFailure::SignatureInvalid
        );
    }

    #[test]
    fn missing_model_is_its_own_diagnostic() {
        let tmp = tempfile::tempdir().unwrap();
        let (mut ledger, db, model, keys) = setup(tmp.path());
        let mut entry = register_one(&mut ledger, &db, &model, &keys, 6);
        entry.model_hash = vec![0xab; 32];
        assert_eq!(
            verify_entry(&entry, &db).unwrap_err(),
            VerifyFailure::ModelNotFound
        );
    }

    #[test]
    fn unverified_entries_are_rejected_at_append() {
        let tmp = tempfile::tempdir().unwrap();
        let (mut ledger, db, model, keys) = setup(tmp.path());
        let mut entry = register_one(&mut ledger, &db, &model, &keys, 7);
        entry.seed_bytes[8] ^= 0xff;
        assert!(matches!(
            ledger.append_block(vec![entry], &db),
            Err(LedgerError::Verify { .. })
        ));
    }

    #[test]
    fn empty_heartbeat_block_is_valid() {
        let tmp = tempfile::tempdir().unwrap();
        let (mut ledger, db, _, _) = setup(tmp.path());
        ledger.append_block(Vec::new(), &db).unwrap();
        ledger.append_block(Vec::new(), &db).unwrap();
        assert!(ledger.audit(&db).is_ok());
        assert_eq!(ledger.blocks().len(), 2);
    }

    #[test]
    fn interior_tamper_is_pinpointed_by_audit() {
        let tmp = tempfile::tempdir().unwrap();
        let (mut ledger, db, model, keys) = setup(tmp.path());
        for i in 0..4 {
            let e = register_one(&mut ledger, &db, &model, &keys, 20 + i);
            ledger.append_block(vec![e], &db).unwrap();
        }
        // Tamper with block 1's entry in memory.
        ledger.blocks[1].entries[0].noise_seed ^= 1;
        match ledger.audit(&db).unwrap_err() {
            LedgerError::Audit { block_index, .. } => assert_eq!(block_index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validate_image_answers_exactly() {
        let tmp = tempfile::tempdir().unwrap();
        let (mut ledger, db, model, keys) = setup(tmp.path());
        let mut rng = DetRng::new(31);
        let seed = rng.standard_normal_tensor(&[64]);
        let entry = ledger
            .register_generation(&db, &model, &seed, 31, 0.7, &keys, "2026-08-10T12:00:00Z")
            .unwrap();
        let image = model
            .generate(&seed, &NoiseInput::sample(model.arch(), 31, 0.7))
            .unwrap();
        ledger.append_block(vec![entry], &db).unwrap();
        assert_eq!(ledger.validate_image(&image).len(), 1);
        // Unregistered image: empty answer.
        let other = model
            .generate(&rng.standard_normal_tensor(&[64]), &NoiseInput::sample(model.arch(), 99, 0.7))
            .unwrap();
        assert!(ledger.validate_image(&other).is_empty());
        // One 8-bit level of difference in one pixel: empty answer.
        let mut perturbed = image.clone();
        perturbed.data_mut()[0] += 1.5 / 255.0;
        assert!(ledger.validate_image(&perturbed).is_empty());
    }

    #[test]
    fn chain_reloads_from_disk_and_still_audits() {
        let tmp = tempfile::tempdir().unwrap();
        let (mut ledger, db, model, keys) = setup(tmp.path());
        for i in 0..3 {
            let e = register_one(&mut ledger, &db, &model, &keys, 40 + i);
            ledger.append_block(vec![e], &db).unwrap();
        }
        let reloaded = Ledger::open(tmp.path().join("chain")).unwrap();
        assert_eq!(reloaded.blocks().len(), 3);
        assert_eq!(reloaded.entry_count(), 3);
        assert!(reloaded.audit(&db).is_ok());
        // Verification runs against a fresh process-independent load of the
        // model database, which is what regeneration soundness means here.
        let db2 = ModelDatabase::open(tmp.path().join("models")).unwrap();
        assert!(reloaded.audit(&db2).is_ok());
    }

    #[test]
    fn non_canonical_datetime_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let (mut ledger, db, model, keys) = setup(tmp.path());
        let mut rng = DetRng::new(50);
        let seed = rng.standard_normal_tensor(&[64]);
        let r = ledger.register_generation(
            &db,
            &model,
            &seed,
            50,
            0.7,
            &keys,
            "2026-08-10 12:00:00",
        );
        assert!(matches!(r, Err(LedgerError::Datetime(_))));
    }
}
