//! Content-addressed asset storage and the story package format.
//!
//! A package holds three kinds of entries:
//!
//! ```text
//! manifest.json      format tag, schema version, story digest, asset list
//! story.json         canonical story document (sorted keys, 2-space indent)
//! assets/<sha256>    raw asset bytes, named by their digest
//! ```
//!
//! Packages live either as a directory or as a single tar archive with the
//! same entry names. Every asset is re-hashed when a package is loaded.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{validate_story, AssetId, Story, Violation, SCHEMA_VERSION};

pub const PACKAGE_FORMAT: &str = "storyloom.package";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const STORY_FILE: &str = "story.json";
pub const ASSET_DIR: &str = "assets";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("corrupt package: {0}")]
    CorruptPackage(String),
    #[error("unsupported schema version {0}")]
    UnsupportedVersion(u32),
    #[error("asset {0} is missing")]
    MissingAsset(AssetId),
    #[error("asset {0} does not match its content hash")]
    AssetHashMismatch(AssetId),
    #[error("story has blocking violations: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidStory(Vec<Violation>),
    #[error("invalid package id {0:?}")]
    InvalidPackageId(String),
    #[error("package {0} not found")]
    PackageNotFound(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::CorruptPackage(_) => "CorruptPackage",
            StoreError::UnsupportedVersion(_) => "UnsupportedVersion",
            StoreError::MissingAsset(_) => "MissingAsset",
            StoreError::AssetHashMismatch(_) => "AssetHashMismatch",
            StoreError::InvalidStory(_) => "InvalidStory",
            StoreError::InvalidPackageId(_) => "InvalidPackageId",
            StoreError::PackageNotFound(_) => "PackageNotFound",
            StoreError::Io(_) => "IOError",
        }
    }
}

pub type Result<T> = std::result::Result<T, StoreError>;

pub trait AssetStore: Send + Sync {
    /// Stores `bytes` and returns their content hash. Storing the same bytes twice is a no-op.
    fn put(&self, bytes: &[u8]) -> Result<AssetId>;
    fn get(&self, id: &AssetId) -> Result<Option<Vec<u8>>>;
    fn contains(&self, id: &AssetId) -> Result<bool> {
        Ok(self.get(id)?.is_some())
    }
}

#[derive(Debug, Default)]
pub struct MemoryAssetStore {
    blobs: RwLock<BTreeMap<AssetId, Arc<Vec<u8>>>>,
}

impl MemoryAssetStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.blobs.read().expect("asset lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> Vec<AssetId> {
        self.blobs
            .read()
            .expect("asset lock poisoned")
            .keys()
            .cloned()
            .collect()
    }
}

impl AssetStore for MemoryAssetStore {
    fn put(&self, bytes: &[u8]) -> Result<AssetId> {
        let id = AssetId::of_bytes(bytes);
        self.blobs
            .write()
            .expect("asset lock poisoned")
            .entry(id.clone())
            .or_insert_with(|| Arc::new(bytes.to_vec()));
        Ok(id)
    }

    fn get(&self, id: &AssetId) -> Result<Option<Vec<u8>>> {
        Ok(self
            .blobs
            .read()
            .expect("asset lock poisoned")
            .get(id)
            .map(|b| b.as_ref().clone()))
    }

    fn contains(&self, id: &AssetId) -> Result<bool> {
        Ok(self.blobs.read().expect("asset lock poisoned").contains_key(id))
    }
}

/// Assets as files named by their digest in a single directory.
#[derive(Debug)]
pub struct FsAssetStore {
    root: PathBuf,
}

impl FsAssetStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    fn path(&self, id: &AssetId) -> Option<PathBuf> {
        id.is_well_formed().then(|| self.root.join(id.as_str()))
    }
}

impl AssetStore for FsAssetStore {
    fn put(&self, bytes: &[u8]) -> Result<AssetId> {
        let id = AssetId::of_bytes(bytes);
        let path = self.root.join(id.as_str());
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(id)
    }

    fn get(&self, id: &AssetId) -> Result<Option<Vec<u8>>> {
        let Some(path) = self.path(id) else { return Ok(None) };
        match fs::read(path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn contains(&self, id: &AssetId) -> Result<bool> {
        Ok(self.path(id).is_some_and(|p| p.is_file()))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", uuid::Uuid::new_v4()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestAsset {
    pub id: AssetId,
    pub byte_length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub schema_version: u32,
    pub story_id: String,
    pub story_sha256: String,
    pub assets: Vec<ManifestAsset>,
}

fn sort_keys(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let sorted: BTreeMap<String, Value> = map.into_iter().map(|(k, v)| (k, sort_keys(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    let value = sort_keys(serde_json::to_value(value).expect("domain types always serialize"));
    let mut out = serde_json::to_vec_pretty(&value).expect("json values always serialize");
    out.push(b'\n');
    out
}

/// Canonical story document: identical stories give identical bytes.
pub fn story_document(story: &Story) -> Vec<u8> {
    canonical_json(story)
}

/// A story plus the asset bytes it references.
#[derive(Debug)]
pub struct Package {
    pub manifest: Manifest,
    pub story: Story,
    pub assets: MemoryAssetStore,
}

/// Entries of a package, already encoded, in write order.
fn package_entries(story: &Story, assets: &dyn AssetStore) -> Result<Vec<(String, Vec<u8>)>> {
    let blocking: Vec<Violation> = validate_story(story)
        .into_iter()
        .filter(Violation::is_blocking)
        .collect();
    if !blocking.is_empty() {
        return Err(StoreError::InvalidStory(blocking));
    }
    let document = story_document(story);
    let mut blobs = Vec::new();
    for id in story.asset_index.keys() {
        let bytes = assets.get(id)?.ok_or_else(|| StoreError::MissingAsset(id.clone()))?;
        if &AssetId::of_bytes(&bytes) != id {
            return Err(StoreError::AssetHashMismatch(id.clone()));
        }
        blobs.push((id.clone(), bytes));
    }
    let manifest = Manifest {
        format: PACKAGE_FORMAT.to_string(),
        schema_version: SCHEMA_VERSION,
        story_id: story.story_id.to_string(),
        story_sha256: hex::encode(Sha256::digest(&document)),
        assets: blobs
            .iter()
            .map(|(id, b)| ManifestAsset {
                id: id.clone(),
                byte_length: b.len() as u64,
            })
            .collect(),
    };
    let mut entries = vec![
        (MANIFEST_FILE.to_string(), canonical_json(&manifest)),
        (STORY_FILE.to_string(), document),
    ];
    entries.extend(blobs.into_iter().map(|(id, b)| (format!("{ASSET_DIR}/{id}"), b)));
    Ok(entries)
}

/// Reads and verifies a package from any entry source.
fn read_package(mut read: impl FnMut(&str) -> Result<Option<Vec<u8>>>) -> Result<Package> {
    let manifest_bytes =
        read(MANIFEST_FILE)?.ok_or_else(|| StoreError::CorruptPackage(format!("{MANIFEST_FILE} is missing")))?;
    let manifest_value: Value = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| StoreError::CorruptPackage(format!("{MANIFEST_FILE}: {e}")))?;
    let version = manifest_value
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| StoreError::CorruptPackage("manifest has no schema_version".into()))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(StoreError::UnsupportedVersion(
            u32::try_from(version).unwrap_or(u32::MAX),
        ));
    }
    let manifest: Manifest = serde_json::from_value(manifest_value)
        .map_err(|e| StoreError::CorruptPackage(format!("{MANIFEST_FILE}: {e}")))?;
    if manifest.format != PACKAGE_FORMAT {
        return Err(StoreError::CorruptPackage(format!(
            "unknown format {:?}",
            manifest.format
        )));
    }

    let document = read(STORY_FILE)?.ok_or_else(|| StoreError::CorruptPackage(format!("{STORY_FILE} is missing")))?;
    if hex::encode(Sha256::digest(&document)) != manifest.story_sha256 {
        return Err(StoreError::CorruptPackage(
            "story document does not match manifest digest".into(),
        ));
    }
    let story: Story =
        serde_json::from_slice(&document).map_err(|e| StoreError::CorruptPackage(format!("{STORY_FILE}: {e}")))?;
    if story.schema_version != SCHEMA_VERSION {
        return Err(StoreError::UnsupportedVersion(story.schema_version));
    }

    let assets = MemoryAssetStore::new();
    for id in story.asset_index.keys() {
        if !id.is_well_formed() {
            return Err(StoreError::CorruptPackage(format!(
                "asset id {id} is not a content hash"
            )));
        }
        let bytes = read(&format!("{ASSET_DIR}/{id}"))?.ok_or_else(|| StoreError::MissingAsset(id.clone()))?;
        if &AssetId::of_bytes(&bytes) != id {
            return Err(StoreError::AssetHashMismatch(id.clone()));
        }
        assets.put(&bytes)?;
    }
    Ok(Package {
        manifest,
        story,
        assets,
    })
}

fn read_optional(path: &Path) -> Result<Option<Vec<u8>>> {
    match fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Writes `story` and its assets as a package directory at `dir`.
pub fn write_package_dir(story: &Story, assets: &dyn AssetStore, dir: &Path) -> Result<()> {
    let entries = package_entries(story, assets)?;
    fs::create_dir_all(dir.join(ASSET_DIR))?;
    for (name, bytes) in &entries {
        // Story document and manifest last, so a crash never leaves a manifest
        // pointing at missing assets.
        if name.starts_with(ASSET_DIR) {
            let path = dir.join(name);
            if !path.exists() {
                write_atomic(&path, bytes)?;
            }
        }
    }
    for (name, bytes) in entries.iter().rev().filter(|(n, _)| !n.starts_with(ASSET_DIR)) {
        write_atomic(&dir.join(name), bytes)?;
    }
    Ok(())
}

pub fn read_package_dir(dir: &Path) -> Result<Package> {
    read_package(|name| read_optional(&dir.join(name)))
}

/// Writes a single-file tar archive of the package.
pub fn export_package(story: &Story, assets: &dyn AssetStore, dest: &Path) -> Result<()> {
    let entries = package_entries(story, assets)?;
    let tmp = dest.with_extension(format!("tmp-{}", uuid::Uuid::new_v4()));
    {
        let file = fs::File::create(&tmp)?;
        let mut builder = tar::Builder::new(io::BufWriter::new(file));
        builder.mode(tar::HeaderMode::Deterministic);
        for (name, bytes) in &entries {
            let mut header = tar::Header::new_ustar();
            header.set_size(bytes.len() as u64);
            header.set_mode(0o644);
            header.set_mtime(0);
            header.set_uid(0);
            header.set_gid(0);
            header.set_entry_type(tar::EntryType::Regular);
            header.set_cksum();
            builder.append_data(&mut header, name, bytes.as_slice())?;
        }
        builder.into_inner()?.flush()?;
    }
    fs::rename(&tmp, dest)?;
    Ok(())
}

pub fn import_archive(path: &Path) -> Result<Package> {
    let mut archive = tar::Archive::new(io::BufReader::new(fs::File::open(path)?));
    let mut entries = BTreeMap::new();
    for entry in archive
        .entries()
        .map_err(|e| StoreError::CorruptPackage(format!("not a package archive: {e}")))?
    {
        let mut entry = entry.map_err(|e| StoreError::CorruptPackage(format!("bad archive entry: {e}")))?;
        let name = entry
            .path()
            .map_err(|e| StoreError::CorruptPackage(format!("bad entry name: {e}")))?
            .to_string_lossy()
            .into_owned();
        let mut bytes = Vec::new();
        entry
            .read_to_end(&mut bytes)
            .map_err(|e| StoreError::CorruptPackage(format!("truncated entry {name}: {e}")))?;
        entries.insert(name, bytes);
    }
    read_package(|name| Ok(entries.remove(name)))
}

/// Opens a package directory or archive.
pub fn open_package(path: &Path) -> Result<Package> {
    if path.is_dir() {
        read_package_dir(path)
    } else if path.is_file() {
        import_archive(path)
    } else {
        Err(StoreError::PackageNotFound(path.display().to_string()))
    }
}

/// Directory of saved packages, one sub-directory per story.
#[derive(Debug)]
pub struct PackageStore {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl PackageStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            write_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn package_dir(&self, package_id: &str) -> Result<PathBuf> {
        let ok = !package_id.is_empty()
            && package_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
            && !package_id.starts_with('.');
        if ok {
            Ok(self.root.join(package_id))
        } else {
            Err(StoreError::InvalidPackageId(package_id.to_string()))
        }
    }

    /// Saves the story under its story id; returns the package id.
    pub fn save_story(&self, story: &Story, assets: &dyn AssetStore) -> Result<String> {
        let package_id = story.story_id.to_string();
        let dir = self.package_dir(&package_id)?;
        let _guard = self.write_lock.lock().expect("package write lock poisoned");
        write_package_dir(story, assets, &dir)?;
        Ok(package_id)
    }

    pub fn load_package(&self, package_id: &str) -> Result<Package> {
        let dir = self.package_dir(package_id)?;
        if !dir.is_dir() {
            return Err(StoreError::PackageNotFound(package_id.to_string()));
        }
        read_package_dir(&dir)
    }

    pub fn load_story(&self, package_id: &str) -> Result<Story> {
        Ok(self.load_package(package_id)?.story)
    }

    pub fn list(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if entry.path().join(MANIFEST_FILE).is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }
}
