//! On-disk plumbing: run manifests, run-directory locks, dataset ingestion
//! and the demographics sidecar.
//!
//! Ingestion assumes images are already aligned and cropped to the face.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bias::DemographicProfile;
use crate::error::{Error, Result};
use crate::image::{resize_rgb8, Image};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";
/// Optional per-dataset sidecar with ground-truth demographics.
pub const DEMOGRAPHICS_FILE: &str = "demographics.csv";
pub const DEMOGRAPHICS_HEADER: [&str; 4] = ["image_id", "ethnicity", "gender", "age"];
/// Extensions considered images during ingestion.
pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut f = fs::File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_str(&read_to_string(path.as_ref())?)?)
}

/// `fs::read_to_string` with the path in the error message.
pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

/// Everything needed to audit or repeat a command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub args: Vec<String>,
    /// Fully resolved configuration after flag overrides.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, serde_json::Value>,
    /// Role to adapter or backend identity.
    pub adapters: BTreeMap<String, String>,
    pub artifacts: Vec<Artifact>,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
}

impl RunManifest {
    pub fn new(
        command: impl Into<String>,
        args: Vec<String>,
        config: &impl Serialize,
    ) -> Result<Self> {
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.into(),
            args,
            config: serde_json::to_value(config)?,
            seeds: BTreeMap::new(),
            adapters: BTreeMap::new(),
            artifacts: Vec::new(),
            started_at: Utc::now(),
            finished_at: None,
        })
    }

    pub fn seed(&mut self, name: &str, value: impl Serialize) -> Result<()> {
        self.seeds
            .insert(name.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn adapter(&mut self, role: &str, identity: impl Into<String>) {
        self.adapters.insert(role.to_string(), identity.into());
    }

    /// Digests `run_dir/rel` and lists it. Re-recording a path replaces the
    /// earlier entry.
    pub fn record_artifact(&mut self, run_dir: &Path, rel: &str) -> Result<()> {
        let sha256 = sha256_file(run_dir.join(rel))?;
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(Artifact {
            path: rel.to_string(),
            sha256,
        });
        Ok(())
    }

    /// Stamps the finish time and writes `manifest.json` into `run_dir`.
    pub fn finish(&mut self, run_dir: &Path) -> Result<PathBuf> {
        self.finished_at = Some(Utc::now());
        let path = run_dir.join(MANIFEST_FILE);
        write_json(&path, self)?;
        Ok(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }

    /// Artifacts whose current digest under `run_dir` differs from the
    /// recorded one, or that are missing.
    pub fn stale_artifacts(&self, run_dir: &Path) -> Vec<String> {
        self.artifacts
            .iter()
            .filter(|a| {
                sha256_file(run_dir.join(&a.path)).ok().as_deref() != Some(a.sha256.as_str())
            })
            .map(|a| a.path.clone())
            .collect()
    }
}

/// Exclusive claim on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    /// Creates `dir` if needed and takes its lock file. Fails with
    /// [`Error::Locked`] when another command holds it.
    pub fn acquire(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Locked(dir.to_path_buf()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::validation(format!(
                "unknown split `{s}` (expected train or test)"
            ))),
        }
    }
}

/// How ingested images are brought to the detector's input size. Resizing
/// is bilinear and stretches to the exact target, so a non-square source
/// loses its aspect ratio.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResizePolicy {
    pub width: usize,
    pub height: usize,
    pub interpolation: Interpolation,
    pub aspect: AspectHandling,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Bilinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AspectHandling {
    Stretch,
}

impl ResizePolicy {
    pub fn square(side: usize) -> Self {
        ResizePolicy {
            width: side,
            height: side,
            interpolation: Interpolation::Bilinear,
            aspect: AspectHandling::Stretch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    /// Path relative to the dataset root, `/`-separated.
    pub image_id: String,
    pub split: Split,
    pub source_width: u32,
    pub source_height: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestError {
    pub file: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub root: PathBuf,
    /// Lexicographic by `image_id`.
    pub entries: Vec<DatasetEntry>,
    pub resize: ResizePolicy,
    pub errors: Vec<IngestError>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn image_files(dir: &Path, prefix: &str) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && is_image(&path) {
            let name = path.file_name().unwrap_or_default().to_string_lossy();
            out.push((format!("{prefix}{name}"), path));
        }
    }
    Ok(out)
}

/// Scans `root` for images. Files directly under `root` and under `test/`
/// are tagged test; files under `train/` are tagged train. Other files and
/// directories are ignored. Each image's header is read now; pixels are
/// loaded and resized on demand by [`DatasetManifest::load`].
pub fn ingest_dataset(root: impl AsRef<Path>, policy: ResizePolicy) -> Result<DatasetManifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::validation(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    if policy.width == 0 || policy.height == 0 {
        return Err(Error::config("resize target must be positive"));
    }
    let mut files: Vec<(String, PathBuf, Split)> = image_files(root, "")?
        .into_iter()
        .map(|(id, p)| (id, p, Split::Test))
        .collect();
    for split in [Split::Train, Split::Test] {
        let sub = root.join(split.as_str());
        if sub.is_dir() {
            let prefix = format!("{}/", split.as_str());
            files.extend(
                image_files(&sub, &prefix)?
                    .into_iter()
                    .map(|(id, p)| (id, p, split)),
            );
        }
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));

    let mut entries = Vec::new();
    let mut errors = Vec::new();
    for (image_id, path, split) in files {
        let dims = image::ImageReader::open(&path)
            .and_then(|r| r.with_guessed_format())
            .map_err(|e| e.to_string())
            .and_then(|r| r.into_dimensions().map_err(|e| e.to_string()));
        match dims {
            Ok((w, h)) => entries.push(DatasetEntry {
                image_id,
                split,
                source_width: w,
                source_height: h,
            }),
            Err(message) => errors.push(IngestError {
                file: image_id,
                message,
            }),
        }
    }
    if entries.is_empty() {
        return Err(Error::validation(format!(
            "dataset {} has no readable images ({} unreadable)",
            root.display(),
            errors.len()
        )));
    }
    let dataset_id = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| root.display().to_string());
    Ok(DatasetManifest {
        dataset_id,
        root: root.to_path_buf(),
        entries,
        resize: policy,
        errors,
    })
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Decodes entry `i` and resizes it to the policy target.
    pub fn load(&self, i: usize) -> Result<Image> {
        let entry = self
            .entries
            .get(i)
            .ok_or_else(|| Error::validation(format!("dataset has no entry {i}")))?;
        let rgb = image::open(self.root.join(&entry.image_id))?.to_rgb8();
        let (w, h) = (self.resize.width, self.resize.height);
        let rgb = if rgb.width() as usize == w && rgb.height() as usize == h {
            rgb
        } else {
            resize_rgb8(&rgb, w, h)
        };
        Ok(Image::from_rgb8(&rgb))
    }

    /// Loads every entry of `split` (or all entries) in manifest order.
    pub fn load_split(&self, split: Option<Split>) -> Result<Vec<(String, Image)>> {
        let idx: Vec<usize> = (0..self.entries.len())
            .filter(|&i| split.is_none_or(|s| self.entries[i].split == s))
            .collect();
        idx.par_iter()
            .map(|&i| Ok((self.entries[i].image_id.clone(), self.load(i)?)))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }
}

/// Ground-truth demographics keyed by image id, with the stated age.
pub type Demographics = BTreeMap<String, (DemographicProfile, f64)>;

#[derive(Deserialize)]
struct DemographicsRow {
    image_id: String,
    ethnicity: String,
    gender: String,
    age: f64,
}

pub fn read_demographics(path: impl AsRef<Path>) -> Result<Demographics> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for (line, row) in rdr.deserialize::<DemographicsRow>().enumerate() {
        let row = row?;
        let profile =
            DemographicProfile::from_age(row.ethnicity.parse()?, row.gender.parse()?, row.age)
                .map_err(|e| Error::validation(format!("demographics row {}: {e}", line + 1)))?;
        out.insert(row.image_id, (profile, row.age));
    }
    Ok(out)
}

pub fn write_demographics<W: Write>(out: W, rows: &[(String, DemographicProfile)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DEMOGRAPHICS_HEADER)?;
    for (id, p) in rows {
        w.write_record([
            id.as_str(),
            p.ethnicity.as_str(),
            p.gender.as_str(),
            &p.representative_age().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias::{Ethnicity, Gender};

    fn write_png(path: &Path, w: usize, h: usize, v: f64) {
        Image::filled(w, h, [v, 0.5, 0.25]).save_png(path).unwrap();
    }

    #[test]
    fn ingestion_orders_lexicographically_and_tags_splits() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.png", "a.png", "c.PNG"] {
            write_png(&dir.path().join(name), 8, 8, 0.5);
        }
        fs::create_dir(dir.path().join("train")).unwrap();
        write_png(&dir.path().join("train/z.png"), 8, 8, 0.5);
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        fs::write(dir.path().join("broken.png"), "not a png").unwrap();
        let m = ingest_dataset(dir.path(), ResizePolicy::square(4)).unwrap();
        let ids: Vec<_> = m.entries.iter().map(|e| e.image_id.as_str()).collect();
        assert_eq!(ids, ["a.png", "b.png", "c.PNG", "train/z.png"]);
        assert_eq!(m.entries[3].split, Split::Train);
        assert_eq!(m.errors.len(), 1);
        assert_eq!(m.errors[0].file, "broken.png");
        assert_eq!(m.load_split(Some(Split::Test)).unwrap().len(), 3);
    }

    #[test]
    fn empty_directory_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(
            ingest_dataset(dir.path(), ResizePolicy::square(4))
                .unwrap_err()
                .kind(),
            "validation"
        );
    }

    #[test]
    fn non_square_source_is_stretched_to_the_target() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("x.png"), 576 / 8, 720 / 8, 0.8);
        let m = ingest_dataset(dir.path(), ResizePolicy::square(64)).unwrap();
        assert_eq!(
            (m.entries[0].source_width, m.entries[0].source_height),
            (72, 90)
        );
        let img = m.load(0).unwrap();
        assert_eq!((img.width(), img.height()), (64, 64));
        assert!((img.get(10, 50)[0] - 0.8).abs() < 1.0 / 255.0);
    }

    #[test]
    fn lock_is_exclusive_and_released_on_drop() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("run");
        let lock = RunLock::acquire(&run).unwrap();
        assert_eq!(RunLock::acquire(&run).unwrap_err().kind(), "locked");
        drop(lock);
        assert!(RunLock::acquire(&run).is_ok());
    }

    #[test]
    fn manifest_round_trip_and_staleness() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "hello").unwrap();
        let mut m = RunManifest::new(
            "train",
            vec!["--steps".into(), "3".into()],
            &serde_json::json!({"lr": 0.01}),
        )
        .unwrap();
        m.seed("data_seed", 7u64).unwrap();
        m.adapter("backend", "blend");
        m.record_artifact(dir.path(), "a.txt").unwrap();
        let path = m.finish(dir.path()).unwrap();
        let back = RunManifest::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            back.artifacts[0].sha256,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        assert!(back.stale_artifacts(dir.path()).is_empty());
        fs::write(dir.path().join("a.txt"), "changed").unwrap();
        assert_eq!(back.stale_artifacts(dir.path()), ["a.txt"]);
    }

    #[test]
    fn demographics_round_trip() {
        let p = DemographicProfile::new(Ethnicity::Indian, Gender::Female, 3).unwrap();
        let mut buf = Vec::new();
        write_demographics(&mut buf, &[("img.png".into(), p)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(DEMOGRAPHICS_FILE);
        fs::write(&path, &buf).unwrap();
        let d = read_demographics(&path).unwrap();
        assert_eq!(d["img.png"].0, p);
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("image_id,ethnicity,gender,age\n"));
    }
}
