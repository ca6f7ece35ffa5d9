//! On-disk window formats. JSONL holds one window object per line; the
//! binary format is a fixed little-endian layout behind a 10-byte magic.
//! Both store f32 exactly, so the two formats round-trip bit-identically.
//! A dataset directory is train + test files plus `manifest.json` carrying
//! the generator config, seed, window counts, and per-file sha256.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::generator::GeneratorConfig;
use crate::data::{GeneratedData, SampleWindow, Segment};
use crate::error::{Error, Result};

pub const DATASET_MANIFEST_NAME: &str = "manifest.json";
const MANIFEST_TAG: &str = "CCTR-DATA-MANIFEST-1";
const BINARY_MAGIC: &[u8; 10] = b"CCTR-DATA1";
const BINARY_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    Jsonl,
    Binary,
}

impl FileFormat {
    pub fn file_name(&self, split: Split) -> String {
        let ext = match self {
            FileFormat::Jsonl => "jsonl",
            FileFormat::Binary => "bin",
        };
        format!("{}.{ext}", split.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

// ── JSONL ───────────────────────────────────────────────────────────────

pub fn jsonl_bytes(windows: &[SampleWindow]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for w in windows {
        out.extend_from_slice(serde_json::to_string(w)?.as_bytes());
        out.push(b'\n');
    }
    Ok(out)
}

fn parse_jsonl(path: &Path, bytes: &[u8]) -> Result<Vec<SampleWindow>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::format(path, format!("not utf-8: {e}")))?;
    let mut windows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let w: SampleWindow = serde_json::from_str(line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        windows.push(w);
    }
    Ok(windows)
}

// ── binary ──────────────────────────────────────────────────────────────

pub fn binary_bytes(
    windows: &[SampleWindow],
    n: usize,
    d_visual: usize,
    d_text: usize,
) -> Result<Vec<u8>> {
    if n == 0 || d_visual == 0 || d_text == 0 {
        return Err(Error::BadShape {
            op: "binary_bytes",
            msg: "window dimensions must be positive".into(),
            shape: vec![n, d_visual, d_text],
        });
    }
    let per_window = 8 + n * (d_visual + d_text + 1) * 4;
    let mut out = Vec::with_capacity(34 + windows.len() * per_window);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d_visual as u32).to_le_bytes());
    out.extend_from_slice(&(d_text as u32).to_le_bytes());
    out.extend_from_slice(&(windows.len() as u64).to_le_bytes());
    for w in windows {
        if w.segments.len() != n
            || w.segments
                .iter()
                .any(|s| s.visual.len() != d_visual || s.text.len() != d_text)
        {
            return Err(Error::BadShape {
                op: "binary_bytes",
                msg: "window does not match the declared dimensions".into(),
                shape: vec![w.segments.len()],
            });
        }
        out.extend_from_slice(&w.streamer_id.to_le_bytes());
        out.extend_from_slice(&w.lag.to_le_bytes());
        for s in &w.segments {
            for v in &s.visual {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in &s.text {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&s.ctr.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> &'a [u8] {
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        out
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().expect("4 bytes"))
    }
    fn i32(&mut self) -> i32 {
        i32::from_le_bytes(self.take(4).try_into().expect("4 bytes"))
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take(8).try_into().expect("8 bytes"))
    }
    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take(4).try_into().expect("4 bytes"))
    }
}

fn parse_binary(path: &Path, bytes: &[u8]) -> Result<Vec<SampleWindow>> {
    let header = 10 + 4 * 4 + 8;
    if bytes.len() < header || &bytes[..10] != BINARY_MAGIC {
        return Err(Error::format(path, "bad magic or truncated header"));
    }
    let mut r = Reader { bytes, pos: 10 };
    let version = r.u32();
    if version != BINARY_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let n = r.u32() as usize;
    let d_visual = r.u32() as usize;
    let d_text = r.u32() as usize;
    let count = r.u64() as usize;
    if n == 0 || d_visual == 0 || d_text == 0 {
        return Err(Error::format(path, "zero dimension in header"));
    }
    let per_window = 8u128 + n as u128 * (d_visual + d_text + 1) as u128 * 4;
    let expected = header as u128 + count as u128 * per_window;
    if bytes.len() as u128 != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }

    let mut windows = Vec::with_capacity(count);
    for w in 0..count {
        let streamer_id = r.u32();
        let lag = r.i32();
        if lag.unsigned_abs() as usize >= n {
            return Err(Error::format(path, format!("window {w}: lag {lag} out of range")));
        }
        let mut segments = Vec::with_capacity(n);
        for _ in 0..n {
            let visual: Vec<f32> = (0..d_visual).map(|_| r.f32()).collect();
            let text: Vec<f32> = (0..d_text).map(|_| r.f32()).collect();
            let ctr = r.f32();
            if visual.iter().chain(&text).any(|v| !v.is_finite()) || !ctr.is_finite() {
                return Err(Error::format(path, format!("window {w}: non-finite value")));
            }
            segments.push(Segment { visual, text, ctr });
        }
        windows.push(SampleWindow {
            streamer_id,
            lag,
            segments,
        });
    }
    Ok(windows)
}

/// Reads a window file in either format, sniffing the binary magic.
pub fn read_windows(path: &Path) -> Result<Vec<SampleWindow>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_windows(path, &bytes)
}

fn parse_windows(path: &Path, bytes: &[u8]) -> Result<Vec<SampleWindow>> {
    if bytes.starts_with(BINARY_MAGIC) {
        parse_binary(path, bytes)
    } else {
        parse_jsonl(path, bytes)
    }
}

// ── dataset directory ───────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitEntry {
    pub file: String,
    pub windows: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub seed: u64,
    pub file_format: FileFormat,
    pub generator: GeneratorConfig,
    pub train: SplitEntry,
    pub test: SplitEntry,
}

impl DatasetManifest {
    pub fn entry(&self, split: Split) -> &SplitEntry {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes train/test window files and the manifest under `dir`.
pub fn write_dataset(
    dir: &Path,
    data: &GeneratedData,
    config: &GeneratorConfig,
    seed: u64,
    file_format: FileFormat,
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let encode = |windows: &[SampleWindow]| -> Result<Vec<u8>> {
        match file_format {
            FileFormat::Jsonl => jsonl_bytes(windows),
            FileFormat::Binary => binary_bytes(windows, config.n, config.d_visual, config.d_text),
        }
    };
    let write_split = |split: Split, windows: &[SampleWindow]| -> Result<SplitEntry> {
        let bytes = encode(windows)?;
        let file = file_format.file_name(split);
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        Ok(SplitEntry {
            file,
            windows: windows.len(),
            sha256: sha256_hex(&bytes),
        })
    };
    let manifest = DatasetManifest {
        format: MANIFEST_TAG.to_string(),
        seed,
        file_format,
        generator: config.clone(),
        train: write_split(Split::Train, &data.train)?,
        test: write_split(Split::Test, &data.test)?,
    };
    let path = dir.join(DATASET_MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_dataset_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(DATASET_MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(&path, format!("bad manifest: {e}")))?;
    if manifest.format != MANIFEST_TAG {
        return Err(Error::format(
            &path,
            format!("unknown manifest tag {:?}", manifest.format),
        ));
    }
    Ok(manifest)
}

/// Loads one split of a dataset directory, verifying the recorded sha256
/// and window count.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<SampleWindow>> {
    let manifest = read_dataset_manifest(dir)?;
    let entry = manifest.entry(split);
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let actual = sha256_hex(&bytes);
    if actual != entry.sha256 {
        return Err(Error::format(
            &path,
            format!("sha256 mismatch: manifest {} vs file {actual}", entry.sha256),
        ));
    }
    let windows = parse_windows(&path, &bytes)?;
    if windows.len() != entry.windows {
        return Err(Error::format(
            &path,
            format!("expected {} windows, found {}", entry.windows, windows.len()),
        ));
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_windows;
    use proptest::collection::vec as pvec;
    use proptest::prelude::*;

    fn sample_data() -> (GeneratedData, GeneratorConfig) {
        let config = GeneratorConfig {
            streamers: 2,
            windows_per_streamer: 5,
            n: 4,
            d_visual: 3,
            d_text: 2,
            ..GeneratorConfig::default()
        };
        (generate_windows(&config, 31).unwrap(), config)
    }

    #[test]
    fn jsonl_round_trips_bit_exactly() {
        let (data, _) = sample_data();
        let bytes = jsonl_bytes(&data.train).unwrap();
        let back = parse_jsonl(Path::new("t"), &bytes).unwrap();
        assert_eq!(back, data.train);
    }

    #[test]
    fn binary_round_trips_bit_exactly() {
        let (data, c) = sample_data();
        let bytes = binary_bytes(&data.train, c.n, c.d_visual, c.d_text).unwrap();
        let back = parse_binary(Path::new("t"), &bytes).unwrap();
        assert_eq!(back, data.train);
    }

    #[test]
    fn both_formats_agree_after_parsing() {
        let (data, c) = sample_data();
        let j = parse_windows(
            Path::new("a"),
            &jsonl_bytes(&data.test).unwrap(),
        )
        .unwrap();
        let b = parse_windows(
            Path::new("b"),
            &binary_bytes(&data.test, c.n, c.d_visual, c.d_text).unwrap(),
        )
        .unwrap();
        assert_eq!(j, b);
    }

    #[test]
    fn binary_rejects_corruption() {
        let (data, c) = sample_data();
        let good = binary_bytes(&data.train, c.n, c.d_visual, c.d_text).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] ^= 0xFF;
        assert!(parse_binary(Path::new("t"), &bad_magic).is_err());

        assert!(parse_binary(Path::new("t"), &good[..good.len() - 1]).is_err());

        let mut nan = good.clone();
        let header = 10 + 4 * 4 + 8;
        nan[header + 8..header + 12].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(parse_binary(Path::new("t"), &nan).is_err());

        let mut bad_version = good;
        bad_version[10..14].copy_from_slice(&9u32.to_le_bytes());
        assert!(parse_binary(Path::new("t"), &bad_version).is_err());
    }

    #[test]
    fn dataset_directory_round_trips_and_detects_tampering() {
        let (data, config) = sample_data();
        for format in [FileFormat::Jsonl, FileFormat::Binary] {
            let dir = tempfile::tempdir().unwrap();
            let manifest = write_dataset(dir.path(), &data, &config, 31, format).unwrap();
            assert_eq!(manifest.train.windows, data.train.len());
            let train = load_split(dir.path(), Split::Train).unwrap();
            let test = load_split(dir.path(), Split::Test).unwrap();
            assert_eq!(train, data.train);
            assert_eq!(test, data.test);

            // flip one byte of the train file: sha must catch it
            let path = dir.path().join(&manifest.train.file);
            let mut bytes = fs::read(&path).unwrap();
            let last = bytes.len() - 2;
            bytes[last] ^= 0x01;
            fs::write(&path, bytes).unwrap();
            let err = load_split(dir.path(), Split::Train).err().unwrap().to_string();
            assert!(err.contains("sha256"), "{err}");
        }
    }

    #[test]
    fn empty_test_split_is_representable() {
        let config = GeneratorConfig {
            streamers: 1,
            windows_per_streamer: 3,
            train_fraction: 1.0,
            ..GeneratorConfig::default()
        };
        let data = generate_windows(&config, 1).unwrap();
        assert!(data.test.is_empty());
        for format in [FileFormat::Jsonl, FileFormat::Binary] {
            let dir = tempfile::tempdir().unwrap();
            write_dataset(dir.path(), &data, &config, 1, format).unwrap();
            assert_eq!(load_split(dir.path(), Split::Test).unwrap(), vec![]);
            assert_eq!(load_split(dir.path(), Split::Train).unwrap().len(), 3);
        }
    }

    fn finite_f32() -> impl Strategy<Value = f32> {
        prop::num::f32::NORMAL
            | prop::num::f32::SUBNORMAL
            | prop::num::f32::ZERO
            | prop::num::f32::NEGATIVE
            | prop::num::f32::POSITIVE
    }

    fn windows_strategy() -> impl Strategy<Value = (Vec<SampleWindow>, usize, usize, usize)> {
        (1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(n, dv, dt)| {
            let segment = (pvec(finite_f32(), dv), pvec(finite_f32(), dt), finite_f32())
                .prop_map(|(visual, text, ctr)| Segment { visual, text, ctr });
            let window = (any::<u32>(), 0i32..n as i32, pvec(segment, n)).prop_map(
                |(streamer_id, lag, segments)| SampleWindow {
                    streamer_id,
                    lag,
                    segments,
                },
            );
            pvec(window, 0..4).prop_map(move |ws| (ws, n, dv, dt))
        })
    }

    proptest! {
        #[test]
        fn any_finite_windows_round_trip_in_both_formats(
            (windows, n, dv, dt) in windows_strategy()
        ) {
            let j = parse_jsonl(Path::new("t"), &jsonl_bytes(&windows).unwrap()).unwrap();
            prop_assert_eq!(&j, &windows);
            let b = parse_binary(
                Path::new("t"),
                &binary_bytes(&windows, n, dv, dt).unwrap(),
            )
            .unwrap();
            prop_assert_eq!(&b, &windows);
        }
    }
}
