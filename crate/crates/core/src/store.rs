//! On-disk formats: per-sample binary records, the dataset manifest,
//! training checkpoints and grayscale image export. All binary numerics are
//! little-endian `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, FormatError, Result};
use crate::forward::ScatteringScene;
use crate::net::{net_init, NetConfig, NetParams, OptState, TrainConfig, TrainState};

pub const SAMPLE_MAGIC: [u8; 4] = *b"ISCT";
pub const SAMPLE_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ISCK";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

/// What an array in a sample record holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u32)]
pub enum ArrayRole {
    ChiTrue = 1,
    ChiBp = 2,
    Current = 3,
    TotalDoi = 4,
    ScatteredDoi = 5,
    ScatteredMea = 6,
}

impl ArrayRole {
    fn from_tag(tag: u32) -> Result<Self> {
        Ok(match tag {
            1 => ArrayRole::ChiTrue,
            2 => ArrayRole::ChiBp,
            3 => ArrayRole::Current,
            4 => ArrayRole::TotalDoi,
            5 => ArrayRole::ScatteredDoi,
            6 => ArrayRole::ScatteredMea,
            t => return Err(FormatError::Malformed(format!("unknown role tag {t}")).into()),
        })
    }
}

/// One tagged complex array. `snr_db = +inf` marks noise-free data.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayEntry {
    pub role: ArrayRole,
    pub snr_db: f64,
    pub values: Array2<Complex64>,
}

/// Everything simulated for one phantom, including every noisy variant.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub index: u64,
    pub ny: u32,
    pub nx: u32,
    pub arrays: Vec<ArrayEntry>,
}

impl SampleRecord {
    pub fn new(index: u64, ny: usize, nx: usize) -> Self {
        SampleRecord {
            index,
            ny: ny as u32,
            nx: nx as u32,
            arrays: Vec::new(),
        }
    }

    /// Adds or replaces the array with this role and SNR tag.
    pub fn put(&mut self, role: ArrayRole, snr_db: f64, values: Array2<Complex64>) {
        match self
            .arrays
            .iter_mut()
            .find(|a| a.role == role && a.snr_db.to_bits() == snr_db.to_bits())
        {
            Some(a) => a.values = values,
            None => self.arrays.push(ArrayEntry { role, snr_db, values }),
        }
    }

    pub fn get(&self, role: ArrayRole, snr_db: f64) -> Result<&Array2<Complex64>> {
        self.arrays
            .iter()
            .find(|a| a.role == role && a.snr_db.to_bits() == snr_db.to_bits())
            .map(|a| &a.values)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("sample {} has no {role:?} array at SNR {snr_db} dB", self.index))
            })
    }

    /// Distinct finite SNR tags, ascending.
    pub fn snr_variants(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.arrays.iter().map(|a| a.snr_db).filter(|s| s.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.arrays.iter().map(|a| a.values.len() * 16).sum();
        let mut out = Vec::with_capacity(28 + 20 * self.arrays.len() + payload);
        out.extend_from_slice(&SAMPLE_MAGIC);
        out.extend_from_slice(&SAMPLE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.index.to_le_bytes());
        out.extend_from_slice(&self.ny.to_le_bytes());
        out.extend_from_slice(&self.nx.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.role as u32).to_le_bytes());
            out.extend_from_slice(&a.snr_db.to_le_bytes());
            out.extend_from_slice(&(a.values.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(a.values.ncols() as u32).to_le_bytes());
        }
        for a in &self.arrays {
            for c in a.values.iter() {
                out.extend_from_slice(&c.re.to_le_bytes());
                out.extend_from_slice(&c.im.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(SAMPLE_MAGIC)?;
        r.version(SAMPLE_VERSION)?;
        let index = r.u64()?;
        let ny = r.u32()?;
        let nx = r.u32()?;
        let count = r.u32()? as usize;
        let mut heads = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let role = ArrayRole::from_tag(r.u32()?)?;
            let snr = r.f64()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            heads.push((role, snr, rows, cols));
        }
        let payload = heads
            .iter()
            .fold(0usize, |acc, h| acc.saturating_add(h.2.saturating_mul(h.3).saturating_mul(16)));
        let expected = r.pos.saturating_add(payload);
        if bytes.len() < expected {
            return Err(FormatError::Truncated {
                expected,
                actual: bytes.len(),
            }
            .into());
        }
        if bytes.len() > expected {
            return Err(FormatError::Malformed(format!("{} trailing bytes", bytes.len() - expected)).into());
        }
        let mut arrays = Vec::with_capacity(heads.len());
        for (role, snr_db, rows, cols) in heads {
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let re = r.f64()?;
                let im = r.f64()?;
                data.push(Complex64::new(re, im));
            }
            let values = Array2::from_shape_vec((rows, cols), data).expect("length checked");
            arrays.push(ArrayEntry { role, snr_db, values });
        }
        Ok(SampleRecord { index, ny, nx, arrays })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(FormatError::Truncated {
                expected: self.pos + n,
                actual: self.bytes.len(),
            }
            .into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        if found != expected {
            return Err(FormatError::BadMagic { expected, found }.into());
        }
        Ok(())
    }

    fn version(&mut self, expected: u32) -> Result<()> {
        let found = self.u32()?;
        if found != expected {
            return Err(FormatError::Version { found, expected }.into());
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_sample(path: &Path, record: &SampleRecord) -> Result<()> {
    write_file(path, &record.to_bytes())
}

pub fn read_sample(path: &Path) -> Result<SampleRecord> {
    SampleRecord::from_bytes(&read_file(path)?)
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub scene: ScatteringScene,
    pub sample_count: usize,
    pub recipe: serde_json::Value,
    pub snr_variants: Vec<f64>,
    pub master_seed: u64,
    pub created_by: String,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    write_file(&dir.join(MANIFEST_FILE), text.as_bytes())
}

/// Reads the manifest and checks that every listed file exists with the recorded checksum.
pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let m: DatasetManifest = serde_json::from_slice(&read_file(&path)?)?;
    if m.format_version != MANIFEST_VERSION {
        return Err(FormatError::Version {
            found: m.format_version,
            expected: MANIFEST_VERSION,
        }
        .into());
    }
    if m.files.len() != m.sample_count {
        return Err(FormatError::Malformed(format!(
            "manifest lists {} files for {} samples",
            m.files.len(),
            m.sample_count
        ))
        .into());
    }
    for f in &m.files {
        let p = dir.join(&f.file);
        if sha256_hex(&read_file(&p)?) != f.sha256 {
            return Err(FormatError::Checksum { path: p }.into());
        }
    }
    Ok(m)
}

/// Everything needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub state: TrainState,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    net: NetConfig,
    train: TrainConfig,
    epoch: usize,
    lr_bits: u64,
    lengths: Vec<usize>,
}

fn checkpoint_blobs(p: &NetParams) -> Vec<&[f64]> {
    let mut out: Vec<&[f64]> = p.trainable();
    for u in &p.units {
        if let Some(bn) = &u.bn {
            out.push(&bn.running_mean);
            out.push(&bn.running_var);
        }
    }
    out
}

pub fn checkpoint_to_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    let params = &ck.state.params;
    let mut blobs = checkpoint_blobs(params);
    blobs.extend(ck.state.opt.velocity.iter().map(|v| v.as_slice()));
    let header = CheckpointHeader {
        net: params.config,
        train: ck.train,
        epoch: ck.state.opt.epoch,
        lr_bits: ck.state.opt.lr.to_bits(),
        lengths: blobs.iter().map(|b| b.len()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for b in blobs {
        for v in b {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let hlen = r.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(r.take(hlen)?)?;
    let mut params = net_init(&header.net)?;
    let opt_template = OptState::new(&params, 0.0);
    let mut expected: Vec<usize> = checkpoint_blobs(&params).iter().map(|b| b.len()).collect();
    expected.extend(opt_template.velocity.iter().map(|v| v.len()));
    if expected != header.lengths {
        return Err(FormatError::Malformed("checkpoint tensor sizes do not match its network config".into()).into());
    }
    let total: usize = expected.iter().sum::<usize>() * 8;
    if bytes.len() != r.pos + total {
        return Err(FormatError::Truncated {
            expected: r.pos + total,
            actual: bytes.len(),
        }
        .into());
    }
    let mut blobs: Vec<Vec<f64>> = Vec::with_capacity(expected.len());
    for len in &expected {
        let mut v = Vec::with_capacity(*len);
        for _ in 0..*len {
            v.push(r.f64()?);
        }
        blobs.push(v);
    }
    let n_train = params.trainable().len();
    let mut it = blobs.into_iter();
    let trainable: Vec<Vec<f64>> = it.by_ref().take(n_train).collect();
    params.visit_trainable_mut(|slot, p| p.copy_from_slice(&trainable[slot]));
    for u in &mut params.units {
        if let Some(bn) = &mut u.bn {
            bn.running_mean = it.next().expect("length checked");
            bn.running_var = it.next().expect("length checked");
        }
    }
    let velocity: Vec<Vec<f64>> = it.collect();
    Ok(Checkpoint {
        train: header.train,
        state: TrainState {
            params,
            opt: OptState {
                velocity,
                epoch: header.epoch,
                lr: f64::from_bits(header.lr_bits),
            },
        },
    })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_file(path, &checkpoint_to_bytes(ck)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    checkpoint_from_bytes(&read_file(path)?)
}

/// Linear map of `[lo, hi]` onto `0..=255` with clamping.
pub fn quantize(v: f64, lo: f64, hi: f64) -> u8 {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    (t * 255.0).round() as u8
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageSidecar {
    width: usize,
    height: usize,
    range: [f64; 2],
    panels: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes maps side by side as an 8-bit binary PGM, separated by 2-pixel white
/// gutters. Grid row `ny - 1` (largest y) becomes the top image row.
pub fn export_panels(maps: &[&Array2<f64>], path: &Path, lo: f64, hi: f64) -> Result<()> {
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!("image range [{lo}, {hi}] is empty")));
    }
    let first = maps.first().ok_or_else(|| Error::InvalidArgument("no panels to export".into()))?;
    let (h, w) = first.dim();
    if maps.iter().any(|m| m.dim() != (h, w)) {
        return Err(Error::ShapeMismatch("panels must share one shape".into()));
    }
    const GUTTER: usize = 2;
    let width = maps.len() * w + (maps.len() - 1) * GUTTER;
    let mut pixels = vec![255u8; width * h];
    for (p, m) in maps.iter().enumerate() {
        let x0 = p * (w + GUTTER);
        for row in 0..h {
            for col in 0..w {
                pixels[row * width + x0 + col] = quantize(m[[h - 1 - row, col]], lo, hi);
            }
        }
    }
    let mut bytes = format!("P5\n{width} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(&pixels);
    write_file(path, &bytes)?;
    let side = ImageSidecar {
        width,
        height: h,
        range: [lo, hi],
        panels: maps.len(),
    };
    write_file(&sidecar_path(path), serde_json::to_string_pretty(&side)?.as_bytes())
}

pub fn export_image(map: &Array2<f64>, path: &Path, lo: f64, hi: f64) -> Result<()> {
    export_panels(&[map], path, lo, hi)
}

/// Parses a binary PGM written by [`export_panels`]: `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = read_file(path)?;
    let malformed = || Error::from(FormatError::Malformed("not a binary 8-bit PGM".into()));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(malformed());
    }
    let w: usize = fields[1].parse().map_err(|_| malformed())?;
    let h: usize = fields[2].parse().map_err(|_| malformed())?;
    let data = &bytes[pos + 1..];
    if data.len() != w * h {
        return Err(FormatError::Truncated {
            expected: w * h,
            actual: data.len(),
        }
        .into());
    }
    Ok((w, h, data.to_vec()))
}
