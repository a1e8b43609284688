//! Binary containers: .vost/.vosf clip volumes and the checkpoint archive.
//!
//! Clip files store one 4-D volume (C x H x W x T) as little-endian f32 in
//! channel-major order with the frame index fastest, i.e. element
//! (c, y, x, t) lives at ((c*H + y)*W + x)*T + t. Checkpoints are a single
//! file: a JSON manifest followed by named f32 blobs, each CRC32-checked.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::VarStore;
use crate::clips::{ClipError, FlowClip, MaskClip, VideoClip};
use crate::tensor::{Scalar, Tensor};

pub const VOST_VERSION: u32 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("clip: {0}")]
    Clip(#[from] ClipError),
    #[error("bad magic in {0}: expected {1}")]
    BadMagic(String, String),
    #[error("unsupported version {0} in {1}")]
    BadVersion(u32, String),
    #[error("corrupt file {0}: {1}")]
    Corrupt(String, String),
    #[error("shape mismatch for {0}: {1}")]
    ShapeMismatch(String, String),
    #[error("missing blob {0}")]
    MissingBlob(String),
}

fn crc_table() -> &'static [u32; 256] {
    static TABLE: OnceLock<[u32; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0u32; 256];
        for (i, slot) in t.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            }
            *slot = c;
        }
        t
    })
}

/// Standard CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let table = crc_table();
    let mut c = 0xFFFF_FFFFu32;
    for &b in bytes {
        c = table[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.pos + n > self.buf.len() {
            return Err(DataError::Corrupt(self.path.clone(), "truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>, DataError> {
        let raw = self.take(count * 4)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Volume serialization order shared by .vost and .vosf.
fn file_index(h: usize, w: usize, t_n: usize, c: usize, y: usize, x: usize, t: usize) -> usize {
    ((c * h + y) * w + x) * t_n + t
}

fn write_volume(
    path: &Path,
    magic: &[u8; 4],
    dims_after_version: &[u32],
    values: impl Iterator<Item = f32>,
) -> Result<(), DataError> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&VOST_VERSION.to_le_bytes());
    for &d in dims_after_version {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

fn open_volume<'a>(buf: &'a [u8], path: &Path, magic: &[u8; 4]) -> Result<Reader<'a>, DataError> {
    let mut r = Reader { buf, pos: 0, path: path_str(path) };
    let m = r.take(4)?;
    if m != magic {
        return Err(DataError::BadMagic(r.path, String::from_utf8_lossy(magic).into()));
    }
    let version = r.u32()?;
    if version != VOST_VERSION {
        return Err(DataError::BadVersion(version, r.path));
    }
    Ok(r)
}

pub fn write_video_vost(path: &Path, clip: &VideoClip) -> Result<(), DataError> {
    let (c_n, t_n, h, w) = (clip.channels, clip.frames, clip.height, clip.width);
    let mut vals = vec![0.0f32; c_n * h * w * t_n];
    for c in 0..c_n {
        for y in 0..h {
            for x in 0..w {
                for t in 0..t_n {
                    vals[file_index(h, w, t_n, c, y, x, t)] = clip.get(c, t, y, x);
                }
            }
        }
    }
    write_volume(path, b"VOST", &[c_n as u32, h as u32, w as u32, t_n as u32], vals.into_iter())
}

pub fn read_video_vost(path: &Path) -> Result<VideoClip, DataError> {
    let buf = fs::read(path)?;
    let mut r = open_volume(&buf, path, b"VOST")?;
    let c_n = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let t_n = r.u32()? as usize;
    if c_n != 1 && c_n != 3 {
        return Err(DataError::Corrupt(path_str(path), format!("video channels {c_n}")));
    }
    let vals = r.f32s(c_n * h * w * t_n)?;
    let mut clip = VideoClip::zeros(c_n, t_n, h, w);
    for c in 0..c_n {
        for y in 0..h {
            for x in 0..w {
                for t in 0..t_n {
                    clip.set(c, t, y, x, vals[file_index(h, w, t_n, c, y, x, t)]);
                }
            }
        }
    }
    // Revalidate the range invariant on the assembled clip.
    Ok(VideoClip::new(c_n, t_n, h, w, clip.data().to_vec())?)
}

pub fn write_mask_vost(path: &Path, mask: &MaskClip) -> Result<(), DataError> {
    let (t_n, h, w) = (mask.frames, mask.height, mask.width);
    let mut vals = vec![0.0f32; h * w * t_n];
    for y in 0..h {
        for x in 0..w {
            for t in 0..t_n {
                vals[file_index(h, w, t_n, 0, y, x, t)] = mask.get(t, y, x) as f32;
            }
        }
    }
    write_volume(path, b"VOST", &[1, h as u32, w as u32, t_n as u32], vals.into_iter())
}

pub fn read_mask_vost(path: &Path) -> Result<MaskClip, DataError> {
    let buf = fs::read(path)?;
    let mut r = open_volume(&buf, path, b"VOST")?;
    let c_n = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let t_n = r.u32()? as usize;
    if c_n != 1 {
        return Err(DataError::Corrupt(path_str(path), format!("mask channels {c_n}")));
    }
    let vals = r.f32s(h * w * t_n)?;
    let mut mask = MaskClip::zeros(t_n, h, w);
    for y in 0..h {
        for x in 0..w {
            for t in 0..t_n {
                let v = vals[file_index(h, w, t_n, 0, y, x, t)];
                if v != 0.0 && v != 1.0 {
                    return Err(DataError::Corrupt(path_str(path), format!("mask value {v}")));
                }
                mask.set(t, y, x, v as u8);
            }
        }
    }
    Ok(mask)
}

pub fn write_flow_vosf(path: &Path, flow: &FlowClip) -> Result<(), DataError> {
    let (t_n, h, w) = (flow.frames, flow.height, flow.width);
    let mut vals = vec![0.0f32; 2 * h * w * t_n];
    for c in 0..2 {
        for y in 0..h {
            for x in 0..w {
                for t in 0..t_n {
                    vals[file_index(h, w, t_n, c, y, x, t)] = flow.get(c, t, y, x);
                }
            }
        }
    }
    write_volume(path, b"VOSF", &[h as u32, w as u32, t_n as u32], vals.into_iter())
}

pub fn read_flow_vosf(path: &Path) -> Result<FlowClip, DataError> {
    let buf = fs::read(path)?;
    let mut r = open_volume(&buf, path, b"VOSF")?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let t_n = r.u32()? as usize;
    let vals = r.f32s(2 * h * w * t_n)?;
    let mut flow = FlowClip::zeros(t_n, h, w);
    for c in 0..2 {
        for y in 0..h {
            for x in 0..w {
                for t in 0..t_n {
                    flow.set(c, t, y, x, vals[file_index(h, w, t_n, c, y, x, t)]);
                }
            }
        }
    }
    Ok(flow)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BlobInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    /// "gan", "segmenter", "classifier", ...
    pub kind: String,
    /// Completed epochs.
    pub epoch: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Run-specific payload: config snapshot, optimizer descriptor, etc.
    pub extra: serde_json::Value,
    pub blobs: Vec<BlobInfo>,
}

/// In-memory checkpoint: manifest plus named f32 blobs.
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    data: BTreeMap<String, Vec<f32>>,
}

impl Checkpoint {
    pub fn new(kind: &str, epoch: usize, alpha: f64, seed: u64, extra: serde_json::Value) -> Self {
        Checkpoint {
            manifest: CheckpointManifest {
                format_version: CHECKPOINT_VERSION,
                kind: kind.to_string(),
                epoch,
                alpha,
                seed,
                extra,
                blobs: Vec::new(),
            },
            data: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, values: Vec<f32>) {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "blob {name}");
        assert!(!self.data.contains_key(name), "duplicate blob {name}");
        self.manifest.blobs.push(BlobInfo { name: name.to_string(), shape });
        self.data.insert(name.to_string(), values);
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f32])> {
        let info = self.manifest.blobs.iter().find(|b| b.name == name)?;
        Some((&info.shape, self.data.get(name).unwrap()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.manifest.blobs.iter().map(|b| b.name.as_str())
    }

    /// Snapshots every variable (parameters and running stats) of a store.
    pub fn add_store<T: Scalar>(&mut self, store: &VarStore<T>) {
        for id in store.ids() {
            let t = store.value(id);
            let values: Vec<f32> = t.data().iter().map(|&v| v.to_f64() as f32).collect();
            self.insert(store.name(id), t.shape().to_vec(), values);
        }
    }

    /// Copies blobs into same-named store variables. With `require_all`,
    /// every store variable must be present; otherwise unmatched variables
    /// are left untouched and reported.
    pub fn load_into_store<T: Scalar>(
        &self,
        store: &mut VarStore<T>,
        require_all: bool,
    ) -> Result<Vec<String>, DataError> {
        let mut missing = Vec::new();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            match self.get(&name) {
                Some((shape, values)) => {
                    if shape != store.value(id).shape() {
                        return Err(DataError::ShapeMismatch(
                            name.clone(),
                            format!("{:?} vs {:?}", shape, store.value(id).shape()),
                        ));
                    }
                    let t = Tensor::from_vec(
                        shape,
                        values.iter().map(|&v| T::from_f64(v as f64)).collect(),
                    );
                    *store.value_mut(id) = t;
                }
                None => missing.push(name),
            }
        }
        if require_all && !missing.is_empty() {
            return Err(DataError::MissingBlob(missing.join(", ")));
        }
        Ok(missing)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::new();
        out.extend_from_slice(b"VOSC");
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for info in &self.manifest.blobs {
            let values = &self.data[&info.name];
            let mut payload = Vec::with_capacity(values.len() * 4);
            for v in values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            out.extend_from_slice(&crc32(&payload).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, DataError> {
        let buf = fs::read(path)?;
        let mut r = Reader { buf: &buf, pos: 0, path: path_str(path) };
        let magic = r.take(4)?;
        if magic != b"VOSC" {
            return Err(DataError::BadMagic(path_str(path), "VOSC".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(DataError::BadVersion(version, path_str(path)));
        }
        let mlen = r.u64()? as usize;
        let manifest: CheckpointManifest = serde_json::from_slice(r.take(mlen)?)?;
        let mut data = BTreeMap::new();
        for info in &manifest.blobs {
            let count = r.u64()? as usize;
            if count != info.shape.iter().product::<usize>() {
                return Err(DataError::Corrupt(
                    path_str(path),
                    format!("blob {} count {count}", info.name),
                ));
            }
            let stored_crc = r.u32()?;
            let raw = r.take(count * 4)?;
            if crc32(raw) != stored_crc {
                return Err(DataError::Corrupt(
                    path_str(path),
                    format!("blob {} checksum", info.name),
                ));
            }
            let values: Vec<f32> =
                raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            data.insert(info.name.clone(), values);
        }
        Ok(Checkpoint { manifest, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crc32_matches_the_reference_vector() {
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32(b""), 0);
    }

    #[test]
    fn vost_file_layout_puts_frame_index_fastest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vost");
        // 1 channel, 2 frames, 1x2 pixels; distinct values.
        let mut clip = VideoClip::zeros(1, 2, 1, 2);
        clip.set(0, 0, 0, 0, 0.1);
        clip.set(0, 1, 0, 0, 0.2);
        clip.set(0, 0, 0, 1, 0.3);
        clip.set(0, 1, 0, 1, 0.4);
        write_video_vost(&path, &clip).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"VOST");
        let payload = &bytes[4 + 4 + 16..];
        let vals: Vec<f32> =
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        // (y=0,x=0,t=0), (0,0,1), (0,1,0), (0,1,1).
        assert_eq!(vals, vec![0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn clip_containers_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = crate::data::sprites::SpriteSceneSpec {
            height: 16,
            width: 16,
            frames: 4,
            ..Default::default()
        };
        let (video, mask, flow) = crate::data::sprites::synth_clip(&spec, 0);
        let vp = dir.path().join("video.vost");
        let mp = dir.path().join("mask.vost");
        let fp = dir.path().join("flow.vosf");
        write_video_vost(&vp, &video).unwrap();
        write_mask_vost(&mp, &mask).unwrap();
        write_flow_vosf(&fp, &flow).unwrap();
        assert_eq!(read_video_vost(&vp).unwrap().data(), video.data());
        assert_eq!(read_mask_vost(&mp).unwrap().data(), mask.data());
        assert_eq!(read_flow_vosf(&fp).unwrap().data(), flow.data());
    }

    #[test]
    fn bad_magic_version_and_truncation_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.vost");
        let clip = VideoClip::zeros(1, 2, 2, 2);
        write_video_vost(&path, &clip).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(read_video_vost(&path), Err(DataError::BadMagic(..))));

        let mut bad = good.clone();
        bad[4] = 9;
        fs::write(&path, &bad).unwrap();
        assert!(matches!(read_video_vost(&path), Err(DataError::BadVersion(..))));

        fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(read_video_vost(&path), Err(DataError::Corrupt(..))));
    }

    #[test]
    fn checkpoint_round_trips_and_detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.vosc");
        let mut ck = Checkpoint::new("gan", 7, 2.2, 42, serde_json::json!({"note": 1}));
        ck.insert("a/w", vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.25, -0.125]);
        ck.insert("b/bias", vec![4], vec![0.5; 4]);
        ck.save(&path).unwrap();

        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.manifest.epoch, 7);
        assert_eq!(back.manifest.alpha, 2.2);
        assert_eq!(back.manifest.seed, 42);
        let (shape, vals) = back.get("a/w").unwrap();
        assert_eq!(shape, &[2, 3]);
        assert_eq!(vals, &[1.0, -2.0, 3.5, 0.0, 4.25, -0.125]);

        // Flip one payload byte: the CRC must catch it.
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(DataError::Corrupt(..))));

        // Truncation is reported as corruption too.
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(DataError::Corrupt(..))));
    }

    #[test]
    fn store_snapshot_round_trips_through_checkpoint() {
        use rand::SeedableRng;
        let mut store: VarStore<f32> = VarStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let profile = crate::net::NetProfile { spatial: 16, frames: 8, width: 1.0 / 32.0, latent_dim: 8 };
        let _gen = crate::net::Generator::new(&mut store, &profile, &mut rng);
        let mut ck = Checkpoint::new("gan", 1, 1.0, 3, serde_json::Value::Null);
        ck.add_store(&store);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.vosc");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();

        let mut store2: VarStore<f32> = VarStore::new();
        let mut rng2 = rand_chacha::ChaCha8Rng::seed_from_u64(999);
        let _gen2 = crate::net::Generator::new(&mut store2, &profile, &mut rng2);
        let missing = back.load_into_store(&mut store2, true).unwrap();
        assert!(missing.is_empty());
        for id in store.ids() {
            let a = store.value(id);
            let b = store2.value(store2.id_by_name(store.name(id)).unwrap());
            assert_eq!(a.data(), b.data(), "{}", store.name(id));
        }
    }
}
