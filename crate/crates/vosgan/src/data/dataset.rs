//! Dataset layout on disk, split bookkeeping, real-clip ingestion and the
//! label-access counter used to prove self-supervised regimes never touch
//! annotations.
//!
//! A dataset is a root directory holding `manifest.json` plus one directory
//! per clip (`video.vost`, optional `mask.vost` / `flow.vosf`, and a cached
//! `flow_of.vosf` once Farneback flow has been computed).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{
    read_flow_vosf, read_mask_vost, read_video_vost, write_flow_vosf, write_mask_vost,
    write_video_vost, DataError,
};
use super::sprites::{synth_clip, SpriteSceneSpec};
use crate::clips::{FlowClip, MaskClip, VideoClip};
use crate::optflow::{clip_flow, FarnebackParams};
use crate::plane::Plane;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn index(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub name: String,
    pub split: Split,
    pub has_mask: bool,
    pub has_flow: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub clips: Vec<ClipEntry>,
}

impl DatasetManifest {
    pub fn save(&self, root: &Path) -> Result<(), DataError> {
        fs::create_dir_all(root)?;
        let json = serde_json::to_vec_pretty(self)?;
        fs::write(root.join(MANIFEST_FILE), json)?;
        Ok(())
    }

    pub fn load(root: &Path) -> Result<DatasetManifest, DataError> {
        let bytes = fs::read(root.join(MANIFEST_FILE))?;
        let m: DatasetManifest = serde_json::from_slice(&bytes)?;
        if m.version != MANIFEST_VERSION {
            return Err(DataError::BadVersion(m.version, root.display().to_string()));
        }
        Ok(m)
    }

    pub fn names(&self, split: Split) -> Vec<String> {
        self.clips.iter().filter(|c| c.split == split).map(|c| c.name.clone()).collect()
    }

    /// Every clip directory and its declared files must exist.
    pub fn validate_on_disk(&self, root: &Path) -> Result<(), DataError> {
        for c in &self.clips {
            let dir = root.join(&c.name);
            let mut required = vec![dir.join("video.vost")];
            if c.has_mask {
                required.push(dir.join("mask.vost"));
            }
            if c.has_flow {
                required.push(dir.join("flow.vosf"));
            }
            for p in required {
                if !p.is_file() {
                    return Err(DataError::Corrupt(
                        root.display().to_string(),
                        format!("missing {}", p.display()),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Deterministic 70/10/20 train/val/test assignment.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    order.shuffle(&mut rng);
    let n_train = n * 7 / 10;
    let n_val = n / 10;
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

/// Deterministic labeled subset of exactly floor(n * fraction) names.
pub fn labeled_subset(names: &[String], fraction: f64, seed: u64) -> Vec<String> {
    assert!(fraction > 0.0 && fraction <= 1.0);
    let k = ((names.len() as f64) * fraction).floor() as usize;
    let mut order: Vec<usize> = (0..names.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xBEEF);
    order.shuffle(&mut rng);
    let mut picked: Vec<String> = order[..k].iter().map(|&i| names[i].clone()).collect();
    picked.sort();
    picked
}

fn clip_name(i: usize) -> String {
    format!("clip_{i:05}")
}

/// Synthesizes `n_clips` sprite clips under `root` with exact masks and
/// flow; byte-deterministic for a fixed (template, n_clips).
pub fn synth_dataset(
    template: &SpriteSceneSpec,
    n_clips: usize,
    root: &Path,
) -> Result<DatasetManifest, DataError> {
    assert!(n_clips >= 1);
    fs::create_dir_all(root)?;
    let splits = assign_splits(n_clips, template.seed);
    let mut clips = Vec::with_capacity(n_clips);
    for i in 0..n_clips {
        let name = clip_name(i);
        let dir = root.join(&name);
        fs::create_dir_all(&dir)?;
        let (video, mask, flow) = synth_clip(template, i as u64);
        write_video_vost(&dir.join("video.vost"), &video)?;
        write_mask_vost(&dir.join("mask.vost"), &mask)?;
        write_flow_vosf(&dir.join("flow.vosf"), &flow)?;
        clips.push(ClipEntry { name, split: splits[i], has_mask: true, has_flow: true });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: template.seed,
        channels: template.channels,
        height: template.height,
        width: template.width,
        frames: template.frames,
        clips,
    };
    manifest.save(root)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestSpec {
    pub height: usize,
    pub width: usize,
    pub clip_len: usize,
    pub stride: usize,
    pub seed: u64,
}

impl Default for IngestSpec {
    fn default() -> Self {
        IngestSpec { height: 64, width: 64, clip_len: 32, stride: 5, seed: 0 }
    }
}

fn is_frame_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png") | Some("jpg") | Some("jpeg")
    )
}

fn read_frame(path: &Path, h: usize, w: usize) -> Result<[Plane; 3], DataError> {
    let img = image::open(path)
        .map_err(|e| DataError::Corrupt(path.display().to_string(), e.to_string()))?
        .to_rgb8();
    let (iw, ih) = img.dimensions();
    let mut planes = [
        Plane::zeros(ih as usize, iw as usize),
        Plane::zeros(ih as usize, iw as usize),
        Plane::zeros(ih as usize, iw as usize),
    ];
    for y in 0..ih as usize {
        for x in 0..iw as usize {
            let px = img.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                planes[c].set(y, x, px[c] as f32 / 255.0);
            }
        }
    }
    Ok([planes[0].resize(h, w), planes[1].resize(h, w), planes[2].resize(h, w)])
}

/// Sliding-window ingestion of numbered frame directories: each subdirectory
/// of `src` is one video; clips of `clip_len` frames are cut every `stride`
/// frames, resized bilinearly and mapped to [-1,1]. Videos shorter than one
/// clip are skipped and reported in the warning list.
pub fn ingest_clips(
    src: &Path,
    out: &Path,
    spec: &IngestSpec,
) -> Result<(DatasetManifest, Vec<String>), DataError> {
    assert!(spec.clip_len >= 2 && spec.stride >= 1);
    let mut videos: Vec<PathBuf> = fs::read_dir(src)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    videos.sort();
    let mut warnings = Vec::new();
    fs::create_dir_all(out)?;

    struct Pending {
        name: String,
        frames: Vec<[Plane; 3]>,
        start: usize,
    }
    let mut pending: Vec<Pending> = Vec::new();
    for vdir in &videos {
        let mut frames: Vec<PathBuf> = fs::read_dir(vdir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_frame_file(p))
            .collect();
        frames.sort();
        let vname = vdir.file_name().unwrap().to_string_lossy().to_string();
        if frames.len() < spec.clip_len {
            warnings.push(format!(
                "video {vname}: {} frames < clip length {}, skipped",
                frames.len(),
                spec.clip_len
            ));
            continue;
        }
        let decoded: Vec<[Plane; 3]> = frames
            .iter()
            .map(|p| read_frame(p, spec.height, spec.width))
            .collect::<Result<_, _>>()?;
        let mut start = 0;
        while start + spec.clip_len <= decoded.len() {
            let window: Vec<[Plane; 3]> =
                decoded[start..start + spec.clip_len].to_vec();
            pending.push(Pending { name: format!("{vname}_{start:05}"), frames: window, start });
            start += spec.stride;
        }
    }

    let splits = assign_splits(pending.len(), spec.seed);
    let mut clips = Vec::with_capacity(pending.len());
    for (i, p) in pending.iter().enumerate() {
        let mut video = VideoClip::zeros(3, spec.clip_len, spec.height, spec.width);
        for (t, planes) in p.frames.iter().enumerate() {
            for c in 0..3 {
                for y in 0..spec.height {
                    for x in 0..spec.width {
                        let v = planes[c].get(y, x).clamp(0.0, 1.0) * 2.0 - 1.0;
                        video.set(c, t, y, x, v);
                    }
                }
            }
        }
        let dir = out.join(&p.name);
        fs::create_dir_all(&dir)?;
        write_video_vost(&dir.join("video.vost"), &video)?;
        clips.push(ClipEntry {
            name: p.name.clone(),
            split: splits[i],
            has_mask: false,
            has_flow: false,
        });
        let _ = p.start;
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: spec.seed,
        channels: 3,
        height: spec.height,
        width: spec.width,
        frames: spec.clip_len,
        clips,
    };
    manifest.save(out)?;
    Ok((manifest, warnings))
}

/// Read access to a dataset directory. Mask reads are counted per split so
/// self-supervised training runs can prove they never touched annotations.
pub struct ClipStore {
    root: PathBuf,
    pub manifest: DatasetManifest,
    mask_reads: [AtomicUsize; 3],
}

impl ClipStore {
    pub fn open(root: &Path) -> Result<ClipStore, DataError> {
        let manifest = DatasetManifest::load(root)?;
        manifest.validate_on_disk(root)?;
        Ok(ClipStore {
            root: root.to_path_buf(),
            manifest,
            mask_reads: [AtomicUsize::new(0), AtomicUsize::new(0), AtomicUsize::new(0)],
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn names(&self, split: Split) -> Vec<String> {
        self.manifest.names(split)
    }

    pub fn entry(&self, name: &str) -> Option<&ClipEntry> {
        self.manifest.clips.iter().find(|c| c.name == name)
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn load_video(&self, name: &str) -> Result<VideoClip, DataError> {
        read_video_vost(&self.dir(name).join("video.vost"))
    }

    /// Ground-truth annotation read; counted.
    pub fn load_mask(&self, name: &str) -> Result<MaskClip, DataError> {
        let entry = self
            .entry(name)
            .ok_or_else(|| DataError::MissingBlob(format!("clip {name}")))?;
        self.mask_reads[entry.split.index()].fetch_add(1, Ordering::Relaxed);
        read_mask_vost(&self.dir(name).join("mask.vost"))
    }

    pub fn load_flow_gt(&self, name: &str) -> Result<FlowClip, DataError> {
        read_flow_vosf(&self.dir(name).join("flow.vosf"))
    }

    /// Farneback flow for a clip, computed once and cached next to it.
    pub fn computed_flow(&self, name: &str, params: &FarnebackParams) -> Result<FlowClip, DataError> {
        let cache = self.dir(name).join("flow_of.vosf");
        if cache.is_file() {
            return read_flow_vosf(&cache);
        }
        let video = self.load_video(name)?;
        let flow = clip_flow(&video, params)
            .map_err(|e| DataError::Corrupt(cache.display().to_string(), e.to_string()))?;
        write_flow_vosf(&cache, &flow)?;
        Ok(flow)
    }

    pub fn mask_reads(&self, split: Split) -> usize {
        self.mask_reads[split.index()].load(Ordering::Relaxed)
    }

    pub fn reset_mask_reads(&self) {
        for c in &self.mask_reads {
            c.store(0, Ordering::Relaxed);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_template(seed: u64) -> SpriteSceneSpec {
        SpriteSceneSpec { seed, height: 16, width: 16, frames: 4, ..Default::default() }
    }

    #[test]
    fn splits_are_disjoint_deterministic_and_sized() {
        let s1 = assign_splits(20, 9);
        let s2 = assign_splits(20, 9);
        assert_eq!(s1, s2);
        assert_eq!(s1.iter().filter(|&&s| s == Split::Train).count(), 14);
        assert_eq!(s1.iter().filter(|&&s| s == Split::Val).count(), 2);
        assert_eq!(s1.iter().filter(|&&s| s == Split::Test).count(), 4);
        assert_ne!(assign_splits(20, 10), s1);
    }

    #[test]
    fn synth_dataset_round_trips_and_is_reproducible() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let template = tiny_template(4);
        let m1 = synth_dataset(&template, 10, d1.path()).unwrap();
        let _m2 = synth_dataset(&template, 10, d2.path()).unwrap();
        assert_eq!(m1.clips.len(), 10);

        // Identical bytes for every generated file.
        for c in &m1.clips {
            for f in ["video.vost", "mask.vost", "flow.vosf"] {
                let a = fs::read(d1.path().join(&c.name).join(f)).unwrap();
                let b = fs::read(d2.path().join(&c.name).join(f)).unwrap();
                assert_eq!(a, b, "{}/{f}", c.name);
            }
        }

        let store = ClipStore::open(d1.path()).unwrap();
        let name = &m1.clips[0].name;
        let video = store.load_video(name).unwrap();
        assert_eq!(
            (video.channels, video.frames, video.height, video.width),
            (3, 4, 16, 16)
        );
        let (expect_video, expect_mask, expect_flow) = synth_clip(&template, 0);
        assert_eq!(video.data(), expect_video.data());
        assert_eq!(store.load_mask(name).unwrap().data(), expect_mask.data());
        assert_eq!(store.load_flow_gt(name).unwrap().data(), expect_flow.data());
    }

    #[test]
    fn mask_reads_are_counted_per_split() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_dataset(&tiny_template(8), 10, dir.path()).unwrap();
        let store = ClipStore::open(dir.path()).unwrap();
        let train = m.names(Split::Train);
        let test = m.names(Split::Test);
        store.load_mask(&train[0]).unwrap();
        store.load_mask(&train[1]).unwrap();
        store.load_mask(&test[0]).unwrap();
        assert_eq!(store.mask_reads(Split::Train), 2);
        assert_eq!(store.mask_reads(Split::Val), 0);
        assert_eq!(store.mask_reads(Split::Test), 1);
        store.reset_mask_reads();
        assert_eq!(store.mask_reads(Split::Train), 0);
    }

    #[test]
    fn computed_flow_is_cached_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_dataset(&tiny_template(12), 3, dir.path()).unwrap();
        let store = ClipStore::open(dir.path()).unwrap();
        let name = &m.clips[0].name;
        let params = FarnebackParams::default();
        let cache = dir.path().join(name).join("flow_of.vosf");
        assert!(!cache.exists());
        let f1 = store.computed_flow(name, &params).unwrap();
        assert!(cache.is_file());
        let f2 = store.computed_flow(name, &params).unwrap();
        assert_eq!(f1.data(), f2.data());
    }

    #[test]
    fn labeled_subset_is_exact_and_deterministic() {
        let names: Vec<String> = (0..11).map(clip_name).collect();
        let a = labeled_subset(&names, 0.5, 7);
        let b = labeled_subset(&names, 0.5, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        let c = labeled_subset(&names, 1.0, 7);
        assert_eq!(c.len(), 11);
        assert_ne!(labeled_subset(&names, 0.5, 8), a);
    }

    #[test]
    fn ingest_cuts_windows_and_skips_short_videos() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        // Three videos: lengths 12, 15, 7 with clip_len 8 stride 3
        // -> floor((12-8)/3)+1 = 2, floor((15-8)/3)+1 = 3, skipped.
        for (vname, len) in [("a_vid", 12usize), ("b_vid", 15), ("short", 7)] {
            let vdir = src.path().join(vname);
            fs::create_dir_all(&vdir).unwrap();
            for i in 0..len {
                let img = image::RgbImage::from_fn(20, 10, |x, y| {
                    image::Rgb([
                        (x * 12 % 256) as u8,
                        (y * 25 % 256) as u8,
                        (i * 17 % 256) as u8,
                    ])
                });
                img.save(vdir.join(format!("frame_{i:04}.png"))).unwrap();
            }
        }
        let spec = IngestSpec { height: 8, width: 8, clip_len: 8, stride: 3, seed: 1 };
        let (manifest, warnings) = ingest_clips(src.path(), out.path(), &spec).unwrap();
        assert_eq!(manifest.clips.len(), 5);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("short"));

        let store = ClipStore::open(out.path()).unwrap();
        let video = store.load_video(&manifest.clips[0].name).unwrap();
        assert_eq!((video.channels, video.frames, video.height, video.width), (3, 8, 8, 8));
        for &v in video.data() {
            assert!((-1.0..=1.0).contains(&v));
        }
        // No annotations come with ingested clips.
        assert!(!manifest.clips[0].has_mask && !manifest.clips[0].has_flow);
    }

    #[test]
    fn store_open_validates_files_exist() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_dataset(&tiny_template(2), 3, dir.path()).unwrap();
        fs::remove_file(dir.path().join(&m.clips[1].name).join("mask.vost")).unwrap();
        assert!(matches!(ClipStore::open(dir.path()), Err(DataError::Corrupt(..))));
    }
}
