//! Dataset files: a JSON annotation document plus a binary frame sidecar.
//!
//! Class and key-actor indices are 1-based on disk. The sidecar sits next to
//! the annotation file with the extension `frames`:
//!
//! ```text
//! magic "CRMFRAME" | version u32 | dtype u8 (0 = u8) | K u32 | H u32 | W u32
//! | modality count u32 | channels u32 per modality | scene count u64
//! | byte offset u64 per scene (relative to the payload) | payload
//! ```
//!
//! All integers are little-endian.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, SceneFrames, SyntheticConfig, MODALITY_CHANNELS};
use crate::activity::{BBox, Person, Scene};
use crate::error::{Error, Result};

pub const FRAMES_MAGIC: &[u8; 8] = b"CRMFRAME";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiskDataset {
    version: u32,
    config: SyntheticConfig,
    scenes: Vec<DiskScene>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiskScene {
    id: usize,
    group: usize,
    persons: Vec<DiskPerson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    key_actor: Option<usize>,
    /// 1-based record in the frame sidecar.
    #[serde(default)]
    frames_ref: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiskPerson {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    action: usize,
}

pub fn frames_path(annotations: &Path) -> PathBuf {
    annotations.with_extension("frames")
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let has_frames = dataset.frames.is_some();
    let disk = DiskDataset {
        version: FORMAT_VERSION,
        config: dataset.config.clone(),
        scenes: dataset
            .scenes
            .iter()
            .enumerate()
            .map(|(i, s)| DiskScene {
                id: s.id,
                group: s.group + 1,
                persons: s
                    .persons
                    .iter()
                    .map(|p| DiskPerson {
                        bbox: [p.bbox.x1, p.bbox.y1, p.bbox.x2, p.bbox.y2],
                        action: p.action + 1,
                    })
                    .collect(),
                key_actor: s.key_actor.map(|k| k + 1),
                frames_ref: has_frames.then_some(i + 1),
            })
            .collect(),
    };
    let mut json = serde_json::to_vec_pretty(&disk).expect("plain data serializes");
    json.push(b'\n');
    std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
    if let Some(frames) = &dataset.frames {
        let fp = frames_path(path);
        std::fs::write(&fp, encode_frames(&dataset.config, frames)).map_err(|e| Error::io(&fp, e))?;
    }
    Ok(())
}

/// Parses an annotation document without touching any sidecar.
pub fn parse_annotations(text: &str, path: &Path) -> Result<Dataset> {
    let disk: DiskDataset = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        location: format!("line {}, column {}", e.line(), e.column()),
        reason: e.to_string(),
    })?;
    let bad = |i: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        location: format!("scenes[{i}]"),
        reason,
    };
    if disk.version != FORMAT_VERSION {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            location: "version".into(),
            reason: format!("unsupported version {}", disk.version),
        });
    }
    disk.config.validate()?;
    let one_based = |i: usize, what: &str, v: usize| -> Result<usize> {
        v.checked_sub(1)
            .ok_or_else(|| bad(i, format!("{what} is 0 but indices are 1-based")))
    };
    let mut scenes = Vec::with_capacity(disk.scenes.len());
    for (i, s) in disk.scenes.iter().enumerate() {
        let persons = s
            .persons
            .iter()
            .map(|p| {
                Ok(Person {
                    bbox: BBox::new(p.bbox[0], p.bbox[1], p.bbox[2], p.bbox[3]),
                    action: one_based(i, "action", p.action)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let key_actor = s.key_actor.map(|k| one_based(i, "key_actor", k)).transpose()?;
        if let Some(r) = s.frames_ref {
            if r != i + 1 {
                return Err(bad(i, format!("frames_ref {r} does not match position {}", i + 1)));
            }
        }
        let scene = Scene {
            id: s.id,
            persons,
            group: one_based(i, "group", s.group)?,
            key_actor,
        };
        let c = &disk.config;
        scene
            .validate(c.labels(), c.image_height, c.image_width)
            .map_err(|e| bad(i, e.to_string()))?;
        scenes.push(scene);
    }
    Ok(Dataset {
        config: disk.config,
        scenes,
        frames: None,
    })
}

/// Loads annotations and, when the scenes reference frames, the sidecar.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ds = parse_annotations(&text, path)?;
    let json: serde_json::Value = serde_json::from_str(&text).expect("parsed above");
    let wants_frames = json["scenes"]
        .as_array()
        .is_some_and(|s| s.iter().any(|s| !s["frames_ref"].is_null()));
    if wants_frames {
        let fp = frames_path(path);
        let bytes = std::fs::read(&fp).map_err(|e| Error::io(&fp, e))?;
        let frames = decode_frames(&bytes, &ds.config, &fp)?;
        if frames.len() != ds.scenes.len() {
            return Err(Error::Parse {
                path: fp,
                location: "scene count".into(),
                reason: format!("{} clips for {} scenes", frames.len(), ds.scenes.len()),
            });
        }
        ds.frames = Some(frames);
    }
    Ok(ds)
}

fn encode_frames(config: &SyntheticConfig, frames: &[SceneFrames]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(FRAMES_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(0);
    for v in [config.frames, config.image_height, config.image_width, config.modalities] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &c in &MODALITY_CHANNELS[..config.modalities] {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    out.extend_from_slice(&(frames.len() as u64).to_le_bytes());
    let mut offset = 0u64;
    for f in frames {
        out.extend_from_slice(&offset.to_le_bytes());
        offset += f.modalities.iter().map(|m| m.len() as u64).sum::<u64>();
    }
    for f in frames {
        for m in &f.modalities {
            out.extend_from_slice(m);
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            location: format!("byte {}", self.pos),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(format!("unexpected end of file, wanted {n} more bytes"))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn decode_frames(bytes: &[u8], config: &SyntheticConfig, path: &Path) -> Result<Vec<SceneFrames>> {
    let mut c = Cursor { bytes, pos: 0, path };
    if c.take(8)? != FRAMES_MAGIC {
        return Err(c.fail("not a frame sidecar (bad magic)"));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(c.fail(format!("unsupported version {version}")));
    }
    let dtype = c.take(1)?[0];
    if dtype != 0 {
        return Err(c.fail(format!("unknown dtype code {dtype}")));
    }
    let dims = [c.u32()?, c.u32()?, c.u32()?, c.u32()?].map(|v| v as usize);
    let want = [config.frames, config.image_height, config.image_width, config.modalities];
    if dims != want {
        return Err(c.fail(format!("dimensions {dims:?} disagree with annotations {want:?}")));
    }
    let mut sizes = Vec::with_capacity(dims[3]);
    for &expect in &MODALITY_CHANNELS[..dims[3]] {
        let ch = c.u32()? as usize;
        if ch != expect {
            return Err(c.fail(format!("modality has {ch} channels, expected {expect}")));
        }
        sizes.push(dims[0] * dims[1] * dims[2] * ch);
    }
    let count = c.u64()? as usize;
    let record: usize = sizes.iter().sum();
    let mut offsets = Vec::with_capacity(count.min(bytes.len() / 8));
    for _ in 0..count {
        offsets.push(c.u64()? as usize);
    }
    let mut out = Vec::with_capacity(offsets.len());
    for (i, &off) in offsets.iter().enumerate() {
        if off != i * record {
            return Err(c.fail(format!("scene {i} offset {off}, expected {}", i * record)));
        }
        let mut modalities = Vec::with_capacity(sizes.len());
        for &s in &sizes {
            modalities.push(c.take(s)?.to_vec());
        }
        out.push(SceneFrames { modalities });
    }
    if c.pos != bytes.len() {
        return Err(c.fail("trailing bytes after the last scene"));
    }
    Ok(out)
}
