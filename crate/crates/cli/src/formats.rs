//! On-disk formats: skeleton sequences (JSON lines), heatmap grids and
//! volume dumps (little-endian binary), dataset records.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use volmocap::centers::PersonAnchors;
use volmocap::geometry::HeatmapStack;
use volmocap::synth::MoCapClip;
use volmocap::volumes::FeatureVolume;
use volmocap::{Skeleton3D, NUM_JOINTS};

use crate::error::{io_err, schema, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

/// One person in a frame. Joints are `[x, y, z, confidence]` in meters;
/// empty when the person failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonRecord {
    pub id: u32,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub joints: Vec<[f64; 4]>,
}

impl PersonRecord {
    pub fn ok(s: &Skeleton3D) -> Self {
        let joints = s.joints.iter().zip(&s.confidence).map(|(p, c)| [p.x, p.y, p.z, *c]).collect();
        Self { id: s.id, status: Status::Ok, error: None, joints }
    }

    pub fn failed(id: u32, error: impl ToString) -> Self {
        Self { id, status: Status::Failed, error: Some(error.to_string()), joints: Vec::new() }
    }

    pub fn skeleton(&self) -> Option<Skeleton3D> {
        if self.status != Status::Ok || self.joints.len() != NUM_JOINTS {
            return None;
        }
        let mut s = Skeleton3D::new(self.id, std::array::from_fn(|j| Point3::new(self.joints[j][0], self.joints[j][1], self.joints[j][2])));
        s.confidence = std::array::from_fn(|j| self.joints[j][3]);
        Some(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame: u64,
    /// How the anchors of this frame were obtained (`detected` or `tracked`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<String>,
    pub people: Vec<PersonRecord>,
}

impl FrameRecord {
    pub fn skeletons(&self) -> Vec<Skeleton3D> {
        self.people.iter().filter_map(PersonRecord::skeleton).collect()
    }
}

/// Optional first line of a sequence file describing a MoCap clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipMeta {
    pub subject: String,
    pub motion: String,
    pub fps: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaLine {
    meta: ClipMeta,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sequence {
    pub meta: Option<ClipMeta>,
    pub frames: Vec<FrameRecord>,
}

pub fn write_sequence(path: &Path, seq: &Sequence) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut lines = Vec::with_capacity(seq.frames.len() + 1);
    if let Some(meta) = &seq.meta {
        lines.push(serde_json::to_string(&MetaLine { meta: meta.clone() }));
    }
    lines.extend(seq.frames.iter().map(serde_json::to_string));
    for line in lines {
        let line = line.map_err(|e| schema(path, e.to_string()))?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_sequence(path: &Path) -> Result<Sequence> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut seq = Sequence::default();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |e: serde_json::Error| schema(path, format!("line {}: {e}", n + 1));
        if n == 0 && line.trim_start().starts_with("{\"meta\"") {
            seq.meta = Some(serde_json::from_str::<MetaLine>(&line).map_err(at)?.meta);
            continue;
        }
        let frame: FrameRecord = serde_json::from_str(&line).map_err(at)?;
        if let Some(p) = frame.people.iter().find(|p| p.status == Status::Ok && p.joints.len() != NUM_JOINTS) {
            return Err(schema(path, format!("line {}: person {} has {} joints, expected {NUM_JOINTS}", n + 1, p.id, p.joints.len())));
        }
        seq.frames.push(frame);
    }
    Ok(seq)
}

pub fn clip_to_sequence(clip: &MoCapClip) -> Sequence {
    Sequence {
        meta: Some(ClipMeta { subject: clip.subject.clone(), motion: clip.motion.clone(), fps: clip.fps }),
        frames: clip.frames.iter().enumerate().map(|(k, s)| FrameRecord { frame: k as u64, anchors: None, people: vec![PersonRecord::ok(s)] }).collect(),
    }
}

/// Every `*.jsonl` clip in `dir`, in file-name order. Each frame holds one person.
pub fn read_mocap_dir(dir: &Path) -> Result<Vec<MoCapClip>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|path| {
            let seq = read_sequence(path)?;
            let meta = seq.meta.ok_or_else(|| schema(path, "line 1: clip files start with a {\"meta\": ...} record"))?;
            let frames = seq
                .frames
                .iter()
                .map(|f| match f.skeletons().as_slice() {
                    [s] => Ok(s.clone()),
                    _ => Err(schema(path, format!("frame {}: clip frames hold exactly one person", f.frame))),
                })
                .collect::<Result<Vec<_>>>()?;
            let clip = MoCapClip { subject: meta.subject, motion: meta.motion, fps: meta.fps, frames };
            clip.validate().map_err(|e| schema(path, e.to_string()))?;
            Ok(clip)
        })
        .collect()
}

const HEATMAP_MAGIC: &[u8; 4] = b"MVHM";
const VOLUME_MAGIC: &[u8; 4] = b"MVVL";
const BINARY_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(buf: &mut Vec<u8>, data: impl IntoIterator<Item = f32>) {
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// `MVHM`, version, view count; per view: view id, J, height, width, then
/// `J x height x width` floats.
pub fn write_heatmaps(path: &Path, stack: &HeatmapStack) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + stack.num_views() * (16 + 4 * stack.joints() * stack.width() * stack.height()));
    buf.extend_from_slice(HEATMAP_MAGIC);
    put_u32(&mut buf, BINARY_VERSION);
    put_u32(&mut buf, stack.num_views() as u32);
    for v in 0..stack.num_views() {
        for x in [v, stack.joints(), stack.height(), stack.width()] {
            put_u32(&mut buf, x as u32);
        }
        put_f32s(&mut buf, stack.view(v).iter().copied());
    }
    fs::write(path, buf).map_err(io_err(path))
}

struct Cursor<'a> {
    data: &'a [u8],
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.data.len() < n {
            return Err(schema(self.path, "truncated file"));
        }
        let (head, rest) = self.data.split_at(n);
        self.data = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(schema(self.path, "bad magic"));
        }
        let version = self.u32()?;
        if version != BINARY_VERSION {
            return Err(schema(self.path, format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.data.is_empty() {
            Ok(())
        } else {
            Err(schema(self.path, format!("{} trailing bytes", self.data.len())))
        }
    }
}

pub fn read_heatmaps(path: &Path) -> Result<HeatmapStack> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut c = Cursor { data: &bytes, path };
    c.header(HEATMAP_MAGIC)?;
    let views = c.u32()? as usize;
    let mut data = Vec::with_capacity(views);
    let mut shape = None;
    for v in 0..views {
        let (id, j, h, w) = (c.u32()? as usize, c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
        if id != v {
            return Err(schema(path, format!("view {v}: stored view id {id}")));
        }
        if shape.is_some_and(|s| s != (j, h, w)) {
            return Err(schema(path, format!("view {v}: grid shape differs from view 0")));
        }
        shape = Some((j, h, w));
        data.push(c.f32s(j * h * w)?);
    }
    c.finish()?;
    let (j, h, w) = shape.unwrap_or((NUM_JOINTS, 0, 0));
    Ok(HeatmapStack::from_views(j, w, h, data)?)
}

/// `MVVL`, version, channels, W, H, D, kind code, person id, then the values
/// voxel-major with channels innermost (voxel index `(x * H + y) * D + z`).
pub fn write_volume<T: volmocap::scalar::Scalar>(w: &mut impl Write, vol: &FeatureVolume<T>) -> std::io::Result<()> {
    let r = vol.resolution() as u32;
    let mut buf = Vec::new();
    buf.extend_from_slice(VOLUME_MAGIC);
    for x in [BINARY_VERSION, vol.channels() as u32, r, r, r, vol.kind.code(), vol.person] {
        put_u32(&mut buf, x);
    }
    put_f32s(&mut buf, vol.values.data().iter().map(|v| v.to_f64_lossy() as f32));
    w.write_all(&buf)
}

/// Header and values of a volume dump.
pub fn read_volume(path: &Path) -> Result<(volmocap::volumes::VolumeKind, u32, volmocap::posenet::tensor::VoxelTensor<f32>)> {
    let mut bytes = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(io_err(path))?;
    let mut c = Cursor { data: &bytes, path };
    c.header(VOLUME_MAGIC)?;
    let (ch, w, h, d, kind, person) = (c.u32()?, c.u32()?, c.u32()?, c.u32()?, c.u32()?, c.u32()?);
    if w != h || h != d {
        return Err(schema(path, "volume is not cubic"));
    }
    let kind = volmocap::volumes::VolumeKind::from_code(kind).ok_or_else(|| schema(path, format!("unknown volume kind {kind}")))?;
    let side = w as usize;
    let values = c.f32s(side * side * side * ch as usize)?;
    c.finish()?;
    Ok((kind, person, volmocap::posenet::tensor::VoxelTensor::from_vec(side, ch as usize, values)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorRecord {
    pub id: u32,
    pub pelvis: [f64; 3],
    pub neck: [f64; 3],
}

impl AnchorRecord {
    pub fn from_anchors(a: &PersonAnchors) -> Self {
        Self { id: a.id, pelvis: a.pelvis.coords.into(), neck: a.neck.coords.into() }
    }

    pub fn anchors(&self) -> PersonAnchors {
        PersonAnchors::new(self.id, Point3::from(self.pelvis), Point3::from(self.neck))
    }
}

/// Ground truth of one dataset sample, next to its heatmap file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub index: u64,
    pub heatmaps: String,
    pub people: Vec<PersonRecord>,
    pub anchors: Vec<AnchorRecord>,
    pub dropped_views: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    /// Copy of the rig, relative to the dataset directory.
    pub rig: String,
    pub people: usize,
    pub count: usize,
    pub seed: u64,
    pub sequence: bool,
    pub min_move: f64,
    pub pool_size: usize,
    pub augment: volmocap::synth::AugmentConfig,
}

pub const MANIFEST: &str = "manifest.toml";
pub const GROUND_TRUTH: &str = "ground_truth.jsonl";

pub fn sample_stem(index: u64) -> String {
    format!("samples/{index:06}")
}

pub fn read_sample(dir: &Path, index: u64) -> Result<(SampleRecord, HeatmapStack)> {
    let json = dir.join(format!("{}.json", sample_stem(index)));
    let text = fs::read_to_string(&json).map_err(io_err(&json))?;
    let rec: SampleRecord = serde_json::from_str(&text).map_err(|e| schema(&json, e.to_string()))?;
    let hm = read_heatmaps(&dir.join(&rec.heatmaps))?;
    Ok((rec, hm))
}

pub fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(path.to_path_buf()))
    }
}
