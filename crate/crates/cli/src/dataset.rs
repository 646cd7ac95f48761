//! On-disk dataset container: a text manifest plus one binary record file
//! and one episode log per episode.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use cogfuse_model::{Features, FusionConfig, Sample};
use cogfuse_sim::bev::{BevGrid, Image, BINS, GRID};
use cogfuse_sim::episode::Frame;

use crate::error::{CliError, Result};

pub const RECORD_MAGIC: &[u8; 4] = b"CTFR";
pub const RECORD_VERSION: u16 = 1;
pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest";
pub const SCHEMA: &str = "front=u8x256x256x3 bev=u16x256x256x2 semantics=u8x256x256 tl=u8 goal=f32x2 position=f32x3 velocity=f32 waypoints=f32x8";

const FRONT_BYTES: usize = GRID * GRID * 3;
const BEV_BYTES: usize = GRID * GRID * BINS * 2;
const SEM_BYTES: usize = GRID * GRID;

/// Bytes per record for the current version.
pub const RECORD_LEN: usize = 4 + 2 + FRONT_BYTES + BEV_BYTES + SEM_BYTES + 1 + 4 * (2 + 3 + 1 + 8);

/// One recorded frame. BEV counts are stored cell-interleaved (`row, col,
/// bin`); the position is `(x, y, heading)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub front: Image,
    pub bev: BevGrid,
    pub semantics: Image,
    pub tl_state: u8,
    pub goal: [f32; 2],
    pub position: [f32; 3],
    pub velocity: f32,
    pub waypoints: [f32; 8],
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        s
    }

    fn f32s<const N: usize>(&mut self) -> [f32; N] {
        std::array::from_fn(|_| f32::from_le_bytes(self.take(4).try_into().unwrap()))
    }
}

impl FrameRecord {
    pub fn from_frame(frame: &Frame) -> Self {
        let o = &frame.obs;
        let mut waypoints = [0.0f32; 8];
        for (i, w) in frame.waypoints.iter().enumerate() {
            waypoints[2 * i] = w.x as f32;
            waypoints[2 * i + 1] = w.y as f32;
        }
        Self {
            front: o.front.clone(),
            bev: o.bev.clone(),
            semantics: o.semantics.clone(),
            tl_state: o.tl_state as u8,
            goal: [o.goal.x as f32, o.goal.y as f32],
            position: [o.pose.pos.x as f32, o.pose.pos.y as f32, o.pose.heading as f32],
            velocity: o.speed as f32,
            waypoints,
        }
    }

    fn check_shapes(&self) -> std::result::Result<(), String> {
        let want = |img: &Image, c: usize| img.width == GRID && img.height == GRID && img.channels == c;
        if !want(&self.front, 3) || !want(&self.semantics, 1) {
            return Err(format!("images must be {GRID}×{GRID}"));
        }
        if self.bev.counts.len() != BINS * GRID * GRID {
            return Err("BEV grid has the wrong size".into());
        }
        Ok(())
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        self.check_shapes().expect("simulator frames have fixed shapes");
        out.reserve(RECORD_LEN);
        out.extend_from_slice(RECORD_MAGIC);
        out.extend_from_slice(&RECORD_VERSION.to_le_bytes());
        out.extend_from_slice(&self.front.data);
        for row in 0..GRID {
            for col in 0..GRID {
                for bin in 0..BINS {
                    out.extend_from_slice(&self.bev.counts[BevGrid::index(bin, row, col)].to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&self.semantics.data);
        out.push(self.tl_state);
        for v in self.goal.iter().chain(&self.position).chain([&self.velocity]).chain(&self.waypoints) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(RECORD_LEN);
        self.encode(&mut v);
        v
    }

    pub fn from_bytes(buf: &[u8]) -> std::result::Result<Self, String> {
        if buf.len() < 6 || &buf[..4] != RECORD_MAGIC {
            return Err("record does not start with the CTFR magic".into());
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != RECORD_VERSION {
            return Err(format!("unsupported record version {version}"));
        }
        if buf.len() != RECORD_LEN {
            return Err(format!("record is {} bytes, expected {RECORD_LEN}", buf.len()));
        }
        let mut c = Cursor { buf, at: 6 };
        let front = Image {
            width: GRID,
            height: GRID,
            channels: 3,
            data: c.take(FRONT_BYTES).to_vec(),
        };
        let mut bev = BevGrid::new();
        let raw = c.take(BEV_BYTES);
        for (cell, pair) in raw.chunks_exact(2 * BINS).enumerate() {
            let (row, col) = (cell / GRID, cell % GRID);
            for bin in 0..BINS {
                bev.counts[BevGrid::index(bin, row, col)] = u16::from_le_bytes([pair[2 * bin], pair[2 * bin + 1]]);
            }
        }
        let semantics = Image {
            width: GRID,
            height: GRID,
            channels: 1,
            data: c.take(SEM_BYTES).to_vec(),
        };
        let tl_state = c.take(1)[0];
        if tl_state > 1 {
            return Err(format!("traffic-light state {tl_state} is not 0 or 1"));
        }
        Ok(Self {
            front,
            bev,
            semantics,
            tl_state,
            goal: c.f32s(),
            position: c.f32s(),
            velocity: c.f32s::<1>()[0],
            waypoints: c.f32s(),
        })
    }

    pub fn features(&self, cfg: &FusionConfig) -> cogfuse_model::Result<Features> {
        Features::from_sensors(&self.front, &self.bev, &self.semantics, self.goal, self.velocity, cfg)
    }

    pub fn to_sample(&self, cfg: &FusionConfig) -> cogfuse_model::Result<Sample> {
        let w = &self.waypoints;
        let wp = [[w[0], w[1]], [w[2], w[3]], [w[4], w[5]], [w[6], w[7]]];
        Sample::new(self.features(cfg)?, self.tl_state, &self.semantics, wp, cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeEntry {
    pub name: String,
    pub route_seed: u64,
    pub frames: usize,
}

impl EpisodeEntry {
    pub fn records(&self) -> String {
        format!("{}.ctfr", self.name)
    }

    pub fn log(&self) -> String {
        format!("{}.log", self.name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub config_hash: String,
    pub episodes: Vec<EpisodeEntry>,
}

impl Manifest {
    pub fn frames(&self) -> usize {
        self.episodes.iter().map(|e| e.frames).sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "dataset_version {DATASET_VERSION}").unwrap();
        writeln!(s, "record_version {RECORD_VERSION}").unwrap();
        writeln!(s, "record_bytes {RECORD_LEN}").unwrap();
        writeln!(s, "schema {SCHEMA}").unwrap();
        writeln!(s, "seed {}", self.seed).unwrap();
        writeln!(s, "config_hash {}", self.config_hash).unwrap();
        writeln!(s, "frames {}", self.frames()).unwrap();
        for e in &self.episodes {
            writeln!(s, "episode {} {} {}", e.name, e.route_seed, e.frames).unwrap();
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, msg: String| CliError::data(path, format!("line {}: {msg}", line + 1));
        let mut m = Manifest {
            seed: 0,
            config_hash: String::new(),
            episodes: Vec::new(),
        };
        let mut total = None;
        let expect = [
            ("dataset_version", DATASET_VERSION.to_string()),
            ("record_version", RECORD_VERSION.to_string()),
            ("record_bytes", RECORD_LEN.to_string()),
            ("schema", SCHEMA.to_string()),
        ];
        let mut seen = [false; 4];
        for (i, line) in text.lines().enumerate() {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            let num = |v: &str| v.parse::<u64>().map_err(|_| bad(i, format!("`{v}` is not a number")));
            if let Some(k) = expect.iter().position(|(name, _)| *name == key) {
                if rest != expect[k].1 {
                    return Err(bad(i, format!("{key} is `{rest}`, this build reads `{}`", expect[k].1)));
                }
                seen[k] = true;
                continue;
            }
            match key {
                "seed" => m.seed = num(rest)?,
                "config_hash" => m.config_hash = rest.to_string(),
                "frames" => total = Some(num(rest)? as usize),
                "episode" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    if f.len() != 3 || f[0].is_empty() || f[0].contains(['/', '\\']) {
                        return Err(bad(i, "expected `episode NAME ROUTE_SEED FRAMES`".into()));
                    }
                    m.episodes.push(EpisodeEntry {
                        name: f[0].to_string(),
                        route_seed: num(f[1])?,
                        frames: num(f[2])? as usize,
                    });
                }
                "" => {}
                other => return Err(bad(i, format!("unknown manifest key `{other}`"))),
            }
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(CliError::data(path, format!("missing `{}` line", expect[k].0)));
        }
        if total != Some(m.frames()) {
            return Err(CliError::data(
                path,
                format!("frame total {total:?} does not match the episode list ({})", m.frames()),
            ));
        }
        Ok(m)
    }
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST)
}

/// Reads the manifest and checks every record file's length against it.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = manifest_path(dir);
    let text = std::fs::read_to_string(&path).map_err(CliError::io(&path))?;
    let m = Manifest::from_text(&text, &path)?;
    for e in &m.episodes {
        let file = dir.join(e.records());
        let len = std::fs::metadata(&file).map_err(CliError::io(&file))?.len();
        let want = (e.frames * RECORD_LEN) as u64;
        if len != want {
            return Err(CliError::data(
                &file,
                format!("{len} bytes, but the manifest lists {} frames ({want} bytes)", e.frames),
            ));
        }
    }
    Ok(m)
}

/// Streams the records of one file, calling `f` on each.
pub fn for_each_record(file: &Path, mut f: impl FnMut(usize, FrameRecord) -> Result<()>) -> Result<usize> {
    let handle = File::open(file).map_err(CliError::io(file))?;
    let len = handle.metadata().map_err(CliError::io(file))?.len() as usize;
    if len % RECORD_LEN != 0 {
        return Err(CliError::data(file, format!("{len} bytes is not a whole number of {RECORD_LEN}-byte records")));
    }
    let mut r = BufReader::new(handle);
    let mut buf = vec![0u8; RECORD_LEN];
    let n = len / RECORD_LEN;
    for i in 0..n {
        r.read_exact(&mut buf).map_err(CliError::io(file))?;
        let rec = FrameRecord::from_bytes(&buf).map_err(|m| CliError::data(file, format!("record {i}: {m}")))?;
        f(i, rec)?;
    }
    Ok(n)
}

pub fn read_records(file: &Path) -> Result<Vec<FrameRecord>> {
    let mut out = Vec::new();
    for_each_record(file, |_, r| {
        out.push(r);
        Ok(())
    })?;
    Ok(out)
}

/// Converts every frame of the container into a training sample.
pub fn load_samples(dir: &Path, manifest: &Manifest, cfg: &FusionConfig) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(manifest.frames());
    for e in &manifest.episodes {
        let file = dir.join(e.records());
        for_each_record(&file, |i, rec| {
            let s = rec
                .to_sample(cfg)
                .map_err(|err| CliError::data(&file, format!("record {i}: {err}")))?;
            out.push(s);
            Ok(())
        })?;
    }
    Ok(out)
}
