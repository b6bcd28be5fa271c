//! Toy dataset generation and the on-disk manifest.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! manifest.txt
//! 0000/source.upic   0000/view_{i}.upic   0000/points_{i}.upic
//! 0000/rig.txt       0000/frame.txt
//! ```
//!
//! Prediction directories use the same per-example names, so a dataset can be
//! evaluated against itself.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unpic_core::camera::{make_rig, sample_source_pose, wrap_angle, CameraPose, PoseRanges, RigSpec};
use unpic_core::crocs::{crocs_from_nocs, nocs_frame, CrocsFrame};
use unpic_core::formats::{float_image_dims, read_float_image, write_float_image};
use unpic_core::mesh::{generate, AssetKind, AssetSpec, CUP_HANDLE_AZIMUTH};
use unpic_core::raster::{render_nocs, render_shaded};
use unpic_core::tiling::{self, SuperImage};
use unpic_core::{Image, Pointmap};
use unpic_diffusion::{Role, TrainExample};

use crate::config::KeyValues;
use crate::error::{file_err, CliError, Result};

pub const MANIFEST_NAME: &str = "manifest.txt";
pub const MANIFEST_HEADER: &str = "unpic-manifest 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssetMix {
    /// Boxes, cylinders, spheres, both cup variants and two-part composites.
    Mix,
    /// Cups with and without a handle, equally often.
    Cups,
}

impl FromStr for AssetMix {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mix" => Ok(AssetMix::Mix),
            "cups" => Ok(AssetMix::Cups),
            _ => Err(format!("expected mix or cups, got {s:?}")),
        }
    }
}

impl AssetMix {
    pub fn name(self) -> &'static str {
        match self {
            AssetMix::Mix => "mix",
            AssetMix::Cups => "cups",
        }
    }
}

/// Which frame the stored pointmaps use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFrameMode {
    Crocs,
    /// Static object frame, independent of the source camera.
    Nocs,
}

impl FromStr for PointFrameMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "crocs" => Ok(PointFrameMode::Crocs),
            "nocs" => Ok(PointFrameMode::Nocs),
            _ => Err(format!("expected crocs or nocs, got {s:?}")),
        }
    }
}

impl PointFrameMode {
    pub fn name(self) -> &'static str {
        match self {
            PointFrameMode::Crocs => "crocs",
            PointFrameMode::Nocs => "nocs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Azimuth {
    Uniform,
    /// Behind the cup body as seen from the handle side, jittered by up to the given angle.
    HandleHidden(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub n: usize,
    pub seed: u64,
    pub size: usize,
    pub k: usize,
    pub assets: AssetMix,
    pub mode: PointFrameMode,
    pub azimuth: Azimuth,
    pub ranges: PoseRanges,
}

pub const DEFAULT_TILE: usize = 24;
pub const DEFAULT_HIDDEN_JITTER: f64 = 0.3;

impl DatasetConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            size: DEFAULT_TILE,
            k: 8,
            assets: AssetMix::Mix,
            mode: PointFrameMode::Crocs,
            azimuth: Azimuth::Uniform,
            ranges: PoseRanges::default(),
        }
    }

    pub fn from_kv(mut kv: KeyValues) -> Result<Self> {
        let d = PoseRanges::default();
        let n = kv.require("n")?;
        let mut cfg = Self::new(n, kv.take_or("seed", 0)?);
        cfg.size = kv.take_or("size", cfg.size)?;
        cfg.k = kv.take_or("k", cfg.k)?;
        cfg.assets = kv.take_or("assets", cfg.assets)?;
        cfg.mode = kv.take_or("mode", cfg.mode)?;
        let az: String = kv.take_or("azimuth", "uniform".to_string())?;
        let jitter = kv.take_or("hidden_jitter", DEFAULT_HIDDEN_JITTER)?;
        cfg.azimuth = match az.as_str() {
            "uniform" => Azimuth::Uniform,
            "handle_hidden" => Azimuth::HandleHidden(jitter),
            other => return Err(CliError::Usage(format!("azimuth must be uniform or handle_hidden, got {other:?}"))),
        };
        cfg.ranges = PoseRanges {
            phi_min: kv.take_or("phi_min", d.phi_min)?,
            phi_max: kv.take_or("phi_max", d.phi_max)?,
            r_min: kv.take_or("r_min", d.r_min)?,
            r_max: kv.take_or("r_max", d.r_max)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        tiling::grid_for(self.k)?;
        self.ranges.validate()?;
        if self.size == 0 {
            return Err(CliError::Usage("size must be positive".into()));
        }
        Ok(())
    }
}

/// Per-example seed derived from the dataset seed (splitmix64).
pub fn example_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn primitive(rng: &mut ChaCha8Rng, seed: u64, scale: f64) -> AssetSpec {
    let kind = match rng.random_range(0..3) {
        0 => AssetKind::Cuboid { size: [0; 3].map(|_| scale * rng.random_range(0.3..1.0)) },
        1 => AssetKind::Cylinder { radius: scale * rng.random_range(0.2..0.5), height: scale * rng.random_range(0.3..1.0) },
        _ => AssetKind::Sphere { radius: scale * rng.random_range(0.25..0.5) },
    };
    AssetSpec::new(kind, seed)
}

fn extent(spec: &AssetSpec, axis: usize) -> f64 {
    match &spec.kind {
        AssetKind::Cuboid { size } => size[axis],
        AssetKind::Cylinder { radius, height } => {
            if axis == 2 {
                *height
            } else {
                2.0 * radius
            }
        }
        AssetKind::Sphere { radius } => 2.0 * radius,
        _ => 0.0,
    }
}

/// Deterministic random asset for a seed.
pub fn toy_asset(mix: AssetMix, seed: u64) -> AssetSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cup = |rng: &mut ChaCha8Rng, handle: bool| {
        let (radius, height) = (rng.random_range(0.3..0.45), rng.random_range(0.5..0.9));
        let kind = if handle { AssetKind::Cup { radius, height } } else { AssetKind::CupNoHandle { radius, height } };
        AssetSpec::new(kind, seed)
    };
    match mix {
        AssetMix::Cups => {
            let handle = rng.random_bool(0.5);
            cup(&mut rng, handle)
        }
        AssetMix::Mix => match rng.random_range(0..6) {
            0..=2 => primitive(&mut rng, seed, 1.0),
            3 => cup(&mut rng, true),
            4 => cup(&mut rng, false),
            _ => {
                let a = primitive(&mut rng, seed ^ 1, 0.6);
                let b = primitive(&mut rng, seed ^ 2, 0.6);
                let axis = if rng.random_bool(0.5) { 0 } else { 2 };
                let gap = 0.02;
                let half = (extent(&a, axis) + extent(&b, axis) + gap) / 2.0;
                let mut oa = [0.0; 3];
                let mut ob = [0.0; 3];
                oa[axis] = -half + extent(&a, axis) / 2.0;
                ob[axis] = half - extent(&b, axis) / 2.0;
                AssetSpec::new(AssetKind::Composite { children: vec![(a, oa), (b, ob)] }, seed)
            }
        },
    }
}

pub fn asset_kind_name(spec: &AssetSpec) -> &'static str {
    match spec.kind {
        AssetKind::Cuboid { .. } => "cuboid",
        AssetKind::Cylinder { .. } => "cylinder",
        AssetKind::Sphere { .. } => "sphere",
        AssetKind::Cup { .. } => "cup",
        AssetKind::CupNoHandle { .. } => "cup_no_handle",
        AssetKind::Composite { .. } => "composite",
    }
}

/// One rendered example, in memory.
#[derive(Debug, Clone)]
pub struct Example {
    pub asset: AssetSpec,
    pub seed: u64,
    pub rig: RigSpec,
    pub source: Image,
    pub targets: Vec<Image>,
    pub pointmaps: Vec<Pointmap>,
    pub frame: CrocsFrame,
}

pub fn source_pose(cfg: &DatasetConfig, seed: u64) -> Result<CameraPose> {
    let pose = sample_source_pose(seed, &cfg.ranges)?;
    Ok(match cfg.azimuth {
        Azimuth::Uniform => pose,
        Azimuth::HandleHidden(jitter) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let theta = CUP_HANDLE_AZIMUTH + PI + rng.random_range(-jitter..=jitter);
            CameraPose::with_fov(wrap_angle(theta), pose.phi, pose.radius, pose.fov_y)?
        }
    })
}

/// Renders an asset from a rig: shaded views, and pointmaps in the requested frame.
pub fn render_example(asset: AssetSpec, seed: u64, rig: RigSpec, size: usize, mode: PointFrameMode) -> Result<Example> {
    let mesh = generate(&asset)?;
    let targets: Vec<Image> = rig.targets.iter().map(|p| render_shaded(&mesh, p, size)).collect();
    let base = nocs_frame(&mesh)?;
    let nocs: Vec<Pointmap> = rig.targets.iter().map(|p| render_nocs(&mesh, p, &base, size)).collect();
    let (frame, crocs) = crocs_from_nocs(&nocs, base, rig.source.theta)?;
    let pointmaps = match mode {
        PointFrameMode::Crocs => crocs,
        PointFrameMode::Nocs => nocs,
    };
    Ok(Example {
        asset,
        seed,
        source: targets[0].clone(),
        rig,
        targets,
        pointmaps,
        frame,
    })
}

pub fn make_example(cfg: &DatasetConfig, index: usize) -> Result<Example> {
    let seed = example_seed(cfg.seed, index);
    let asset = toy_asset(cfg.assets, seed);
    let rig = make_rig(source_pose(cfg, seed)?, cfg.k)?;
    render_example(asset, seed, rig, cfg.size, cfg.mode)
}

pub fn example_id(index: usize) -> String {
    format!("{index:04}")
}

pub fn view_name(i: usize) -> String {
    format!("view_{i}.upic")
}

pub fn points_name(i: usize) -> String {
    format!("points_{i}.upic")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub asset: String,
    pub kind: String,
    pub seed: u64,
    pub rig: PathBuf,
    pub frame: PathBuf,
    pub source: PathBuf,
    pub targets: Vec<PathBuf>,
    pub pointmaps: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory the relative paths resolve against.
    pub root: PathBuf,
    pub k: usize,
    pub size: usize,
    pub mode: PointFrameMode,
    pub assets: AssetMix,
    pub examples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MANIFEST_HEADER}");
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "size = {}", self.size);
        let _ = writeln!(s, "mode = {}", self.mode.name());
        let _ = writeln!(s, "assets = {}", self.assets.name());
        let _ = writeln!(s, "count = {}", self.examples.len());
        let join = |v: &[PathBuf]| v.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(" ");
        for e in &self.examples {
            let _ = writeln!(s, "\n[example {}]", e.id);
            let _ = writeln!(s, "asset = {}", e.asset);
            let _ = writeln!(s, "kind = {}", e.kind);
            let _ = writeln!(s, "seed = {}", e.seed);
            let _ = writeln!(s, "rig = {}", e.rig.display());
            let _ = writeln!(s, "frame = {}", e.frame.display());
            let _ = writeln!(s, "source = {}", e.source.display());
            let _ = writeln!(s, "targets = {}", join(&e.targets));
            let _ = writeln!(s, "pointmaps = {}", join(&e.pointmaps));
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut lines = text.lines().enumerate();
        let err = |line: usize, msg: String| CliError::Config { path: path.to_path_buf(), line, msg };
        match lines.next() {
            Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
            _ => return Err(err(1, format!("missing {MANIFEST_HEADER:?} header"))),
        }
        let mut sections: Vec<(usize, String, Vec<(usize, String)>)> = vec![(1, String::new(), Vec::new())];
        for (i, raw) in lines {
            let line = raw.trim();
            if let Some(name) = line.strip_prefix("[example ").and_then(|r| r.strip_suffix(']')) {
                sections.push((i + 1, name.trim().to_string(), Vec::new()));
            } else {
                sections.last_mut().unwrap().2.push((i + 1, raw.to_string()));
            }
        }
        let section_kv = |lines: &[(usize, String)]| -> Result<KeyValues> {
            // keep original line numbers by padding with blank lines
            let mut text = String::new();
            let mut at = 1;
            for (n, l) in lines {
                while at < *n {
                    text.push('\n');
                    at += 1;
                }
                text.push_str(l);
                text.push('\n');
                at += 1;
            }
            KeyValues::parse(&text, path)
        };
        let (_, _, header) = &sections[0];
        let mut kv = section_kv(header)?;
        let k: usize = kv.require("k")?;
        let size: usize = kv.require("size")?;
        let mode: PointFrameMode = kv.require("mode")?;
        let assets: AssetMix = kv.require("assets")?;
        let count: usize = kv.require("count")?;
        kv.finish()?;
        let mut examples = Vec::new();
        for (line, id, body) in &sections[1..] {
            let mut kv = section_kv(body)?;
            let paths = |s: String| s.split_whitespace().map(PathBuf::from).collect::<Vec<_>>();
            let entry = ManifestEntry {
                id: id.clone(),
                asset: kv.require("asset")?,
                kind: kv.require("kind")?,
                seed: kv.require("seed")?,
                rig: kv.require("rig")?,
                frame: kv.require("frame")?,
                source: kv.require("source")?,
                targets: paths(kv.require("targets")?),
                pointmaps: paths(kv.require("pointmaps")?),
            };
            kv.finish()?;
            if entry.targets.len() != k || entry.pointmaps.len() != k {
                return Err(err(*line, format!("example {id} lists {} targets and {} pointmaps for k={k}", entry.targets.len(), entry.pointmaps.len())));
            }
            examples.push(entry);
        }
        if examples.len() != count {
            return Err(err(1, format!("count = {count} but {} examples listed", examples.len())));
        }
        Ok(Self { root, k, size, mode, assets, examples })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(file_err(path))?;
        Self::parse(&text, path)
    }

    /// Accepts either the manifest file or its directory.
    pub fn open(path: &Path) -> Result<Self> {
        if path.is_dir() {
            Self::load(&path.join(MANIFEST_NAME))
        } else {
            Self::load(path)
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    /// Checks that every referenced file exists with the declared dimensions.
    pub fn validate(&self) -> Result<()> {
        for e in &self.examples {
            for p in e.targets.iter().chain(&e.pointmaps).chain([&e.source]) {
                let full = self.resolve(p);
                let dims = float_image_dims(&full).map_err(|err| CliError::Data(format!("example {}: {}: {err}", e.id, full.display())))?;
                if dims != (self.size, self.size, 4) {
                    return Err(CliError::Data(format!(
                        "example {}: {} is {}x{}x{}, expected {}x{}x4",
                        e.id,
                        full.display(),
                        dims.0,
                        dims.1,
                        dims.2,
                        self.size,
                        self.size
                    )));
                }
            }
            for p in [&e.rig, &e.frame] {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(CliError::Data(format!("example {}: missing {}", e.id, full.display())));
                }
            }
        }
        Ok(())
    }

    pub fn load_example(&self, index: usize) -> Result<LoadedExample> {
        let e = &self.examples[index];
        let read = |p: &Path| read_float_image(&self.resolve(p)).map_err(|err| CliError::Data(format!("example {}: {err}", e.id)));
        let read_text = |p: &Path| fs::read_to_string(self.resolve(p)).map_err(file_err(self.resolve(p)));
        Ok(LoadedExample {
            id: e.id.clone(),
            kind: e.kind.clone(),
            source: read(&e.source)?,
            targets: e.targets.iter().map(|p| read(p)).collect::<Result<_>>()?,
            pointmaps: e.pointmaps.iter().map(|p| read(p)).collect::<Result<_>>()?,
            rig: RigSpec::from_kv(&read_text(&e.rig)?)?,
            frame: CrocsFrame::from_kv(&read_text(&e.frame)?)?,
        })
    }

    pub fn load_all(&self) -> Result<Vec<LoadedExample>> {
        (0..self.examples.len()).map(|i| self.load_example(i)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LoadedExample {
    pub id: String,
    pub kind: String,
    pub source: Image,
    pub targets: Vec<Image>,
    pub pointmaps: Vec<Pointmap>,
    pub rig: RigSpec,
    pub frame: CrocsFrame,
}

/// What a training run conditions on and predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainTask {
    /// Source → pointmaps.
    Prior,
    /// Source + ground-truth pointmaps → shaded views.
    Decoder,
    /// Decoder architecture with the geometry condition always null.
    DecoderSourceOnly,
}

impl TrainTask {
    pub fn role(self) -> Role {
        match self {
            TrainTask::Prior => Role::Prior,
            TrainTask::Decoder | TrainTask::DecoderSourceOnly => Role::Decoder,
        }
    }
}

impl LoadedExample {
    pub fn source_superimage(&self) -> Result<SuperImage> {
        Ok(tiling::source_superimage(&self.source, self.targets.len())?)
    }

    pub fn train_example(&self, task: TrainTask) -> Result<TrainExample> {
        let src = self.source_superimage()?;
        let points = tiling::pack(&self.pointmaps)?;
        let views = tiling::pack(&self.targets)?;
        let ex = match task {
            TrainTask::Prior => TrainExample::new(&[&src.image], &points.image)?,
            TrainTask::Decoder => TrainExample::new(&[&src.image, &points.image], &views.image)?,
            TrainTask::DecoderSourceOnly => {
                let null = SuperImage::blank(src.k, src.tile_w, src.tile_h)?;
                TrainExample::new(&[&src.image, &null.image], &views.image)?
            }
        };
        Ok(ex)
    }
}

/// Writes all examples and the manifest into `out`.
pub fn gen_dataset(cfg: &DatasetConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(file_err(out))?;
    let mut examples = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let ex = make_example(cfg, i)?;
        let id = example_id(i);
        let dir = out.join(&id);
        fs::create_dir_all(&dir).map_err(file_err(&dir))?;
        let rel = |name: &str| PathBuf::from(&id).join(name);
        write_float_image(&out.join(rel("source.upic")), &ex.source)?;
        for (v, img) in ex.targets.iter().enumerate() {
            write_float_image(&out.join(rel(&view_name(v))), img)?;
        }
        for (v, pm) in ex.pointmaps.iter().enumerate() {
            write_float_image(&out.join(rel(&points_name(v))), pm)?;
        }
        fs::write(out.join(rel("rig.txt")), ex.rig.to_kv()).map_err(file_err(out.join(rel("rig.txt"))))?;
        fs::write(out.join(rel("frame.txt")), ex.frame.to_kv()).map_err(file_err(out.join(rel("frame.txt"))))?;
        examples.push(ManifestEntry {
            id: id.clone(),
            asset: format!("{} {}", cfg.assets.name(), ex.seed),
            kind: asset_kind_name(&ex.asset).to_string(),
            seed: ex.seed,
            rig: rel("rig.txt"),
            frame: rel("frame.txt"),
            source: rel("source.upic"),
            targets: (0..cfg.k).map(|v| rel(&view_name(v))).collect(),
            pointmaps: (0..cfg.k).map(|v| rel(&points_name(v))).collect(),
        });
    }
    let manifest = Manifest {
        root: out.to_path_buf(),
        k: cfg.k,
        size: cfg.size,
        mode: cfg.mode,
        assets: cfg.assets,
        examples,
    };
    let mpath = out.join(MANIFEST_NAME);
    fs::write(&mpath, manifest.to_text()).map_err(file_err(&mpath))?;
    Ok(manifest)
}
