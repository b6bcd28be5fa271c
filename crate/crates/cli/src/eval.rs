//! Held-out evaluation in three modes:
//!
//! * `prior_only`: source → pointmaps, scored against ground-truth pointmaps.
//! * `decoder_gt_crocs`: source + ground-truth pointmaps → views.
//! * `full`: source → pointmaps → views, scored on the views.
//!
//! Image scores use one randomly chosen novel view per example; multiview
//! consistency uses all views. Per-example failures are recorded as rows and
//! do not stop the run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use unpic_core::formats::read_float_image;
use unpic_core::metrics::{chamfer, mask_iou, mse, mv_consistency, psnr, ssim};
use unpic_core::{unproject, Image, Pointmap};
use unpic_diffusion::sample::{sample_superimage, Network, SamplerConfig};
use unpic_diffusion::{hierarchical_sample, Role};
use unpic_core::tiling;

use crate::dataset::{example_seed, points_name, view_name, LoadedExample};
use crate::error::{file_err, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Full,
    PriorOnly,
    DecoderGtCrocs,
}

impl FromStr for EvalMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(EvalMode::Full),
            "prior_only" => Ok(EvalMode::PriorOnly),
            "decoder_gt_crocs" => Ok(EvalMode::DecoderGtCrocs),
            _ => Err(format!("mode must be full, prior_only or decoder_gt_crocs, got {s:?}")),
        }
    }
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Full => "full",
            EvalMode::PriorOnly => "prior_only",
            EvalMode::DecoderGtCrocs => "decoder_gt_crocs",
        }
    }

    pub fn needs_points(self) -> bool {
        matches!(self, EvalMode::Full | EvalMode::PriorOnly)
    }

    pub fn needs_views(self) -> bool {
        matches!(self, EvalMode::Full | EvalMode::DecoderGtCrocs)
    }
}

/// Model output for one example. Missing parts are `None`.
#[derive(Debug, Clone, Default)]
pub struct Prediction {
    pub points: Option<Vec<Pointmap>>,
    pub views: Option<Vec<Image>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub id: String,
    pub kind: String,
    /// Empty on success.
    pub error: String,
    /// Novel view index used for the single-view scores.
    pub view: usize,
    /// Over all K tiles, source included.
    pub mse_all: f64,
    /// Over the novel tiles only.
    pub mse_novel: f64,
    pub mse_view: f64,
    pub psnr_view: f64,
    pub ssim_view: f64,
    pub iou_view: f64,
    /// NaN unless views were predicted.
    pub mv_consistency: f64,
    /// NaN unless pointmaps were predicted.
    pub chamfer: f64,
}

impl Row {
    fn failed(ex: &LoadedExample, view: usize, msg: String) -> Self {
        Self {
            id: ex.id.clone(),
            kind: ex.kind.clone(),
            error: msg,
            view,
            mse_all: f64::NAN,
            mse_novel: f64::NAN,
            mse_view: f64::NAN,
            psnr_view: f64::NAN,
            ssim_view: f64::NAN,
            iou_view: f64::NAN,
            mv_consistency: f64::NAN,
            chamfer: f64::NAN,
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub mode: EvalMode,
    pub examples: usize,
    pub failed: usize,
    pub mse_all: f64,
    pub mse_novel: f64,
    pub mse_view: f64,
    /// PSNR of the mean single-view MSE.
    pub psnr_view: f64,
    pub ssim_view: f64,
    pub iou_view: f64,
    pub mv_consistency: f64,
    pub chamfer: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub mode: EvalMode,
    pub rows: Vec<Row>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl Report {
    pub fn summary(&self) -> Summary {
        let ok: Vec<&Row> = self.rows.iter().filter(|r| r.ok()).collect();
        let m = |f: fn(&Row) -> f64| mean(ok.iter().map(|r| f(r)).filter(|v| !v.is_nan()));
        let mse_view = m(|r| r.mse_view);
        Summary {
            mode: self.mode,
            examples: self.rows.len(),
            failed: self.rows.len() - ok.len(),
            mse_all: m(|r| r.mse_all),
            mse_novel: m(|r| r.mse_novel),
            mse_view,
            psnr_view: psnr(mse_view),
            ssim_view: m(|r| r.ssim_view),
            iou_view: m(|r| r.iou_view),
            mv_consistency: m(|r| r.mv_consistency),
            chamfer: m(|r| r.chamfer),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,kind,view,mse_all,mse_novel,mse_view,psnr_view,ssim_view,iou_view,mv_consistency,chamfer,error\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.id,
                r.kind,
                r.view,
                fmt(r.mse_all),
                fmt(r.mse_novel),
                fmt(r.mse_view),
                fmt(r.psnr_view),
                fmt(r.ssim_view),
                fmt(r.iou_view),
                fmt(r.mv_consistency),
                fmt(r.chamfer),
                r.error.replace([',', '\n'], ";")
            );
        }
        s
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Out<'a> {
            mode: EvalMode,
            examples: usize,
            failed: usize,
            mse_all: Option<f64>,
            mse_novel: Option<f64>,
            mse_view: Option<f64>,
            psnr_view: Option<f64>,
            ssim_view: Option<f64>,
            iou_view: Option<f64>,
            mv_consistency: Option<f64>,
            chamfer: Option<f64>,
            errors: Vec<(&'a str, &'a str)>,
        }
        let s = self.summary();
        let out = Out {
            mode: s.mode,
            examples: s.examples,
            failed: s.failed,
            mse_all: finite(s.mse_all),
            mse_novel: finite(s.mse_novel),
            mse_view: finite(s.mse_view),
            psnr_view: finite(s.psnr_view),
            ssim_view: finite(s.ssim_view),
            iou_view: finite(s.iou_view),
            mv_consistency: finite(s.mv_consistency),
            chamfer: finite(s.chamfer),
            errors: self.rows.iter().filter(|r| !r.ok()).map(|r| (r.id.as_str(), r.error.as_str())).collect(),
        };
        Ok(serde_json::to_string_pretty(&out)? + "\n")
    }

    /// Writes `<mode>_examples.csv` and `<mode>_summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(file_err(dir))?;
        let csv = dir.join(format!("{}_examples.csv", self.mode.name()));
        fs::write(&csv, self.to_csv()).map_err(file_err(&csv))?;
        let json = dir.join(format!("{}_summary.json", self.mode.name()));
        fs::write(&json, self.summary_json()?).map_err(file_err(&json))?;
        Ok(())
    }
}

/// Novel view scored for example `index`, never the source tile.
pub fn pick_view(seed: u64, index: usize, k: usize) -> usize {
    if k < 2 {
        return 0;
    }
    ChaCha8Rng::seed_from_u64(example_seed(seed, index)).random_range(1..k)
}

fn set_mse(pred: &[Image], gt: &[Image], views: std::ops::Range<usize>) -> Result<f64> {
    let mut total = 0.0;
    let n = views.len();
    for v in views {
        total += mse(&pred[v], &gt[v])?;
    }
    Ok(if n == 0 { f64::NAN } else { total / n as f64 })
}

fn check_set(what: &str, pred: &[Image], gt: &[Image]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(CliError::Data(format!("{} predicted {what}, expected {}", pred.len(), gt.len())));
    }
    for (v, (p, g)) in pred.iter().zip(gt).enumerate() {
        if !p.same_size(g) {
            return Err(CliError::Data(format!(
                "{what} {v} is {}x{}, expected {}x{}",
                p.width(),
                p.height(),
                g.width(),
                g.height()
            )));
        }
    }
    Ok(())
}

/// Scores one prediction against its ground truth.
pub fn score(mode: EvalMode, ex: &LoadedExample, pred: &Prediction, view: usize) -> Result<Row> {
    let k = ex.targets.len();
    let mut row = Row::failed(ex, view, String::new());
    let points = match (mode.needs_points(), &pred.points) {
        (true, None) => return Err(CliError::Data("missing predicted pointmaps".into())),
        (true, Some(p)) => {
            check_set("pointmaps", p, &ex.pointmaps)?;
            Some(p)
        }
        (false, _) => None,
    };
    let views = match (mode.needs_views(), &pred.views) {
        (true, None) => return Err(CliError::Data("missing predicted views".into())),
        (true, Some(v)) => {
            check_set("views", v, &ex.targets)?;
            Some(v)
        }
        (false, _) => None,
    };
    if let Some(p) = points {
        let (a, b) = (unproject(p), unproject(&ex.pointmaps));
        row.chamfer = if a.is_empty() || b.is_empty() { f64::NAN } else { chamfer(&a, &b)? };
    }
    // The scored images: views when available, pointmaps in prior_only mode.
    let (pred_set, gt_set) = match views {
        Some(v) => (v, &ex.targets),
        None => (points.expect("mode needs points or views"), &ex.pointmaps),
    };
    row.mse_all = set_mse(pred_set, gt_set, 0..k)?;
    row.mse_novel = set_mse(pred_set, gt_set, 1..k)?;
    row.mse_view = mse(&pred_set[view], &gt_set[view])?;
    row.psnr_view = psnr(row.mse_view);
    row.ssim_view = ssim(&pred_set[view], &gt_set[view])?;
    row.iou_view = mask_iou(&pred_set[view], &gt_set[view])?;
    if let Some(v) = views {
        row.mv_consistency = mv_consistency(v)?;
    }
    Ok(row)
}

/// Evaluates every example, recording failures per row.
pub fn evaluate(
    mode: EvalMode,
    examples: &[LoadedExample],
    seed: u64,
    mut predict: impl FnMut(usize, &LoadedExample) -> Result<Prediction>,
) -> Report {
    let rows = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let view = pick_view(seed, i, ex.targets.len());
            match predict(i, ex).and_then(|p| score(mode, ex, &p, view)) {
                Ok(row) => row,
                Err(e) => Row::failed(ex, view, e.to_string()),
            }
        })
        .collect();
    Report { mode, rows }
}

/// Reads `<dir>/<id>/points_i.upic` and/or `view_i.upic`.
pub fn read_prediction(dir: &Path, ex: &LoadedExample, mode: EvalMode) -> Result<Prediction> {
    let k = ex.targets.len();
    let read_set = |name: fn(usize) -> String| -> Result<Vec<Image>> {
        (0..k)
            .map(|v| {
                let p = dir.join(&ex.id).join(name(v));
                read_float_image(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
            })
            .collect()
    };
    Ok(Prediction {
        points: if mode.needs_points() { Some(read_set(points_name)?) } else { None },
        views: if mode.needs_views() { Some(read_set(view_name)?) } else { None },
    })
}

/// Per-example sampler seed, shared by all modes.
pub fn sampler_config(base: &SamplerConfig, index: usize) -> SamplerConfig {
    SamplerConfig { seed: example_seed(base.seed, index), ..base.clone() }
}

fn need(n: Option<&Network>, role: Role) -> Result<&Network> {
    let n = n.ok_or_else(|| CliError::Usage(format!("mode needs a {} checkpoint", role.name())))?;
    if n.role() != role {
        return Err(CliError::Usage(format!("expected a {} checkpoint, got a {}", role.name(), n.role().name())));
    }
    Ok(n)
}

/// Runs the models for one example. `prior` is only touched in modes that need it.
pub fn predict_with_models(
    mode: EvalMode,
    ex: &LoadedExample,
    prior: Option<&Network>,
    decoder: Option<&Network>,
    cfg: &SamplerConfig,
) -> Result<Prediction> {
    match mode {
        EvalMode::PriorOnly => {
            let prior = need(prior, Role::Prior)?;
            let src = ex.source_superimage()?;
            let crocs = sample_superimage(prior, &[&src], cfg)?;
            Ok(Prediction { points: Some(tiling::unpack(&crocs)?), views: None })
        }
        EvalMode::DecoderGtCrocs => {
            let decoder = need(decoder, Role::Decoder)?;
            let src = ex.source_superimage()?;
            let gt = tiling::pack(&ex.pointmaps)?;
            let views = sample_superimage(decoder, &[&src, &gt], cfg)?;
            Ok(Prediction { points: None, views: Some(tiling::unpack(&views)?) })
        }
        EvalMode::Full => {
            let (prior, decoder) = (need(prior, Role::Prior)?, need(decoder, Role::Decoder)?);
            let s = hierarchical_sample(&ex.source, prior, decoder, cfg)?;
            Ok(Prediction { points: Some(s.crocs_views()?), views: Some(s.image_views()?) })
        }
    }
}
