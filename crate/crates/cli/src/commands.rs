//! The four subcommands as library functions.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use unpic_core::formats::{read_float_image, write_float_image, write_pam};
use unpic_diffusion::train::{loss_curve_csv, TrainConfig};
use unpic_diffusion::{hierarchical_sample, Arch, Checkpoint, Network, SamplerConfig, TrainExample, Trainer};

use crate::config::KeyValues;
use crate::dataset::{gen_dataset, points_name, view_name, DatasetConfig, Manifest, TrainTask};
use crate::error::{file_err, CliError, Result};
use crate::eval::{evaluate, predict_with_models, read_prediction, sampler_config, EvalMode, Prediction, Report};

pub const DEFAULT_T_MAX: usize = 256;

pub fn gen_dataset_cmd(config: &Path, out: &Path) -> Result<Manifest> {
    let cfg = DatasetConfig::from_kv(KeyValues::load(config)?)?;
    gen_dataset(&cfg, out)
}

impl FromStr for TrainTask {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "prior" => Ok(TrainTask::Prior),
            "decoder" => Ok(TrainTask::Decoder),
            "decoder_source_only" => Ok(TrainTask::DecoderSourceOnly),
            _ => Err(format!("role must be prior, decoder or decoder_source_only, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchSize {
    Desk,
    Tiny,
}

impl FromStr for ArchSize {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "desk" => Ok(ArchSize::Desk),
            "tiny" => Ok(ArchSize::Tiny),
            _ => Err(format!("arch must be desk or tiny, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub train: TrainConfig,
    pub t_max: usize,
    pub arch: ArchSize,
    /// Progress line on stderr every this many steps; 0 disables.
    pub log_every: u64,
    /// Intermediate checkpoint every this many steps; 0 saves only at the end.
    pub save_every: u64,
}

impl TrainSettings {
    pub fn from_kv(mut kv: KeyValues) -> Result<Self> {
        let d = TrainConfig::default();
        let s = Self {
            train: TrainConfig {
                lr: kv.take_or("lr", d.lr)?,
                batch: kv.take_or("batch", d.batch)?,
                steps: kv.take_or("steps", d.steps)?,
                p_drop: kv.take_or("p_drop", d.p_drop)?,
                seed: kv.take_or("seed", d.seed)?,
                ema_decay: kv.take_or("ema_decay", d.ema_decay)?,
                anneal: kv.take_or("anneal", d.anneal)?,
            },
            t_max: kv.take_or("t_max", DEFAULT_T_MAX)?,
            arch: kv.take_or("arch", ArchSize::Desk)?,
            log_every: kv.take_or("log_every", 1000)?,
            save_every: kv.take_or("save_every", 0)?,
        };
        kv.finish()?;
        s.train.validate()?;
        Ok(s)
    }
}

pub fn loss_csv_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".loss.csv");
    PathBuf::from(s)
}

pub fn load_train_examples(manifest: &Manifest, task: TrainTask) -> Result<Vec<TrainExample>> {
    manifest.validate()?;
    manifest.load_all()?.iter().map(|ex| ex.train_example(task)).collect()
}

/// Rows of an existing loss CSV up to and including `step`.
fn loss_rows_until(path: &Path, step: u64) -> Result<Vec<(u64, f64)>> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(Vec::new());
    };
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let parsed = line
            .split_once(',')
            .and_then(|(s, l)| Some((s.parse::<u64>().ok()?, l.parse::<f64>().ok()?)));
        let (s, l) = parsed.ok_or_else(|| CliError::Data(format!("{}: bad row {line:?}", path.display())))?;
        if s <= step {
            rows.push((s, l));
        }
    }
    Ok(rows)
}

/// Trains a model and writes the checkpoint to `out` and the loss curve to
/// `<out>.loss.csv`. With `resume`, training continues from that checkpoint
/// and its loss curve, up to `steps` optimizer steps in total.
pub fn train_cmd(task: TrainTask, manifest: &Path, settings: &TrainSettings, out: &Path, resume: Option<&Path>) -> Result<Vec<(u64, f64)>> {
    let manifest = Manifest::open(manifest)?;
    let data = load_train_examples(&manifest, task)?;
    if data.is_empty() {
        return Err(CliError::Data("manifest lists no examples".into()));
    }
    let (mut trainer, mut curve) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.arch.role != task.role() || ck.arch.k != manifest.k || ck.arch.tile_w != manifest.size {
                return Err(CliError::Usage(format!(
                    "{} holds a {} model for K={} {}px tiles; the run needs a {} for K={} {}px",
                    path.display(),
                    ck.arch.role.name(),
                    ck.arch.k,
                    ck.arch.tile_w,
                    task.role().name(),
                    manifest.k,
                    manifest.size
                )));
            }
            let trainer = Trainer::from_checkpoint(ck)?;
            let prior_curve = loss_rows_until(&loss_csv_path(path), trainer.step_count())?;
            (trainer, prior_curve)
        }
        None => {
            let arch = match settings.arch {
                ArchSize::Desk => Arch::desk(task.role(), manifest.k, manifest.size),
                ArchSize::Tiny => Arch::tiny(task.role(), manifest.k, manifest.size),
            };
            (Trainer::new(arch, settings.t_max, settings.train.seed)?, Vec::new())
        }
    };
    let csv = loss_csv_path(out);
    let mut save_err = None;
    let result = {
        let (log_every, save_every) = (settings.log_every, settings.save_every);
        let mut recent = 0.0;
        let mut n = 0u64;
        let mut on_step = |step: u64, loss: f64| {
            recent += loss;
            n += 1;
            if log_every > 0 && step % log_every == 0 {
                eprintln!("step {step} loss {:.5}", recent / n as f64);
                recent = 0.0;
                n = 0;
            }
        };
        if save_every == 0 {
            trainer.run(&data, &settings.train, &mut on_step)
        } else {
            // run in chunks so intermediate checkpoints can be written
            let mut all = Vec::new();
            let mut res = Ok(());
            while trainer.step_count() < settings.train.steps {
                let target = (trainer.step_count() / save_every + 1) * save_every;
                match trainer.run_until(&data, &settings.train, target, &mut on_step) {
                    Ok(c) => all.extend(c),
                    Err(e) => {
                        res = Err(e);
                        break;
                    }
                }
                if let Err(e) = trainer.checkpoint().save(out) {
                    save_err = Some(e);
                    break;
                }
            }
            res.map(|_| all)
        }
    };
    let new_rows = match result {
        Ok(rows) => rows,
        Err(e) => {
            fs::write(&csv, loss_curve_csv(&curve)).map_err(file_err(&csv))?;
            return Err(e.into());
        }
    };
    if let Some(e) = save_err {
        return Err(e.into());
    }
    curve.extend(new_rows);
    trainer.checkpoint().save(out)?;
    fs::write(&csv, loss_curve_csv(&curve)).map_err(file_err(&csv))?;
    Ok(curve)
}

pub fn load_network(path: &Path) -> Result<Network> {
    Ok(Network::from_checkpoint(&Checkpoint::load(path)?)?)
}

/// Samples pointmaps and views for one source image and writes
/// `points_i.upic`, `view_i.upic` and `run.txt` into `out`.
pub fn sample_cmd(source: &Path, prior: &Path, decoder: &Path, cfg: &SamplerConfig, out: &Path, preview: bool) -> Result<()> {
    let src = read_float_image(source)?;
    let (p, d) = (load_network(prior)?, load_network(decoder)?);
    let s = hierarchical_sample(&src, &p, &d, cfg)?;
    fs::create_dir_all(out).map_err(file_err(out))?;
    let points = s.crocs_views()?;
    let views = s.image_views()?;
    for (i, (pm, v)) in points.iter().zip(&views).enumerate() {
        write_float_image(&out.join(points_name(i)), pm)?;
        write_float_image(&out.join(view_name(i)), v)?;
    }
    if preview {
        write_pam(&out.join("points.pam"), &s.crocs.image)?;
        write_pam(&out.join("views.pam"), &s.views.image)?;
    }
    let mut meta = String::new();
    let _ = writeln!(meta, "source = {}", source.display());
    let _ = writeln!(meta, "prior = {}", prior.display());
    let _ = writeln!(meta, "decoder = {}", decoder.display());
    let _ = writeln!(meta, "seed = {}", cfg.seed);
    let _ = writeln!(meta, "guidance = {}", cfg.guidance);
    let _ = writeln!(meta, "steps = {}", cfg.steps);
    let _ = writeln!(meta, "clip = {}", cfg.clip);
    let _ = writeln!(meta, "k = {}", points.len());
    let run = out.join("run.txt");
    fs::write(&run, meta).map_err(file_err(&run))?;
    Ok(())
}

/// Where eval predictions come from.
pub enum PredictionSource<'a> {
    Dir(&'a Path),
    Models {
        prior: Option<&'a Path>,
        decoder: Option<&'a Path>,
        sampler: SamplerConfig,
        /// Also write the sampled predictions here, in prediction layout.
        save: Option<&'a Path>,
    },
}

pub fn eval_cmd(manifest: &Path, mode: EvalMode, source: PredictionSource, seed: u64, out: &Path) -> Result<Report> {
    let manifest = Manifest::open(manifest)?;
    manifest.validate()?;
    let examples = manifest.load_all()?;
    let report = match source {
        PredictionSource::Dir(dir) => evaluate(mode, &examples, seed, |_, ex| read_prediction(dir, ex, mode)),
        PredictionSource::Models { prior, decoder, sampler, save } => {
            let prior = match (mode.needs_points(), prior) {
                (true, Some(p)) => Some(load_network(p)?),
                (true, None) => return Err(CliError::Usage(format!("mode {} needs --prior", mode.name()))),
                (false, _) => None,
            };
            let decoder = match (mode.needs_views(), decoder) {
                (true, Some(p)) => Some(load_network(p)?),
                (true, None) => return Err(CliError::Usage(format!("mode {} needs --decoder", mode.name()))),
                (false, _) => None,
            };
            if let Some(n) = prior.iter().chain(decoder.iter()).find(|n| n.model.arch.k != manifest.k || n.model.arch.tile_w != manifest.size) {
                return Err(CliError::Usage(format!(
                    "{} checkpoint is for K={} {}px tiles, the manifest has K={} {}px",
                    n.role().name(),
                    n.model.arch.k,
                    n.model.arch.tile_w,
                    manifest.k,
                    manifest.size
                )));
            }
            evaluate(mode, &examples, seed, |i, ex| {
                let p = predict_with_models(mode, ex, prior.as_ref(), decoder.as_ref(), &sampler_config(&sampler, i))?;
                if let Some(dir) = save {
                    write_prediction(dir, &ex.id, &p)?;
                }
                Ok(p)
            })
        }
    };
    report.write(out)?;
    Ok(report)
}

/// Writes `<out>/<id>/points_i.upic` and `view_i.upic` for whatever the prediction holds.
pub fn write_prediction(out: &Path, id: &str, p: &Prediction) -> Result<()> {
    let dir = out.join(id);
    fs::create_dir_all(&dir).map_err(file_err(&dir))?;
    for (i, pm) in p.points.iter().flatten().enumerate() {
        write_float_image(&dir.join(points_name(i)), pm)?;
    }
    for (i, v) in p.views.iter().flatten().enumerate() {
        write_float_image(&dir.join(view_name(i)), v)?;
    }
    Ok(())
}

/// Writes the ground truth of a manifest in prediction layout.
pub fn export_ground_truth(manifest: &Manifest, out: &Path) -> Result<()> {
    for ex in manifest.load_all()? {
        let p = Prediction { points: Some(ex.pointmaps), views: Some(ex.targets) };
        write_prediction(out, &ex.id, &p)?;
    }
    Ok(())
}
