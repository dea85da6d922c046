//! Inference over datasets, evaluation of prediction directories, the
//! guidance sweep, and atomic output directories.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::{self, Counts, EvalConfig, EvalItem, EvalMode, EvalReport};
use crate::flow::{sample, BaseField, CondField, GuidedField, Schedule};
use crate::image::GrayImage;
use crate::net::VelocityNet;
use crate::numerics::{hash_str, Rng};
use crate::par;
use crate::synth::{preprocess, read_pgm, write_pgm, PreprocessConfig, PreprocessMode, Sample};

#[derive(Clone, Debug, PartialEq)]
pub struct InferConfig {
    pub steps: usize,
    pub guidance: f64,
    /// When false the conditional field is integrated directly.
    pub use_guidance: bool,
    pub seed: u64,
    pub floor_plan: bool,
    pub par_mode: par::Mode,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            guidance: 2.0,
            use_guidance: true,
            seed: 0,
            floor_plan: false,
            par_mode: par::Mode::default(),
        }
    }
}

/// Seed of the initial noise for one image.
pub fn noise_seed(run_seed: u64, id: &str) -> u64 {
    hash_str(id) ^ run_seed
}

/// Samples an edge map for one input image, in the image's own frame.
pub fn predict(net: &VelocityNet, s: &Sample, cfg: &InferConfig) -> Result<GrayImage> {
    let c = net.config();
    let pre = PreprocessConfig {
        target: c.canvas,
        patch: c.patch,
        floor_plan: cfg.floor_plan,
        flips: false,
    };
    let prepared = preprocess(s, &pre, PreprocessMode::Eval, &mut Rng::new(0))?;
    let img = &prepared.sample.image;
    let cond = net.condition(img)?;
    let (gh, gw) = net.codec().grid(img.width(), img.height())?;
    let shape = [c.latent_channels(), gh, gw];
    let schedule = Schedule::uniform(cfg.steps)?;
    let mut rng = Rng::new(noise_seed(cfg.seed, &s.id));
    let cond_field = CondField { net, cond: &cond };
    let z = if cfg.use_guidance {
        let field = GuidedField::new(BaseField(net), cond_field, cfg.guidance)?;
        sample(&field, &schedule, &mut rng, &shape)?
    } else {
        sample(&cond_field, &schedule, &mut rng, &shape)?
    };
    let pred = net.codec().decode(&z, true)?;
    prepared.restore(&pred)
}

/// Predictions for every sample, in input order.
pub fn infer_all(
    net: &VelocityNet,
    samples: &[Sample],
    cfg: &InferConfig,
) -> Result<Vec<(String, GrayImage)>> {
    par::try_map(cfg.par_mode, samples, |s| {
        predict(net, s, cfg).map(|p| (s.id.clone(), p))
    })
}

pub fn prediction_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.pgm"))
}

pub fn write_predictions(dir: &Path, preds: &[(String, GrayImage)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (id, p) in preds {
        write_pgm(&prediction_path(dir, id), p)?;
    }
    Ok(())
}

pub fn read_predictions(dir: &Path, ids: &[String]) -> Result<Vec<(String, GrayImage)>> {
    ids.iter()
        .map(|id| {
            let p = prediction_path(dir, id);
            if !p.is_file() {
                return Err(Error::Data(format!("no prediction for id `{id}` at {}", p.display())));
            }
            Ok((id.clone(), read_pgm(&p)?))
        })
        .collect()
}

fn pair<'a>(samples: &'a [Sample], preds: &'a [(String, GrayImage)]) -> Result<Vec<EvalItem<'a>>> {
    if samples.len() != preds.len() {
        return Err(Error::Data(format!(
            "{} samples but {} predictions",
            samples.len(),
            preds.len()
        )));
    }
    samples
        .iter()
        .zip(preds)
        .map(|(s, (id, p))| {
            if *id != s.id {
                return Err(Error::Data(format!("prediction `{id}` paired with sample `{}`", s.id)));
            }
            if p.width() != s.gt.width() || p.height() != s.gt.height() {
                return Err(Error::Data(format!(
                    "prediction `{id}` is {}x{}, ground truth {}x{}",
                    p.width(),
                    p.height(),
                    s.gt.width(),
                    s.gt.height()
                )));
            }
            Ok(EvalItem {
                id: &s.id,
                pred: p,
                gt: &s.gt,
            })
        })
        .collect()
}

pub fn evaluate(
    samples: &[Sample],
    preds: &[(String, GrayImage)],
    mode: EvalMode,
    cfg: &EvalConfig,
    par_mode: par::Mode,
) -> Result<EvalReport> {
    eval::evaluate(&pair(samples, preds)?, mode, cfg, par_mode)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WallReport {
    pub rows: Vec<(String, eval::WallMetrics)>,
    pub mean_iou: f64,
    pub boundary: Counts,
}

impl WallReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,iou,boundary_precision,boundary_recall,boundary_f\n");
        let mut row = |id: &str, iou: f64, c: &Counts| {
            s.push_str(&format!(
                "{id},{iou:.6},{:.6},{:.6},{:.6}\n",
                c.precision(),
                c.recall(),
                c.f_measure()
            ));
        };
        for (id, m) in &self.rows {
            row(id, m.iou, &m.boundary);
        }
        row("MEAN", self.mean_iou, &self.boundary);
        s
    }
}

pub fn wall_report(
    samples: &[Sample],
    preds: &[(String, GrayImage)],
    cfg: &EvalConfig,
) -> Result<WallReport> {
    let items = pair(samples, preds)?;
    let mut rows = Vec::new();
    for (s, it) in samples.iter().zip(&items) {
        let mask = s
            .walls
            .as_ref()
            .ok_or_else(|| Error::Data(format!("sample `{}` has no wall mask", s.id)))?;
        rows.push((s.id.clone(), eval::wall_metrics(it.pred, mask, cfg.tolerance)?));
    }
    let mean_iou = rows.iter().map(|(_, m)| m.iou).sum::<f64>() / rows.len().max(1) as f64;
    let boundary = rows.iter().map(|(_, m)| m.boundary).sum();
    Ok(WallReport {
        rows,
        mean_iou,
        boundary,
    })
}

/// Dataset-mean brightness of raw predictions at each guidance scale.
pub fn gamma_sweep(
    net: &VelocityNet,
    samples: &[Sample],
    gammas: &[f64],
    cfg: &InferConfig,
) -> Result<Vec<(f64, f64)>> {
    gammas
        .iter()
        .map(|&g| {
            let c = InferConfig {
                guidance: g,
                use_guidance: true,
                ..cfg.clone()
            };
            let preds = infer_all(net, samples, &c)?;
            let mean = preds.iter().map(|(_, p)| p.mean()).sum::<f64>() / preds.len().max(1) as f64;
            Ok((g, mean))
        })
        .collect()
}

pub fn gamma_csv(rows: &[(f64, f64)]) -> String {
    let mut s = String::from("gamma,mean_brightness\n");
    for (g, b) in rows {
        s.push_str(&format!("{g:?},{b:.8}\n"));
    }
    s
}

/// Output directory that becomes visible under its final name only after
/// [`commit`](Self::commit).
#[derive(Debug)]
pub struct StagedDir {
    staging: PathBuf,
    target: PathBuf,
    committed: bool,
}

impl StagedDir {
    pub fn new(target: &Path) -> Result<Self> {
        let name = target
            .file_name()
            .ok_or_else(|| Error::Config(format!("invalid output path {}", target.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let staging = parent.join(format!(".{name}.tmp-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        Ok(Self {
            staging,
            target: target.to_path_buf(),
            committed: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.staging.join(name);
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))
    }

    /// Replaces any existing target with the staged directory.
    pub fn commit(mut self) -> Result<PathBuf> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        fs::rename(&self.staging, &self.target).map_err(|e| Error::io(&self.target, e))?;
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for StagedDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}
