//! Edge-map benchmarking: threshold sweeps with boundary matching, ODS/OIS
//! aggregation for post-processed (SEval) and raw (CEval) predictions,
//! wall-region metrics, and rank correlation.

mod binary;
mod matching;
mod nms;

pub use binary::BinaryMap;
pub use matching::{f_measure, match_boundaries, max_matching, Counts, MatchTolerance};
pub use nms::{gaussian_smooth, nms_thin, non_max_suppress, zhang_suen, Suppressed, NMS_SIGMA};

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Suppression and thinning before matching.
    SEval,
    /// Raw thresholded predictions.
    CEval,
}

impl EvalMode {
    pub fn name(&self) -> &'static str {
        match self {
            EvalMode::SEval => "SEval",
            EvalMode::CEval => "CEval",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub tolerance: MatchTolerance,
    pub eta: f64,
    /// Number of thresholds; the sweep uses `k/(n+1)` for `k = 1..=n`.
    pub thresholds: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tolerance: MatchTolerance { fraction: 0.0075 },
            eta: 0.3,
            thresholds: 99,
        }
    }
}

impl EvalConfig {
    pub fn threshold_values(&self) -> Vec<f64> {
        let n = self.thresholds;
        (1..=n).map(|k| k as f64 / (n + 1) as f64).collect()
    }
}

/// Per-threshold counts for every image.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSweep {
    pub thresholds: Vec<f64>,
    pub ids: Vec<String>,
    /// `counts[image][threshold]`.
    pub counts: Vec<Vec<Counts>>,
}

/// Counts at every threshold for one prediction.
pub fn sweep_image(
    pred: &GrayImage,
    gt: &GrayImage,
    mode: EvalMode,
    cfg: &EvalConfig,
) -> Result<Vec<Counts>> {
    let taus = cfg.threshold_values();
    let (suppressed, thinned) = match mode {
        EvalMode::SEval => (Some(Suppressed::new(pred)), Some(thin_ground_truth(gt, cfg.eta))),
        EvalMode::CEval => (None, None),
    };
    let gt = thinned.as_ref().unwrap_or(gt);
    taus.iter()
        .map(|&tau| {
            let bin = match &suppressed {
                Some(s) => s.at(tau),
                None => BinaryMap::threshold(pred, tau),
            };
            match_boundaries(&bin, gt, cfg.tolerance, cfg.eta)
        })
        .collect()
}

/// Ground truth as seen by SEval: the positive set (`≥ eta`) thinned to
/// one-pixel curves, with the pixels thinning removed marked don't-care.
pub fn thin_ground_truth(gt: &GrayImage, eta: f64) -> GrayImage {
    let positives = BinaryMap::threshold(gt, eta);
    let thin = zhang_suen(&positives);
    let mut out = gt.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if positives.data()[i] && !thin.data()[i] {
            *v = 0.5 * eta;
        }
    }
    out
}

/// One evaluation item: id, prediction and soft ground truth.
pub struct EvalItem<'a> {
    pub id: &'a str,
    pub pred: &'a GrayImage,
    pub gt: &'a GrayImage,
}

pub fn sweep(
    items: &[EvalItem<'_>],
    mode: EvalMode,
    cfg: &EvalConfig,
    par_mode: par::Mode,
) -> Result<ThresholdSweep> {
    if items.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let counts = par::try_map(par_mode, items, |it| sweep_image(it.pred, it.gt, mode, cfg))?;
    Ok(ThresholdSweep {
        thresholds: cfg.threshold_values(),
        ids: items.iter().map(|it| it.id.to_string()).collect(),
        counts,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl From<Counts> for Prf {
    fn from(c: Counts) -> Self {
        Prf {
            precision: c.precision(),
            recall: c.recall(),
            f: c.f_measure(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub best_threshold: f64,
    pub counts: Counts,
    pub prf: Prf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub ods_threshold: f64,
    pub ods_counts: Counts,
    pub ods: Prf,
    pub ois_counts: Counts,
    pub ois: Prf,
    pub images: Vec<ImageRecord>,
}

/// Index of the best entry by F, then fewer false positives, then lowest
/// threshold.
fn best_index(counts: &[Counts]) -> usize {
    let mut best = 0;
    for (i, c) in counts.iter().enumerate().skip(1) {
        let (f, bf) = (c.f_measure(), counts[best].f_measure());
        if f > bf || (f == bf && c.fp < counts[best].fp) {
            best = i;
        }
    }
    best
}

/// ODS picks the threshold maximizing F of the summed counts; OIS sums each
/// image's counts at its own best threshold.
pub fn ods_ois(sweep: &ThresholdSweep, mode: EvalMode) -> Result<EvalReport> {
    if sweep.counts.is_empty() || sweep.thresholds.is_empty() {
        return Err(Error::Data("empty threshold sweep".into()));
    }
    let nt = sweep.thresholds.len();
    if sweep.counts.iter().any(|c| c.len() != nt) {
        return Err(Error::Shape("sweep rows differ from threshold count".into()));
    }
    let totals: Vec<Counts> = (0..nt)
        .map(|k| sweep.counts.iter().map(|row| row[k]).sum())
        .collect();
    let k = best_index(&totals);
    let images: Vec<ImageRecord> = sweep
        .ids
        .iter()
        .zip(&sweep.counts)
        .map(|(id, row)| {
            let b = best_index(row);
            ImageRecord {
                id: id.clone(),
                best_threshold: sweep.thresholds[b],
                counts: row[b],
                prf: row[b].into(),
            }
        })
        .collect();
    let ois_counts: Counts = images.iter().map(|r| r.counts).sum();
    Ok(EvalReport {
        mode,
        ods_threshold: sweep.thresholds[k],
        ods_counts: totals[k],
        ods: totals[k].into(),
        ois_counts,
        ois: ois_counts.into(),
        images,
    })
}

/// Sweep plus aggregation.
pub fn evaluate(
    items: &[EvalItem<'_>],
    mode: EvalMode,
    cfg: &EvalConfig,
    par_mode: par::Mode,
) -> Result<EvalReport> {
    ods_ois(&sweep(items, mode, cfg, par_mode)?, mode)
}

impl EvalReport {
    /// Per-image rows followed by `ODS` and `OIS` summary rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,threshold,precision,recall,f,tp,fp,fn\n");
        let row = |s: &mut String, id: &str, t: &str, p: &Prf, c: &Counts| {
            let _ = writeln!(
                s,
                "{id},{t},{:.6},{:.6},{:.6},{},{},{}",
                p.precision, p.recall, p.f, c.tp, c.fp, c.fn_
            );
        };
        for r in &self.images {
            row(&mut s, &r.id, &format!("{:.4}", r.best_threshold), &r.prf, &r.counts);
        }
        row(
            &mut s,
            "ODS",
            &format!("{:.4}", self.ods_threshold),
            &self.ods,
            &self.ods_counts,
        );
        row(&mut s, "OIS", "", &self.ois, &self.ois_counts);
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "{} ODS F={:.4} P={:.4} R={:.4} (threshold {:.2}); OIS F={:.4} P={:.4} R={:.4}; {} images",
            self.mode.name(),
            self.ods.f,
            self.ods.precision,
            self.ods.recall,
            self.ods_threshold,
            self.ois.f,
            self.ois.precision,
            self.ois.recall,
            self.images.len()
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WallMetrics {
    pub iou: f64,
    pub boundary: Counts,
    pub boundary_f: f64,
}

/// Region IoU of `pred ≥ 0.5` against a wall mask, and boundary F of the
/// two regions' outlines.
pub fn wall_metrics(pred: &GrayImage, gt_mask: &GrayImage, tol: MatchTolerance) -> Result<WallMetrics> {
    if pred.width() != gt_mask.width() || pred.height() != gt_mask.height() {
        return Err(Error::Shape("prediction and wall mask differ in size".into()));
    }
    let p = BinaryMap::threshold(pred, 0.5);
    let g = BinaryMap::threshold(gt_mask, 0.5);
    let inter = p.data().iter().zip(g.data()).filter(|(a, b)| **a && **b).count();
    let union = p.data().iter().zip(g.data()).filter(|(a, b)| **a || **b).count();
    let iou = if g.count() == 0 {
        if p.count() == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        inter as f64 / union as f64
    };
    let boundary = match_boundaries(&p.boundary(), &g.boundary().to_image(), tol, 0.5)?;
    Ok(WallMetrics {
        iou,
        boundary,
        boundary_f: boundary.f_measure(),
    })
}

/// Ranks starting at 1 with ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape("rank correlation needs two equal series of length >= 2".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(tp: usize, fp: usize, fn_: usize) -> Counts {
        Counts { tp, fp, fn_ }
    }

    #[test]
    fn thick_ground_truth_is_thinned_with_dont_care_margin() {
        let mut gt = GrayImage::new(9, 7);
        for y in 2..5 {
            for x in 1..8 {
                gt.set(x, y, 0.8);
            }
        }
        let thin = thin_ground_truth(&gt, 0.3);
        let kept = BinaryMap::threshold(&thin, 0.3);
        assert!(kept.count() > 0 && kept.count() < 21);
        assert_eq!(zhang_suen(&kept), kept);
        for (i, (&a, &b)) in gt.data().iter().zip(thin.data()).enumerate() {
            if a >= 0.3 && !kept.data()[i] {
                assert!((crate::pixel::ZERO_LEVEL..0.3).contains(&b));
            } else {
                assert_eq!(a, b);
            }
        }
        let pred = BinaryMap::threshold(&gt, 0.5).to_image();
        let r = sweep_image(&pred, &gt, EvalMode::SEval, &EvalConfig::default()).unwrap();
        assert!(r.iter().all(|c| c.fp == 0 && c.fn_ == 0 && c.tp == kept.count()));
    }

    #[test]
    fn single_perfect_image() {
        let gt = GrayImage::from_fn(8, 8, |x, _| if x == 3 { 1.0 } else { 0.0 });
        let items = [EvalItem {
            id: "a",
            pred: &gt,
            gt: &gt,
        }];
        for mode in [EvalMode::SEval, EvalMode::CEval] {
            let r = evaluate(&items, mode, &EvalConfig::default(), par::Mode::Sequential).unwrap();
            assert_eq!(r.ods.f, 1.0);
            assert_eq!(r.ois.f, 1.0);
        }
    }

    #[test]
    fn per_image_optimum_beats_shared_threshold() {
        let sweep = ThresholdSweep {
            thresholds: vec![0.25, 0.5, 0.75],
            ids: vec!["a".into(), "b".into()],
            counts: vec![
                vec![c(10, 0, 0), c(2, 8, 8), c(0, 0, 10)],
                vec![c(0, 0, 10), c(2, 8, 8), c(10, 0, 0)],
            ],
        };
        let r = ods_ois(&sweep, EvalMode::CEval).unwrap();
        assert_eq!(r.ois.f, 1.0);
        assert!(r.ods.f < r.ois.f);
        assert_eq!(r.images[1].best_threshold, 0.75);
    }

    #[test]
    fn csv_has_summary_rows() {
        let sweep = ThresholdSweep {
            thresholds: vec![0.5],
            ids: vec!["x".into()],
            counts: vec![vec![c(3, 1, 0)]],
        };
        let csv = ods_ois(&sweep, EvalMode::SEval).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "x,0.5000,0.750000,1.000000,0.857143,3,1,0");
        assert!(lines[2].starts_with("ODS,0.5000,"));
        assert!(lines[3].starts_with("OIS,,"));
    }

    #[test]
    fn wall_iou_cases() {
        let tol = MatchTolerance::new(0.02).unwrap();
        let a = GrayImage::from_fn(10, 10, |x, y| if (2..6).contains(&x) && (2..8).contains(&y) { 1.0 } else { 0.0 });
        let m = wall_metrics(&a, &a, tol).unwrap();
        assert_eq!((m.iou, m.boundary_f), (1.0, 1.0));
        let b = GrayImage::from_fn(10, 10, |x, y| if (6..9).contains(&x) && (2..8).contains(&y) { 1.0 } else { 0.0 });
        assert_eq!(wall_metrics(&a, &b, tol).unwrap().iou, 0.0);
        let empty = GrayImage::new(10, 10);
        assert_eq!(wall_metrics(&empty, &empty, tol).unwrap().iou, 1.0);
        assert_eq!(wall_metrics(&a, &empty, tol).unwrap().iou, 0.0);
    }

    #[test]
    fn spearman_basics() {
        let x = [0.5, 1.0, 1.5, 2.0, 2.5];
        assert!((spearman(&x, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&x, &[1.0; 5]).unwrap(), 0.0);
        let r = spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 2.0]).unwrap();
        assert!((r - 0.8660254037844387).abs() < 1e-12);
    }
}
