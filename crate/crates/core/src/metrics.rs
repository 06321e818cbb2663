//! Moving-class IoU / recall / precision, overall and per distance bin.

use std::fmt::{self, Write as _};
use std::ops::AddAssign;

use serde::Serialize;

use crate::error::{shape_err, Result};
use crate::scan_io::PointCloud;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_masks(pred: &[bool], gt: &[bool]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(shape_err!("{} predictions for {} labels", pred.len(), gt.len()));
        }
        let mut c = Confusion::default();
        for (&p, &g) in pred.iter().zip(gt) {
            c.add(p, g);
        }
        Ok(c)
    }

    #[inline]
    pub fn add(&mut self, pred: bool, gt: bool) {
        match (pred, gt) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Percentages; a metric with a zero denominator is `None`.
    pub fn scores(&self) -> Scores {
        let pct = |num: u64, den: u64| (den > 0).then(|| 100.0 * num as f64 / den as f64);
        Scores {
            iou: pct(self.tp, self.tp + self.fp + self.fn_),
            recall: pct(self.tp, self.tp + self.fn_),
            precision: pct(self.tp, self.tp + self.fp),
        }
    }
}

impl AddAssign for Confusion {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

/// IoU, recall and precision in percent; `None` renders as `-`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Scores {
    pub iou: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"))
}

impl fmt::Display for Scores {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "IoU {} / R {} / P {}",
            fmt_opt(self.iou),
            fmt_opt(self.recall),
            fmt_opt(self.precision)
        )
    }
}

/// Scores of the positive class `pred[i] == true` against `gt[i] == true`.
pub fn iou_eval(pred: &[bool], gt: &[bool]) -> Result<Scores> {
    Ok(Confusion::from_masks(pred, gt)?.scores())
}

/// Half-open distance ranges `[lo, hi)` in meters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceBins {
    pub bins: Vec<(String, f64, f64)>,
}

impl Default for DistanceBins {
    /// Close `< 20 m`, Medium `[20, 50) m`, Far `>= 50 m`.
    fn default() -> Self {
        Self {
            bins: vec![
                ("close".into(), 0.0, 20.0),
                ("medium".into(), 20.0, 50.0),
                ("far".into(), 50.0, f64::INFINITY),
            ],
        }
    }
}

impl DistanceBins {
    pub fn bin_of(&self, r: f64) -> Option<usize> {
        self.bins.iter().position(|&(_, lo, hi)| r >= lo && r < hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinReport {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub confusion: Confusion,
    pub scores: Scores,
}

/// Moving-class evaluation, overall and per distance bin, plus the static
/// class for reference.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub overall: Confusion,
    pub moving: Scores,
    pub static_: Scores,
    pub bins: Vec<BinReport>,
}

/// Accumulates confusion counts across frames (sequence-wide aggregation).
#[derive(Debug, Clone)]
pub struct EvalAccumulator {
    bins: DistanceBins,
    overall: Confusion,
    per_bin: Vec<Confusion>,
}

impl EvalAccumulator {
    pub fn new(bins: DistanceBins) -> Self {
        let n = bins.bins.len();
        Self {
            bins,
            overall: Confusion::default(),
            per_bin: vec![Confusion::default(); n],
        }
    }

    pub fn add_frame(&mut self, pred: &[bool], gt: &[bool], cloud: &PointCloud) -> Result<()> {
        if pred.len() != gt.len() || pred.len() != cloud.len() {
            return Err(shape_err!(
                "{} predictions, {} labels, {} points",
                pred.len(),
                gt.len(),
                cloud.len()
            ));
        }
        for ((&p, &g), pt) in pred.iter().zip(gt).zip(&cloud.points) {
            self.overall.add(p, g);
            if let Some(b) = self.bins.bin_of(pt.range()) {
                self.per_bin[b].add(p, g);
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &EvalAccumulator) {
        self.overall += other.overall;
        for (a, b) in self.per_bin.iter_mut().zip(&other.per_bin) {
            *a += *b;
        }
    }

    pub fn report(&self) -> EvalReport {
        let o = self.overall;
        let flipped = Confusion {
            tp: o.tn,
            fp: o.fn_,
            fn_: o.fp,
            tn: o.tp,
        };
        EvalReport {
            overall: o,
            moving: o.scores(),
            static_: flipped.scores(),
            bins: self
                .bins
                .bins
                .iter()
                .zip(&self.per_bin)
                .map(|((name, lo, hi), c)| BinReport {
                    name: name.clone(),
                    lo: *lo,
                    hi: *hi,
                    confusion: *c,
                    scores: c.scores(),
                })
                .collect(),
        }
    }
}

/// Partitions points by range `sqrt(x² + y² + z²)` and scores each bin.
pub fn distance_binned_eval(
    pred: &[bool],
    gt: &[bool],
    cloud: &PointCloud,
    bins: &DistanceBins,
) -> Result<EvalReport> {
    let mut acc = EvalAccumulator::new(bins.clone());
    acc.add_frame(pred, gt, cloud)?;
    Ok(acc.report())
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scope,lo_m,hi_m,tp,fp,fn,tn,iou,recall,precision\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.4}"));
        let mut row = |name: &str, lo: f64, hi: f64, c: &Confusion, sc: &Scores| {
            let _ = writeln!(
                s,
                "{name},{lo},{hi},{},{},{},{},{},{},{}",
                c.tp,
                c.fp,
                c.fn_,
                c.tn,
                opt(sc.iou),
                opt(sc.recall),
                opt(sc.precision)
            );
        };
        row("all", 0.0, f64::INFINITY, &self.overall, &self.moving);
        for b in &self.bins {
            row(&b.name, b.lo, b.hi, &b.confusion, &b.scores);
        }
        s
    }

    /// Text table with one IoU/R/P column group per distance bin.
    pub fn to_table(&self) -> String {
        let mut head = format!("{:<10}", "");
        let mut sub = format!("{:<10}", "");
        let mut vals = format!("{:<10}", "moving");
        for b in &self.bins {
            let range = if b.hi.is_infinite() {
                format!("{} (>={}m)", b.name, b.lo)
            } else if b.lo == 0.0 {
                format!("{} (<{}m)", b.name, b.hi)
            } else {
                format!("{} ({}-{}m)", b.name, b.lo, b.hi)
            };
            head.push_str(&format!("| {range:<20}"));
            sub.push_str(&format!("| {:>6}{:>7}{:>7} ", "IoU", "R", "P"));
            vals.push_str(&format!(
                "| {:>6}{:>7}{:>7} ",
                fmt_opt(b.scores.iou),
                fmt_opt(b.scores.recall),
                fmt_opt(b.scores.precision)
            ));
        }
        format!(
            "{head}\n{sub}\n{vals}\noverall moving: {}\noverall static: {}\n",
            self.moving, self.static_
        )
    }
}
