//! Weighted cross-entropy and Lovász-softmax losses for the two range-view
//! branches.

use crate::error::{shape_err, Error, Result};

/// Clamp applied to probabilities before taking the log.
pub const LOG_EPS: f64 = 1e-12;

/// Row-stochastic `N × K` class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbs {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl ClassProbs {
    pub fn new(k: usize, data: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(shape_err!("probabilities need at least one class"));
        }
        if data.len() % k != 0 {
            return Err(shape_err!("{} values are not a multiple of {k} classes", data.len()));
        }
        for (i, row) in data.chunks(k).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Format(format!("row {i} has a probability outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Format(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self {
            n: data.len() / k,
            k,
            data,
        })
    }

    /// One-hot rows for hard labels.
    pub fn one_hot(labels: &[usize], k: usize) -> Result<Self> {
        let mut data = vec![0.0; labels.len() * k];
        for (i, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(shape_err!("label {l} out of range for {k} classes"));
            }
            data[i * k + l] = 1.0;
        }
        Self::new(k, data)
    }

    /// Softmax over each row of raw scores.
    pub fn from_logits(k: usize, logits: &[f64]) -> Result<Self> {
        if k == 0 || logits.len() % k != 0 {
            return Err(shape_err!("{} logits for {k} classes", logits.len()));
        }
        let mut data = Vec::with_capacity(logits.len());
        for row in logits.chunks(k) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            data.extend(e.iter().map(|v| v / s));
        }
        Self::new(k, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.data[i * self.k + c]
    }

    pub fn argmax(&self, i: usize) -> usize {
        let row = &self.data[i * self.k..(i + 1) * self.k];
        let mut best = 0;
        for (j, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = j;
            }
        }
        best
    }
}

fn check_gt(probs: &ClassProbs, gt: &[usize]) -> Result<()> {
    if gt.len() != probs.n {
        return Err(shape_err!("{} labels for {} predictions", gt.len(), probs.n));
    }
    if let Some(&bad) = gt.iter().find(|&&g| g >= probs.k) {
        return Err(shape_err!("label {bad} out of range for {} classes", probs.k));
    }
    Ok(())
}

/// `mean_i( −w[gt_i] · ln max(p_i[gt_i], 1e-12) )`; 0 for an empty batch.
pub fn weighted_cross_entropy(probs: &ClassProbs, gt: &[usize], class_weights: &[f64]) -> Result<f64> {
    check_gt(probs, gt)?;
    if class_weights.len() != probs.k {
        return Err(shape_err!("{} class weights for {} classes", class_weights.len(), probs.k));
    }
    if class_weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::Config("class weights must be positive".into()));
    }
    if gt.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = gt
        .iter()
        .enumerate()
        .map(|(i, &g)| -class_weights[g] * probs.get(i, g).max(LOG_EPS).ln())
        .sum();
    Ok(total / gt.len() as f64)
}

/// Gradient of the Jaccard loss with respect to errors sorted in
/// decreasing order, given the foreground flags in that order.
pub fn lovasz_grad(fg_sorted: &[bool]) -> Vec<f64> {
    let gts = fg_sorted.iter().filter(|&&f| f).count() as f64;
    let mut grad = Vec::with_capacity(fg_sorted.len());
    let (mut cum_fg, mut cum_bg) = (0.0, 0.0);
    let mut prev = 0.0;
    for &f in fg_sorted {
        if f {
            cum_fg += 1.0;
        } else {
            cum_bg += 1.0;
        }
        let inter = gts - cum_fg;
        let union = gts + cum_bg;
        let jaccard = 1.0 - inter / union;
        grad.push(jaccard - prev);
        prev = jaccard;
    }
    grad
}

/// Lovász extension of the Jaccard loss of class `c`.
pub fn lovasz_class_loss(probs: &ClassProbs, gt: &[usize], c: usize) -> f64 {
    let mut errs: Vec<(f64, bool)> = gt
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let fg = g == c;
            ((if fg { 1.0 } else { 0.0 } - probs.get(i, c)).abs(), fg)
        })
        .collect();
    errs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let fg: Vec<bool> = errs.iter().map(|e| e.1).collect();
    errs.iter().zip(lovasz_grad(&fg)).map(|(e, g)| e.0 * g).sum()
}

/// Classes present in the ground truth or predicted (argmax) for some point.
pub fn present_classes(probs: &ClassProbs, gt: &[usize]) -> Vec<usize> {
    let mut present = vec![false; probs.k];
    for (i, &g) in gt.iter().enumerate() {
        present[g] = true;
        present[probs.argmax(i)] = true;
    }
    (0..probs.k).filter(|&c| present[c]).collect()
}

/// Mean Lovász-softmax loss over present classes; 0 when nothing is present.
pub fn lovasz_softmax(probs: &ClassProbs, gt: &[usize]) -> Result<f64> {
    check_gt(probs, gt)?;
    let classes = present_classes(probs, gt);
    if classes.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = classes.iter().map(|&c| lovasz_class_loss(probs, gt, c)).sum();
    Ok(sum / classes.len() as f64)
}

/// `L_wce + L_ls` for one branch.
pub fn branch_loss(probs: &ClassProbs, gt: &[usize], class_weights: &[f64]) -> Result<f64> {
    Ok(weighted_cross_entropy(probs, gt, class_weights)? + lovasz_softmax(probs, gt)?)
}

/// Semantic-branch loss plus motion-branch loss. The BEV branch carries no
/// loss term.
pub fn total_loss(
    sem_probs: &ClassProbs,
    sem_gt: &[usize],
    sem_weights: &[f64],
    motion_probs: &ClassProbs,
    motion_gt: &[usize],
    motion_weights: &[f64],
) -> Result<f64> {
    Ok(branch_loss(sem_probs, sem_gt, sem_weights)? + branch_loss(motion_probs, motion_gt, motion_weights)?)
}

/// Uniform weights for `k` classes.
pub fn uniform_weights(k: usize) -> Vec<f64> {
    vec![1.0; k]
}
