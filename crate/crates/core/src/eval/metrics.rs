use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::inference::assign_rows;

fn choose2(n: f64) -> f64 {
    n * (n - 1.0) / 2.0
}

/// Compact labels to `0..n` in order of first appearance.
fn relabel(labels: impl Iterator<Item = usize>) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let out = labels
        .map(|l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// Adjusted Rand index between two labelings of the same items.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predicted vs {} true labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("no pixels to score".into()));
    }
    let (p, np) = relabel(pred.iter().copied());
    let (t, nt) = relabel(truth.iter().copied());
    let mut table = vec![0u64; np * nt];
    for (&a, &b) in p.iter().zip(&t) {
        table[a * nt + b] += 1;
    }
    let mut rows = vec![0u64; np];
    let mut cols = vec![0u64; nt];
    let mut index = 0.0;
    for a in 0..np {
        for b in 0..nt {
            let c = table[a * nt + b];
            rows[a] += c;
            cols[b] += c;
            index += choose2(c as f64);
        }
    }
    let sum_rows: f64 = rows.iter().map(|&c| choose2(c as f64)).sum();
    let sum_cols: f64 = cols.iter().map(|&c| choose2(c as f64)).sum();
    let total = choose2(pred.len() as f64);
    let expected = if total > 0.0 { sum_rows * sum_cols / total } else { 0.0 };
    let max_index = 0.5 * (sum_rows + sum_cols);
    let denom = max_index - expected;
    if denom == 0.0 {
        // Both sides are a single cluster, or both are all singletons.
        return Ok(if np == nt { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denom)
}

/// ARI restricted to pixels whose true label is not `background`.
pub fn fg_ari(pred: &[usize], truth: &[usize], background: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predicted vs {} true labels", pred.len(), truth.len())));
    }
    let (p, t): (Vec<usize>, Vec<usize>) =
        pred.iter().zip(truth).filter(|(_, &t)| t != background).map(|(&p, &t)| (p, t)).unzip();
    if t.is_empty() {
        return Err(Error::Empty("no foreground pixels".into()));
    }
    ari(&p, &t)
}

/// Mean IoU over true segments after a one-to-one matching that maximizes
/// total IoU. True segments left unmatched score 0.
pub fn miou_masks(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Empty("no ground-truth segments".into()));
    }
    let n = truth[0].len();
    if pred.iter().chain(truth).any(|m| m.len() != n) {
        return Err(Error::Shape("masks cover different grids".into()));
    }
    let (np, nt) = (pred.len(), truth.len());
    if np == 0 {
        return Ok(0.0);
    }
    let count = |m: &Vec<bool>| m.iter().filter(|&&b| b).count() as f64;
    let area_p: Vec<f64> = pred.iter().map(count).collect();
    let area_t: Vec<f64> = truth.iter().map(count).collect();
    // iou[b * np + a]: true segment b against predicted segment a.
    let mut iou = vec![0.0; nt * np];
    for b in 0..nt {
        for a in 0..np {
            let i = truth[b].iter().zip(&pred[a]).filter(|(&x, &y)| x && y).count() as f64;
            let u = area_t[b] + area_p[a] - i;
            iou[b * np + a] = if u > 0.0 { i / u } else { 0.0 };
        }
    }
    let total = if nt <= np {
        let cost: Vec<f64> = iou.iter().map(|v| -v).collect();
        let asg = assign_rows(&cost, nt, np)?;
        asg.iter().enumerate().map(|(b, &a)| iou[b * np + a]).sum::<f64>()
    } else {
        let cost: Vec<f64> = (0..np * nt).map(|i| -iou[(i % nt) * np + i / nt]).collect();
        let asg = assign_rows(&cost, np, nt)?;
        asg.iter().enumerate().map(|(a, &b)| iou[b * np + a]).sum::<f64>()
    };
    Ok(total / nt as f64)
}

fn label_masks(labels: &[usize]) -> Vec<Vec<bool>> {
    let ids: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    ids.into_iter().map(|id| labels.iter().map(|&l| l == id).collect()).collect()
}

/// [`miou_masks`] over the segments of two label maps.
pub fn miou(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predicted vs {} true labels", pred.len(), truth.len())));
    }
    miou_masks(&label_masks(pred), &label_masks(truth))
}
