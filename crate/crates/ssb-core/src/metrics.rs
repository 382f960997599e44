//! Mask-set quality and diversity metrics.
//!
//! Conventions that matter and are easy to get wrong:
//! - Dice and IoU of two empty masks are 1 (perfect agreement on "nothing").
//! - The generalized energy distance is reported squared, with self-pair
//!   means taken over all ordered pairs including the diagonal, and clamped
//!   at zero.
//! - The diversity divergence index normalizes each Dice-matrix row (or
//!   column) to a distribution, substituting uniform for an all-zero line,
//!   sums Jensen-Shannon divergences over ordered pairs i != j, and scales
//!   by 3 / C(k, 2). It needs at least two lines to exist.

use crate::error::{Result, SsbError};
use crate::grid::Grid;
use serde::Serialize;

/// Which side of the comparison a mask set plays; informational only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MaskRole {
    Expert,
    Generated,
}

/// Nonempty collection of same-shape binary masks.
#[derive(Debug, Clone)]
pub struct MaskSet {
    masks: Vec<Grid>,
    role: MaskRole,
}

impl MaskSet {
    pub fn new(masks: Vec<Grid>, role: MaskRole) -> Result<MaskSet> {
        if masks.is_empty() {
            return Err(SsbError::InvalidArgument("mask set must be nonempty".into()));
        }
        for (i, m) in masks.iter().enumerate() {
            if !m.is_binary() {
                return Err(SsbError::InvalidArgument(format!("mask {i} is not binary")));
            }
            masks[0].check_same_shape(m, "mask set")?;
        }
        Ok(MaskSet { masks, role })
    }

    pub fn masks(&self) -> &[Grid] {
        &self.masks
    }

    pub fn role(&self) -> MaskRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

fn check_binary_pair(a: &Grid, b: &Grid, what: &str) -> Result<()> {
    a.check_same_shape(b, what)?;
    if !a.is_binary() || !b.is_binary() {
        return Err(SsbError::InvalidArgument(format!("{what}: masks must be binary")));
    }
    Ok(())
}

/// Dice overlap of two binary masks; 1 when both are empty.
pub fn dice(a: &Grid, b: &Grid) -> Result<f64> {
    check_binary_pair(a, b, "dice")?;
    let mut inter = 0.0;
    let mut mass = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        inter += x * y;
        mass += x + y;
    }
    if mass == 0.0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter / mass)
}

/// Intersection over union; 1 when both masks are empty.
pub fn iou(a: &Grid, b: &Grid) -> Result<f64> {
    check_binary_pair(a, b, "iou")?;
    let mut inter = 0.0;
    let mut union = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        inter += x * y;
        union += (x + y).min(1.0);
    }
    if union == 0.0 {
        return Ok(1.0);
    }
    Ok(inter / union)
}

/// Squared generalized energy distance between the two sets under the
/// distance d = 1 - IoU. Clamped at zero.
pub fn ged(generated: &MaskSet, experts: &MaskSet) -> Result<f64> {
    generated.masks[0].check_same_shape(&experts.masks[0], "ged")?;
    let n = generated.len() as f64;
    let m = experts.len() as f64;
    let mut cross = 0.0;
    for g in &generated.masks {
        for e in &experts.masks {
            cross += 1.0 - iou(g, e)?;
        }
    }
    cross /= n * m;
    let mut within_g = 0.0;
    for a in &generated.masks {
        for b in &generated.masks {
            within_g += 1.0 - iou(a, b)?;
        }
    }
    within_g /= n * n;
    let mut within_e = 0.0;
    for a in &experts.masks {
        for b in &experts.masks {
            within_e += 1.0 - iou(a, b)?;
        }
    }
    within_e /= m * m;
    Ok((2.0 * cross - within_g - within_e).max(0.0))
}

/// Mean over experts of the best Dice any generated mask achieves against
/// that expert. 1 means every expert style was reproduced somewhere.
pub fn d_max(generated: &MaskSet, experts: &MaskSet) -> Result<f64> {
    generated.masks[0].check_same_shape(&experts.masks[0], "d_max")?;
    let mut acc = 0.0;
    for e in &experts.masks {
        let mut best = f64::NEG_INFINITY;
        for g in &generated.masks {
            best = best.max(dice(g, e)?);
        }
        acc += best;
    }
    Ok(acc / experts.len() as f64)
}

/// Consensus insight: Dice between the two majority-vote masks. A pixel joins
/// a combined mask when its mean over the set is at least 0.5 (ties vote in).
pub fn ci_score(generated: &MaskSet, experts: &MaskSet) -> Result<f64> {
    generated.masks[0].check_same_shape(&experts.masks[0], "ci_score")?;
    dice(&combine(generated), &combine(experts))
}

fn combine(set: &MaskSet) -> Grid {
    let len = set.masks[0].len();
    let mut mean = vec![0.0; len];
    for m in &set.masks {
        for (acc, v) in mean.iter_mut().zip(m.data()) {
            *acc += v;
        }
    }
    let k = set.len() as f64;
    let data = mean.into_iter().map(|s| if s / k >= 0.5 { 1.0 } else { 0.0 }).collect();
    Grid::from_vec(set.masks[0].height(), set.masks[0].width(), data)
        .expect("combine preserves shape")
}

/// How closely the generated set's internal diversity tracks the experts'.
/// Diversity of a set is the mean pairwise (1 - IoU) over unordered distinct
/// pairs; both sets need at least two masks, otherwise None.
pub fn diversity_agreement(generated: &MaskSet, experts: &MaskSet) -> Result<Option<f64>> {
    generated.masks[0].check_same_shape(&experts.masks[0], "diversity_agreement")?;
    if generated.len() < 2 || experts.len() < 2 {
        return Ok(None);
    }
    let dg = mean_pairwise_distance(generated)?;
    let de = mean_pairwise_distance(experts)?;
    let denom = dg.max(de).max(1e-12);
    Ok(Some(1.0 - (dg - de).abs() / denom))
}

fn mean_pairwise_distance(set: &MaskSet) -> Result<f64> {
    let k = set.len();
    let mut acc = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            acc += 1.0 - iou(&set.masks[i], &set.masks[j])?;
        }
    }
    Ok(acc / (k * (k - 1) / 2) as f64)
}

/// Jensen-Shannon divergence in bits between two distributions of equal
/// length. Zero-probability terms contribute nothing.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(SsbError::InvalidArgument(format!(
            "js_divergence needs equal nonempty lengths, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    for v in p.iter().chain(q) {
        if !v.is_finite() || *v < 0.0 {
            return Err(SsbError::Domain("js_divergence inputs must be nonnegative".into()));
        }
    }
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    if (sp - 1.0).abs() > 1e-6 || (sq - 1.0).abs() > 1e-6 {
        return Err(SsbError::Domain(format!(
            "js_divergence inputs must sum to 1, got {sp} and {sq}"
        )));
    }
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            acc += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            acc += 0.5 * b * (b / m).log2();
        }
    }
    Ok(acc)
}

/// Dice matrix with one row per expert mask and one column per generated
/// mask: values[i][j] = dice(expert_i, generated_j).
#[derive(Debug, Clone)]
pub struct DiceMatrix {
    m: usize,
    n: usize,
    values: Vec<f64>,
}

impl DiceMatrix {
    pub fn compute(experts: &MaskSet, generated: &MaskSet) -> Result<DiceMatrix> {
        experts.masks[0].check_same_shape(&generated.masks[0], "dice matrix")?;
        let (m, n) = (experts.len(), generated.len());
        let mut values = Vec::with_capacity(m * n);
        for e in &experts.masks {
            for g in &generated.masks {
                values.push(dice(e, g)?);
            }
        }
        Ok(DiceMatrix { m, n, values })
    }

    /// Matrix from raw row-major values; entries must lie in [0, 1].
    pub fn from_values(m: usize, n: usize, values: Vec<f64>) -> Result<DiceMatrix> {
        if m == 0 || n == 0 || values.len() != m * n {
            return Err(SsbError::InvalidArgument(format!(
                "dice matrix {m}x{n} does not match {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(SsbError::InvalidArgument("dice values must lie in [0, 1]".into()));
        }
        Ok(DiceMatrix { m, n, values })
    }

    pub fn num_experts(&self) -> usize {
        self.m
    }

    pub fn num_generated(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.m).map(|i| self.values[i * self.n + j]).collect()
    }
}

/// L1-normalize, falling back to uniform when everything is zero.
fn normalize(line: &[f64]) -> Vec<f64> {
    let s: f64 = line.iter().sum();
    if s > 0.0 {
        line.iter().map(|v| v / s).collect()
    } else {
        vec![1.0 / line.len() as f64; line.len()]
    }
}

fn ddi_over(lines: Vec<Vec<f64>>) -> Result<Option<f64>> {
    let k = lines.len();
    if k < 2 {
        return Ok(None);
    }
    let dists: Vec<Vec<f64>> = lines.iter().map(|l| normalize(l)).collect();
    let mut acc = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                acc += js_divergence(&dists[i], &dists[j])?;
            }
        }
    }
    let pairs = (k * (k - 1) / 2) as f64;
    Ok(Some(3.0 / pairs * acc))
}

/// Diversity divergence over expert rows and generated columns:
/// (over rows if at least two experts, over columns if at least two
/// generated masks).
pub fn ddi(matrix: &DiceMatrix) -> Result<(Option<f64>, Option<f64>)> {
    let rows: Vec<Vec<f64>> = (0..matrix.m).map(|i| matrix.row(i).to_vec()).collect();
    let cols: Vec<Vec<f64>> = (0..matrix.n).map(|j| matrix.col(j)).collect();
    Ok((ddi_over(rows)?, ddi_over(cols)?))
}

/// Everything the evaluator reports for one case. Optional entries are absent
/// when the corresponding set is too small to define them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub ged: f64,
    pub d_max: f64,
    pub ci: f64,
    pub d_a: Option<f64>,
    pub ddi_exp: Option<f64>,
    pub ddi_gen: Option<f64>,
}

/// Full per-case evaluation of generated masks against expert masks.
pub fn evaluate_masks(generated: &MaskSet, experts: &MaskSet) -> Result<MetricsReport> {
    let matrix = DiceMatrix::compute(experts, generated)?;
    let (ddi_exp, ddi_gen) = ddi(&matrix)?;
    Ok(MetricsReport {
        ged: ged(generated, experts)?,
        d_max: d_max(generated, experts)?,
        ci: ci_score(generated, experts)?,
        d_a: diversity_agreement(generated, experts)?,
        ddi_exp,
        ddi_gen,
    })
}
