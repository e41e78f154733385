use ndarray::{Array2, ArrayView2, Axis};

use super::LossConfig;
use crate::embedding::{cosine_similarity, log_softmax_row, row_norms, EmbeddingSet, Temperature};
use crate::{Error, Result};

fn check_text_inputs(
    semantics: ArrayView2<'_, f64>,
    refs: &EmbeddingSet,
    class_of_anchor: &[usize],
) -> Result<()> {
    if semantics.nrows() == 0 {
        return Err(Error::invalid("text loss needs at least one positive anchor"));
    }
    if semantics.nrows() != class_of_anchor.len() {
        return Err(Error::shape(format!(
            "{} semantic rows but {} class indices",
            semantics.nrows(),
            class_of_anchor.len()
        )));
    }
    if let Some((i, &c)) = class_of_anchor.iter().enumerate().find(|(_, &c)| c >= refs.len()) {
        return Err(Error::invalid(format!(
            "anchor {i} has class index {c} but only {} reference classes exist",
            refs.len()
        )));
    }
    Ok(())
}

/// Mean negative log-likelihood of each anchor's class under
/// `softmax(cos(semantic, refs) * e^tau)`.
pub fn text_loss(
    semantics: ArrayView2<'_, f64>,
    refs: &EmbeddingSet,
    class_of_anchor: &[usize],
    temp: Temperature,
) -> Result<f64> {
    check_text_inputs(semantics, refs, class_of_anchor)?;
    let cos = cosine_similarity(semantics, refs.vectors())?;
    let scale = temp.multiplier();
    let n = semantics.nrows() as f64;
    let total: f64 = cos
        .axis_iter(Axis(0))
        .zip(class_of_anchor)
        .map(|(row, &c)| {
            let row = row.to_vec();
            -log_softmax_row(&row, scale)[c]
        })
        .sum();
    Ok(total / n)
}

/// Gradient of [`text_loss`] with respect to each semantic entry.
///
/// With `u = m / |m|` and normalized references `t_j`,
/// `dL/dm = (1/|m|) * sum_j g_j (t_j - cos_j u)` where
/// `g_j = e^tau (z_j - y_j) / N`.
pub fn text_loss_grad(
    semantics: ArrayView2<'_, f64>,
    refs: &EmbeddingSet,
    class_of_anchor: &[usize],
    temp: Temperature,
) -> Result<Array2<f64>> {
    check_text_inputs(semantics, refs, class_of_anchor)?;
    let cos = cosine_similarity(semantics, refs.vectors())?;
    let m_norms = row_norms(semantics, "semantic")?;
    let t_norms = row_norms(refs.vectors(), "reference")?;
    let mut t_unit = refs.vectors().to_owned();
    for (mut row, n) in t_unit.axis_iter_mut(Axis(0)).zip(&t_norms) {
        row.mapv_inplace(|v| v / n);
    }

    let scale = temp.multiplier();
    let n = semantics.nrows() as f64;
    let mut grad = Array2::zeros(semantics.raw_dim());
    for (i, &c) in class_of_anchor.iter().enumerate() {
        let row = cos.row(i).to_vec();
        let logp = log_softmax_row(&row, scale);
        let g: Vec<f64> = logp
            .iter()
            .enumerate()
            .map(|(j, lp)| scale * (lp.exp() - if j == c { 1.0 } else { 0.0 }) / n)
            .collect();
        let g_dot_cos: f64 = g.iter().zip(&row).map(|(a, b)| a * b).sum();
        let m_norm = m_norms[i];
        let mut out = grad.row_mut(i);
        for (j, gj) in g.iter().enumerate() {
            out.scaled_add(*gj / m_norm, &t_unit.row(j));
        }
        // the -(sum_j g_j cos_j) u / |m| term
        out.scaled_add(-g_dot_cos / (m_norm * m_norm), &semantics.row(i));
    }
    Ok(grad)
}

fn check_block(sem: ArrayView2<'_, f64>, tgt: ArrayView2<'_, f64>, name: &str) -> Result<()> {
    if sem.dim() != tgt.dim() {
        return Err(Error::shape(format!(
            "{name} semantics are {:?} but targets are {:?}",
            sem.dim(),
            tgt.dim()
        )));
    }
    Ok(())
}

fn check_image_inputs(
    sem_gt: ArrayView2<'_, f64>,
    tgt_gt: ArrayView2<'_, f64>,
    sem_self: ArrayView2<'_, f64>,
    tgt_self: ArrayView2<'_, f64>,
) -> Result<usize> {
    check_block(sem_gt, tgt_gt, "ground-truth")?;
    check_block(sem_self, tgt_self, "self-label")?;
    if sem_gt.nrows() > 0 && sem_self.nrows() > 0 && sem_gt.ncols() != sem_self.ncols() {
        return Err(Error::shape(format!(
            "ground-truth width {} differs from self-label width {}",
            sem_gt.ncols(),
            sem_self.ncols()
        )));
    }
    Ok(sem_gt.len() + sem_self.len())
}

/// Mean absolute error over every element of the stacked ground-truth and
/// self-label blocks. Both blocks weigh equally per element. Returns 0 when
/// both blocks are empty.
pub fn image_loss(
    sem_gt: ArrayView2<'_, f64>,
    tgt_gt: ArrayView2<'_, f64>,
    sem_self: ArrayView2<'_, f64>,
    tgt_self: ArrayView2<'_, f64>,
) -> Result<f64> {
    let count = check_image_inputs(sem_gt, tgt_gt, sem_self, tgt_self)?;
    if count == 0 {
        return Ok(0.0);
    }
    let abs_sum = |s: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>| -> f64 {
        s.iter().zip(t.iter()).map(|(a, b)| (a - b).abs()).sum()
    };
    Ok((abs_sum(sem_gt, tgt_gt) + abs_sum(sem_self, tgt_self)) / count as f64)
}

/// Subgradient of [`image_loss`]: `sign(m - i) / E`, taking 0 at exact ties.
/// Returns the gradients for the ground-truth and self-label blocks.
pub fn image_loss_grad(
    sem_gt: ArrayView2<'_, f64>,
    tgt_gt: ArrayView2<'_, f64>,
    sem_self: ArrayView2<'_, f64>,
    tgt_self: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let count = check_image_inputs(sem_gt, tgt_gt, sem_self, tgt_self)?;
    let inv = if count == 0 { 0.0 } else { 1.0 / count as f64 };
    let sub = |s: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>| -> Array2<f64> {
        let mut g = &s - &t;
        g.mapv_inplace(|r| {
            if r > 0.0 {
                inv
            } else if r < 0.0 {
                -inv
            } else {
                0.0
            }
        });
        g
    };
    Ok((sub(sem_gt, tgt_gt), sub(sem_self, tgt_self)))
}

/// `w_text * text + w_image * image`.
pub fn dual_loss(cfg: &LossConfig, text: f64, image: f64) -> f64 {
    cfg.w_text * text + cfg.w_image * image
}

/// Everything one training step needs for the class-side loss of a batch.
#[derive(Debug, Clone, Copy)]
pub struct DualLossBatch<'a> {
    /// Semantic outputs of anchors matched to ground-truth labels.
    pub semantics_gt: ArrayView2<'a, f64>,
    /// Seen-class text embeddings.
    pub text_refs: &'a EmbeddingSet,
    pub class_of_anchor: &'a [usize],
    /// Image embeddings of the ground-truth crop each anchor matched.
    pub image_targets_gt: ArrayView2<'a, f64>,
    /// Semantic outputs of anchors matched to self-labels.
    pub semantics_self: ArrayView2<'a, f64>,
    pub image_targets_self: ArrayView2<'a, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualLossOutput {
    pub loss: f64,
    pub text_loss: f64,
    pub image_loss: f64,
    /// Gradient of `loss` with respect to `semantics_gt`.
    pub grad_gt: Array2<f64>,
    /// Gradient of `loss` with respect to `semantics_self`.
    pub grad_self: Array2<f64>,
}

/// Evaluates the weighted dual loss and its gradients. Self-label anchors
/// take part in the image term only.
pub fn dual_loss_with_grad(cfg: &LossConfig, batch: &DualLossBatch<'_>) -> Result<DualLossOutput> {
    cfg.validate()?;
    let (text, text_grad) = if batch.semantics_gt.nrows() == 0 {
        (0.0, Array2::zeros(batch.semantics_gt.raw_dim()))
    } else {
        (
            text_loss(batch.semantics_gt, batch.text_refs, batch.class_of_anchor, cfg.tau)?,
            text_loss_grad(batch.semantics_gt, batch.text_refs, batch.class_of_anchor, cfg.tau)?,
        )
    };
    let image = image_loss(
        batch.semantics_gt,
        batch.image_targets_gt,
        batch.semantics_self,
        batch.image_targets_self,
    )?;
    let (img_gt, img_self) = image_loss_grad(
        batch.semantics_gt,
        batch.image_targets_gt,
        batch.semantics_self,
        batch.image_targets_self,
    )?;
    let grad_gt = text_grad * cfg.w_text + img_gt * cfg.w_image;
    let grad_self = img_self * cfg.w_image;
    Ok(DualLossOutput {
        loss: dual_loss(cfg, text, image),
        text_loss: text,
        image_loss: image,
        grad_gt,
        grad_self,
    })
}
