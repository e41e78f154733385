//! Anchor matching, the text/image dual loss, and a gradient check.

use ndarray::Array2;
use zsd_kit::alignment::{
    dual_loss_with_grad, match_anchors, run_gradient_suite, AnchorOutput, DualLossBatch, GroundTruthLabel,
    LossConfig,
};
use zsd_kit::embedding::EmbeddingSet;
use zsd_kit::geometry::BBox;

fn main() -> zsd_kit::Result<()> {
    let cfg = LossConfig::default();
    let refs = EmbeddingSet::from_rows([("cat", vec![1.0, 0.0, 0.0]), ("dog", vec![0.0, 1.0, 0.0])])?;
    let labels = vec![
        GroundTruthLabel::new("img", BBox::new(0.0, 0.0, 40.0, 40.0)?, 0),
        GroundTruthLabel::new("img", BBox::new(60.0, 0.0, 100.0, 40.0)?, 1),
    ];
    let anchors = vec![
        AnchorOutput::new(BBox::new(2.0, 2.0, 38.0, 42.0)?, 0.8, vec![0.7, 0.2, 0.1])?,
        AnchorOutput::new(BBox::new(58.0, 4.0, 96.0, 40.0)?, 0.7, vec![0.3, 0.5, 0.0])?,
        AnchorOutput::new(BBox::new(200.0, 200.0, 220.0, 220.0)?, 0.1, vec![0.1, 0.1, 0.9])?,
    ];
    let m = match_anchors(&anchors, &labels, cfg.positive_iou_threshold)?;
    println!("positive anchors: {:?}", m.pairs);

    let positives: Vec<usize> = m.anchors().collect();
    let flat: Vec<f64> = positives.iter().flat_map(|&i| anchors[i].semantic.clone()).collect();
    let sem = Array2::from_shape_vec((positives.len(), 3), flat).unwrap();
    let classes: Vec<usize> = positives
        .iter()
        .map(|&i| labels[m.label_of(i).unwrap()].class_index)
        .collect();
    // stand-in image embeddings of the matched crops
    let image_targets = Array2::from_shape_vec((2, 3), vec![0.9, 0.1, 0.0, 0.1, 0.8, 0.1]).unwrap();
    let none = Array2::<f64>::zeros((0, 3));
    let out = dual_loss_with_grad(
        &cfg,
        &DualLossBatch {
            semantics_gt: sem.view(),
            text_refs: &refs,
            class_of_anchor: &classes,
            image_targets_gt: image_targets.view(),
            semantics_self: none.view(),
            image_targets_self: none.view(),
        },
    )?;
    println!(
        "loss {:.4} (text {:.4}, image {:.4})",
        out.loss, out.text_loss, out.image_loss
    );
    println!("d loss / d semantics:\n{:.4}", out.grad_gt);

    let report = run_gradient_suite(100, 1)?;
    println!("gradient check over {} trials: max relative error {:.2e}", report.trials, report.max_error());
    Ok(())
}
