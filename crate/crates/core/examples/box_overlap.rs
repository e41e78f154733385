//! IoU between boxes, and a full IoU matrix.

use zsd_kit::geometry::{boxes_from_corners, iou, iou_matrix, BBox};

fn main() -> zsd_kit::Result<()> {
    let a = BBox::new(0.0, 0.0, 10.0, 10.0)?;
    let b = BBox::new(5.0, 5.0, 15.0, 15.0)?;
    println!("iou(a, b) = {:.4}", iou(&a, &b));

    let preds = boxes_from_corners(&[[0.0, 0.0, 10.0, 10.0], [2.0, 2.0, 9.0, 9.0], [50.0, 50.0, 60.0, 70.0]])?;
    let gts = boxes_from_corners(&[[1.0, 1.0, 10.0, 10.0], [48.0, 52.0, 61.0, 69.0]])?;
    println!("{:.3}", iou_matrix(&preds, &gts));

    // zero-area boxes are rejected
    if let Err(e) = BBox::new(3.0, 3.0, 3.0, 8.0) {
        println!("rejected: {e}");
    }
    Ok(())
}
