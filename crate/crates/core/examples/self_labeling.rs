//! Turning class-agnostic detections into extra training labels.

use zsd_kit::alignment::GroundTruthLabel;
use zsd_kit::geometry::BBox;
use zsd_kit::selflabel::{merge_self_labels, SelfLabel, SelfLabelConfig};

fn main() -> zsd_kit::Result<()> {
    let gts = vec![GroundTruthLabel::new("img", BBox::new(0.0, 0.0, 100.0, 100.0)?, 0)];
    let candidates = vec![
        // overlaps the ground truth
        SelfLabel::new("img", BBox::new(10.0, 10.0, 90.0, 90.0)?, 0.95)?,
        SelfLabel::new("img", BBox::new(150.0, 20.0, 220.0, 90.0)?, 0.80)?,
        // near-duplicate of the previous one, lower objectness
        SelfLabel::new("img", BBox::new(152.0, 22.0, 221.0, 92.0)?, 0.60)?,
        // too small
        SelfLabel::new("img", BBox::new(300.0, 300.0, 320.0, 330.0)?, 0.90)?,
        // not confident enough
        SelfLabel::new("img", BBox::new(300.0, 0.0, 380.0, 80.0)?, 0.20)?,
    ];
    let cfg = SelfLabelConfig::default();
    for s in merge_self_labels(&gts, &candidates, &cfg)? {
        println!("self-label {:?} objectness {}", s.bbox.corners(), s.objectness);
    }
    Ok(())
}
