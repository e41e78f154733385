//! ZSD and GZSD evaluation of a handful of detections.

use zsd_kit::alignment::GroundTruthLabel;
use zsd_kit::evaluation::{evaluate_gzsd, evaluate_zsd, EvalConfig};
use zsd_kit::geometry::BBox;
use zsd_kit::postprocess::Detection;

fn det(img: &str, b: [f64; 4], class_index: usize, confidence: f64) -> Detection {
    Detection {
        image_id: img.into(),
        bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
        class_index,
        confidence,
    }
}

fn main() -> zsd_kit::Result<()> {
    let classes = vec!["cat".to_string(), "dog".to_string(), "yak".to_string()];
    let gts = vec![
        GroundTruthLabel::new("a", BBox::new(0.0, 0.0, 50.0, 50.0)?, 0),
        GroundTruthLabel::new("a", BBox::new(100.0, 0.0, 150.0, 60.0)?, 2),
        GroundTruthLabel::new("b", BBox::new(10.0, 10.0, 70.0, 70.0)?, 1),
        GroundTruthLabel::new("b", BBox::new(80.0, 80.0, 120.0, 130.0)?, 2),
    ];
    let dets = vec![
        det("a", [2.0, 1.0, 49.0, 52.0], 0, 0.9),
        det("a", [102.0, 3.0, 148.0, 60.0], 2, 0.7),
        det("a", [0.0, 0.0, 48.0, 50.0], 2, 0.6),
        det("b", [12.0, 8.0, 70.0, 66.0], 1, 0.8),
        det("b", [90.0, 95.0, 120.0, 130.0], 2, 0.4),
    ];

    let zsd = evaluate_zsd(&dets, &gts, &EvalConfig::new(classes.clone()))?;
    println!("mAP@0.5 {:.3}", zsd.map_50);
    println!("per class {:?}", zsd.per_class_ap);
    println!("Recall@100 {:?}", zsd.recall_at_100);

    let cfg = EvalConfig::new(classes).with_seen_mask(vec![true, true, false]);
    let g = evaluate_gzsd(&dets, &gts, &cfg)?.gzsd.unwrap();
    println!(
        "GZSD mAP seen {:.3} unseen {:.3} hm {:.3}",
        g.seen_map, g.unseen_map, g.hm_map
    );
    println!("GZSD hm recall {:?}", g.hm_recall);
    Ok(())
}
