//! The three post-processing variants on the same anchors.

use zsd_kit::alignment::AnchorOutput;
use zsd_kit::embedding::EmbeddingSet;
use zsd_kit::geometry::BBox;
use zsd_kit::postprocess::{postprocess, PostprocessConfig, Variant};

fn main() -> zsd_kit::Result<()> {
    let refs = EmbeddingSet::from_rows([
        ("zebra", vec![1.0, 0.0, 0.0, 0.0]),
        ("yak", vec![0.0, 1.0, 0.0, 0.0]),
        ("owl", vec![0.0, 0.0, 1.0, 0.0]),
    ])?;
    let anchors = vec![
        // weakly objectness-scored but semantically clear
        AnchorOutput::new(BBox::new(10.0, 10.0, 60.0, 60.0)?, 0.25, vec![0.95, 0.05, 0.0, 0.1])?,
        // overlapping, strong objectness, ambiguous semantics
        AnchorOutput::new(BBox::new(14.0, 12.0, 62.0, 64.0)?, 0.95, vec![0.5, 0.45, 0.0, 0.1])?,
        AnchorOutput::new(BBox::new(100.0, 20.0, 140.0, 70.0)?, 0.6, vec![0.0, 0.1, 0.9, 0.0])?,
        // below the objectness cutoff
        AnchorOutput::new(BBox::new(200.0, 20.0, 240.0, 70.0)?, 0.0005, vec![0.0, 1.0, 0.0, 0.0])?,
    ];
    for variant in [Variant::YoloPost, Variant::ZsdPost, Variant::ZsdPostPlus] {
        let cfg = PostprocessConfig::zsd().with_variant(variant);
        println!("{}:", variant.as_str());
        for d in postprocess("img", &anchors, &refs, &cfg)? {
            println!(
                "  {:<5} {:.4} {:?}",
                refs.names()[d.class_index],
                d.confidence,
                d.bbox.corners()
            );
        }
    }
    Ok(())
}
