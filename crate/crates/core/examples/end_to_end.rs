//! Split, post-process and evaluate a small synthetic world, writing the
//! intermediate files the `zsd` tool reads.

use std::collections::HashMap;

use zsd_kit::alignment::{AnchorOutput, GroundTruthLabel};
use zsd_kit::cli::formats;
use zsd_kit::datasplit::{make_zsd_split, strip_unseen_labels, ClassSplit, DatasetIndex, HoldOut, ImageRecord, UnseenLabels};
use zsd_kit::embedding::{save_embeddings, EmbeddingSet, Encoding};
use zsd_kit::evaluation::{evaluate_zsd, EvalConfig};
use zsd_kit::geometry::BBox;
use zsd_kit::postprocess::{postprocess, PostprocessConfig};

fn main() -> zsd_kit::Result<()> {
    let classes = ["cat", "dog", "yak", "zebra"];
    let dim = 8;
    let one_hot = |k: usize| (0..dim).map(|j| (j == k) as u8 as f64).collect::<Vec<_>>();

    let mut images = Vec::new();
    let mut anchors = HashMap::new();
    for i in 0..8 {
        let id = format!("img{i}");
        let mut labels = Vec::new();
        let mut out = Vec::new();
        for slot in 0..3 {
            // every third image carries unseen classes
            let class = if i % 3 == 0 { (i + slot) % classes.len() } else { slot % 2 };
            let b = BBox::from_xywh(100.0 * slot as f64, 20.0, 60.0, 80.0)?;
            labels.push(GroundTruthLabel::new(&id, b, class));
            out.push(AnchorOutput::new(b, 0.9, one_hot(class))?);
            out.push(AnchorOutput::new(b.translate(4.0, 3.0)?, 0.0005, one_hot(6))?);
        }
        anchors.insert(id.clone(), out);
        images.push(ImageRecord::new(id, labels));
    }
    let ds = DatasetIndex::new(images, classes.iter().map(|s| s.to_string()).collect())?;

    let unseen = vec!["yak".to_string(), "zebra".to_string()];
    let split = ClassSplit::from_unseen_names(&ds, &unseen)?;
    let s = make_zsd_split(&ds, &split, HoldOut::Test)?;
    let test = strip_unseen_labels(&ds, &split, s.test(), UnseenLabels::Keep)?;
    println!("{} train images, {} test images", s.train.len(), s.test().len());

    let refs = EmbeddingSet::from_rows(unseen.iter().map(|n| {
        let k = classes.iter().position(|c| c == n).unwrap();
        (n.clone(), one_hot(k))
    }))?;
    let mut dets = Vec::new();
    for img in &test.images {
        dets.extend(postprocess(&img.image_id, &anchors[&img.image_id], &refs, &PostprocessConfig::zsd())?);
    }
    let gts: Vec<GroundTruthLabel> = test
        .labels()
        .filter_map(|l| {
            let name = &ds.class_names[l.class_index];
            unseen.iter().position(|u| u == name).map(|c| GroundTruthLabel { class_index: c, ..l.clone() })
        })
        .collect();
    let report = evaluate_zsd(&dets, &gts, &EvalConfig::new(unseen.clone()))?;
    println!("mAP@0.5 {:.3}, Recall@100 {:?}", report.map_50, report.recall_at_100);

    let dir = std::env::temp_dir().join("zsd-end-to-end");
    std::fs::create_dir_all(&dir).map_err(|e| zsd_kit::Error::Io { path: dir.clone(), source: e })?;
    formats::save_dataset(dir.join("test.jsonl"), &test)?;
    formats::save_detections(dir.join("detections.jsonl"), &dets, refs.names())?;
    save_embeddings(&refs, dir.join("refs.json"), Encoding::Inline)?;
    std::fs::write(dir.join("unseen.txt"), unseen.join("\n") + "\n")
        .map_err(|e| zsd_kit::Error::Io { path: dir.join("unseen.txt"), source: e })?;
    println!("wrote fixtures to {}", dir.display());
    println!(
        "try: zsd eval --dataset {0}/test.jsonl --detections {0}/detections.jsonl --unseen {0}/unseen.txt",
        dir.display()
    );
    Ok(())
}
