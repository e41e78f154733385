use ndarray::Array2;
use proptest::prelude::*;

use zsd_kit::alignment::{
    dual_loss, image_loss, match_anchors, text_loss, AnchorOutput, GroundTruthLabel, LossConfig,
};
use zsd_kit::datasplit::{make_zsd_split, ClassSplit, DatasetIndex, HoldOut, ImageRecord};
use zsd_kit::embedding::{cosine_similarity, temperatured_softmax, EmbeddingSet, Temperature};
use zsd_kit::evaluation::{evaluate_gzsd, evaluate_zsd, EvalConfig, EvalReport};
use zsd_kit::geometry::{iou, BBox};
use zsd_kit::postprocess::{nms, postprocess, Detection, PostprocessConfig, Variant};
use zsd_kit::selflabel::{merge_self_labels, SelfLabel, SelfLabelConfig};

fn bbox(extent: f64) -> impl Strategy<Value = BBox> {
    (0.0..extent, 0.0..extent, 1.0..extent / 2.0, 1.0..extent / 2.0)
        .prop_map(|(x, y, w, h)| BBox::from_xywh(x, y, w, h).unwrap())
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

/// Up to four images, three classes.
fn eval_instance() -> impl Strategy<Value = (Vec<Detection>, Vec<GroundTruthLabel>)> {
    let gt = (0..4usize, bbox(100.0), 0..3usize)
        .prop_map(|(img, b, c)| GroundTruthLabel::new(format!("i{img}"), b, c));
    let det = (0..4usize, bbox(100.0), 0..3usize, 0.0..1.0f64).prop_map(|(img, b, c, s)| Detection {
        image_id: format!("i{img}"),
        bbox: b,
        class_index: c,
        confidence: s,
    });
    (prop::collection::vec(det, 0..30), prop::collection::vec(gt, 0..15))
}

/// Detections that sit near ground truth so matches actually happen.
fn near_instance() -> impl Strategy<Value = (Vec<Detection>, Vec<GroundTruthLabel>)> {
    eval_instance().prop_flat_map(|(dets, gts)| {
        let n = gts.len();
        let shifts = prop::collection::vec((0..n.max(1), -6.0..6.0f64, -6.0..6.0f64, 0.0..1.0f64), 0..25);
        shifts.prop_map(move |s| {
            let mut dets = dets.clone();
            if n > 0 {
                for (k, dx, dy, conf) in s {
                    let g = &gts[k];
                    dets.push(Detection {
                        image_id: g.image_id.clone(),
                        bbox: g.bbox.translate(dx, dy).unwrap(),
                        class_index: g.class_index,
                        confidence: conf,
                    });
                }
            }
            (dets, gts.clone())
        })
    })
}

fn cfg3() -> EvalConfig {
    EvalConfig::new(names(3))
}

fn recall_values(r: &EvalReport) -> Vec<f64> {
    r.recall_at_100.values().copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ap_ignores_monotone_rescaling((dets, gts) in near_instance()) {
        let a = evaluate_zsd(&dets, &gts, &cfg3()).unwrap();
        let warped: Vec<Detection> = dets
            .iter()
            .map(|d| Detection { confidence: 0.05 + 0.9 * d.confidence.powi(3), ..d.clone() })
            .collect();
        let b = evaluate_zsd(&warped, &gts, &cfg3()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn recall_monotone_in_cap((dets, gts) in near_instance(), cap in 1usize..8) {
        let mut small = cfg3();
        small.recall_cap = cap;
        let mut large = cfg3();
        large.recall_cap = cap + 3;
        let r1 = recall_values(&evaluate_zsd(&dets, &gts, &small).unwrap());
        let r2 = recall_values(&evaluate_zsd(&dets, &gts, &large).unwrap());
        for (a, b) in r1.iter().zip(&r2) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn recall_monotone_in_threshold((dets, gts) in near_instance()) {
        let mut cfg = cfg3();
        cfg.iou_thresholds_recall = vec![0.1, 0.3, 0.5, 0.7, 0.9];
        let r = recall_values(&evaluate_zsd(&dets, &gts, &cfg).unwrap());
        for w in r.windows(2) {
            prop_assert!(w[0] >= w[1], "{:?}", r);
        }
    }

    #[test]
    fn all_seen_gzsd_equals_zsd((dets, gts) in near_instance()) {
        let z = evaluate_zsd(&dets, &gts, &cfg3()).unwrap();
        let g = evaluate_gzsd(&dets, &gts, &cfg3().with_seen_mask(vec![true; 3])).unwrap();
        let summary = g.gzsd.clone().unwrap();
        prop_assert_eq!(&z.per_class_ap, &g.per_class_ap);
        prop_assert_eq!(z.map_50, summary.seen_map);
        prop_assert_eq!(&z.recall_at_100, &summary.seen_recall);
        prop_assert_eq!(EvalReport { gzsd: None, ..g }, z);
    }

    #[test]
    fn duplicates_never_raise_recall((dets, gts) in near_instance(), picks in prop::collection::vec(0usize..64, 1..10)) {
        let base = recall_values(&evaluate_zsd(&dets, &gts, &cfg3()).unwrap());
        if dets.is_empty() {
            return Ok(());
        }
        let mut more = dets.clone();
        for p in picks {
            more.push(dets[p % dets.len()].clone());
        }
        let dup = recall_values(&evaluate_zsd(&more, &gts, &cfg3()).unwrap());
        for (a, b) in base.iter().zip(&dup) {
            prop_assert!(b <= a);
        }
    }

    #[test]
    fn postprocess_output_contract(
        raw in prop::collection::vec((bbox(200.0), 0.0..1.0f64, prop::collection::vec(-1.0..1.0f64, 4)), 1..60),
        cap in 1usize..20,
        variant in prop::sample::select(vec![Variant::YoloPost, Variant::ZsdPost, Variant::ZsdPostPlus]),
    ) {
        let refs = EmbeddingSet::from_rows([
            ("a", vec![1.0, 0.0, 0.0, 0.0]),
            ("b", vec![0.0, 1.0, 0.0, 0.2]),
            ("c", vec![0.3, 0.0, -1.0, 0.0]),
        ]).unwrap();
        let anchors: Vec<AnchorOutput> = raw
            .into_iter()
            .filter(|(_, _, s)| s.iter().any(|v| *v != 0.0))
            .map(|(b, o, s)| AnchorOutput::new(b, o, s).unwrap())
            .collect();
        let mut cfg = PostprocessConfig::zsd().with_variant(variant);
        cfg.max_detections = cap;
        let dets = postprocess("x", &anchors, &refs, &cfg).unwrap();
        prop_assert!(dets.len() <= cap);
        for w in dets.windows(2) {
            prop_assert!(w[0].confidence >= w[1].confidence);
        }
        for (i, d) in dets.iter().enumerate() {
            prop_assert!((0.0..=1.0).contains(&d.confidence));
            for e in &dets[i + 1..] {
                prop_assert!(iou(&d.bbox, &e.bbox) <= cfg.nms_iou);
            }
        }
    }

    #[test]
    fn objectness_bump_keeps_zsd_confidences(
        raw in prop::collection::vec((bbox(200.0), 0.0..1.0f64, prop::collection::vec(-1.0..1.0f64, 3)), 1..40),
        pick in 0usize..40,
        bump in 0.0..1.0f64,
    ) {
        let refs = EmbeddingSet::from_rows([("a", vec![1.0, 0.0, 0.0]), ("b", vec![0.0, 1.0, 0.5])]).unwrap();
        let mut anchors: Vec<AnchorOutput> = raw
            .into_iter()
            .filter(|(_, _, s)| s.iter().any(|v| *v != 0.0))
            .map(|(b, o, s)| AnchorOutput::new(b, o, s).unwrap())
            .collect();
        if anchors.is_empty() {
            return Ok(());
        }
        let cfg = PostprocessConfig::recall().with_variant(Variant::ZsdPost);
        let before = postprocess("x", &anchors, &refs, &cfg).unwrap();
        let k = pick % anchors.len();
        anchors[k].objectness = (anchors[k].objectness + bump).min(1.0);
        let after = postprocess("x", &anchors, &refs, &cfg).unwrap();
        for d in &before {
            if let Some(e) = after.iter().find(|e| e.bbox == d.bbox) {
                prop_assert_eq!(d.confidence, e.confidence);
                prop_assert_eq!(d.class_index, e.class_index);
            }
        }
    }

    #[test]
    fn softmax_stable_for_large_logits(rows in prop::collection::vec(prop::collection::vec(-1e4..1e4f64, 2..10), 1..10), tau in 0.0..10.0f64) {
        let c = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied().cycle().take(c)).collect();
        let m = Array2::from_shape_vec((rows.len(), c), flat).unwrap();
        let z = temperatured_softmax(m.view(), Temperature::new(tau).unwrap()).unwrap();
        prop_assert!(z.iter().all(|v| v.is_finite()));
        for row in z.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn text_loss_nonnegative_and_falls_with_tau(
        n in 1usize..6,
        c in 2usize..6,
        seed_rows in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 6), 6),
        t1 in 0.0..3.0f64,
        dt in 0.1..2.0f64,
    ) {
        // one-hot references, each anchor leaning towards its own class
        let refs = EmbeddingSet::from_rows((0..c).map(|k| {
            (format!("k{k}"), (0..c).map(|j| (j == k) as u8 as f64).collect::<Vec<_>>())
        })).unwrap();
        let class_of: Vec<usize> = (0..n).map(|i| i % c).collect();
        let flat: Vec<f64> = (0..n)
            .flat_map(|i| {
                let own = class_of[i];
                (0..c).map(move |j| if j == own { 2.0 } else { 0.0 }).collect::<Vec<_>>()
            })
            .zip(seed_rows.iter().flatten().cycle())
            .map(|(base, noise)| base + 0.9 * noise)
            .collect();
        let sem = Array2::from_shape_vec((n, c), flat).unwrap();
        let cos = cosine_similarity(sem.view(), refs.vectors()).unwrap();
        let own_is_max = (0..n).all(|i| (0..c).all(|j| j == class_of[i] || cos[[i, j]] < cos[[i, class_of[i]]]));
        prop_assume!(own_is_max);
        let l1 = text_loss(sem.view(), &refs, &class_of, Temperature::new(t1).unwrap()).unwrap();
        let l2 = text_loss(sem.view(), &refs, &class_of, Temperature::new(t1 + dt).unwrap()).unwrap();
        prop_assert!(l1 >= 0.0 && l2 >= 0.0);
        prop_assert!(l2 < l1, "{} !< {}", l2, l1);
    }

    #[test]
    fn image_loss_without_self_is_mae(vals in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..40), d in 1usize..5) {
        let n = vals.len() / d;
        prop_assume!(n > 0);
        let (a, b): (Vec<f64>, Vec<f64>) = vals[..n * d].iter().copied().unzip();
        let sem = Array2::from_shape_vec((n, d), a.clone()).unwrap();
        let tgt = Array2::from_shape_vec((n, d), b.clone()).unwrap();
        let empty = Array2::<f64>::zeros((0, d));
        let got = image_loss(sem.view(), tgt.view(), empty.view(), empty.view()).unwrap();
        let mae = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / (n * d) as f64;
        prop_assert!((got - mae).abs() < 1e-12);
    }

    #[test]
    fn dual_loss_is_exactly_weighted(x in 0.0..100.0f64) {
        let cfg = LossConfig::default();
        prop_assert_eq!(dual_loss(&cfg, 0.0, x), cfg.w_image * x);
        prop_assert_eq!(dual_loss(&cfg, x, 0.0), cfg.w_text * x);
    }

    #[test]
    fn matching_pairs_are_iou_argmax(anchors in prop::collection::vec(bbox(60.0), 0..20), labels in prop::collection::vec(bbox(60.0), 1..6)) {
        let sem = vec![1.0, 0.0];
        let a: Vec<AnchorOutput> = anchors.iter().map(|b| AnchorOutput::new(*b, 0.5, sem.clone()).unwrap()).collect();
        let g: Vec<GroundTruthLabel> = labels.iter().map(|b| GroundTruthLabel::new("x", *b, 0)).collect();
        let thr = LossConfig::default().positive_iou_threshold;
        let m = match_anchors(&a, &g, thr).unwrap();
        for (i, ab) in anchors.iter().enumerate() {
            let best = labels.iter().map(|l| iou(ab, l)).fold(0.0, f64::max);
            match m.label_of(i) {
                Some(j) => {
                    prop_assert!(best > thr);
                    prop_assert_eq!(iou(ab, &labels[j]), best);
                }
                None => prop_assert!(best <= thr),
            }
        }
    }

    #[test]
    fn self_labels_ignore_candidate_order(
        gts in prop::collection::vec(bbox(300.0), 0..5),
        cands in prop::collection::vec((bbox(300.0), 0.0..1.0f64), 0..30),
        rot in 0usize..30,
    ) {
        let g: Vec<GroundTruthLabel> = gts.iter().map(|b| GroundTruthLabel::new("x", *b, 0)).collect();
        let mut c: Vec<SelfLabel> = cands.iter().map(|(b, o)| SelfLabel::new("x", *b, *o).unwrap()).collect();
        let mut seen = std::collections::HashSet::new();
        c.retain(|s| seen.insert(s.objectness.to_bits()));
        let cfg = SelfLabelConfig::default();
        let key = |v: Vec<SelfLabel>| {
            let mut k: Vec<[u64; 5]> = v
                .iter()
                .map(|s| {
                    let b = s.bbox.corners();
                    [b[0].to_bits(), b[1].to_bits(), b[2].to_bits(), b[3].to_bits(), s.objectness.to_bits()]
                })
                .collect();
            k.sort();
            k
        };
        let a = key(merge_self_labels(&g, &c, &cfg).unwrap());
        if !c.is_empty() {
            let r = rot % c.len();
            c.rotate_left(r);
            c.reverse();
        }
        let b = key(merge_self_labels(&g, &c, &cfg).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn self_labels_without_gt_are_plain_nms(cands in prop::collection::vec((bbox(300.0), 0.0..1.0f64), 0..30)) {
        let c: Vec<SelfLabel> = cands.iter().map(|(b, o)| SelfLabel::new("x", *b, *o).unwrap()).collect();
        let cfg = SelfLabelConfig::default();
        let out = merge_self_labels(&[], &c, &cfg).unwrap();
        let filtered: Vec<&SelfLabel> = c
            .iter()
            .filter(|s| cfg.passes_size(&s.bbox) && s.objectness >= cfg.objectness_cutoff)
            .collect();
        let boxes: Vec<BBox> = filtered.iter().map(|s| s.bbox).collect();
        let scores: Vec<f64> = filtered.iter().map(|s| s.objectness).collect();
        let want: Vec<SelfLabel> = nms(&boxes, &scores, cfg.merge_iou_threshold)
            .unwrap()
            .into_iter()
            .map(|i| filtered[i].clone())
            .collect();
        let mut got = out.clone();
        let mut want = want;
        let order = |v: &mut Vec<SelfLabel>| v.sort_by(|a, b| a.objectness.total_cmp(&b.objectness));
        order(&mut got);
        order(&mut want);
        prop_assert_eq!(got, want);
        prop_assert!(merge_self_labels(&[], &[], &cfg).unwrap().is_empty());
    }

    #[test]
    fn split_independent_of_image_order(
        labels in prop::collection::vec(prop::collection::vec(0usize..5, 0..4), 0..20),
        unseen in prop::collection::btree_set(0usize..5, 1..4),
    ) {
        prop_assume!(unseen.len() < 5);
        let images: Vec<ImageRecord> = labels
            .iter()
            .enumerate()
            .map(|(i, ls)| {
                let id = format!("m{i}");
                let l = ls.iter().map(|&c| GroundTruthLabel::new(&id, BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), c)).collect();
                ImageRecord::new(id, l)
            })
            .collect();
        let split = ClassSplit::from_unseen(5, unseen);
        let ds = DatasetIndex::new(images.clone(), names(5)).unwrap();
        let mut rev = images;
        rev.reverse();
        let ds_rev = DatasetIndex::new(rev, names(5)).unwrap();
        let a = make_zsd_split(&ds, &split, HoldOut::Test).unwrap();
        let b = make_zsd_split(&ds_rev, &split, HoldOut::Test).unwrap();
        let set = |v: &[String]| v.iter().cloned().collect::<std::collections::BTreeSet<_>>();
        prop_assert_eq!(set(&a.train), set(&b.train));
        prop_assert_eq!(set(&a.held_out), set(&b.held_out));
        prop_assert_eq!(&a, &make_zsd_split(&ds, &split, HoldOut::Test).unwrap());
    }
}
