//! Building a seen-only training set and an unseen test set.

use zsd_kit::alignment::GroundTruthLabel;
use zsd_kit::datasplit::{
    make_zsd_split, strip_unseen_labels, ClassSplit, DatasetIndex, HoldOut, ImageRecord, UnseenLabels,
};
use zsd_kit::geometry::BBox;

fn main() -> zsd_kit::Result<()> {
    let unit = BBox::new(0.0, 0.0, 10.0, 10.0)?;
    let img = |id: &str, classes: &[usize]| {
        ImageRecord::new(id, classes.iter().map(|&c| GroundTruthLabel::new(id, unit, c)).collect())
    };
    let ds = DatasetIndex::new(
        vec![
            img("000", &[0, 1]),
            img("001", &[1, 2]),
            img("002", &[0]),
            img("003", &[2, 2]),
            img("004", &[]),
        ],
        vec!["cat".into(), "dog".into(), "zebra".into()],
    )?;
    let split = ClassSplit::from_unseen_names(&ds, &["zebra".to_string()])?;

    let s = make_zsd_split(&ds, &split, HoldOut::Test)?;
    println!("train {:?}", s.train);
    println!("test  {:?}", s.test());
    let test = strip_unseen_labels(&ds, &split, s.test(), UnseenLabels::Keep)?;
    println!("test labels: {}", test.labels().count());

    // the same rule applied to a training pool builds a validation set
    let v = make_zsd_split(&ds, &split, HoldOut::Validation)?;
    println!("validation {:?}", v.validation());
    Ok(())
}
