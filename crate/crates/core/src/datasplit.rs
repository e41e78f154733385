//! Seen/unseen dataset splits.
//!
//! Training keeps only images without a single unseen instance; every image
//! with at least one unseen instance is held out, either as the test set or,
//! when building a hyperparameter validation set from a training pool, as
//! the validation set. Images without labels count as training images.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::alignment::GroundTruthLabel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    pub labels: Vec<GroundTruthLabel>,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>, labels: Vec<GroundTruthLabel>) -> Self {
        ImageRecord {
            image_id: image_id.into(),
            width: None,
            height: None,
            labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub images: Vec<ImageRecord>,
    pub class_names: Vec<String>,
}

impl DatasetIndex {
    pub fn new(images: Vec<ImageRecord>, class_names: Vec<String>) -> Result<Self> {
        let ds = DatasetIndex {
            images,
            class_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for img in &self.images {
            if !ids.insert(img.image_id.as_str()) {
                return Err(Error::invalid(format!("duplicate image id {:?}", img.image_id)));
            }
            for l in &img.labels {
                if l.class_index >= self.class_names.len() {
                    return Err(Error::invalid(format!(
                        "image {:?} has class index {} outside {} classes",
                        img.image_id,
                        l.class_index,
                        self.class_names.len()
                    )));
                }
                if l.image_id != img.image_id {
                    return Err(Error::invalid(format!(
                        "label for {:?} stored under image {:?}",
                        l.image_id, img.image_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    /// All labels of all images, in image order.
    pub fn labels(&self) -> impl Iterator<Item = &GroundTruthLabel> {
        self.images.iter().flat_map(|i| i.labels.iter())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassSplit {
    pub seen: BTreeSet<usize>,
    pub unseen: BTreeSet<usize>,
}

impl ClassSplit {
    /// Unseen classes as given; every other class of the dataset is seen.
    pub fn from_unseen(n_classes: usize, unseen: impl IntoIterator<Item = usize>) -> Self {
        let unseen: BTreeSet<usize> = unseen.into_iter().collect();
        let seen = (0..n_classes).filter(|c| !unseen.contains(c)).collect();
        ClassSplit { seen, unseen }
    }

    /// Resolves unseen class names against the dataset's class list.
    pub fn from_unseen_names(ds: &DatasetIndex, names: &[String]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                ds.class_index(n)
                    .ok_or_else(|| Error::invalid(format!("unseen class {n:?} is not in the dataset")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_unseen(ds.class_names.len(), idx))
    }

    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if self.unseen.is_empty() {
            return Err(Error::invalid("split has no unseen classes"));
        }
        if let Some(c) = self.seen.intersection(&self.unseen).next() {
            return Err(Error::invalid(format!("class {c} is both seen and unseen")));
        }
        if let Some(c) = self.seen.union(&self.unseen).find(|&&c| c >= n_classes) {
            return Err(Error::invalid(format!("class {c} outside {n_classes} classes")));
        }
        Ok(())
    }

    pub fn seen_mask(&self, n_classes: usize) -> Vec<bool> {
        (0..n_classes).map(|c| self.seen.contains(&c)).collect()
    }
}

/// What the held-out images are used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HoldOut {
    #[default]
    Test,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZsdSplit {
    pub train: Vec<String>,
    /// Images with at least one unseen instance.
    pub held_out: Vec<String>,
    pub role: HoldOut,
}

impl ZsdSplit {
    pub fn test(&self) -> &[String] {
        match self.role {
            HoldOut::Test => &self.held_out,
            HoldOut::Validation => &[],
        }
    }

    pub fn validation(&self) -> &[String] {
        match self.role {
            HoldOut::Validation => &self.held_out,
            HoldOut::Test => &[],
        }
    }
}

pub fn make_zsd_split(ds: &DatasetIndex, split: &ClassSplit, role: HoldOut) -> Result<ZsdSplit> {
    split.validate(ds.class_names.len())?;
    let (held_out, train): (Vec<&ImageRecord>, Vec<&ImageRecord>) = ds
        .images
        .iter()
        .partition(|img| img.labels.iter().any(|l| split.unseen.contains(&l.class_index)));
    let ids = |v: Vec<&ImageRecord>| v.into_iter().map(|i| i.image_id.clone()).collect();
    Ok(ZsdSplit {
        train: ids(train),
        held_out: ids(held_out),
        role,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnseenLabels {
    Keep,
    Drop,
}

/// Selects `ids` (in the given order) and optionally removes unseen-class
/// labels from them.
pub fn strip_unseen_labels(
    ds: &DatasetIndex,
    split: &ClassSplit,
    ids: &[String],
    mode: UnseenLabels,
) -> Result<DatasetIndex> {
    let by_id: HashMap<&str, &ImageRecord> =
        ds.images.iter().map(|i| (i.image_id.as_str(), i)).collect();
    let images = ids
        .iter()
        .map(|id| {
            let img = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::invalid(format!("unknown image id {id:?}")))?;
            let mut out = (*img).clone();
            if mode == UnseenLabels::Drop {
                out.labels.retain(|l| !split.unseen.contains(&l.class_index));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetIndex {
        images,
        class_names: ds.class_names.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn label(img: &str, class: usize) -> GroundTruthLabel {
        GroundTruthLabel::new(img, BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), class)
    }

    fn ds() -> DatasetIndex {
        DatasetIndex::new(
            vec![
                ImageRecord::new("img1", vec![label("img1", 0)]),
                ImageRecord::new("img2", vec![label("img2", 0), label("img2", 1)]),
            ],
            vec!["a".into(), "u".into()],
        )
        .unwrap()
    }

    #[test]
    fn basic_split() {
        let split = ClassSplit::from_unseen(2, [1]);
        let s = make_zsd_split(&ds(), &split, HoldOut::Test).unwrap();
        assert_eq!(s.train, vec!["img1"]);
        assert_eq!(s.test(), ["img2".to_string()]);
        assert!(s.validation().is_empty());
        let v = make_zsd_split(&ds(), &split, HoldOut::Validation).unwrap();
        assert_eq!(v.validation(), ["img2".to_string()]);
        assert!(v.test().is_empty());
    }

    #[test]
    fn degenerate_splits() {
        let s = make_zsd_split(&ds(), &ClassSplit::from_unseen(3, [2]), HoldOut::Test);
        // class 2 does not exist in a two-class dataset
        assert!(s.is_err());
        let only_seen = DatasetIndex::new(
            vec![ImageRecord::new("x", vec![label("x", 0)])],
            vec!["a".into(), "u".into()],
        )
        .unwrap();
        let s = make_zsd_split(&only_seen, &ClassSplit::from_unseen(2, [1]), HoldOut::Test).unwrap();
        assert!(s.held_out.is_empty());
        let s = make_zsd_split(&ds(), &ClassSplit::from_unseen(2, [0]), HoldOut::Test).unwrap();
        assert!(s.train.is_empty());
        assert!(make_zsd_split(&ds(), &ClassSplit::default(), HoldOut::Test).is_err());
    }

    #[test]
    fn unlabeled_images_train() {
        let d = DatasetIndex::new(vec![ImageRecord::new("e", vec![])], vec!["a".into(), "u".into()])
            .unwrap();
        let s = make_zsd_split(&d, &ClassSplit::from_unseen(2, [1]), HoldOut::Test).unwrap();
        assert_eq!(s.train, vec!["e"]);
    }

    #[test]
    fn strip_modes() {
        let split = ClassSplit::from_unseen(2, [1]);
        let d = ds();
        let s = make_zsd_split(&d, &split, HoldOut::Test).unwrap();
        let train = strip_unseen_labels(&d, &split, &s.train, UnseenLabels::Drop).unwrap();
        assert_eq!(train.images[0], d.images[0]);
        let test = strip_unseen_labels(&d, &split, &s.held_out, UnseenLabels::Drop).unwrap();
        assert_eq!(test.images[0].labels.len(), 1);
        let kept = strip_unseen_labels(&d, &split, &s.held_out, UnseenLabels::Keep).unwrap();
        assert_eq!(kept.images[0].labels.len(), 2);
        assert!(strip_unseen_labels(&d, &split, &["nope".to_string()], UnseenLabels::Keep).is_err());
    }

    #[test]
    fn index_validation() {
        assert!(DatasetIndex::new(
            vec![ImageRecord::new("a", vec![]), ImageRecord::new("a", vec![])],
            vec![]
        )
        .is_err());
        assert!(DatasetIndex::new(vec![ImageRecord::new("a", vec![label("a", 5)])], vec!["x".into()])
            .is_err());
    }

    #[test]
    fn names_resolve() {
        let s = ClassSplit::from_unseen_names(&ds(), &["u".to_string()]).unwrap();
        assert_eq!(s.seen_mask(2), vec![true, false]);
        assert!(ClassSplit::from_unseen_names(&ds(), &["zebra".to_string()]).is_err());
    }
}
