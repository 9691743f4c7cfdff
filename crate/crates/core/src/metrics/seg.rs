//! Overlap and case-level detection metrics for lesion masks.

use serde::{Deserialize, Serialize};

use crate::volume::Mask;
use crate::{PuirError, Result};

fn check_masks(pred: &Mask, gt: &Mask) -> Result<()> {
    pred.ensure_same_shape(gt, "predicted vs ground-truth mask")?;
    if !pred.is_binary() || !gt.is_binary() {
        return Err(PuirError::precondition("masks must contain only 0 and 1"));
    }
    Ok(())
}

fn overlap(pred: &Mask, gt: &Mask) -> usize {
    pred.data().iter().zip(gt.data()).filter(|(&p, &g)| p == 1 && g == 1).count()
}

/// `2|P ∩ G| / (|P| + |G|)`; two empty masks score 1.
pub fn dice(pred: &Mask, gt: &Mask) -> Result<f64> {
    check_masks(pred, gt)?;
    let den = pred.count() + gt.count();
    if den == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * overlap(pred, gt) as f64 / den as f64)
}

/// Case-level outcome of lesion detection (a case is predicted positive iff
/// the predicted mask is non-empty).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseClass {
    TruePositive,
    FalseNegative,
    TrueNegative,
    FalsePositive,
}

impl CaseClass {
    pub fn of(pred: &Mask, gt: &Mask) -> Self {
        match (pred.any(), gt.any()) {
            (true, true) => Self::TruePositive,
            (false, true) => Self::FalseNegative,
            (false, false) => Self::TrueNegative,
            (true, false) => Self::FalsePositive,
        }
    }
}

/// Dice that is zero for every case except true positives, where it equals
/// [`dice`]. Two empty masks therefore score 0, unlike plain dice.
pub fn challenge_dice(pred: &Mask, gt: &Mask) -> Result<(f64, CaseClass)> {
    check_masks(pred, gt)?;
    let class = CaseClass::of(pred, gt);
    let value = match class {
        CaseClass::TruePositive => dice(pred, gt)?,
        _ => 0.0,
    };
    Ok((value, class))
}

/// Case-level detection rates; `None` where the denominator is empty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRates {
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub fnr: Option<f64>,
    pub fpr: Option<f64>,
}

pub fn confusion_rates_from(classes: &[CaseClass]) -> ConfusionRates {
    let count = |c: CaseClass| classes.iter().filter(|&&x| x == c).count() as f64;
    let (tp, fn_, tn, fp) = (
        count(CaseClass::TruePositive),
        count(CaseClass::FalseNegative),
        count(CaseClass::TrueNegative),
        count(CaseClass::FalsePositive),
    );
    let pos = tp + fn_;
    let neg = tn + fp;
    ConfusionRates {
        tpr: (pos > 0.0).then(|| tp / pos),
        fnr: (pos > 0.0).then(|| fn_ / pos),
        tnr: (neg > 0.0).then(|| tn / neg),
        fpr: (neg > 0.0).then(|| fp / neg),
    }
}

/// Rates over a collection of `(prediction, ground truth)` cases.
pub fn confusion_rates(cases: &[(&Mask, &Mask)]) -> Result<ConfusionRates> {
    let mut classes = Vec::with_capacity(cases.len());
    for (p, g) in cases {
        check_masks(p, g)?;
        classes.push(CaseClass::of(p, g));
    }
    Ok(confusion_rates_from(&classes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8]) -> Mask {
        let mut data = bits.to_vec();
        data.resize(8, 0);
        Mask::new([2, 2, 2], data).unwrap()
    }

    #[test]
    fn dice_examples() {
        let a = mask(&[1, 1, 0, 0, 1]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&mask(&[1, 1]), &mask(&[0, 0, 1, 1])).unwrap(), 0.0);
        let p = mask(&[1, 1, 1, 1, 0, 0]);
        let g = mask(&[0, 0, 1, 1, 1, 1]);
        assert_eq!(dice(&p, &g).unwrap(), 0.5);
        assert_eq!(dice(&mask(&[]), &mask(&[])).unwrap(), 1.0);
        assert!(dice(&mask(&[2]), &mask(&[])).is_err());
    }

    #[test]
    fn challenge_dice_examples() {
        let empty = mask(&[]);
        let g = mask(&[1, 1]);
        assert_eq!(challenge_dice(&empty, &g).unwrap(), (0.0, CaseClass::FalseNegative));
        assert_eq!(challenge_dice(&empty, &empty).unwrap(), (0.0, CaseClass::TrueNegative));
        assert_eq!(challenge_dice(&g, &empty).unwrap(), (0.0, CaseClass::FalsePositive));
        let p = mask(&[1, 1, 1, 1, 0, 0]);
        let g = mask(&[0, 0, 1, 1, 1, 1]);
        assert_eq!(challenge_dice(&p, &g).unwrap().0, dice(&p, &g).unwrap());
    }

    #[test]
    fn confusion_examples() {
        let (e, f) = (mask(&[]), mask(&[1]));
        let all_right = confusion_rates(&[(&f, &f), (&e, &e)]).unwrap();
        assert_eq!(all_right, ConfusionRates { tpr: Some(1.0), tnr: Some(1.0), fnr: Some(0.0), fpr: Some(0.0) });
        let all_empty = confusion_rates(&[(&e, &f), (&e, &e)]).unwrap();
        assert_eq!((all_empty.tpr, all_empty.tnr), (Some(0.0), Some(1.0)));
        let r = confusion_rates(&[(&f, &f), (&f, &f), (&f, &f), (&e, &f), (&f, &e), (&e, &e)]).unwrap();
        assert_eq!((r.tpr, r.fpr), (Some(0.75), Some(0.5)));
        let only_pos = confusion_rates(&[(&f, &f)]).unwrap();
        assert_eq!((only_pos.tnr, only_pos.fpr), (None, None));
    }
}
