//! Confusion matrices, class-wise classification reports, and the two-panel
//! truth/prediction class map.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::cube::SpeciesMap;
use crate::error::{Error, Result};

/// K x K count matrix; entry (i, j) counts rows of true class `classes[i]`
/// predicted as `classes[j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: Vec<u8>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(classes: Vec<u8>, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes.len() * classes.len() {
            return Err(Error::Shape(format!(
                "{} counts for a {0}x{0} matrix of {1} classes",
                counts.len(),
                classes.len()
            )));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn get(&self, true_idx: usize, pred_idx: usize) -> u64 {
        self.counts[true_idx * self.k() + pred_idx]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Row sum: number of rows whose true class is `classes[i]`.
    pub fn support(&self, i: usize) -> u64 {
        (0..self.k()).map(|j| self.get(i, j)).sum()
    }

    /// Column sum: number of rows predicted as `classes[j]`.
    pub fn predicted(&self, j: usize) -> u64 {
        (0..self.k()).map(|i| self.get(i, j)).sum()
    }
}

/// Tallies a confusion matrix. Every label must appear in `classes`.
pub fn confusion_matrix(truth: &[u8], pred: &[u8], classes: &[u8]) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::Data(format!(
            "{} truth labels vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let k = classes.len();
    let mut index = [usize::MAX; 256];
    for (i, &c) in classes.iter().enumerate() {
        index[c as usize] = i;
    }
    let mut counts = vec![0u64; k * k];
    for (&t, &p) in truth.iter().zip(pred) {
        let ti = index[t as usize];
        let pi = index[p as usize];
        if ti == usize::MAX || pi == usize::MAX {
            return Err(Error::Data(format!(
                "label {} outside the class list",
                if ti == usize::MAX { t } else { p }
            )));
        }
        counts[ti * k + pi] += 1;
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
    })
}

/// Per-class metrics row of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class_id: u8,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when no row was predicted as this class (precision defaulted to 0).
    pub undefined_precision: bool,
    /// Set when the class has no support (recall defaulted to 0).
    pub undefined_recall: bool,
}

/// Class-wise and overall metrics of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    /// Mean recall over classes with support.
    pub balanced_accuracy: f64,
    /// Unweighted means over classes with support.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Support-weighted means.
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub total_support: u64,
}

/// Derives the classification report from a confusion matrix.
///
/// Zero-division convention: undefined precision/recall become 0 with the
/// corresponding flag set, never NaN.
pub fn classification_report(cm: &ConfusionMatrix) -> Result<ClassReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("cannot report on an empty evaluation".into()));
    }
    let k = cm.k();
    let mut per_class = Vec::with_capacity(k);
    let mut trace = 0u64;
    for i in 0..k {
        let support = cm.support(i);
        let predicted = cm.predicted(i);
        let hit = cm.get(i, i);
        trace += hit;
        let precision = if predicted == 0 {
            0.0
        } else {
            hit as f64 / predicted as f64
        };
        let recall = if support == 0 {
            0.0
        } else {
            hit as f64 / support as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            class_id: cm.classes[i],
            precision,
            recall,
            f1,
            support,
            undefined_precision: predicted == 0,
            undefined_recall: support == 0,
        });
    }

    let supported: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
    let n_sup = supported.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| -> f64 {
        supported.iter().map(|m| f(m)).sum::<f64>() / n_sup
    };
    let wmean = |f: fn(&ClassMetrics) -> f64| -> f64 {
        supported
            .iter()
            .map(|m| m.support as f64 * f(m))
            .sum::<f64>()
            / total as f64
    };

    Ok(ClassReport {
        accuracy: trace as f64 / total as f64,
        balanced_accuracy: mean(|m| m.recall),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        weighted_precision: wmean(|m| m.precision),
        weighted_recall: wmean(|m| m.recall),
        weighted_f1: wmean(|m| m.f1),
        total_support: total,
        per_class,
    })
}

/// Renders the report as an aligned text table: class-wise block, then the
/// overall block. Displayed values round to 2 decimals; use the CSV export
/// for full precision.
pub fn render_report_text(report: &ClassReport) -> String {
    let mut out = String::new();
    writeln!(out, "{:<6}{:>10}{:>8}{:>10}{:>9}", "Class", "Precision", "Recall", "F1-Score", "Support").unwrap();
    for m in &report.per_class {
        writeln!(
            out,
            "{:<6}{:>10.2}{:>8.2}{:>10.2}{:>9}",
            m.class_id, m.precision, m.recall, m.f1, m.support
        )
        .unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "{:<14}{:>7}{:>8}{:>6}{:>9}", "Metric", "P", "R", "F1", "Support").unwrap();
    writeln!(
        out,
        "{:<14}{:>21.2}{:>9}",
        "Accuracy", report.accuracy, report.total_support
    )
    .unwrap();
    writeln!(
        out,
        "{:<14}{:>7.2}{:>8.2}{:>6.2}{:>9}",
        "Balanced Acc", "", report.balanced_accuracy, "", report.total_support
    )
    .unwrap();
    writeln!(
        out,
        "{:<14}{:>7.2}{:>8.2}{:>6.2}{:>9}",
        "Macro Avg",
        report.macro_precision,
        report.macro_recall,
        report.macro_f1,
        report.total_support
    )
    .unwrap();
    writeln!(
        out,
        "{:<14}{:>7.2}{:>8.2}{:>6.2}{:>9}",
        "Weighted Avg",
        report.weighted_precision,
        report.weighted_recall,
        report.weighted_f1,
        report.total_support
    )
    .unwrap();
    out
}

/// Report as CSV at full precision: per-class rows then overall rows.
pub fn write_report_csv(report: &ClassReport, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "row,class,precision,recall,f1,support").unwrap();
    for m in &report.per_class {
        writeln!(
            out,
            "class,{},{},{},{},{}",
            m.class_id, m.precision, m.recall, m.f1, m.support
        )
        .unwrap();
    }
    writeln!(out, "accuracy,,{},,,{}", report.accuracy, report.total_support).unwrap();
    writeln!(
        out,
        "balanced_accuracy,,,{},,{}",
        report.balanced_accuracy, report.total_support
    )
    .unwrap();
    writeln!(
        out,
        "macro_avg,,{},{},{},{}",
        report.macro_precision, report.macro_recall, report.macro_f1, report.total_support
    )
    .unwrap();
    writeln!(
        out,
        "weighted_avg,,{},{},{},{}",
        report.weighted_precision, report.weighted_recall, report.weighted_f1, report.total_support
    )
    .unwrap();
    std::fs::write(path, out)?;
    Ok(())
}

/// Fixed class palette: index 0 is the unlabeled background, 1..=8 the
/// forest classes. Documented in the README; render_map output is bit-exact
/// given this palette.
pub const CLASS_PALETTE: [(u8, u8, u8); 9] = [
    (0, 0, 0),
    (31, 119, 180),
    (255, 127, 14),
    (44, 160, 44),
    (214, 39, 40),
    (148, 103, 189),
    (140, 86, 75),
    (227, 119, 194),
    (188, 189, 34),
];

/// Writes the truth/prediction map as binary PPM (P6): truth panel on top,
/// prediction below, each n_range rows tall.
pub fn render_map(map: &SpeciesMap, pred: &[u8], path: &Path) -> Result<()> {
    let (nr, na) = (map.n_range, map.n_azimuth);
    if pred.len() != nr * na {
        return Err(Error::Shape(format!(
            "prediction raster has {} entries, map needs {}",
            pred.len(),
            nr * na
        )));
    }
    if let Some(&bad) = pred.iter().find(|&&l| l as usize >= CLASS_PALETTE.len()) {
        return Err(Error::Domain(format!("prediction label {bad} has no palette entry")));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{na} {} 255\n", 2 * nr)?;
    for panel in [map.labels(), pred] {
        for &l in panel {
            let (r, g, b) = CLASS_PALETTE[l as usize];
            w.write_all(&[r, g, b])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    #[test]
    fn identity_predictions_build_a_diagonal() {
        let cm = confusion_matrix(&[1, 2, 3], &[1, 2, 3], &[1, 2, 3]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(cm.get(i, j), u64::from(i == j));
            }
        }
    }

    #[test]
    fn systematic_confusion_lands_off_diagonal() {
        let cm = confusion_matrix(&[1, 1], &[2, 2], &[1, 2]).unwrap();
        assert_eq!(cm.get(0, 1), 2);
        assert_eq!(cm.total(), 2);
        assert_eq!(cm.get(0, 0) + cm.get(1, 0) + cm.get(1, 1), 0);
    }

    #[test]
    fn ten_row_fixture_matches_hand_tally() {
        // Hand tally: class1 truth rows 4 (3 hit, 1 -> 2); class2 truth rows
        // 3 (2 hit, 1 -> 3); class3 truth rows 3 (1 hit, 2 -> 1).
        let truth = [1, 1, 1, 1, 2, 2, 2, 3, 3, 3];
        let pred = [1, 1, 1, 2, 2, 2, 3, 1, 1, 3];
        let cm = confusion_matrix(&truth, &pred, &[1, 2, 3]).unwrap();
        let expected = [3, 1, 0, 0, 2, 1, 2, 0, 1];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(cm.get(i, j), expected[i * 3 + j]);
            }
        }
    }

    #[test]
    fn length_mismatch_is_a_data_error() {
        assert!(matches!(
            confusion_matrix(&[1, 2], &[1], &[1, 2]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let cm = confusion_matrix(&[1, 2, 3, 2], &[1, 2, 3, 2], &[1, 2, 3]).unwrap();
        let r = classification_report(&cm).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.balanced_accuracy, 1.0);
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.weighted_f1, 1.0);
        for m in &r.per_class {
            assert_eq!(m.precision, 1.0);
            assert_eq!(m.recall, 1.0);
            assert_eq!(m.f1, 1.0);
        }
    }

    #[test]
    fn balanced_accuracy_is_mean_recall() {
        // Two classes with recalls 1.0 and 0.5 -> balanced accuracy 0.75.
        let truth = [1, 1, 2, 2];
        let pred = [1, 1, 2, 1];
        let r = classification_report(&confusion_matrix(&truth, &pred, &[1, 2]).unwrap()).unwrap();
        assert!((r.per_class[0].recall - 1.0).abs() < 1e-15);
        assert!((r.per_class[1].recall - 0.5).abs() < 1e-15);
        assert!((r.balanced_accuracy - 0.75).abs() < 1e-15);
    }

    #[test]
    fn weighted_recall_equals_accuracy_algebraically() {
        let mut rng = stream_rng(44, 0);
        for _ in 0..100 {
            let k = rng.random_range(2..6usize);
            let classes: Vec<u8> = (1..=k as u8).collect();
            let counts: Vec<u64> = (0..k * k).map(|_| rng.random_range(0..40u64)).collect();
            let cm = ConfusionMatrix::from_counts(classes, counts).unwrap();
            if cm.total() == 0 {
                continue;
            }
            let r = classification_report(&cm).unwrap();
            assert!((r.weighted_recall - r.accuracy).abs() <= 1e-12);
            // Balanced accuracy against brute-force mean recall.
            let mut recalls = Vec::new();
            for i in 0..cm.k() {
                if cm.support(i) > 0 {
                    recalls.push(cm.get(i, i) as f64 / cm.support(i) as f64);
                }
            }
            let brute = recalls.iter().sum::<f64>() / recalls.len() as f64;
            assert!((r.balanced_accuracy - brute).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_division_flags_instead_of_nan() {
        // Class 3 never predicted and never present.
        let cm = confusion_matrix(&[1, 2], &[1, 1], &[1, 2, 3]).unwrap();
        let r = classification_report(&cm).unwrap();
        let c3 = &r.per_class[2];
        assert_eq!(c3.precision, 0.0);
        assert_eq!(c3.recall, 0.0);
        assert!(c3.undefined_precision);
        assert!(c3.undefined_recall);
        assert!(r.accuracy.is_finite());
    }

    #[test]
    fn report_text_has_table_layout() {
        let cm = confusion_matrix(&[1, 2, 2], &[1, 2, 1], &[1, 2]).unwrap();
        let r = classification_report(&cm).unwrap();
        let text = render_report_text(&r);
        for needle in ["Class", "Precision", "Recall", "F1-Score", "Support", "Accuracy", "Macro Avg", "Weighted Avg"] {
            assert!(text.contains(needle), "missing {needle} in:\n{text}");
        }
    }

    #[test]
    fn empty_matrix_is_an_error() {
        let cm = ConfusionMatrix::from_counts(vec![1, 2], vec![0, 0, 0, 0]).unwrap();
        assert!(classification_report(&cm).is_err());
    }

    #[test]
    fn map_rendering_is_deterministic_and_palette_exact() {
        use crate::cube::SpeciesMap;
        let dir = tempfile::tempdir().unwrap();
        // 2x2 checkerboard of classes 1 and 2.
        let map = SpeciesMap::new(2, 2, vec![1, 2, 2, 1]).unwrap();
        let pred = vec![1, 2, 2, 1];
        let path = dir.path().join("map.ppm");
        render_map(&map, &pred, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut expected = b"P6\n2 4 255\n".to_vec();
        for _ in 0..2 {
            for &l in &[1u8, 2, 2, 1] {
                let (r, g, b) = CLASS_PALETTE[l as usize];
                expected.extend([r, g, b]);
            }
        }
        assert_eq!(bytes, expected);

        // Identical truth/pred panels are byte-identical.
        let half = (bytes.len() - 11) / 2;
        assert_eq!(bytes[11..11 + half], bytes[11 + half..]);

        // Uniform class-1 map renders uniformly.
        let map1 = SpeciesMap::new(2, 2, vec![1; 4]).unwrap();
        let p1 = dir.path().join("uniform.ppm");
        render_map(&map1, &[1; 4], &p1).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let (r, g, b) = CLASS_PALETTE[1];
        for px in b1[11..].chunks(3) {
            assert_eq!(px, &[r, g, b]);
        }
    }
}
