use serde::Serialize;

use crate::error::{Error, Result};

/// Elementwise mean of two probability vectors.
pub fn fuse_predictions(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("cannot fuse {} with {} probabilities", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect())
}

/// Relabeling of classes before scoring: `mapping[old] = new`, with the new
/// labels compact (`0..n_classes`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassMerge {
    pub mapping: Vec<usize>,
    pub n_classes: usize,
}

impl ClassMerge {
    pub fn identity(n: usize) -> Self {
        ClassMerge {
            mapping: (0..n).collect(),
            n_classes: n,
        }
    }

    /// Sends every class in `targets[i].0` to `targets[i].1` (0-based), then
    /// renumbers the surviving labels in increasing order.
    pub fn new(n: usize, groups: &[(Vec<usize>, usize)]) -> Result<Self> {
        let mut raw: Vec<usize> = (0..n).collect();
        for (from, to) in groups {
            for &c in from.iter().chain(std::iter::once(to)) {
                if c >= n {
                    return Err(Error::InvalidArgument(format!("merge class {} outside 1..={n}", c + 1)));
                }
            }
            for &c in from {
                raw[c] = *to;
            }
        }
        let mut distinct = raw.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let mapping = raw
            .iter()
            .map(|r| distinct.binary_search(r).expect("present"))
            .collect();
        Ok(ClassMerge {
            mapping,
            n_classes: distinct.len(),
        })
    }

    /// Parses `"4,5->4"` (1-based); several merges are separated by `;`.
    pub fn parse(spec: &str, n: usize) -> Result<Self> {
        let bad = |why: &str| Error::InvalidArgument(format!("bad merge spec `{spec}`: {why}"));
        let num = |s: &str| -> Result<usize> {
            let v: usize = s.trim().parse().map_err(|_| bad("expected class numbers"))?;
            v.checked_sub(1).ok_or_else(|| bad("classes are 1-based"))
        };
        let mut groups = Vec::new();
        for part in spec.split(';').filter(|p| !p.trim().is_empty()) {
            let (lhs, rhs) = part
                .split_once("->")
                .or_else(|| part.split_once('→'))
                .ok_or_else(|| bad("missing `->`"))?;
            let from = lhs.split(',').map(num).collect::<Result<Vec<_>>>()?;
            groups.push((from, num(rhs)?));
        }
        ClassMerge::new(n, &groups)
    }

    pub fn apply(&self, class: usize) -> usize {
        self.mapping[class]
    }
}

/// Confusion matrix (rows: truth, columns: prediction) and the accuracies
/// derived from it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n_classes: usize,
    pub count: usize,
    pub confusion: Vec<Vec<usize>>,
    /// Overall accuracy.
    pub mca: f64,
    /// Mean recall over classes that occur in the ground truth.
    pub mpca: f64,
    /// Recall per class; `None` for classes with no samples.
    pub per_class: Vec<Option<f64>>,
}

impl EvalReport {
    pub fn from_labels(truth: &[usize], pred: &[usize], n_classes: usize, merge: Option<&ClassMerge>) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::shape(format!("{} labels vs {} predictions", truth.len(), pred.len())));
        }
        if let Some(m) = merge {
            if m.mapping.len() != n_classes {
                return Err(Error::InvalidArgument(format!(
                    "merge covers {} classes, expected {n_classes}",
                    m.mapping.len()
                )));
            }
        }
        let k = merge.map_or(n_classes, |m| m.n_classes);
        let mut confusion = vec![vec![0usize; k]; k];
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= n_classes || p >= n_classes {
                return Err(Error::InvalidArgument(format!("label pair ({t}, {p}) outside 0..{n_classes}")));
            }
            let (t, p) = match merge {
                Some(m) => (m.apply(t), m.apply(p)),
                None => (t, p),
            };
            confusion[t][p] += 1;
        }
        let count = truth.len();
        let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
        let per_class: Vec<Option<f64>> = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[i] as f64 / n as f64)
            })
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        Ok(EvalReport {
            n_classes: k,
            count,
            confusion,
            mca: if count == 0 { 0.0 } else { correct as f64 / count as f64 },
            mpca: if present.is_empty() {
                0.0
            } else {
                present.iter().sum::<f64>() / present.len() as f64
            },
            per_class,
        })
    }

    /// Plain-text table for terminals.
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("scenes {}  MCA {:.4}  MPCA {:.4}\n", self.count, self.mca, self.mpca));
        s.push_str("truth\\pred");
        for j in 0..self.n_classes {
            s.push_str(&format!(" {:>5}", j + 1));
        }
        s.push_str("  recall\n");
        for (i, row) in self.confusion.iter().enumerate() {
            s.push_str(&format!("{:>10}", i + 1));
            for v in row {
                s.push_str(&format!(" {v:>5}"));
            }
            match self.per_class[i] {
                Some(r) => s.push_str(&format!("  {r:.4}\n")),
                None => s.push_str("       -\n"),
            }
        }
        s
    }
}
