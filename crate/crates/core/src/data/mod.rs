//! Synthetic domain-shift problems and the `PCSR-FEATURES v1` file format.

mod features;
mod synth;

pub use synth::{blob_centers, gen_shifted_pair, largest_remainder, ShiftSpec, Task};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
    /// Loaded from a file, which does not record the domain.
    Unspecified,
}

/// Samples as rows of `x`, optional class labels, and the declared class count.
///
/// Target labels, when present, are ground truth kept for evaluation; the
/// adaptation losses never read them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    labels: Option<Vec<usize>>,
    class_count: usize,
    domain: Domain,
}

impl Dataset {
    pub fn new(x: Matrix, labels: Option<Vec<usize>>, class_count: usize, domain: Domain) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::invalid("class count", "must be >= 1"));
        }
        if let Some(labels) = &labels {
            if labels.len() != x.rows() {
                return Err(Error::shape("Dataset::new labels", x.rows(), labels.len()));
            }
            if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
                return Err(Error::invalid("label", format!("{bad} >= class count {class_count}")));
            }
        }
        Ok(Self {
            x,
            labels,
            class_count,
            domain,
        })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    /// Drops labels, e.g. before handing a target set to code that must not see them.
    pub fn unlabeled(&self) -> Dataset {
        Dataset {
            labels: None,
            ..self.clone()
        }
    }

    /// Per-class sample counts; `None` when unlabeled.
    pub fn class_counts(&self) -> Option<Vec<usize>> {
        self.labels.as_ref().map(|labels| {
            let mut counts = vec![0; self.class_count];
            for &y in labels {
                counts[y] += 1;
            }
            counts
        })
    }

    /// Rows at `indices`, labels carried along.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            class_count: self.class_count,
            domain: self.domain,
        }
    }
}
