//! Source-class to target-superclass mappings and probability pooling.
//!
//! A mapping file has one `<source_index><TAB><target_label>` entry per line.
//! `__null__` as the label leaves the source class unmapped, `#` starts a
//! comment line, and target indices follow the order in which labels first
//! appear.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{exact_sum, SimplexVector};

/// Target label marking an unmapped source class.
pub const NULL_LABEL: &str = "__null__";

/// How grouped source probabilities are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Average,
    Max,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" | "avg" | "mean" => Ok(Self::Average),
            "max" => Ok(Self::Max),
            other => Err(Error::Config(format!("unknown pooling `{other}`"))),
        }
    }
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Average => "average",
            Self::Max => "max",
        })
    }
}

/// Partial function from source classes to target classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMapping {
    assignment: Vec<Option<usize>>,
    target_labels: Vec<String>,
    /// Source indices of each target, ascending.
    groups: Vec<Vec<usize>>,
}

impl ClassMapping {
    pub fn new(assignment: Vec<Option<usize>>, target_labels: Vec<String>) -> Result<Self> {
        let mut groups = vec![Vec::new(); target_labels.len()];
        for (source, target) in assignment.iter().enumerate() {
            if let Some(t) = *target {
                let group = groups.get_mut(t).ok_or_else(|| {
                    Error::Config(format!("source {source} maps to missing target {t}"))
                })?;
                group.push(source);
            }
        }
        if let Some(t) = groups.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!(
                "target class `{}` has no source classes",
                target_labels[t]
            )));
        }
        Ok(Self { assignment, target_labels, groups })
    }

    /// One-to-one mapping over `k` classes labeled by index.
    pub fn identity(k: usize) -> Self {
        Self::new((0..k).map(Some).collect(), (0..k).map(|i| i.to_string()).collect())
            .expect("identity mapping is valid")
    }

    pub fn source_count(&self) -> usize {
        self.assignment.len()
    }

    pub fn target_count(&self) -> usize {
        self.target_labels.len()
    }

    pub fn target_labels(&self) -> &[String] {
        &self.target_labels
    }

    pub fn target_of(&self, source: usize) -> Option<usize> {
        self.assignment.get(source).copied().flatten()
    }

    pub fn group(&self, target: usize) -> &[usize] {
        &self.groups[target]
    }

    /// Every source maps to a distinct target and none are dropped.
    pub fn is_bijective(&self) -> bool {
        self.assignment.iter().all(Option::is_some) && self.groups.iter().all(|g| g.len() == 1)
    }

    /// Extends the source range with unmapped classes up to `count`.
    pub fn with_source_count(mut self, count: usize) -> Result<Self> {
        if count < self.assignment.len() {
            return Err(Error::Config(format!(
                "mapping covers {} source classes, cannot shrink to {count}",
                self.assignment.len()
            )));
        }
        self.assignment.resize(count, None);
        Ok(self)
    }

    pub fn pool(&self, q: &SimplexVector, pooling: Pooling) -> Result<SimplexVector> {
        match pooling {
            Pooling::Average => pool_average(q, self),
            Pooling::Max => pool_max(q, self),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        parse_mapping(&std::fs::read_to_string(path)?)
    }

    /// Mapping-file text for this mapping.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (source, target) in self.assignment.iter().enumerate() {
            let label = target.map_or(NULL_LABEL, |t| self.target_labels[t].as_str());
            out.push_str(&format!("{source}\t{label}\n"));
        }
        out
    }
}

fn pool_with(
    q: &SimplexVector,
    m: &ClassMapping,
    reduce: impl Fn(&[f64]) -> f64,
) -> Result<SimplexVector> {
    if q.len() != m.source_count() {
        return Err(Error::DimensionMismatch { expected: m.source_count(), actual: q.len() });
    }
    let pooled: Vec<f64> = m
        .groups
        .iter()
        .map(|g| reduce(&g.iter().map(|&s| q[s]).collect::<Vec<_>>()))
        .collect();
    if m.is_bijective() {
        // A relabeling of a valid vector is already on the simplex.
        return Ok(SimplexVector::from_normalized(pooled));
    }
    let total = exact_sum(&pooled);
    if total <= 0.0 {
        return Err(Error::NoPooledMass);
    }
    Ok(SimplexVector::from_normalized(pooled.into_iter().map(|v| v / total).collect()))
}

/// Mean of each target's source probabilities, renormalized.
pub fn pool_average(q: &SimplexVector, m: &ClassMapping) -> Result<SimplexVector> {
    pool_with(q, m, |group| exact_sum(group) / group.len() as f64)
}

/// Max of each target's source probabilities, renormalized.
pub fn pool_max(q: &SimplexVector, m: &ClassMapping) -> Result<SimplexVector> {
    pool_with(q, m, |group| group.iter().copied().fold(0.0, f64::max))
}

pub fn parse_mapping(text: &str) -> Result<ClassMapping> {
    let mut assignment: Vec<Option<Option<usize>>> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut label_index: HashMap<String, usize> = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Mapping { line: line_no, message };
        let (src, label) = line
            .split_once('\t')
            .or_else(|| line.split_once(char::is_whitespace))
            .ok_or_else(|| err(format!("expected `<source>\\t<target>`, got `{line}`")))?;
        let source: usize =
            src.trim().parse().map_err(|_| err(format!("invalid source index `{}`", src.trim())))?;
        let label = label.trim();
        if label.is_empty() || label.chars().any(char::is_control) {
            return Err(err(format!("unknown target label `{label}`")));
        }
        if assignment.len() <= source {
            assignment.resize(source + 1, None);
        }
        if assignment[source].is_some() {
            return Err(err(format!("duplicate source class {source}")));
        }
        let target = if label == NULL_LABEL {
            None
        } else {
            Some(*label_index.entry(label.to_string()).or_insert_with(|| {
                labels.push(label.to_string());
                labels.len() - 1
            }))
        };
        assignment[source] = Some(target);
    }
    if labels.is_empty() {
        return Err(Error::Mapping { line: 0, message: "mapping has no target classes".into() });
    }
    // Indices never listed are unmapped.
    ClassMapping::new(assignment.into_iter().map(Option::flatten).collect(), labels)
}
