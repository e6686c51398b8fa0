//! Datasets of perturbed cell populations: condition labels, file format,
//! split scenarios, batch sampling, and a seeded synthetic generator with
//! known ground truth.
//!
//! A dataset is a numeric matrix (rows are cells) with two metadata columns:
//! a condition label and a free-form group tag. The label `control` is
//! reserved for unperturbed cells; every other label has the canonical form
//! `drug[+drug...]-<dose>` with lowercase drug names sorted inside
//! combinations and the dose rendered in shortest round-trip decimal form.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

/// Reserved label for unperturbed cells.
pub const CONTROL_LABEL: &str = "control";

/// Maximum number of drugs in a combination treatment.
pub const MAX_COMBINATION: usize = 3;

// ---------------------------------------------------------------------------
// Conditions
// ---------------------------------------------------------------------------

/// A perturbation: one to three drugs at a shared dose, or the control.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    drugs: Vec<String>,
    dose: Option<f64>,
}

impl Condition {
    /// The unperturbed condition.
    pub fn control() -> Self {
        Self {
            drugs: Vec::new(),
            dose: None,
        }
    }

    /// A treatment; drug names are lowercased and sorted.
    pub fn treatment(drugs: &[&str], dose: f64) -> Result<Self> {
        let mut canonical = Vec::with_capacity(drugs.len());
        for raw in drugs {
            canonical.push(canonical_drug_name(raw)?);
        }
        if canonical.is_empty() {
            return Err(Error::invalid("a treatment needs at least one drug"));
        }
        if canonical.len() > MAX_COMBINATION {
            return Err(Error::invalid(format!(
                "combinations support at most {MAX_COMBINATION} drugs, got {}",
                canonical.len()
            )));
        }
        canonical.sort();
        if canonical.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("a combination lists the same drug twice"));
        }
        if !(dose.is_finite() && dose > 0.0) {
            return Err(Error::invalid(format!("dose must be positive, got {dose}")));
        }
        Ok(Self {
            drugs: canonical,
            dose: Some(dose),
        })
    }

    /// Parses a label: `control` or `drug[+drug...]-<dose>`.
    pub fn parse_label(label: &str) -> Result<Self> {
        let trimmed = label.trim();
        if trimmed.to_ascii_lowercase() == CONTROL_LABEL {
            return Ok(Self::control());
        }
        let Some((drug_part, dose_part)) = trimmed.rsplit_once('-') else {
            return Err(Error::data(format!(
                "condition '{trimmed}' lacks the '-<dose>' suffix"
            )));
        };
        let dose: f64 = dose_part.trim().parse().map_err(|_| {
            Error::data(format!("condition '{trimmed}' has unreadable dose '{dose_part}'"))
        })?;
        if !(dose.is_finite() && dose > 0.0) {
            return Err(Error::data(format!(
                "condition '{trimmed}' has non-positive dose {dose}"
            )));
        }
        let drugs: Vec<&str> = drug_part.split('+').collect();
        Self::treatment(&drugs, dose)
            .map_err(|e| Error::data(format!("condition '{trimmed}': {e}")))
    }

    pub fn is_control(&self) -> bool {
        self.drugs.is_empty()
    }

    /// Canonical label. Parsing it back reproduces this condition.
    pub fn label(&self) -> String {
        if self.is_control() {
            return CONTROL_LABEL.to_string();
        }
        format!("{}-{}", self.drug_key(), self.dose.expect("treatments carry a dose"))
    }

    /// The drug part of the label, without the dose: identifies the
    /// treatment across doses.
    pub fn drug_key(&self) -> String {
        self.drugs.join("+")
    }

    pub fn drugs(&self) -> &[String] {
        &self.drugs
    }

    pub fn dose(&self) -> Option<f64> {
        self.dose
    }

    /// Whether the treatment involves `drug` (exact canonical name).
    pub fn involves_drug(&self, drug: &str) -> bool {
        self.drugs.iter().any(|d| d == drug)
    }
}

fn canonical_drug_name(raw: &str) -> Result<String> {
    let name = raw.trim().to_ascii_lowercase();
    if name.is_empty() {
        return Err(Error::invalid("drug name is empty"));
    }
    if name == CONTROL_LABEL {
        return Err(Error::invalid("'control' is reserved and cannot name a drug"));
    }
    if !name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_') {
        return Err(Error::invalid(format!(
            "drug name '{name}' may only use lowercase letters, digits and '_'"
        )));
    }
    Ok(name)
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// A matrix of cells with a condition and a group tag per row.
#[derive(Debug, Clone)]
pub struct CellDataset {
    features: Array2<f64>,
    conditions: Vec<Condition>,
    groups: Vec<String>,
    feature_names: Vec<String>,
}

impl CellDataset {
    /// Builds a dataset, validating shapes, finiteness, and the presence of
    /// control cells. `groups` defaults to `"none"`, `feature_names` to
    /// `f0..f{d-1}`.
    pub fn new(
        features: Array2<f64>,
        conditions: Vec<Condition>,
        groups: Option<Vec<String>>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::data("a dataset needs at least one cell and one feature"));
        }
        if conditions.len() != n {
            return Err(Error::shape(format!(
                "{} condition labels for {n} cells",
                conditions.len()
            )));
        }
        if let Some((row, col)) = first_non_finite(&features) {
            return Err(Error::data(format!(
                "feature ({row}, {col}) is not finite"
            )));
        }
        if !conditions.iter().any(Condition::is_control) {
            return Err(Error::data("dataset has no control cells"));
        }
        let groups = match groups {
            Some(g) => {
                if g.len() != n {
                    return Err(Error::shape(format!("{} group tags for {n} cells", g.len())));
                }
                for tag in &g {
                    if tag.is_empty() || tag.contains(',') || tag.contains('\n') {
                        return Err(Error::data(format!(
                            "group tag '{tag}' must be non-empty and free of commas"
                        )));
                    }
                }
                g
            }
            None => vec!["none".to_string(); n],
        };
        let feature_names = match feature_names {
            Some(names) => {
                if names.len() != d {
                    return Err(Error::shape(format!(
                        "{} feature names for {d} features",
                        names.len()
                    )));
                }
                let mut seen = BTreeSet::new();
                for name in &names {
                    if name.is_empty() || name.contains(',') || name.contains('\n') {
                        return Err(Error::data(format!(
                            "feature name '{name}' must be non-empty and free of commas"
                        )));
                    }
                    if !seen.insert(name) {
                        return Err(Error::data(format!("duplicate feature name '{name}'")));
                    }
                }
                names
            }
            None => (0..d).map(|i| format!("f{i}")).collect(),
        };
        Ok(Self {
            features,
            conditions,
            groups,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn condition(&self, row: usize) -> &Condition {
        &self.conditions[row]
    }

    pub fn group(&self, row: usize) -> &str {
        &self.groups[row]
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Sorted labels of every distinct treatment condition.
    pub fn treatment_labels(&self) -> Vec<String> {
        let set: BTreeSet<String> = self
            .conditions
            .iter()
            .filter(|c| !c.is_control())
            .map(Condition::label)
            .collect();
        set.into_iter().collect()
    }

    /// One representative [`Condition`] per distinct treatment label, in
    /// label order.
    pub fn treatments(&self) -> Vec<Condition> {
        let mut map = BTreeMap::new();
        for cond in &self.conditions {
            if !cond.is_control() {
                map.entry(cond.label()).or_insert_with(|| cond.clone());
            }
        }
        map.into_values().collect()
    }

    /// Sorted canonical names of every drug that appears in the dataset.
    pub fn drug_names(&self) -> Vec<String> {
        let set: BTreeSet<String> = self
            .conditions
            .iter()
            .flat_map(|c| c.drugs().iter().cloned())
            .collect();
        set.into_iter().collect()
    }

    /// Row indices with the given canonical label.
    pub fn rows_with_label(&self, label: &str) -> Vec<usize> {
        self.conditions
            .iter()
            .enumerate()
            .filter(|(_, c)| c.label() == label)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn control_rows(&self) -> Vec<usize> {
        self.rows_with_label(CONTROL_LABEL)
    }

    /// Copies the selected rows into a fresh matrix.
    pub fn rows(&self, indices: &[usize]) -> Array2<f64> {
        self.features.select(Axis(0), indices)
    }

    /// Writes the dataset as delimited text. Floats use shortest
    /// round-trip notation, so a read of the file reproduces every bit.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("condition,group");
        for name in &self.feature_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for row in 0..self.len() {
            out.push_str(&self.conditions[row].label());
            out.push(',');
            out.push_str(&self.groups[row]);
            for value in self.features.row(row) {
                let _ = write!(out, ",{value}");
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Reads a file produced by [`CellDataset::write_csv`] (or any file in
    /// the documented format). Labels are canonicalized while parsing.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let Some((_, header)) = lines.next() else {
            return Err(Error::data(format!("{} is empty", path.display())));
        };
        let header_fields: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
        if header_fields.len() < 3
            || header_fields[0] != "condition"
            || header_fields[1] != "group"
        {
            return Err(Error::data(
                "header must start with 'condition,group' followed by feature names",
            ));
        }
        let feature_names: Vec<String> =
            header_fields[2..].iter().map(|s| s.to_string()).collect();
        let d = feature_names.len();

        let mut values = Vec::new();
        let mut conditions = Vec::new();
        let mut groups = Vec::new();
        for (line_idx, raw_line) in lines {
            let line = raw_line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let row_no = line_idx + 1;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 2 {
                return Err(Error::data(format!(
                    "line {row_no}: {} fields, expected {}",
                    fields.len(),
                    d + 2
                )));
            }
            let condition = Condition::parse_label(fields[0])
                .map_err(|e| Error::data(format!("line {row_no}: {e}")))?;
            for (col, field) in fields[2..].iter().enumerate() {
                let value: f64 = field.trim().parse().map_err(|_| {
                    Error::data(format!(
                        "line {row_no}, column '{}': unreadable number '{field}'",
                        feature_names[col]
                    ))
                })?;
                if !value.is_finite() {
                    return Err(Error::data(format!(
                        "line {row_no}, column '{}': non-finite value",
                        feature_names[col]
                    )));
                }
                values.push(value);
            }
            conditions.push(condition);
            groups.push(fields[1].to_string());
        }
        if conditions.is_empty() {
            return Err(Error::data(format!("{} has no data rows", path.display())));
        }
        let features = Array2::from_shape_vec((conditions.len(), d), values)
            .expect("row-major construction");
        Self::new(features, conditions, Some(groups), Some(feature_names))
    }
}

fn first_non_finite(features: &Array2<f64>) -> Option<(usize, usize)> {
    for ((row, col), value) in features.indexed_iter() {
        if !value.is_finite() {
            return Some((row, col));
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// How the dataset is divided for an experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitScenario {
    /// Stratified random split of every condition.
    InDistribution,
    /// Conditions at this exact dose are excluded from training entirely.
    DoseHoldout { dose: f64 },
    /// Conditions involving this drug (alone or in combination) are
    /// excluded from training entirely.
    DrugHoldout { drug: String },
    /// Drugs are partitioned into `n_folds` groups; conditions involving a
    /// drug of group `fold` are excluded from training entirely.
    DrugFolds { n_folds: usize, fold: usize },
}

impl SplitScenario {
    /// Short tag used in artifact manifests and file names.
    pub fn tag(&self) -> &'static str {
        match self {
            SplitScenario::InDistribution => "id",
            SplitScenario::DoseHoldout { .. } => "dose_ood",
            SplitScenario::DrugHoldout { .. } => "drug_ood",
            SplitScenario::DrugFolds { .. } => "k_fold_drug_ood",
        }
    }
}

/// Train/test row indices for one condition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConditionSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// A deterministic division of every condition's rows.
#[derive(Debug, Clone)]
pub struct SplitPlan {
    scenario_tag: String,
    per_condition: BTreeMap<String, ConditionSplit>,
    ood_conditions: Vec<String>,
}

impl SplitPlan {
    pub fn scenario_tag(&self) -> &str {
        &self.scenario_tag
    }

    /// Sorted labels of conditions excluded from all training.
    pub fn ood_condition_labels(&self) -> &[String] {
        &self.ood_conditions
    }

    pub fn is_ood(&self, label: &str) -> bool {
        self.ood_conditions.iter().any(|l| l == label)
    }

    pub fn split_for(&self, label: &str) -> Result<&ConditionSplit> {
        self.per_condition
            .get(label)
            .ok_or_else(|| Error::data(format!("split plan has no condition '{label}'")))
    }

    /// Treatment labels that can be trained on: not held out and with a
    /// nonempty train list.
    pub fn training_condition_labels(&self) -> Vec<String> {
        self.per_condition
            .iter()
            .filter(|(label, split)| {
                label.as_str() != CONTROL_LABEL && !split.train.is_empty()
            })
            .map(|(label, _)| label.clone())
            .collect()
    }

    /// Treatment labels with a nonempty test list (evaluation targets).
    pub fn test_condition_labels(&self) -> Vec<String> {
        self.per_condition
            .iter()
            .filter(|(label, split)| {
                label.as_str() != CONTROL_LABEL && !split.test.is_empty()
            })
            .map(|(label, _)| label.clone())
            .collect()
    }

    /// Every training row across all conditions (controls included),
    /// sorted. This is the only data training artifacts may touch.
    pub fn all_training_rows(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = self
            .per_condition
            .values()
            .flat_map(|s| s.train.iter().copied())
            .collect();
        rows.sort_unstable();
        rows
    }
}

/// Builds a split plan for the scenario. Shuffles are drawn from seed
/// streams keyed per condition label, so the plan is deterministic and
/// insensitive to condition enumeration order.
pub fn make_split(
    dataset: &CellDataset,
    scenario: &SplitScenario,
    test_fraction: f64,
    split_seed: u64,
) -> Result<SplitPlan> {
    if !(test_fraction.is_finite() && test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test fraction must lie strictly between 0 and 1, got {test_fraction}"
        )));
    }

    let held_out_drugs: Vec<String> = match scenario {
        SplitScenario::InDistribution | SplitScenario::DoseHoldout { .. } => Vec::new(),
        SplitScenario::DrugHoldout { drug } => {
            let name = canonical_drug_name(drug)?;
            if !dataset.drug_names().contains(&name) {
                return Err(Error::data(format!("held-out drug '{name}' is not in the dataset")));
            }
            vec![name]
        }
        SplitScenario::DrugFolds { n_folds, fold } => {
            let drugs = dataset.drug_names();
            if *n_folds < 2 || *n_folds > drugs.len() {
                return Err(Error::invalid(format!(
                    "fold count {n_folds} must lie in 2..={}",
                    drugs.len()
                )));
            }
            if fold >= n_folds {
                return Err(Error::invalid(format!(
                    "fold index {fold} out of range for {n_folds} folds"
                )));
            }
            let mut shuffled = drugs;
            shuffled.shuffle(&mut seed::rng(split_seed, "split-drug-folds"));
            shuffled
                .into_iter()
                .enumerate()
                .filter(|(i, _)| i % n_folds == *fold)
                .map(|(_, d)| d)
                .collect()
        }
    };
    if let SplitScenario::DoseHoldout { dose } = scenario {
        let present = dataset
            .treatments()
            .iter()
            .any(|c| c.dose() == Some(*dose));
        if !present {
            return Err(Error::data(format!("held-out dose {dose} is not in the dataset")));
        }
    }

    let mut labels = dataset.treatment_labels();
    labels.push(CONTROL_LABEL.to_string());
    let mut per_condition = BTreeMap::new();
    let mut ood_conditions = Vec::new();
    for label in labels {
        let rows = dataset.rows_with_label(&label);
        let condition = Condition::parse_label(&label)?;
        let ood = !condition.is_control()
            && match scenario {
                SplitScenario::InDistribution => false,
                SplitScenario::DoseHoldout { dose } => condition.dose() == Some(*dose),
                SplitScenario::DrugHoldout { .. } | SplitScenario::DrugFolds { .. } => {
                    held_out_drugs.iter().any(|d| condition.involves_drug(d))
                }
            };
        let split = if ood {
            ood_conditions.push(label.clone());
            ConditionSplit {
                train: Vec::new(),
                test: rows,
            }
        } else {
            if rows.len() < 2 {
                return Err(Error::data(format!(
                    "condition '{label}' has {} rows, need at least 2 to split",
                    rows.len()
                )));
            }
            let mut shuffled = rows;
            shuffled.shuffle(&mut seed::rng(split_seed, &format!("split:{label}")));
            let n = shuffled.len();
            let test_n = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
            let mut test: Vec<usize> = shuffled[..test_n].to_vec();
            let mut train: Vec<usize> = shuffled[test_n..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            ConditionSplit { train, test }
        };
        per_condition.insert(label, split);
    }
    ood_conditions.sort();
    Ok(SplitPlan {
        scenario_tag: scenario.tag().to_string(),
        per_condition,
        ood_conditions,
    })
}

// ---------------------------------------------------------------------------
// Batch sampling
// ---------------------------------------------------------------------------

/// Which side of the transport problem a batch feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchRole {
    /// Control cells.
    Source,
    /// Cells of the requested condition.
    Target,
}

/// Which split the rows come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPhase {
    Train,
    Test,
}

/// Draws `size` rows uniformly with replacement from the designated pool:
/// control rows for [`BatchRole::Source`], the condition's rows for
/// [`BatchRole::Target`], in either case restricted to the requested phase.
pub fn sample_batch<R: Rng>(
    dataset: &CellDataset,
    plan: &SplitPlan,
    condition_label: &str,
    size: usize,
    role: BatchRole,
    phase: SplitPhase,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let label = match role {
        BatchRole::Source => CONTROL_LABEL,
        BatchRole::Target => condition_label,
    };
    let split = plan.split_for(label)?;
    let pool = match phase {
        SplitPhase::Train => &split.train,
        SplitPhase::Test => &split.test,
    };
    if pool.is_empty() {
        return Err(Error::data(format!(
            "no {} rows for condition '{label}'",
            match phase {
                SplitPhase::Train => "training",
                SplitPhase::Test => "test",
            }
        )));
    }
    let picks: Vec<usize> = (0..size).map(|_| pool[rng.gen_range(0..pool.len())]).collect();
    Ok(dataset.rows(&picks))
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Specification of a synthetic perturbation dataset.
///
/// Control cells are a mixture of Gaussian clusters. Cells of condition
/// (drug `j`, dose `s`) are control-like draws moved by
/// `center + gamma_j * (x - center) + scale(s) * b_j`, where `b_j` is the
/// drug's shift vector, `gamma_j` scales the spread around the cluster
/// center, and `scale(s) = ln(1+s) / ln(1+max dose)` grows monotonically
/// with dose. Combinations shift by the mean of their members' vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_drugs: usize,
    pub doses: Vec<f64>,
    pub cells_per_condition: usize,
    pub n_control_cells: usize,
    pub dim: usize,
    pub n_clusters: usize,
    /// Standard deviation of cells around their cluster center.
    pub cluster_spread: f64,
    /// Norm of every generated shift vector.
    pub shift_magnitude: f64,
    /// Explicit per-drug shift vectors; generated from the seed if absent.
    pub shift_vectors: Option<Vec<Vec<f64>>>,
    /// Per-drug spread multipliers; defaults to 1 for every drug.
    pub covariance_scales: Option<Vec<f64>>,
    /// When set, drugs share shift directions within this many groups.
    pub moa_groups: Option<usize>,
    /// Weight of the shared group direction (0 = independent drugs,
    /// 1 = identical directions within a group).
    pub group_mixing: f64,
    /// Drug-index combinations to add as extra conditions.
    pub combinations: Vec<Vec<usize>>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_drugs: 3,
            doses: vec![0.1, 1.0, 10.0, 100.0],
            cells_per_condition: 500,
            n_control_cells: 500,
            dim: 30,
            n_clusters: 3,
            cluster_spread: 0.25,
            shift_magnitude: 3.0,
            shift_vectors: None,
            covariance_scales: None,
            moa_groups: None,
            group_mixing: 0.8,
            combinations: Vec::new(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.n_drugs == 0 {
            return Err(Error::invalid("need at least one drug"));
        }
        if self.doses.is_empty() {
            return Err(Error::invalid("need at least one dose"));
        }
        for &dose in &self.doses {
            if !(dose.is_finite() && dose > 0.0) {
                return Err(Error::invalid(format!("doses must be positive, got {dose}")));
            }
        }
        let mut sorted = self.doses.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("doses must be distinct"));
        }
        if self.cells_per_condition == 0 || self.n_control_cells == 0 {
            return Err(Error::invalid("cell counts must be positive"));
        }
        if self.dim == 0 || self.n_clusters == 0 {
            return Err(Error::invalid("dimension and cluster count must be positive"));
        }
        if !(self.cluster_spread.is_finite() && self.cluster_spread >= 0.0) {
            return Err(Error::invalid("cluster spread must be non-negative"));
        }
        if !(self.shift_magnitude.is_finite() && self.shift_magnitude >= 0.0) {
            return Err(Error::invalid("shift magnitude must be non-negative"));
        }
        if let Some(vectors) = &self.shift_vectors {
            if vectors.len() != self.n_drugs {
                return Err(Error::shape(format!(
                    "{} shift vectors for {} drugs",
                    vectors.len(),
                    self.n_drugs
                )));
            }
            for v in vectors {
                if v.len() != self.dim {
                    return Err(Error::shape(format!(
                        "shift vector of length {} in dimension {}",
                        v.len(),
                        self.dim
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invalid("shift vectors must be finite"));
                }
            }
        }
        if let Some(scales) = &self.covariance_scales {
            if scales.len() != self.n_drugs {
                return Err(Error::shape(format!(
                    "{} covariance scales for {} drugs",
                    scales.len(),
                    self.n_drugs
                )));
            }
            if scales.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
                return Err(Error::invalid("covariance scales must be positive"));
            }
        }
        if let Some(groups) = self.moa_groups {
            if groups == 0 || groups > self.n_drugs {
                return Err(Error::invalid(format!(
                    "group count {groups} must lie in 1..={}",
                    self.n_drugs
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.group_mixing) {
            return Err(Error::invalid("group mixing must lie in [0, 1]"));
        }
        for combo in &self.combinations {
            if combo.len() < 2 || combo.len() > MAX_COMBINATION {
                return Err(Error::invalid(format!(
                    "combinations need 2..={MAX_COMBINATION} drugs, got {}",
                    combo.len()
                )));
            }
            let mut sorted = combo.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid("a combination lists the same drug twice"));
            }
            if sorted.last().copied().unwrap_or(0) >= self.n_drugs {
                return Err(Error::invalid(format!(
                    "combination {combo:?} references a drug index out of range"
                )));
            }
        }
        Ok(())
    }

    /// Dose-response weight: `ln(1+s) / ln(1+max dose)`, monotone in `s`
    /// and equal to 1 at the largest dose.
    pub fn dose_scale(&self, dose: f64) -> f64 {
        let max = self.doses.iter().cloned().fold(f64::MIN, f64::max);
        (1.0 + dose).ln() / (1.0 + max).ln()
    }
}

/// Everything needed to check predictions against the generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthGroundTruth {
    pub dim: usize,
    pub drug_names: Vec<String>,
    pub cluster_centers: Vec<Vec<f64>>,
    pub cluster_spread: f64,
    pub shift_vectors: Vec<Vec<f64>>,
    pub covariance_scales: Vec<f64>,
    pub doses: Vec<f64>,
    pub dose_scales: Vec<f64>,
    pub combination_keys: Vec<String>,
    pub seed: u64,
}

impl SynthGroundTruth {
    /// The exact mean displacement of condition `(drug key, dose)` relative
    /// to the control population.
    pub fn expected_shift(&self, drug_key: &str, dose: f64) -> Result<Array1<f64>> {
        let scale = {
            let max = self.doses.iter().cloned().fold(f64::MIN, f64::max);
            (1.0 + dose).ln() / (1.0 + max).ln()
        };
        let members: Vec<usize> = drug_key
            .split('+')
            .map(|name| {
                self.drug_names
                    .iter()
                    .position(|d| d == name)
                    .ok_or_else(|| Error::data(format!("unknown drug '{name}'")))
            })
            .collect::<Result<_>>()?;
        let mut shift = Array1::zeros(self.dim);
        for &j in &members {
            shift += &Array1::from_vec(self.shift_vectors[j].clone());
        }
        shift /= members.len() as f64;
        Ok(shift * scale)
    }
}

/// Generates a synthetic dataset together with its ground truth.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(CellDataset, SynthGroundTruth)> {
    spec.validate()?;
    let d = spec.dim;

    let mut center_rng = seed::rng(spec.seed, "synth-centers");
    let centers = Array2::from_shape_fn((spec.n_clusters, d), |_| {
        center_rng.sample::<f64, _>(StandardNormal)
    });

    let shift_vectors: Vec<Array1<f64>> = match &spec.shift_vectors {
        Some(explicit) => explicit.iter().map(|v| Array1::from_vec(v.clone())).collect(),
        None => {
            let mut dir_rng = seed::rng(spec.seed, "synth-directions");
            let unit = |rng: &mut rand_chacha::ChaCha8Rng| -> Array1<f64> {
                loop {
                    let v = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
                    let norm = v.dot(&v).sqrt();
                    if norm > 1e-9 {
                        return v / norm;
                    }
                }
            };
            let group_dirs: Vec<Array1<f64>> = match spec.moa_groups {
                Some(g) => (0..g).map(|_| unit(&mut dir_rng)).collect(),
                None => Vec::new(),
            };
            (0..spec.n_drugs)
                .map(|j| {
                    let own = unit(&mut dir_rng);
                    let raw = match spec.moa_groups {
                        Some(g) => {
                            &group_dirs[j % g] * spec.group_mixing
                                + own * (1.0 - spec.group_mixing)
                        }
                        None => own,
                    };
                    let norm = raw.dot(&raw).sqrt();
                    if norm > 1e-12 {
                        raw * (spec.shift_magnitude / norm)
                    } else {
                        raw
                    }
                })
                .collect()
        }
    };
    let gammas: Vec<f64> = spec
        .covariance_scales
        .clone()
        .unwrap_or_else(|| vec![1.0; spec.n_drugs]);
    let drug_names: Vec<String> = (0..spec.n_drugs).map(|j| format!("drug{j:02}")).collect();

    // Treatments: every drug at every dose, then every combination at
    // every dose. A combination shifts by the mean of its members' vectors
    // and spreads by the mean of their multipliers.
    struct Treatment {
        condition: Condition,
        shift: Array1<f64>,
        gamma: f64,
    }
    let mut treatments = Vec::new();
    let mut combination_keys = Vec::new();
    for j in 0..spec.n_drugs {
        for &dose in &spec.doses {
            treatments.push(Treatment {
                condition: Condition::treatment(&[&drug_names[j]], dose)?,
                shift: &shift_vectors[j] * spec.dose_scale(dose),
                gamma: gammas[j],
            });
        }
    }
    for combo in &spec.combinations {
        let names: Vec<&str> = combo.iter().map(|&j| drug_names[j].as_str()).collect();
        let mut mean_shift = Array1::zeros(d);
        let mut mean_gamma = 0.0;
        for &j in combo {
            mean_shift += &shift_vectors[j];
            mean_gamma += gammas[j];
        }
        mean_shift /= combo.len() as f64;
        mean_gamma /= combo.len() as f64;
        combination_keys.push(Condition::treatment(&names, spec.doses[0])?.drug_key());
        for &dose in &spec.doses {
            treatments.push(Treatment {
                condition: Condition::treatment(&names, dose)?,
                shift: &mean_shift * spec.dose_scale(dose),
                gamma: mean_gamma,
            });
        }
    }

    let total_rows = spec.n_control_cells + treatments.len() * spec.cells_per_condition;
    let mut values = Vec::with_capacity(total_rows * d);
    let mut conditions = Vec::with_capacity(total_rows);

    let mut control_rng = seed::rng(spec.seed, "synth-control");
    for i in 0..spec.n_control_cells {
        let center = centers.row(i % spec.n_clusters);
        for c in 0..d {
            let noise: f64 = control_rng.sample(StandardNormal);
            values.push(center[c] + spec.cluster_spread * noise);
        }
        conditions.push(Condition::control());
    }
    for t in &treatments {
        let label = t.condition.label();
        let mut rng = seed::rng(spec.seed, &format!("synth-cells:{label}"));
        for i in 0..spec.cells_per_condition {
            let center = centers.row(i % spec.n_clusters);
            for c in 0..d {
                let noise: f64 = rng.sample(StandardNormal);
                values.push(center[c] + t.gamma * spec.cluster_spread * noise + t.shift[c]);
            }
            conditions.push(t.condition.clone());
        }
    }

    let features = Array2::from_shape_vec((total_rows, d), values).expect("row-major build");
    let dataset = CellDataset::new(features, conditions, None, None)?;
    let truth = SynthGroundTruth {
        dim: d,
        drug_names,
        cluster_centers: centers.outer_iter().map(|r| r.to_vec()).collect(),
        cluster_spread: spec.cluster_spread,
        shift_vectors: shift_vectors.iter().map(|v| v.to_vec()).collect(),
        covariance_scales: gammas,
        doses: spec.doses.clone(),
        dose_scales: spec.doses.iter().map(|&s| spec.dose_scale(s)).collect(),
        combination_keys,
        seed: spec.seed,
    };
    Ok((dataset, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_dataset() -> CellDataset {
        let spec = SynthSpec {
            n_drugs: 2,
            doses: vec![1.0, 10.0],
            cells_per_condition: 10,
            n_control_cells: 10,
            dim: 3,
            n_clusters: 1,
            cluster_spread: 0.1,
            seed: 5,
            ..SynthSpec::default()
        };
        generate_synthetic(&spec).unwrap().0
    }

    #[test]
    fn labels_canonicalize_and_round_trip() {
        let cond = Condition::parse_label(" TRAM+Dex-10.0 ").unwrap();
        assert_eq!(cond.label(), "dex+tram-10");
        assert_eq!(cond.drugs(), ["dex", "tram"]);
        assert_eq!(cond.dose(), Some(10.0));
        // Idempotent: parsing the canonical label reproduces it.
        assert_eq!(Condition::parse_label(&cond.label()).unwrap().label(), cond.label());

        let control = Condition::parse_label("Control").unwrap();
        assert!(control.is_control());
        assert_eq!(control.label(), CONTROL_LABEL);

        let fractional = Condition::parse_label("a-0.1").unwrap();
        assert_eq!(fractional.label(), "a-0.1");
    }

    #[test]
    fn rejects_malformed_labels() {
        for label in [
            "drug",          // no dose suffix
            "drug-",         // empty dose
            "drug-zero",     // unreadable dose
            "drug-0",        // non-positive dose
            "drug--4",       // negative dose
            "-5",            // empty drug
            "a+a-1",         // duplicate drug
            "a+b+c+d-1",     // too many drugs
            "a b-1",         // bad character
            "control-5",     // reserved word as drug
            "x-y-z",         // '-' inside drug names
        ] {
            assert!(Condition::parse_label(label).is_err(), "accepted '{label}'");
        }
    }

    #[test]
    fn dataset_requires_controls_and_finite_values() {
        let features = Array2::zeros((2, 2));
        let conds = vec![
            Condition::treatment(&["a"], 1.0).unwrap(),
            Condition::treatment(&["a"], 1.0).unwrap(),
        ];
        assert!(CellDataset::new(features.clone(), conds, None, None).is_err());

        let mut poisoned = Array2::zeros((2, 2));
        poisoned[[1, 1]] = f64::INFINITY;
        let conds = vec![Condition::control(), Condition::treatment(&["a"], 1.0).unwrap()];
        let err = CellDataset::new(poisoned, conds, None, None).unwrap_err();
        assert!(err.to_string().contains("(1, 1)"), "unexpected error: {err}");
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cells.csv");
        let features = ndarray::array![
            [0.1, -0.0, 1e-17],
            [1e300, 2.0 / 3.0, -1.5],
            [3.0, 4.0, 5.0]
        ];
        let conds = vec![
            Condition::control(),
            Condition::treatment(&["dex"], 0.1).unwrap(),
            Condition::treatment(&["dex", "tram"], 100.0).unwrap(),
        ];
        let ds = CellDataset::new(
            features,
            conds,
            Some(vec!["a".into(), "b".into(), "a".into()]),
            Some(vec!["gene_x".into(), "gene_y".into(), "gene_z".into()]),
        )
        .unwrap();
        ds.write_csv(&path).unwrap();

        let back = CellDataset::read_csv(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.feature_names(), ds.feature_names());
        assert_eq!(back.group(1), "b");
        assert_eq!(back.condition(2).label(), "dex+tram-100");
        let bits = |a: &Array2<f64>| a.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.features()), bits(ds.features()));
    }

    #[test]
    fn csv_errors_name_row_and_column() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");

        std::fs::write(&path, "condition,group,g1\ncontrol,none,1.0\ndex-1,none,oops\n").unwrap();
        let err = CellDataset::read_csv(&path).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("g1"), "got: {err}");

        std::fs::write(&path, "condition,group,g1\ncontrol,none,inf\n").unwrap();
        let err = CellDataset::read_csv(&path).unwrap_err().to_string();
        assert!(err.contains("non-finite"), "got: {err}");

        std::fs::write(&path, "condition,group,g1,g1\ncontrol,none,1,2\n").unwrap();
        let err = CellDataset::read_csv(&path).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "got: {err}");

        std::fs::write(&path, "condition,group,g1\ndex-1,none,1.0\n").unwrap();
        let err = CellDataset::read_csv(&path).unwrap_err().to_string();
        assert!(err.contains("control"), "got: {err}");
    }

    #[test]
    fn minimal_three_cell_file_loads() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("tiny.csv");
        std::fs::write(&path, "condition,group,g1\ncontrol,none,0.5\ndex-1,none,1.5\ndex-1,none,2.5\n")
            .unwrap();
        let ds = CellDataset::read_csv(&path).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.treatment_labels(), vec!["dex-1".to_string()]);
        assert_eq!(ds.control_rows(), vec![0]);
    }

    #[test]
    fn in_distribution_split_is_stratified_80_20() {
        let spec = SynthSpec {
            n_drugs: 2,
            doses: vec![1.0, 10.0],
            cells_per_condition: 100,
            n_control_cells: 100,
            dim: 2,
            n_clusters: 1,
            seed: 3,
            ..SynthSpec::default()
        };
        let (ds, _) = generate_synthetic(&spec).unwrap();
        let plan = make_split(&ds, &SplitScenario::InDistribution, 0.2, 11).unwrap();
        assert_eq!(plan.scenario_tag(), "id");
        assert!(plan.ood_condition_labels().is_empty());
        for label in ds.treatment_labels().iter().chain([&CONTROL_LABEL.to_string()]) {
            let split = plan.split_for(label).unwrap();
            assert_eq!(split.train.len(), 80, "{label}");
            assert_eq!(split.test.len(), 20, "{label}");
            let overlap: Vec<_> = split.train.iter().filter(|i| split.test.contains(i)).collect();
            assert!(overlap.is_empty());
        }
        // Deterministic in the seed.
        let again = make_split(&ds, &SplitScenario::InDistribution, 0.2, 11).unwrap();
        assert_eq!(plan.split_for("control").unwrap(), again.split_for("control").unwrap());
        let other = make_split(&ds, &SplitScenario::InDistribution, 0.2, 12).unwrap();
        assert_ne!(plan.split_for("control").unwrap(), other.split_for("control").unwrap());
    }

    #[test]
    fn drug_holdout_excludes_every_dose() {
        let ds = small_dataset();
        let plan = make_split(
            &ds,
            &SplitScenario::DrugHoldout { drug: "drug00".into() },
            0.2,
            1,
        )
        .unwrap();
        assert_eq!(
            plan.ood_condition_labels(),
            ["drug00-1".to_string(), "drug00-10".to_string()]
        );
        for label in plan.ood_condition_labels() {
            let split = plan.split_for(label).unwrap();
            assert!(split.train.is_empty());
            assert_eq!(split.test.len(), 10);
        }
        assert!(plan.training_condition_labels().iter().all(|l| !l.starts_with("drug00")));

        assert!(make_split(
            &ds,
            &SplitScenario::DrugHoldout { drug: "absent".into() },
            0.2,
            1
        )
        .is_err());
    }

    #[test]
    fn dose_holdout_excludes_the_dose_across_drugs() {
        let ds = small_dataset();
        let plan =
            make_split(&ds, &SplitScenario::DoseHoldout { dose: 10.0 }, 0.2, 1).unwrap();
        assert_eq!(
            plan.ood_condition_labels(),
            ["drug00-10".to_string(), "drug01-10".to_string()]
        );
        assert_eq!(
            plan.training_condition_labels(),
            ["drug00-1".to_string(), "drug01-1".to_string()]
        );
        assert!(make_split(&ds, &SplitScenario::DoseHoldout { dose: 3.0 }, 0.2, 1).is_err());
    }

    #[test]
    fn drug_folds_cover_every_drug_exactly_once() {
        let spec = SynthSpec {
            n_drugs: 7,
            doses: vec![1.0],
            cells_per_condition: 4,
            n_control_cells: 4,
            dim: 2,
            n_clusters: 1,
            seed: 9,
            ..SynthSpec::default()
        };
        let (ds, _) = generate_synthetic(&spec).unwrap();
        let mut held: Vec<String> = Vec::new();
        for fold in 0..3 {
            let plan = make_split(
                &ds,
                &SplitScenario::DrugFolds { n_folds: 3, fold },
                0.25,
                5,
            )
            .unwrap();
            for label in plan.ood_condition_labels() {
                held.push(Condition::parse_label(label).unwrap().drug_key());
            }
        }
        held.sort();
        assert_eq!(held, ds.drug_names(), "each drug held out exactly once");

        assert!(make_split(&ds, &SplitScenario::DrugFolds { n_folds: 1, fold: 0 }, 0.2, 1).is_err());
        assert!(make_split(&ds, &SplitScenario::DrugFolds { n_folds: 3, fold: 3 }, 0.2, 1).is_err());
        assert!(make_split(&ds, &SplitScenario::DrugFolds { n_folds: 8, fold: 0 }, 0.2, 1).is_err());
    }

    #[test]
    fn batches_sample_the_right_pools() {
        let ds = small_dataset();
        let plan = make_split(&ds, &SplitScenario::InDistribution, 0.2, 2).unwrap();
        let mut rng = seed::rng(0, "test-batch");
        let batch = sample_batch(&ds, &plan, "drug00-1", 32, BatchRole::Target, SplitPhase::Train, &mut rng)
            .unwrap();
        assert_eq!(batch.dim(), (32, 3));

        // Every sampled row must exist among the condition's training rows.
        let pool = ds.rows(&plan.split_for("drug00-1").unwrap().train);
        for row in batch.outer_iter() {
            assert!(
                pool.outer_iter().any(|p| p == row),
                "sampled row not in the training pool"
            );
        }

        // Identical stream states give identical batches.
        let mut r1 = seed::rng(7, "b");
        let mut r2 = seed::rng(7, "b");
        let a = sample_batch(&ds, &plan, "drug00-1", 8, BatchRole::Source, SplitPhase::Test, &mut r1).unwrap();
        let b = sample_batch(&ds, &plan, "drug00-1", 8, BatchRole::Source, SplitPhase::Test, &mut r2).unwrap();
        assert_eq!(a, b);

        // OOD conditions have no training rows to sample.
        let ood_plan = make_split(
            &ds,
            &SplitScenario::DrugHoldout { drug: "drug00".into() },
            0.2,
            2,
        )
        .unwrap();
        let mut rng = seed::rng(0, "x");
        assert!(sample_batch(&ds, &ood_plan, "drug00-1", 4, BatchRole::Target, SplitPhase::Train, &mut rng)
            .is_err());
        assert!(sample_batch(&ds, &ood_plan, "drug00-1", 4, BatchRole::Target, SplitPhase::Test, &mut rng)
            .is_ok());
    }

    #[test]
    fn batch_sampling_is_uniform() {
        let ds = small_dataset();
        let plan = make_split(&ds, &SplitScenario::InDistribution, 0.2, 4).unwrap();
        let pool = plan.split_for(CONTROL_LABEL).unwrap().train.clone();
        let mut rng = seed::rng(13, "uniformity");
        let draws = 20_000;
        let batch = sample_batch(
            &ds,
            &plan,
            CONTROL_LABEL,
            draws,
            BatchRole::Source,
            SplitPhase::Train,
            &mut rng,
        )
        .unwrap();
        // Count how often each pool row appears by matching feature rows.
        let mut counts = vec![0usize; pool.len()];
        for row in batch.outer_iter() {
            let idx = pool
                .iter()
                .position(|&p| ds.features().row(p) == row)
                .expect("row from pool");
            counts[idx] += 1;
        }
        let p = 1.0 / pool.len() as f64;
        let expected = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (idx, &count) in counts.iter().enumerate() {
            assert!(
                (count as f64 - expected).abs() <= 3.0 * sigma,
                "row {idx} drawn {count} times, expected {expected:.0} +- {:.0}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn synthetic_shifts_are_exact_without_spread() {
        let spec = SynthSpec {
            n_drugs: 2,
            doses: vec![1.0, 10.0],
            cells_per_condition: 50,
            n_control_cells: 50,
            dim: 4,
            n_clusters: 1,
            cluster_spread: 0.0,
            combinations: vec![vec![0, 1]],
            seed: 21,
            ..SynthSpec::default()
        };
        let (ds, truth) = generate_synthetic(&spec).unwrap();
        let control_mean = ds.rows(&ds.control_rows()).mean_axis(Axis(0)).unwrap();

        for (key, dose) in [("drug00", 10.0), ("drug01", 1.0), ("drug00+drug01", 10.0)] {
            let label = format!("{key}-{dose}");
            let rows = ds.rows_with_label(&label);
            let mean = ds.rows(&rows).mean_axis(Axis(0)).unwrap();
            let expected = truth.expected_shift(key, dose).unwrap();
            for c in 0..4 {
                let got = mean[c] - control_mean[c];
                assert!(
                    (got - expected[c]).abs() < 1e-9,
                    "{label} feature {c}: shift {got} vs expected {}",
                    expected[c]
                );
            }
        }

        // The dose-10 shift strictly dominates the dose-1 shift.
        let norm = |key: &str, dose: f64| {
            let v = truth.expected_shift(key, dose).unwrap();
            v.dot(&v).sqrt()
        };
        assert!(norm("drug00", 10.0) > norm("drug00", 1.0));
    }

    #[test]
    fn covariance_scaling_changes_spread_not_mean() {
        let spec = SynthSpec {
            n_drugs: 1,
            doses: vec![10.0],
            cells_per_condition: 4000,
            n_control_cells: 4000,
            dim: 3,
            n_clusters: 1,
            cluster_spread: 0.5,
            covariance_scales: Some(vec![2.0]),
            seed: 8,
            ..SynthSpec::default()
        };
        let (ds, truth) = generate_synthetic(&spec).unwrap();
        let control = ds.rows(&ds.control_rows());
        let treated = ds.rows(&ds.rows_with_label("drug00-10"));

        let var = |m: &Array2<f64>| {
            let mean = m.mean_axis(Axis(0)).unwrap();
            m.outer_iter()
                .map(|r| {
                    let d = &r - &mean;
                    d.dot(&d)
                })
                .sum::<f64>()
                / m.nrows() as f64
        };
        let ratio = var(&treated) / var(&control);
        assert!(
            (ratio - 4.0).abs() < 0.5,
            "variance ratio {ratio}, expected about gamma^2 = 4"
        );

        let shift = treated.mean_axis(Axis(0)).unwrap() - control.mean_axis(Axis(0)).unwrap();
        let expected = truth.expected_shift("drug00", 10.0).unwrap();
        let err = (&shift - &expected).dot(&(&shift - &expected)).sqrt();
        assert!(err < 0.1, "mean shift off by {err}");
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let spec = SynthSpec {
            cells_per_condition: 20,
            n_control_cells: 20,
            ..SynthSpec::default()
        };
        let (a, _) = generate_synthetic(&spec).unwrap();
        let (b, _) = generate_synthetic(&spec).unwrap();
        let bits = |m: &Array2<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.features()), bits(b.features()));

        let (c, _) = generate_synthetic(&SynthSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(bits(a.features()), bits(c.features()));
    }

    #[test]
    fn grouped_shift_directions_are_correlated() {
        let spec = SynthSpec {
            n_drugs: 4,
            moa_groups: Some(2),
            group_mixing: 0.9,
            cells_per_condition: 2,
            n_control_cells: 2,
            doses: vec![1.0],
            seed: 33,
            ..SynthSpec::default()
        };
        let (_, truth) = generate_synthetic(&spec).unwrap();
        let cos = |a: &[f64], b: &[f64]| {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for (x, y) in a.iter().zip(b) {
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            dot / (na.sqrt() * nb.sqrt())
        };
        // Drugs 0 and 2 share a group, as do 1 and 3.
        let same = cos(&truth.shift_vectors[0], &truth.shift_vectors[2]);
        assert!(same > 0.8, "same-group cosine {same}");
        let sizes: Vec<usize> = truth.shift_vectors.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![30; 4]);
    }

    #[test]
    fn row_counts_match_the_spec() {
        let spec = SynthSpec {
            n_drugs: 3,
            doses: vec![0.1, 1.0, 10.0, 100.0],
            cells_per_condition: 500,
            n_control_cells: 500,
            ..SynthSpec::default()
        };
        let (ds, _) = generate_synthetic(&spec).unwrap();
        assert_eq!(ds.len(), 500 + 3 * 4 * 500);
        assert_eq!(ds.treatment_labels().len(), 12);
    }

    #[test]
    fn spec_validation_rejects_nonsense() {
        let base = SynthSpec::default();
        for bad in [
            SynthSpec { n_drugs: 0, ..base.clone() },
            SynthSpec { doses: vec![], ..base.clone() },
            SynthSpec { doses: vec![1.0, 1.0], ..base.clone() },
            SynthSpec { doses: vec![-1.0], ..base.clone() },
            SynthSpec { cells_per_condition: 0, ..base.clone() },
            SynthSpec { cluster_spread: -0.1, ..base.clone() },
            SynthSpec { shift_vectors: Some(vec![vec![0.0; 30]]), ..base.clone() },
            SynthSpec { covariance_scales: Some(vec![1.0]), ..base.clone() },
            SynthSpec { moa_groups: Some(9), ..base.clone() },
            SynthSpec { group_mixing: 1.5, ..base.clone() },
            SynthSpec { combinations: vec![vec![0]], ..base.clone() },
            SynthSpec { combinations: vec![vec![0, 7]], ..base.clone() },
            SynthSpec { combinations: vec![vec![1, 1]], ..base.clone() },
        ] {
            assert!(generate_synthetic(&bad).is_err());
        }
    }
}
