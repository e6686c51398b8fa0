//! Turning a perturbation description into the context vector that steers
//! the transport map.
//!
//! A condition contributes up to two pieces of context: a drug encoding
//! (a shared dense layer applied to each drug's embedding vector, averaged
//! over the combination) and a dose encoding (a dense layer over the pooled
//! embedding concatenated with the log dose). Drug embeddings come from a
//! table loaded from disk (precomputed fingerprints) or computed from the
//! data itself (mode-of-action embeddings: metric MDS over pairwise
//! entropic transport distances between target populations).

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::data::Condition;
use crate::measure::DiscreteMeasure;
use crate::nn::LayerParams;
use crate::ot::{sinkhorn_with, SolverConfig};
use crate::smacof::{smacof_embedding, SmacofConfig};
use crate::{seed, Error, Result};

/// Natural logarithm of the dose. The base is a recorded choice: any other
/// base is an affine rescale the dose encoder absorbs.
pub fn encode_dose(dose: f64) -> Result<f64> {
    if !(dose.is_finite() && dose > 0.0) {
        return Err(Error::invalid(format!("dose must be positive, got {dose}")));
    }
    Ok(dose.ln())
}

/// What the context vector contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextMode {
    /// No context: the map ignores the condition.
    None,
    /// Log dose only.
    Dose,
    /// Pooled drug encoding concatenated with a dose encoding.
    DrugDose,
}

impl ContextMode {
    /// Parses the command-line spelling.
    pub fn parse(text: &str) -> Result<Self> {
        match text.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "dose" => Ok(Self::Dose),
            "drugdose" | "drug_dose" => Ok(Self::DrugDose),
            other => Err(Error::invalid(format!(
                "unknown context mode '{other}', expected none, dose, or drugdose"
            ))),
        }
    }

    /// Width of the context vector under this mode, given the drug-encoder
    /// output width.
    pub fn context_width(&self, drug_encoding_width: usize) -> usize {
        match self {
            ContextMode::None => 0,
            ContextMode::Dose => 1,
            ContextMode::DrugDose => drug_encoding_width + 1,
        }
    }
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextMode::None => "none",
            ContextMode::Dose => "dose",
            ContextMode::DrugDose => "drugdose",
        })
    }
}

/// Where a drug-embedding table came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    /// Precomputed molecular fingerprints.
    Fingerprint,
    /// Mode-of-action embedding computed from target populations.
    Moa,
}

impl EmbeddingSource {
    pub fn parse(text: &str) -> Result<Self> {
        match text.to_ascii_lowercase().as_str() {
            "fingerprint" => Ok(Self::Fingerprint),
            "moa" => Ok(Self::Moa),
            other => Err(Error::invalid(format!(
                "unknown embedding source '{other}', expected fingerprint or moa"
            ))),
        }
    }
}

impl fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingSource::Fingerprint => "fingerprint",
            EmbeddingSource::Moa => "moa",
        })
    }
}

/// One embedding vector per drug, all sharing a dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DrugEmbeddingTable {
    source: EmbeddingSource,
    dim: usize,
    vectors: BTreeMap<String, Array1<f64>>,
}

impl DrugEmbeddingTable {
    /// Builds a table from parallel names and vectors.
    pub fn new(
        source: EmbeddingSource,
        entries: Vec<(String, Array1<f64>)>,
    ) -> Result<Self> {
        let Some(dim) = entries.first().map(|(_, v)| v.len()) else {
            return Err(Error::data("an embedding table needs at least one drug".to_string()));
        };
        if dim == 0 {
            return Err(Error::data("embedding vectors must be non-empty".to_string()));
        }
        let mut vectors = BTreeMap::new();
        for (name, vector) in entries {
            if vector.len() != dim {
                return Err(Error::shape(format!(
                    "drug '{name}' has a {}-dimensional embedding, expected {dim}",
                    vector.len()
                )));
            }
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!("drug '{name}' has non-finite embedding entries")));
            }
            if vectors.insert(name.clone(), vector).is_some() {
                return Err(Error::data(format!("drug '{name}' appears twice in the table")));
            }
        }
        Ok(Self { source, dim, vectors })
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    /// Shared embedding dimension.
    pub fn embedding_dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, drug: &str) -> Option<&Array1<f64>> {
        self.vectors.get(drug)
    }

    /// Sorted drug names.
    pub fn drugs(&self) -> Vec<String> {
        self.vectors.keys().cloned().collect()
    }

    /// Writes the table as delimited text. The header declares the source
    /// tag and the dimension through its column names:
    /// `drug,<source>_0,...,<source>_{m-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("drug");
        for i in 0..self.dim {
            let _ = write!(out, ",{}_{i}", self.source);
        }
        out.push('\n');
        for (name, vector) in &self.vectors {
            out.push_str(name);
            for value in vector {
                let _ = write!(out, ",{value}");
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Reads a table written by [`DrugEmbeddingTable::write_csv`] (or any
    /// file in that format).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let Some((_, header)) = lines.next() else {
            return Err(Error::data(format!("{} is empty", path.display())));
        };
        let fields: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
        if fields.len() < 2 || fields[0] != "drug" {
            return Err(Error::data(
                "header must be 'drug' followed by <source>_<index> columns".to_string(),
            ));
        }
        let Some((tag, _)) = fields[1].rsplit_once('_') else {
            return Err(Error::data(format!(
                "embedding column '{}' is not of the form <source>_<index>",
                fields[1]
            )));
        };
        let source = EmbeddingSource::parse(tag)
            .map_err(|_| Error::data(format!("unknown embedding source tag '{tag}'")))?;
        for (i, field) in fields[1..].iter().enumerate() {
            let expected = format!("{source}_{i}");
            if *field != expected {
                return Err(Error::data(format!(
                    "embedding column {} is '{field}', expected '{expected}'",
                    i + 1
                )));
            }
        }
        let dim = fields.len() - 1;

        let mut entries = Vec::new();
        for (line_idx, raw_line) in lines {
            let line = raw_line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let row_no = line_idx + 1;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(Error::data(format!(
                    "line {row_no}: {} fields, expected {}",
                    fields.len(),
                    dim + 1
                )));
            }
            let mut vector = Array1::zeros(dim);
            for (i, field) in fields[1..].iter().enumerate() {
                vector[i] = field.trim().parse().map_err(|_| {
                    Error::data(format!("line {row_no}: unreadable number '{field}'"))
                })?;
            }
            entries.push((fields[0].trim().to_string(), vector));
        }
        Self::new(source, entries)
    }
}

/// The encoded context of one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionContext {
    /// The vector handed to the map network. Width depends on the mode.
    pub context: Array1<f64>,
    /// Mean raw drug embedding over the resolved combination members
    /// (drug-dose mode only); the dose encoder's drug input.
    pub pooled_embedding: Option<Array1<f64>>,
    /// Encoded dose (present unless the mode is context-free).
    pub log_dose: Option<f64>,
    /// How many of the condition's drugs resolved in the table
    /// (drug-dose mode only).
    pub resolved_drugs: usize,
}

/// Trainable context-encoder parameters: a shared dense layer over drug
/// embeddings and a dense layer producing the dose encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEncoders {
    /// Dense layer applied to each drug embedding before averaging
    /// (embedding dim -> drug encoding width).
    pub w_drug: LayerParams,
    /// Dense layer over (pooled embedding, log dose) -> 1.
    pub w_dose: LayerParams,
}

impl ContextEncoders {
    /// Validates the two layers against an embedding dimension.
    pub fn check_dims(&self, embedding_dim: usize) -> Result<()> {
        if self.w_drug.weight.nrows() != embedding_dim {
            return Err(Error::shape(format!(
                "drug encoder consumes {} entries but embeddings have {embedding_dim}",
                self.w_drug.weight.nrows()
            )));
        }
        if self.w_drug.bias.len() != self.w_drug.weight.ncols() {
            return Err(Error::shape("drug encoder bias width mismatch".to_string()));
        }
        if self.w_dose.weight.nrows() != embedding_dim + 1 || self.w_dose.weight.ncols() != 1 {
            return Err(Error::shape(format!(
                "dose encoder must map {} inputs to 1 output, got {}x{}",
                embedding_dim + 1,
                self.w_dose.weight.nrows(),
                self.w_dose.weight.ncols()
            )));
        }
        if self.w_dose.bias.len() != 1 {
            return Err(Error::shape("dose encoder bias must be a single entry".to_string()));
        }
        Ok(())
    }

    /// Output width of the drug encoder.
    pub fn drug_encoding_width(&self) -> usize {
        self.w_drug.weight.ncols()
    }
}

/// Lexicographic order on vectors, total on floats.
fn lex_order(a: &Array1<f64>, b: &Array1<f64>) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        let ord = x.total_cmp(y);
        if ord != std::cmp::Ordering::Equal {
            return ord;
        }
    }
    a.len().cmp(&b.len())
}

/// Sums vectors in lexicographic order and divides by the count, so any
/// permutation of the input produces bit-identical output.
fn sorted_mean(vectors: &[Array1<f64>]) -> Array1<f64> {
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.sort_by(|&i, &j| lex_order(&vectors[i], &vectors[j]));
    let mut sum = Array1::zeros(vectors[0].len());
    for &i in &order {
        sum += &vectors[i];
    }
    sum / vectors.len() as f64
}

/// Applies the shared dense layer to every embedding and averages the
/// results: the set-pooling drug encoding. The average runs in a fixed
/// internal order, so the output is permutation invariant bit for bit.
pub fn pool_drug_embeddings(
    embeddings: &[Array1<f64>],
    w_drug: &LayerParams,
) -> Result<Array1<f64>> {
    if embeddings.is_empty() {
        return Err(Error::invalid("cannot pool an empty set of drug embeddings"));
    }
    let dim = w_drug.weight.nrows();
    for (i, h) in embeddings.iter().enumerate() {
        if h.len() != dim {
            return Err(Error::shape(format!(
                "embedding {i} has {} entries, encoder consumes {dim}",
                h.len()
            )));
        }
    }
    let encoded: Vec<Array1<f64>> = embeddings
        .iter()
        .map(|h| h.dot(&w_drug.weight) + &w_drug.bias)
        .collect();
    Ok(sorted_mean(&encoded))
}

/// Encodes one condition into its context vector.
///
/// - `None`: an empty context.
/// - `Dose`: the log dose alone.
/// - `DrugDose`: `(z_drug, z_dose)` where `z_drug` pools the dense-encoded
///   drug embeddings and `z_dose` applies the dose encoder to the pooled
///   raw embedding concatenated with the log dose.
///
/// Combination members missing from the table are skipped; a condition
/// whose drugs are all missing is an error, as is a missing single drug.
pub fn encode_condition(
    condition: &Condition,
    mode: ContextMode,
    table: Option<&DrugEmbeddingTable>,
    encoders: Option<&ContextEncoders>,
) -> Result<ConditionContext> {
    if mode == ContextMode::None {
        return Ok(ConditionContext {
            context: Array1::zeros(0),
            pooled_embedding: None,
            log_dose: None,
            resolved_drugs: 0,
        });
    }
    let Some(dose) = condition.dose() else {
        return Err(Error::invalid(format!(
            "condition '{}' has no dose but the context mode needs one",
            condition.label()
        )));
    };
    let log_dose = encode_dose(dose)?;
    if mode == ContextMode::Dose {
        return Ok(ConditionContext {
            context: ndarray::array![log_dose],
            pooled_embedding: None,
            log_dose: Some(log_dose),
            resolved_drugs: 0,
        });
    }

    let table = table.ok_or_else(|| {
        Error::invalid("drug-dose conditioning needs a drug-embedding table")
    })?;
    let encoders = encoders.ok_or_else(|| {
        Error::invalid("drug-dose conditioning needs context encoders")
    })?;
    encoders.check_dims(table.embedding_dim())?;

    let mut resolved: Vec<Array1<f64>> = Vec::with_capacity(condition.drugs().len());
    for drug in condition.drugs() {
        if let Some(h) = table.get(drug) {
            resolved.push(h.clone());
        }
    }
    if resolved.is_empty() {
        return Err(Error::data(format!(
            "none of the drugs of condition '{}' are in the embedding table",
            condition.label()
        )));
    }
    let z_drug = pool_drug_embeddings(&resolved, &encoders.w_drug)?;
    let pooled_raw = sorted_mean(&resolved);

    let mut dose_input = Array1::zeros(table.embedding_dim() + 1);
    dose_input
        .slice_mut(ndarray::s![..table.embedding_dim()])
        .assign(&pooled_raw);
    dose_input[table.embedding_dim()] = log_dose;
    let z_dose = dose_input.dot(&encoders.w_dose.weight)[0] + encoders.w_dose.bias[0];

    let mut context = Array1::zeros(z_drug.len() + 1);
    context.slice_mut(ndarray::s![..z_drug.len()]).assign(&z_drug);
    context[z_drug.len()] = z_dose;
    Ok(ConditionContext {
        context,
        pooled_embedding: Some(pooled_raw),
        log_dose: Some(log_dose),
        resolved_drugs: resolved.len(),
    })
}

/// A mode-of-action embedding: one point per population, plus the distance
/// matrix it was computed from.
#[derive(Debug, Clone)]
pub struct MoaEmbedding {
    /// K x out_dim coordinates, one row per input population.
    pub points: Array2<f64>,
    /// Symmetrized transport distances between the populations.
    pub distances: Array2<f64>,
}

/// Embeds populations by their pairwise entropic transport distances.
///
/// For every pair the transport problem is solved in both directions, the
/// costs averaged (they agree up to solver tolerance), and the square root
/// taken as the distance. The distance matrix then goes through stress
/// majorization into `out_dim` coordinates.
pub fn moa_embedding(
    populations: &[DiscreteMeasure],
    epsilon: f64,
    out_dim: usize,
    seed_value: u64,
) -> Result<MoaEmbedding> {
    if populations.len() < 2 {
        return Err(Error::invalid(format!(
            "mode-of-action embedding needs at least 2 populations, got {}",
            populations.len()
        )));
    }
    let k = populations.len();
    let solver = SolverConfig {
        epsilon,
        max_iter: 20_000,
        tol: 1e-5,
    };
    solver.validate()?;

    let mut distances = Array2::zeros((k, k));
    for i in 0..k {
        for j in (i + 1)..k {
            let forward = sinkhorn_with(&populations[i], &populations[j], &solver)
                .and_then(|s| s.require_converged())
                .map_err(|e| {
                    Error::numerical(format!("transport solve for pair ({i}, {j}) failed: {e}"))
                })?;
            let backward = sinkhorn_with(&populations[j], &populations[i], &solver)
                .and_then(|s| s.require_converged())
                .map_err(|e| {
                    Error::numerical(format!("transport solve for pair ({j}, {i}) failed: {e}"))
                })?;
            let cost = 0.5 * (forward.transport_cost + backward.transport_cost);
            let distance = cost.max(0.0).sqrt();
            distances[[i, j]] = distance;
            distances[[j, i]] = distance;
        }
    }

    let smacof_cfg = SmacofConfig {
        embedding_dim: out_dim,
        seed: seed::derive(seed_value, "moa-smacof"),
        ..SmacofConfig::default()
    };
    let embedding = smacof_embedding(&distances, &smacof_cfg)?;
    Ok(MoaEmbedding {
        points: embedding.points,
        distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn toy_encoders(m: usize, width: usize, seed_value: u64) -> ContextEncoders {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_value);
        ContextEncoders {
            w_drug: LayerParams {
                weight: Array2::from_shape_fn((m, width), |_| rng.gen_range(-1.0..1.0)),
                bias: Array1::from_shape_fn(width, |_| rng.gen_range(-0.5..0.5)),
            },
            w_dose: LayerParams {
                weight: Array2::from_shape_fn((m + 1, 1), |_| rng.gen_range(-1.0..1.0)),
                bias: array![0.1],
            },
        }
    }

    fn toy_table(m: usize) -> DrugEmbeddingTable {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let entries = ["dex", "tram", "vinde"]
            .iter()
            .map(|name| {
                (
                    name.to_string(),
                    Array1::from_shape_fn(m, |_| rng.gen_range(-1.0..1.0)),
                )
            })
            .collect();
        DrugEmbeddingTable::new(EmbeddingSource::Fingerprint, entries).unwrap()
    }

    #[test]
    fn dose_encoding_is_natural_log() {
        assert_eq!(encode_dose(1.0).unwrap(), 0.0);
        assert_relative_eq!(
            encode_dose(std::f64::consts::E).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            encode_dose(10_000.0).unwrap(),
            9.210340371976184,
            max_relative = 1e-15
        );
        assert!(encode_dose(0.0).is_err());
        assert!(encode_dose(-3.0).is_err());
        assert!(encode_dose(f64::NAN).is_err());
    }

    #[test]
    fn pooling_one_element_is_the_dense_layer() {
        let encoders = toy_encoders(4, 6, 1);
        let h = array![0.3, -0.2, 0.9, 0.05];
        let pooled = pool_drug_embeddings(&[h.clone()], &encoders.w_drug).unwrap();
        let direct = h.dot(&encoders.w_drug.weight) + &encoders.w_drug.bias;
        assert_eq!(
            pooled.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            direct.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn pooling_is_permutation_invariant_bit_for_bit() {
        let encoders = toy_encoders(5, 7, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vectors: Vec<Array1<f64>> = (0..3)
            .map(|_| Array1::from_shape_fn(5, |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let reference = pool_drug_embeddings(&vectors, &encoders.w_drug).unwrap();
        let orders: [[usize; 3]; 5] =
            [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for order in orders {
            let permuted: Vec<Array1<f64>> =
                order.iter().map(|&i| vectors[i].clone()).collect();
            let pooled = pool_drug_embeddings(&permuted, &encoders.w_drug).unwrap();
            assert_eq!(
                pooled.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                reference.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                "order {order:?}"
            );
        }
    }

    #[test]
    fn opposite_embeddings_with_zero_bias_pool_to_zero() {
        let mut encoders = toy_encoders(4, 3, 4);
        encoders.w_drug.bias.fill(0.0);
        let h = array![0.5, -1.0, 2.0, 0.25];
        let pooled = pool_drug_embeddings(&[h.clone(), -&h], &encoders.w_drug).unwrap();
        for v in &pooled {
            assert!(v.abs() < 1e-15, "expected zero, got {v}");
        }
    }

    #[test]
    fn pooling_rejects_empty_and_mismatched_inputs() {
        let encoders = toy_encoders(4, 3, 5);
        assert!(pool_drug_embeddings(&[], &encoders.w_drug).is_err());
        assert!(pool_drug_embeddings(&[array![1.0, 2.0]], &encoders.w_drug).is_err());
    }

    #[test]
    fn context_widths_follow_the_mode() {
        let table = toy_table(6);
        let encoders = toy_encoders(6, 5, 7);
        let single = Condition::treatment(&["dex"], 100.0).unwrap();

        let none = encode_condition(&single, ContextMode::None, None, None).unwrap();
        assert_eq!(none.context.len(), 0);

        let dose = encode_condition(&single, ContextMode::Dose, None, None).unwrap();
        assert_eq!(dose.context.len(), 1);
        assert_relative_eq!(dose.context[0], 100.0f64.ln(), max_relative = 1e-15);

        let full =
            encode_condition(&single, ContextMode::DrugDose, Some(&table), Some(&encoders))
                .unwrap();
        assert_eq!(full.context.len(), 6);
        assert_eq!(full.resolved_drugs, 1);
        assert_eq!(ContextMode::DrugDose.context_width(5), 6);

        // A combination keeps the same context width.
        let combo = Condition::treatment(&["dex", "tram"], 100.0).unwrap();
        let combo_ctx =
            encode_condition(&combo, ContextMode::DrugDose, Some(&table), Some(&encoders))
                .unwrap();
        assert_eq!(combo_ctx.context.len(), 6);
        assert_eq!(combo_ctx.resolved_drugs, 2);
    }

    #[test]
    fn single_drug_context_matches_hand_computation() {
        let table = toy_table(6);
        let encoders = toy_encoders(6, 5, 8);
        let cond = Condition::treatment(&["tram"], 10.0).unwrap();
        let ctx =
            encode_condition(&cond, ContextMode::DrugDose, Some(&table), Some(&encoders))
                .unwrap();

        let h = table.get("tram").unwrap();
        let z_drug = h.dot(&encoders.w_drug.weight) + &encoders.w_drug.bias;
        let mut dose_in = h.to_vec();
        dose_in.push(10.0f64.ln());
        let dose_in = Array1::from_vec(dose_in);
        let z_dose = dose_in.dot(&encoders.w_dose.weight)[0] + encoders.w_dose.bias[0];
        for i in 0..5 {
            assert_relative_eq!(ctx.context[i], z_drug[i], max_relative = 1e-14);
        }
        assert_relative_eq!(ctx.context[5], z_dose, max_relative = 1e-14);
        assert_eq!(ctx.log_dose, Some(10.0f64.ln()));
    }

    #[test]
    fn missing_drugs_are_skipped_in_combinations_only() {
        let table = toy_table(6);
        let encoders = toy_encoders(6, 5, 9);

        let unknown_single = Condition::treatment(&["mystery"], 1.0).unwrap();
        assert!(encode_condition(
            &unknown_single,
            ContextMode::DrugDose,
            Some(&table),
            Some(&encoders)
        )
        .is_err());

        // One resolvable member suffices.
        let partial = Condition::treatment(&["dex", "mystery"], 1.0).unwrap();
        let ctx =
            encode_condition(&partial, ContextMode::DrugDose, Some(&table), Some(&encoders))
                .unwrap();
        assert_eq!(ctx.resolved_drugs, 1);
        let alone = Condition::treatment(&["dex"], 1.0).unwrap();
        let ctx_alone =
            encode_condition(&alone, ContextMode::DrugDose, Some(&table), Some(&encoders))
                .unwrap();
        assert_eq!(ctx.context, ctx_alone.context);

        let hopeless = Condition::treatment(&["mystery", "enigma"], 1.0).unwrap();
        assert!(encode_condition(
            &hopeless,
            ContextMode::DrugDose,
            Some(&table),
            Some(&encoders)
        )
        .is_err());

        // Control has no dose: dose-bearing modes reject it.
        assert!(encode_condition(&Condition::control(), ContextMode::Dose, None, None).is_err());
    }

    #[test]
    fn table_round_trips_through_csv() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("embeddings.csv");
        let table = toy_table(6);
        table.write_csv(&path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("drug,fingerprint_0,fingerprint_1"));

        let back = DrugEmbeddingTable::read_csv(&path).unwrap();
        assert_eq!(back, table);
        assert_eq!(back.source(), EmbeddingSource::Fingerprint);
        assert_eq!(back.embedding_dim(), 6);
        assert_eq!(back.drugs(), vec!["dex", "tram", "vinde"]);
    }

    #[test]
    fn table_parsing_rejects_malformed_files() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");

        std::fs::write(&path, "name,moa_0\nx,1.0\n").unwrap();
        assert!(DrugEmbeddingTable::read_csv(&path).is_err());

        std::fs::write(&path, "drug,mystery_0\nx,1.0\n").unwrap();
        assert!(DrugEmbeddingTable::read_csv(&path).is_err());

        std::fs::write(&path, "drug,moa_0,moa_2\nx,1.0,2.0\n").unwrap();
        assert!(DrugEmbeddingTable::read_csv(&path).is_err());

        std::fs::write(&path, "drug,moa_0,moa_1\nx,1.0\n").unwrap();
        assert!(DrugEmbeddingTable::read_csv(&path).is_err());

        std::fs::write(&path, "drug,moa_0\nx,1.0\nx,2.0\n").unwrap();
        assert!(DrugEmbeddingTable::read_csv(&path).is_err());

        std::fs::write(&path, "drug,moa_0\nx,nan\n").unwrap();
        assert!(DrugEmbeddingTable::read_csv(&path).is_err());
    }

    #[test]
    fn two_populations_embed_at_their_transport_distance() {
        let a = DiscreteMeasure::new(array![[0.0, 0.0]]).unwrap();
        let b = DiscreteMeasure::new(array![[3.0, 4.0]]).unwrap();
        let moa = moa_embedding(&[a, b], 0.1, 10, 0).unwrap();
        // Single atoms: transport cost is exactly the squared distance, so
        // the derived distance is 5.
        assert_relative_eq!(moa.distances[[0, 1]], 5.0, max_relative = 1e-9);
        let diff = &moa.points.row(0) - &moa.points.row(1);
        let embedded = diff.dot(&diff).sqrt();
        assert_relative_eq!(embedded, 5.0, max_relative = 1e-6);
    }

    #[test]
    fn planted_single_atom_populations_recover_their_geometry() {
        // Five single-atom populations in 10-dimensional space: pairwise
        // transport distances are exactly their Euclidean distances, which
        // a 10-dimensional embedding can realize with vanishing stress.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let points = Array2::from_shape_fn((5, 10), |_| rng.gen_range(-1.0..1.0));
        let measures: Vec<DiscreteMeasure> = points
            .outer_iter()
            .map(|row| {
                DiscreteMeasure::new(row.insert_axis(ndarray::Axis(0)).to_owned()).unwrap()
            })
            .collect();
        let moa = moa_embedding(&measures, 0.05, 10, 3).unwrap();

        let mut total_sq = 0.0;
        let mut stress = 0.0;
        for i in 0..5 {
            for j in (i + 1)..5 {
                let target = moa.distances[[i, j]];
                let diff = &moa.points.row(i) - &moa.points.row(j);
                let got = diff.dot(&diff).sqrt();
                stress += (target - got) * (target - got);
                total_sq += target * target;
            }
        }
        assert!(
            stress < 1e-6 * total_sq,
            "stress {stress} vs total squared distance {total_sq}"
        );
    }

    #[test]
    fn moa_embedding_is_deterministic_and_validates() {
        let a = DiscreteMeasure::new(array![[0.0], [1.0]]).unwrap();
        let b = DiscreteMeasure::new(array![[2.0], [3.0]]).unwrap();
        let c = DiscreteMeasure::new(array![[5.0], [6.0]]).unwrap();
        let run = || {
            moa_embedding(&[a.clone(), b.clone(), c.clone()], 0.1, 4, 5)
                .unwrap()
                .points
        };
        let first = run();
        let second = run();
        assert_eq!(
            first.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            second.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );

        assert!(moa_embedding(&[a.clone()], 0.1, 4, 5).is_err());
        assert!(moa_embedding(&[a, b], -1.0, 4, 5).is_err());
    }

    #[test]
    fn distance_matrix_is_symmetric_with_zero_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let measures: Vec<DiscreteMeasure> = (0..3)
            .map(|_| {
                DiscreteMeasure::new(Array2::from_shape_fn((6, 2), |_| rng.gen_range(-1.0..1.0)))
                    .unwrap()
            })
            .collect();
        let moa = moa_embedding(&measures, 0.1, 3, 1).unwrap();
        for i in 0..3 {
            assert_eq!(moa.distances[[i, i]], 0.0);
            for j in 0..3 {
                assert_eq!(moa.distances[[i, j]], moa.distances[[j, i]]);
            }
        }
    }
}
