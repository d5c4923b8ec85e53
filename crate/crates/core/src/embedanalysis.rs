//! Mean cosine similarity between groups of labelled embeddings, before and
//! after removing the shared component (estimated as the global mean).

use std::io::{Read, Write};

use crate::prefdist::{Dataset, Sign};
use crate::{dot, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCorpus {
    pub vectors: Vec<Vec<f64>>,
    pub concept_labels: Vec<String>,
    pub sign_labels: Vec<Sign>,
}

impl EmbeddingCorpus {
    pub fn new(vectors: Vec<Vec<f64>>, concept_labels: Vec<String>, sign_labels: Vec<Sign>) -> Result<Self> {
        let corpus = Self {
            vectors,
            concept_labels,
            sign_labels,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        Self::new(
            data.samples.iter().map(|s| s.embedding.clone()).collect(),
            data.samples.iter().map(|s| format!("c{}", s.cluster)).collect(),
            data.samples.iter().map(|s| s.sign).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// Concept labels in order of first appearance.
    pub fn concepts(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for l in &self.concept_labels {
            if !out.contains(l) {
                out.push(l.clone());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.vectors.len();
        if self.concept_labels.len() != m || self.sign_labels.len() != m {
            return Err(Error::InvalidArgument(format!(
                "{m} vectors but {} concept labels and {} sign labels",
                self.concept_labels.len(),
                self.sign_labels.len()
            )));
        }
        let d = self.dim();
        if let Some(v) = self.vectors.iter().find(|v| v.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: v.len() });
        }
        for concept in self.concepts() {
            for sign in [Sign::Aligned, Sign::Misaligned] {
                let count = self
                    .concept_labels
                    .iter()
                    .zip(&self.sign_labels)
                    .filter(|(c, s)| **c == concept && **s == sign)
                    .count();
                if count < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "group ({concept}, {}) has {count} rows; at least 2 required",
                        sign.symbol()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Reads `concept_label, sign, g_1..g_d` with a header row. A dataset
    /// export (header starting with `sample_id`) is accepted as well, using
    /// its cluster and sign columns.
    pub fn read_table<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = rdr.headers()?.clone();
        let (label_col, sign_col, first) = if header.get(0) == Some("sample_id") { (1, 2, 5) } else { (0, 1, 2) };
        if header.len() <= first {
            return Err(Error::Parse {
                line: 1,
                column: header.len(),
                message: "no embedding columns".into(),
            });
        }
        let d = header.len() - first;
        let (mut vectors, mut labels, mut signs) = (Vec::new(), Vec::new(), Vec::new());
        for (idx, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                line: idx + 2,
                column: 0,
                message: e.to_string(),
            })?;
            let line = idx + 2;
            let sign = Sign::parse(&rec[sign_col]).ok_or_else(|| Error::Parse {
                line,
                column: sign_col + 1,
                message: format!("unknown sign {:?}", &rec[sign_col]),
            })?;
            let v = (first..first + d)
                .map(|c| {
                    rec[c].parse::<f64>().map_err(|e| Error::Parse {
                        line,
                        column: c + 1,
                        message: format!("{e}: {:?}", &rec[c]),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let label = if first == 5 { format!("c{}", &rec[label_col]) } else { rec[label_col].to_string() };
            vectors.push(v);
            labels.push(label);
            signs.push(sign);
        }
        Self::new(vectors, labels, signs)
    }

    pub fn write_table<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["concept_label".to_string(), "sign".into()];
        header.extend((0..self.dim()).map(|m| format!("g{m}")));
        w.write_record(&header)?;
        for ((v, c), s) in self.vectors.iter().zip(&self.concept_labels).zip(&self.sign_labels) {
            let mut row = vec![c.clone(), s.symbol().to_string()];
            row.extend(v.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Square concept×concept matrix with row/column labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub labels: Vec<String>,
    /// Row-major, `labels.len()²` entries.
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.size() + b]
    }

    /// Mean of the entries with `a ≠ b`; `None` for a single concept.
    pub fn off_diagonal_mean(&self) -> Option<f64> {
        let k = self.size();
        if k < 2 {
            return None;
        }
        let total: f64 = (0..k).flat_map(|a| (0..k).filter(move |&b| b != a).map(move |b| (a, b))).map(|(a, b)| self.get(a, b)).sum();
        Some(total / (k * (k - 1)) as f64)
    }

    pub fn write_table<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (a, label) in self.labels.iter().enumerate() {
            let mut row = vec![label.clone()];
            row.extend((0..self.size()).map(|b| self.get(a, b).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Entry `(a, b)`: mean cosine similarity over all pairs of one row from
/// concept `a` and one from concept `b` (signs pooled). The diagonal
/// excludes self-pairs.
///
/// Computed from per-concept sums of unit vectors `U_a`: off-diagonal
/// entries are `U_a·U_b / (n_a n_b)` and diagonal entries are
/// `(|U_a|² − n_a) / (n_a (n_a − 1))`.
pub fn mean_similarity_matrix(corpus: &EmbeddingCorpus) -> Result<SimilarityMatrix> {
    corpus.validate()?;
    let labels = corpus.concepts();
    let k = labels.len();
    let d = corpus.dim();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (row, (v, label)) in corpus.vectors.iter().zip(&corpus.concept_labels).enumerate() {
        let norm = dot(v, v).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::ZeroNorm { row });
        }
        let a = labels.iter().position(|l| l == label).unwrap_or_default();
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(v) {
            *s += x / norm;
        }
    }
    let mut values = vec![0.0; k * k];
    for a in 0..k {
        for b in a..k {
            let ab = dot(&sums[a], &sums[b]);
            let (na, nb) = (counts[a] as f64, counts[b] as f64);
            let value = if a == b { (ab - na) / (na * (na - 1.0)) } else { ab / (na * nb) };
            let value = value.clamp(-1.0, 1.0);
            values[a * k + b] = value;
            values[b * k + a] = value;
        }
    }
    Ok(SimilarityMatrix { labels, values })
}

/// Subtracts the global mean embedding from every row.
pub fn subtract_shared_component(corpus: &EmbeddingCorpus) -> EmbeddingCorpus {
    let d = corpus.dim();
    let m = corpus.vectors.len().max(1) as f64;
    let mut mean = vec![0.0; d];
    for v in &corpus.vectors {
        for (acc, x) in mean.iter_mut().zip(v) {
            *acc += x;
        }
    }
    mean.iter_mut().for_each(|x| *x /= m);
    EmbeddingCorpus {
        vectors: corpus.vectors.iter().map(|v| v.iter().zip(&mean).map(|(x, mu)| x - mu).collect()).collect(),
        concept_labels: corpus.concept_labels.clone(),
        sign_labels: corpus.sign_labels.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(rows: &[(&str, Sign, Vec<f64>)]) -> EmbeddingCorpus {
        EmbeddingCorpus::new(
            rows.iter().map(|r| r.2.clone()).collect(),
            rows.iter().map(|r| r.0.to_string()).collect(),
            rows.iter().map(|r| r.1).collect(),
        )
        .unwrap()
    }

    fn four(label: &str, v: Vec<f64>) -> Vec<(&str, Sign, Vec<f64>)> {
        vec![
            (label, Sign::Aligned, v.clone()),
            (label, Sign::Aligned, v.clone()),
            (label, Sign::Misaligned, v.clone()),
            (label, Sign::Misaligned, v),
        ]
    }

    #[test]
    fn identical_rows_give_all_ones() {
        let mut rows = four("a", vec![1.0, 2.0, 3.0]);
        rows.extend(four("b", vec![1.0, 2.0, 3.0]));
        let s = mean_similarity_matrix(&corpus(&rows)).unwrap();
        assert!(s.values.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn orthogonal_concepts_give_zero_off_diagonal() {
        let mut rows = four("a", vec![1.0, 0.0]);
        rows.extend(four("b", vec![0.0, 3.0]));
        let s = mean_similarity_matrix(&corpus(&rows)).unwrap();
        assert_eq!(s.get(0, 1), 0.0);
        assert_eq!(s.get(1, 0), 0.0);
        assert_eq!(s.off_diagonal_mean(), Some(0.0));
    }

    #[test]
    fn zero_row_is_rejected() {
        let mut rows = four("a", vec![1.0, 0.0]);
        rows[2].2 = vec![0.0, 0.0];
        assert!(matches!(mean_similarity_matrix(&corpus(&rows)), Err(Error::ZeroNorm { row: 2 })));
    }

    #[test]
    fn centering_repeated_vector_gives_zeros() {
        let c = subtract_shared_component(&corpus(&four("a", vec![0.3, -4.0])));
        assert!(c.vectors.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn small_groups_rejected() {
        let rows = [("a", Sign::Aligned, vec![1.0]), ("a", Sign::Misaligned, vec![1.0])];
        let r = EmbeddingCorpus::new(
            rows.iter().map(|r| r.2.clone()).collect(),
            rows.iter().map(|r| r.0.to_string()).collect(),
            rows.iter().map(|r| r.1).collect(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn table_parse_reports_position() {
        let text = "concept_label,sign,g0,g1\na,+,1.0,0.0\na,+,1.0,x\n";
        match EmbeddingCorpus::read_table(text.as_bytes()) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 4)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
