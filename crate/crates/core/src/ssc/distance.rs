//! Combined semantic and positional distance between hyperedges:
//! `(1 - cos(e_i, e_j)) + alpha * |k_i - k_j|`.

use crate::kbuild::Hyperedge;
use crate::providers::Embedding;

use super::SscError;

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// `1 - cos`, clamped to `[0, 2]` against rounding.
fn cosine_distance_raw(a: &[f32], na: f64, b: &[f32], nb: f64) -> f64 {
    let cos = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    1.0 - cos
}

/// Applies the positional term. `scale` divides the index difference (1 for
/// the raw form).
pub fn combine(cosine_distance: f64, index_gap: usize, alpha: f64, scale: f64) -> f64 {
    cosine_distance + alpha * (index_gap as f64 / scale)
}

/// Distance between two hyperedges under the raw positional term.
pub fn pair_distance(h_i: &Hyperedge, h_j: &Hyperedge, alpha: f64) -> Result<f64, SscError> {
    let (a, b) = (h_i.embedding.values(), h_j.embedding.values());
    if a.len() != b.len() {
        return Err(SscError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    for (n, h) in [(na, h_i), (nb, h_j)] {
        if n == 0.0 {
            return Err(SscError::ZeroVector(h.hyperedge_id.to_string()));
        }
    }
    Ok(combine(
        cosine_distance_raw(a, na, b, nb),
        h_i.k_index.abs_diff(h_j.k_index),
        alpha,
        1.0,
    ))
}

/// Dense symmetric matrix in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// From explicit rows. Panics if the rows are not square.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "matrix must be square");
        DistanceMatrix {
            n,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }
}

/// Inputs for matrix construction: one embedding and extraction index per
/// point.
pub struct Points<'a> {
    pub embeddings: Vec<&'a Embedding>,
    pub k_indices: Vec<usize>,
    pub alpha: f64,
    /// Divisor for the index gap (1 for the raw form).
    pub scale: f64,
}

impl<'a> Points<'a> {
    fn check(&self) -> Result<Vec<f64>, SscError> {
        let dim = self.embeddings.first().map_or(0, |e| e.dimension());
        self.embeddings
            .iter()
            .enumerate()
            .map(|(i, e)| {
                if e.dimension() != dim {
                    return Err(SscError::DimensionMismatch {
                        expected: dim,
                        found: e.dimension(),
                    });
                }
                let n = norm(e.values());
                if n == 0.0 {
                    Err(SscError::ZeroVector(format!("point {i}")))
                } else {
                    Ok(n)
                }
            })
            .collect()
    }

    fn row(&self, norms: &[f64], i: usize) -> Vec<f64> {
        let a = self.embeddings[i].values();
        (0..self.embeddings.len())
            .map(|j| {
                if i == j {
                    return 0.0;
                }
                let cd = cosine_distance_raw(a, norms[i], self.embeddings[j].values(), norms[j]);
                combine(
                    cd,
                    self.k_indices[i].abs_diff(self.k_indices[j]),
                    self.alpha,
                    self.scale,
                )
            })
            .collect()
    }

    fn assemble(rows: Vec<Vec<f64>>) -> DistanceMatrix {
        DistanceMatrix {
            n: rows.len(),
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn matrix_seq(&self) -> Result<DistanceMatrix, SscError> {
        let norms = self.check()?;
        Ok(Self::assemble(
            (0..self.embeddings.len()).map(|i| self.row(&norms, i)).collect(),
        ))
    }

    #[cfg(feature = "parallel")]
    pub fn matrix_par(&self) -> Result<DistanceMatrix, SscError> {
        use rayon::prelude::*;
        let norms = self.check()?;
        Ok(Self::assemble(
            (0..self.embeddings.len())
                .into_par_iter()
                .map(|i| self.row(&norms, i))
                .collect(),
        ))
    }

    pub fn matrix(&self) -> Result<DistanceMatrix, SscError> {
        #[cfg(feature = "parallel")]
        {
            self.matrix_par()
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.matrix_seq()
        }
    }
}

/// Pairwise distances over a document's hyperedges. With `normalize_position`
/// the index gap is divided by the number of hyperedges.
pub fn distance_matrix(
    hyperedges: &[Hyperedge],
    alpha: f64,
    normalize_position: bool,
) -> Result<DistanceMatrix, SscError> {
    if hyperedges.len() < 2 {
        return Err(SscError::TooFewPoints(hyperedges.len()));
    }
    Points {
        embeddings: hyperedges.iter().map(|h| &h.embedding).collect(),
        k_indices: hyperedges.iter().map(|h| h.k_index).collect(),
        alpha,
        scale: if normalize_position {
            hyperedges.len() as f64
        } else {
            1.0
        },
    }
    .matrix()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{Id, IdKind, Span};

    fn h(k: usize, v: Vec<f32>) -> Hyperedge {
        Hyperedge {
            hyperedge_id: Id::new("d", IdKind::Hyperedge, k as u32),
            h_text: String::new(),
            h_ref: String::new(),
            incident_entities: Vec::new(),
            k_index: k,
            chunk_index: 1,
            ref_span: Span::default(),
            embedding: Embedding(v),
        }
    }

    #[test]
    fn analytic_cases() {
        let a = h(1, vec![1.0, 0.0]);
        assert!(pair_distance(&a, &a, 0.1).unwrap().abs() < 1e-12);
        let b = h(6, vec![0.0, 1.0]);
        assert!((pair_distance(&a, &b, 0.1).unwrap() - 1.5).abs() < 1e-12);
        let c = h(11, vec![1.0, 0.0]);
        assert!((pair_distance(&a, &c, 0.1).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            pair_distance(&a, &h(2, vec![0.0, 0.0]), 0.1),
            Err(SscError::ZeroVector(_))
        ));
    }

    #[test]
    fn matrix_shape() {
        let hs = vec![h(1, vec![1.0, 0.0]), h(2, vec![0.6, 0.8]), h(2, vec![0.6, 0.8])];
        let m = distance_matrix(&hs, 0.1, false).unwrap();
        assert_eq!(m.len(), 3);
        for i in 0..3 {
            assert_eq!(m.get(i, i), 0.0);
            for j in 0..3 {
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
        assert!(m.get(1, 2).abs() < 1e-12);
        assert!((m.get(0, 1) - (0.4 + 0.1)).abs() < 1e-7);
        let norm = distance_matrix(&hs, 0.1, true).unwrap();
        assert!((norm.get(0, 1) - (0.4 + 0.1 / 3.0)).abs() < 1e-7);
        assert!(matches!(
            distance_matrix(&hs[..1], 0.1, false),
            Err(SscError::TooFewPoints(1))
        ));
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn seq_and_par_agree() {
        let embs: Vec<Embedding> = (0..20)
            .map(|i| Embedding(vec![(i as f32).sin(), (i as f32).cos(), 0.5]))
            .collect();
        let p = Points {
            embeddings: embs.iter().collect(),
            k_indices: (1..=20).collect(),
            alpha: 0.1,
            scale: 1.0,
        };
        assert_eq!(p.matrix_seq().unwrap(), p.matrix_par().unwrap());
    }
}
