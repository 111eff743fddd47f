//! The three training losses: land-cover cross-entropy, region
//! cross-entropy, and the supervised contrastive loss over `C + R`
//! categories that disentangles the two embedding branches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Relative weights of the three loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lc: f64,
    pub region: f64,
    pub con: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lc: 1.0,
            region: 1.0,
            con: 1.0,
        }
    }
}

/// Per-batch loss values and their weighted combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_lc: f64,
    pub l_region: f64,
    pub l_con: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossReport {
    pub fn combine(l_lc: f64, l_region: f64, l_con: f64, weights: LossWeights) -> Self {
        Self {
            l_lc,
            l_region,
            l_con,
            total: weights.lc * l_lc + weights.region * l_region + weights.con * l_con,
            weights,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_lc.is_finite()
            && self.l_region.is_finite()
            && self.l_con.is_finite()
            && self.total.is_finite()
    }
}

/// Mean negative log-likelihood of `labels` under row-wise softmax of
/// `logits`, with the gradient `(softmax - onehot) / B` w.r.t. the logits.
/// Numerically stabilized by max subtraction.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let b = logits.rows();
    let k = logits.cols();
    if labels.len() != b {
        return Err(Error::ShapeMismatch {
            context: "cross_entropy",
            expected: format!("{b} labels"),
            actual: format!("{} labels", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            num_classes: k,
        });
    }
    let mut grad = Matrix::zeros(b, k);
    let mut loss = 0.0;
    let bf = b as f64;
    for r in 0..b {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - max).exp();
        }
        let log_sum = max + sum.ln();
        loss += log_sum - row[labels[r]];
        let grow = grad.row_mut(r);
        for (c, &v) in row.iter().enumerate() {
            let p = (v - log_sum).exp();
            grow[c] = (p - if c == labels[r] { 1.0 } else { 0.0 }) / bf;
        }
    }
    Ok((loss / bf, grad))
}

/// Contrastive categories for the stacked embedding list
/// `[all z_inv | all z_spec]`: the invariant embedding of sample `i` gets its
/// land-cover class `y_i`, the specific embedding gets `C + r_i`. An
/// invariant and a specific embedding therefore never share a category.
pub fn assign_contrastive_categories(
    lc_labels: &[usize],
    region_labels: &[usize],
    num_classes: usize,
    num_regions: usize,
) -> Result<Vec<usize>> {
    if lc_labels.len() != region_labels.len() {
        return Err(Error::ShapeMismatch {
            context: "assign_contrastive_categories",
            expected: format!("{} region labels", lc_labels.len()),
            actual: format!("{} region labels", region_labels.len()),
        });
    }
    if let Some(&bad) = lc_labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            num_classes,
        });
    }
    if let Some(&bad) = region_labels.iter().find(|&&r| r >= num_regions) {
        return Err(Error::RegionOutOfRange {
            region: bad,
            num_regions,
        });
    }
    let mut cats = Vec::with_capacity(2 * lc_labels.len());
    cats.extend_from_slice(lc_labels);
    cats.extend(region_labels.iter().map(|&r| num_classes + r));
    Ok(cats)
}

/// Inputs of the supervised contrastive loss: `2B` embeddings of width `D`
/// (rows), one category per embedding, and a positive temperature.
pub struct ContrastiveBatch<'a> {
    pub embeddings: &'a Matrix,
    pub categories: &'a [usize],
    pub temperature: f64,
}

const NORM_FLOOR: f64 = 1e-12;

/// Full output of the contrastive loss: value, per-anchor terms and the
/// gradient w.r.t. every embedding.
#[derive(Debug)]
pub struct SupConOutput {
    pub loss: f64,
    pub anchor_terms: Vec<f64>,
    pub grad: Matrix,
}

/// Supervised contrastive loss with cosine similarity.
///
/// Every embedding in turn is the anchor; its positives `P(i)` are the
/// same-category embeddings (itself excluded). Anchors without positives
/// contribute exactly zero. Exactly-zero embeddings are rejected (cosine
/// similarity is undefined for them); near-zero norms are floored.
pub fn supcon_loss(batch: &ContrastiveBatch<'_>) -> Result<SupConOutput> {
    supcon_impl(batch, true)
}

/// Variant used inside the combined training objective: embeddings whose
/// norm falls below the floor are *inert* instead of an error. An inert
/// embedding has similarity 0 with everything and receives zero gradient,
/// so a transiently dead (ReLU + dropout) sample cannot abort a run.
pub fn supcon_loss_guarded(batch: &ContrastiveBatch<'_>) -> Result<SupConOutput> {
    supcon_impl(batch, false)
}

fn supcon_impl(batch: &ContrastiveBatch<'_>, strict: bool) -> Result<SupConOutput> {
    let n = batch.embeddings.rows();
    let dim = batch.embeddings.cols();
    if batch.categories.len() != n {
        return Err(Error::ShapeMismatch {
            context: "supcon_loss",
            expected: format!("{n} categories"),
            actual: format!("{} categories", batch.categories.len()),
        });
    }
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "contrastive batch needs at least 2 embeddings, got {n}"
        )));
    }
    if !batch.temperature.is_finite() || batch.temperature <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "temperature must be positive, got {}",
            batch.temperature
        )));
    }

    // Normalize rows. Sub-floor rows are either rejected (strict) or made
    // inert: a zero unit vector keeps all their similarities at 0.
    let mut norms = vec![0.0; n];
    let mut active = vec![true; n];
    let mut unit = Matrix::zeros(n, dim);
    for i in 0..n {
        let row = batch.embeddings.row(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < NORM_FLOOR {
            if strict && norm == 0.0 {
                return Err(Error::ZeroNormEmbedding { index: i });
            }
            active[i] = false;
            norms[i] = NORM_FLOOR;
            continue;
        }
        norms[i] = norm;
        for (u, &v) in unit.row_mut(i).iter_mut().zip(row) {
            *u = v / norm;
        }
    }

    // Cosine similarity matrix.
    let mut sim = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let s = unit
                .row(i)
                .iter()
                .zip(unit.row(j))
                .map(|(a, b)| a * b)
                .sum::<f64>();
            sim.set(i, j, s);
            sim.set(j, i, s);
        }
    }

    let tau = batch.temperature;
    let mut loss = 0.0;
    let mut anchor_terms = vec![0.0; n];
    // grad_sim[i][j] = dL/d sim(i, j) accumulated from anchor i's terms.
    let mut grad_sim = Matrix::zeros(n, n);
    for (i, anchor_term) in anchor_terms.iter_mut().enumerate() {
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && batch.categories[j] == batch.categories[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        // log-sum-exp over all non-anchor similarities.
        let mut max_logit = f64::NEG_INFINITY;
        for j in 0..n {
            if j != i {
                max_logit = max_logit.max(sim.get(i, j) / tau);
            }
        }
        let mut denom = 0.0;
        for j in 0..n {
            if j != i {
                denom += (sim.get(i, j) / tau - max_logit).exp();
            }
        }
        let lse = max_logit + denom.ln();

        let p_count = positives.len() as f64;
        let mut term = 0.0;
        for &p in &positives {
            term -= sim.get(i, p) / tau - lse;
        }
        term /= p_count;
        *anchor_term = term;
        loss += term;

        // d term / d sim(i,j) = (q_ij - [j in P]/|P|) / tau,
        // q_ij = softmax over non-anchor similarities.
        for j in 0..n {
            if j == i {
                continue;
            }
            let q = (sim.get(i, j) / tau - lse).exp();
            let pos_ind = if batch.categories[j] == batch.categories[i] {
                1.0 / p_count
            } else {
                0.0
            };
            grad_sim.set(i, j, (q - pos_ind) / tau);
        }
    }

    // Chain rule: sim(i,j) = unit_i . unit_j, appearing in anchor rows i and j.
    let mut grad_unit = Matrix::zeros(n, dim);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let g = grad_sim.get(i, j) + grad_sim.get(j, i);
            if g == 0.0 {
                continue;
            }
            // Each (i, j) pair handled once from the i < j side.
            if i < j {
                let (ui, uj) = (unit.row(i).to_vec(), unit.row(j).to_vec());
                for (gi, &u) in grad_unit.row_mut(i).iter_mut().zip(&uj) {
                    *gi += g * u;
                }
                for (gj, &u) in grad_unit.row_mut(j).iter_mut().zip(&ui) {
                    *gj += g * u;
                }
            }
        }
    }

    // Through the normalization: z_hat = z / |z|. Inert rows stay at zero
    // gradient (their similarity is defined as constant 0).
    let mut grad = Matrix::zeros(n, dim);
    for i in 0..n {
        if !active[i] {
            continue;
        }
        let gu = grad_unit.row(i);
        let u = unit.row(i);
        let gz = grad.row_mut(i);
        let dot: f64 = gu.iter().zip(u).map(|(a, b)| a * b).sum();
        for ((g, &gui), &ui) in gz.iter_mut().zip(gu).zip(u) {
            *g = (gui - dot * ui) / norms[i];
        }
    }

    Ok(SupConOutput {
        loss,
        anchor_terms,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Matrix::zeros(3, 7);
        let (loss, _) = cross_entropy(&logits, &[0, 3, 6]).unwrap();
        assert!((loss - 7.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logit_gives_near_zero_loss() {
        let mut logits = Matrix::zeros(1, 4);
        logits.set(0, 2, 100.0);
        let (loss, _) = cross_entropy(&logits, &[2]).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let logits = Matrix::from_fn(3, 4, |_, _| rng.gen_range(-3.0..3.0));
        let labels = [1usize, 0, 3];
        let (loss, _) = cross_entropy(&logits, &labels).unwrap();
        // Brute force: direct softmax + negative log probability.
        let mut expected = 0.0;
        for r in 0..3 {
            let row = logits.row(r);
            let sum: f64 = row.iter().map(|v| v.exp()).sum();
            expected -= (row[labels[r]].exp() / sum).ln();
        }
        expected /= 3.0;
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits = Matrix::from_fn(4, 5, |_, _| rng.gen_range(-2.0..2.0));
        let labels = [0usize, 4, 2, 2];
        let (a, _) = cross_entropy(&logits, &labels).unwrap();
        for &c in &[1.0, -17.5, 300.0] {
            let shifted = logits.map(|v| v + c);
            let (b, _) = cross_entropy(&shifted, &labels).unwrap();
            assert!((a - b).abs() < 1e-12, "shift {c}");
        }
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let logits = Matrix::zeros(2, 3);
        assert!(matches!(
            cross_entropy(&logits, &[0, 3]),
            Err(Error::LabelOutOfRange { label: 3, .. })
        ));
    }

    #[test]
    fn category_assignment_offsets_regions() {
        let cats = assign_contrastive_categories(&[3, 3], &[2, 0], 7, 8).unwrap();
        assert_eq!(cats, vec![3, 3, 9, 7]);
        // Same class, different region: invariant categories equal,
        // specific categories differ; minimum specific category is C.
        assert_eq!(cats[0], cats[1]);
        assert_ne!(cats[2], cats[3]);
        assert_eq!(*cats[2..].iter().min().unwrap(), 7);
    }

    #[test]
    fn category_assignment_validates_ranges() {
        assert!(assign_contrastive_categories(&[7], &[0], 7, 8).is_err());
        assert!(assign_contrastive_categories(&[0], &[8], 7, 8).is_err());
    }

    fn constant_batch(n: usize, dim: usize) -> Matrix {
        Matrix::from_fn(n, dim, |_, c| 0.25 + c as f64)
    }

    #[test]
    fn identical_embeddings_single_category_closed_form() {
        // Inner fraction is 1/(2B-1) for every pair: L = 2B * ln(2B - 1).
        for b in 2..=8usize {
            let n = 2 * b;
            let emb = constant_batch(n, 5);
            let cats = vec![0usize; n];
            let out = supcon_loss(&ContrastiveBatch {
                embeddings: &emb,
                categories: &cats,
                temperature: 0.07,
            })
            .unwrap();
            let expected = (n as f64) * ((n - 1) as f64).ln();
            assert!((out.loss - expected).abs() < 1e-9, "B={b}: {}", out.loss);
        }
        // B=2 spot value: 4 ln 3.
        let emb = constant_batch(4, 3);
        let out = supcon_loss(&ContrastiveBatch {
            embeddings: &emb,
            categories: &[1, 1, 1, 1],
            temperature: 0.07,
        })
        .unwrap();
        assert!((out.loss - 4.394449154672439).abs() < 1e-9);
    }

    #[test]
    fn all_distinct_categories_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let emb = Matrix::from_fn(6, 4, |_, _| rng.gen_range(-1.0..1.0));
        let cats = vec![0, 1, 2, 3, 4, 5];
        let out = supcon_loss(&ContrastiveBatch {
            embeddings: &emb,
            categories: &cats,
            temperature: 0.1,
        })
        .unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 8;
        let emb = Matrix::from_fn(n, 5, |_, _| rng.gen_range(-1.0..1.0));
        let cats = vec![0, 1, 0, 2, 1, 0, 2, 1];
        let base = supcon_loss(&ContrastiveBatch {
            embeddings: &emb,
            categories: &cats,
            temperature: 0.07,
        })
        .unwrap();
        let perm = [5usize, 2, 7, 0, 3, 6, 1, 4];
        let pemb = Matrix::from_fn(n, 5, |r, c| emb.get(perm[r], c));
        let pcats: Vec<usize> = perm.iter().map(|&i| cats[i]).collect();
        let permuted = supcon_loss(&ContrastiveBatch {
            embeddings: &pemb,
            categories: &pcats,
            temperature: 0.07,
        })
        .unwrap();
        assert!((base.loss - permuted.loss).abs() < 1e-12);
    }

    #[test]
    fn positive_scaling_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let emb = Matrix::from_fn(6, 4, |_, _| rng.gen_range(-1.0..1.0));
        let cats = vec![0, 0, 1, 1, 2, 2];
        let base = supcon_loss(&ContrastiveBatch {
            embeddings: &emb,
            categories: &cats,
            temperature: 0.07,
        })
        .unwrap();
        for &s in &[3.7, 0.004, 250.0] {
            let scaled = emb.map(|v| v * s);
            let out = supcon_loss(&ContrastiveBatch {
                embeddings: &scaled,
                categories: &cats,
                temperature: 0.07,
            })
            .unwrap();
            assert!((base.loss - out.loss).abs() < 1e-10, "scale {s}");
        }
    }

    #[test]
    fn zero_norm_embedding_names_the_index() {
        let mut emb = Matrix::from_fn(4, 3, |_, _| 1.0);
        emb.row_mut(2).fill(0.0);
        let err = supcon_loss(&ContrastiveBatch {
            embeddings: &emb,
            categories: &[0, 0, 1, 1],
            temperature: 0.07,
        })
        .unwrap_err();
        assert!(matches!(err, Error::ZeroNormEmbedding { index: 2 }));
    }

    #[test]
    fn guarded_variant_treats_zero_rows_as_inert() {
        let mut emb = Matrix::from_fn(4, 3, |r, c| (r * 3 + c) as f64 * 0.1 + 0.2);
        emb.row_mut(2).fill(0.0);
        let cats = [0usize, 0, 1, 1];
        let out = supcon_loss_guarded(&ContrastiveBatch {
            embeddings: &emb,
            categories: &cats,
            temperature: 0.07,
        })
        .unwrap();
        assert!(out.loss.is_finite());
        // The dead row gets no gradient; its anchor term uses zero sims.
        assert!(out.grad.row(2).iter().all(|&g| g == 0.0));
        assert!(out.anchor_terms[2] > 0.0);

        // On non-degenerate input the two variants agree exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let emb = Matrix::from_fn(6, 4, |_, _| rng.gen_range(-1.0..1.0));
        let cats = [0usize, 1, 0, 2, 1, 0];
        let strict = supcon_loss(&ContrastiveBatch {
            embeddings: &emb,
            categories: &cats,
            temperature: 0.1,
        })
        .unwrap();
        let guarded = supcon_loss_guarded(&ContrastiveBatch {
            embeddings: &emb,
            categories: &cats,
            temperature: 0.1,
        })
        .unwrap();
        assert_eq!(strict.loss, guarded.loss);
        assert_eq!(strict.grad, guarded.grad);
    }

    #[test]
    fn anchor_terms_fall_as_anchor_approaches_its_positive() {
        // z0 rotates toward its positive z1 in the plane orthogonal to z2,
        // so sim(z0, z2) stays 0 while sim(z0, z1) rises.
        let mut prev_term = f64::INFINITY;
        for &t in &[1.2f64, 0.9, 0.6, 0.3, 0.1] {
            let emb = Matrix::from_rows(&[
                vec![t.cos(), 0.0, t.sin()],
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
            ])
            .unwrap();
            let out = supcon_loss(&ContrastiveBatch {
                embeddings: &emb,
                categories: &[0, 0, 1],
                temperature: 0.2,
            })
            .unwrap();
            assert!(
                out.anchor_terms[0] < prev_term,
                "term did not fall at t={t}"
            );
            prev_term = out.anchor_terms[0];
        }
    }

    /// Central finite differences of the loss w.r.t. every embedding entry.
    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..10 {
            let n = 2 * rng.gen_range(2..=6); // 2B <= 12
            let dim = rng.gen_range(2..=8);
            let mut emb = Matrix::from_fn(n, dim, |_, _| rng.gen_range(-1.0..1.0));
            let cats: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let tau = 0.2;
            let out = supcon_loss(&ContrastiveBatch {
                embeddings: &emb,
                categories: &cats,
                temperature: tau,
            })
            .unwrap();
            let h = 1e-6;
            for r in 0..n {
                for c in 0..dim {
                    let orig = emb.get(r, c);
                    emb.set(r, c, orig + h);
                    let plus = supcon_loss(&ContrastiveBatch {
                        embeddings: &emb,
                        categories: &cats,
                        temperature: tau,
                    })
                    .unwrap()
                    .loss;
                    emb.set(r, c, orig - h);
                    let minus = supcon_loss(&ContrastiveBatch {
                        embeddings: &emb,
                        categories: &cats,
                        temperature: tau,
                    })
                    .unwrap()
                    .loss;
                    emb.set(r, c, orig);
                    let numeric = (plus - minus) / (2.0 * h);
                    let analytic = out.grad.get(r, c);
                    let scale = analytic.abs().max(numeric.abs()).max(1e-4);
                    assert!(
                        (analytic - numeric).abs() / scale < 1e-4,
                        "trial {trial} ({r},{c}): analytic {analytic} numeric {numeric}"
                    );
                }
            }
        }
    }
}
