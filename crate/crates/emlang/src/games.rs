//! Game objectives: the contrastive and conventional referential losses and
//! the reconstruction loss, plus episode assembly and the evaluation metrics.
//!
//! The two referential variants optimise the same per-item quantity
//! `−ln softmax(h_m·f(x_j))[target]` but differ in where candidates come
//! from: the contrastive variant reuses the batch itself as the candidate
//! set (so a step encodes |B| candidates), while the conventional variant
//! samples a fresh candidate set per batch element (|B|·|D| encodings — the
//! quadratic-memory regime the contrastive variant avoids).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::nn::{argmax, log_softmax_at, BoundEncoder, Matrix, Tape, Var};

/// Sigmoid outputs are clamped to `[ε, 1−ε]` before the log.
pub const PROB_CLAMP_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub enum GameError {
    EmptyCandidates,
    EmptyBatch,
    TargetOutOfRange { target: usize, candidates: usize },
    DuplicateTargets,
    InvalidSpec(String),
    DimensionMismatch(String),
}

impl fmt::Display for GameError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GameError::EmptyCandidates => write!(f, "candidate list is empty"),
            GameError::EmptyBatch => write!(f, "batch is empty"),
            GameError::TargetOutOfRange { target, candidates } => {
                write!(f, "target index {target} outside candidate set of {candidates}")
            }
            GameError::DuplicateTargets => write!(f, "contrastive batch has duplicate targets"),
            GameError::InvalidSpec(msg) => write!(f, "invalid game spec: {msg}"),
            GameError::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
        }
    }
}

impl core::error::Error for GameError {}

/// Referential loss implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LossVariant {
    Contrastive,
    Conventional,
}

/// What the listener must do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum GameKind {
    Reconstruction,
    Referential { candidates: usize, loss: LossVariant },
}

/// Metric reported for a game: accuracy for referential targets, `1 − BCE`
/// for reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum MetricKind {
    Accuracy,
    ReconstructionScore,
}

impl MetricKind {
    pub fn label(&self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::ReconstructionScore => "recon_score",
        }
    }
}

/// A fully specified game instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GameSpec {
    pub kind: GameKind,
    pub batch_size: usize,
}

impl GameSpec {
    pub fn reconstruction(batch_size: usize) -> Self {
        GameSpec {
            kind: GameKind::Reconstruction,
            batch_size,
        }
    }

    /// Contrastive referential game; the batch doubles as the candidate set.
    pub fn referential(candidates: usize) -> Self {
        GameSpec {
            kind: GameKind::Referential {
                candidates,
                loss: LossVariant::Contrastive,
            },
            batch_size: candidates,
        }
    }

    pub fn referential_conventional(candidates: usize, batch_size: usize) -> Self {
        GameSpec {
            kind: GameKind::Referential {
                candidates,
                loss: LossVariant::Conventional,
            },
            batch_size,
        }
    }

    pub fn validate(&self, space_size: usize) -> Result<(), GameError> {
        if self.batch_size < 1 {
            return Err(GameError::InvalidSpec(String::from("batch size must be ≥ 1")));
        }
        if let GameKind::Referential { candidates, loss } = self.kind {
            if candidates < 2 {
                return Err(GameError::InvalidSpec(String::from(
                    "a referential game needs ≥ 2 candidates",
                )));
            }
            if candidates > space_size {
                return Err(GameError::InvalidSpec(format!(
                    "candidate set of {candidates} exceeds input space of {space_size}"
                )));
            }
            if loss == LossVariant::Contrastive && candidates != self.batch_size {
                return Err(GameError::InvalidSpec(format!(
                    "contrastive variant requires |D| = |B|, got |D| = {candidates}, |B| = {}",
                    self.batch_size
                )));
            }
        }
        Ok(())
    }

    /// Canonical id: `recon`, `referN`, or `referN-conv`.
    pub fn name(&self) -> String {
        match self.kind {
            GameKind::Reconstruction => String::from("recon"),
            GameKind::Referential { candidates, loss } => match loss {
                LossVariant::Contrastive => format!("refer{candidates}"),
                LossVariant::Conventional => format!("refer{candidates}-conv"),
            },
        }
    }

    pub fn metric(&self) -> MetricKind {
        match self.kind {
            GameKind::Reconstruction => MetricKind::ReconstructionScore,
            GameKind::Referential { .. } => MetricKind::Accuracy,
        }
    }
}

/// One step's worth of sampled episode structure. Targets come from the
/// epoch's shuffled order; the conventional variant additionally carries a
/// fresh uniformly-sampled (without replacement, target excluded) distractor
/// index list per element.
#[derive(Debug, Clone)]
pub struct EpisodeBatch {
    pub target_indices: Vec<usize>,
    pub distractors: Option<Vec<Vec<usize>>>,
}

pub fn sample_episode_batch(
    spec: &GameSpec,
    target_indices: &[usize],
    space_size: usize,
    rng: &mut impl Rng,
) -> Result<EpisodeBatch, GameError> {
    if target_indices.is_empty() {
        return Err(GameError::EmptyBatch);
    }
    let distractors = match spec.kind {
        GameKind::Reconstruction => None,
        GameKind::Referential { candidates, loss } => match loss {
            LossVariant::Contrastive => {
                let mut seen = alloc::collections::BTreeSet::new();
                for &t in target_indices {
                    if !seen.insert(t) {
                        return Err(GameError::DuplicateTargets);
                    }
                }
                None
            }
            LossVariant::Conventional => Some(
                target_indices
                    .iter()
                    .map(|&t| crate::rng::sample_distinct_excluding(space_size, t, candidates - 1, rng))
                    .collect(),
            ),
        },
    };
    Ok(EpisodeBatch {
        target_indices: target_indices.to_vec(),
        distractors,
    })
}

/// Energies of one message embedding against a candidate set: the row vector
/// `h_m · f(x_j)ᵀ` over candidates `x_j`. The listener's choice distribution
/// is the softmax of this vector.
pub fn candidate_scores(
    tape: &mut Tape,
    h_m: Var,
    candidates: &Matrix,
    encoder: &BoundEncoder<'_>,
) -> Result<Var, GameError> {
    if candidates.rows() == 0 {
        return Err(GameError::EmptyCandidates);
    }
    if tape.value(h_m).rows() != 1 {
        return Err(GameError::DimensionMismatch(String::from(
            "candidate_scores expects a single message embedding row",
        )));
    }
    let cand = tape.leaf(candidates.clone());
    let f = encoder.forward(tape, cand);
    Ok(tape.matmul_nt(h_m, f))
}

/// A referential objective with the pieces the trainer needs: the scalar
/// loss, the raw score matrix, and the target index per row.
pub struct ReferentialEpisode {
    pub loss: Var,
    pub scores: Var,
    pub targets: Vec<usize>,
}

/// In-batch contrastive objective: scores are all pairwise
/// `h_{m_i} · f(x_j)`, the target of row `i` is column `i`. Peak memory is
/// the |B|×|B| score matrix plus the |B| candidate encodings.
pub fn contrastive_episode(
    tape: &mut Tape,
    message_embeddings: Var,
    candidate_embeddings: Var,
) -> Result<ReferentialEpisode, GameError> {
    let m = tape.value(message_embeddings).shape();
    let c = tape.value(candidate_embeddings).shape();
    if m.0 == 0 {
        return Err(GameError::EmptyBatch);
    }
    if m != c {
        return Err(GameError::DimensionMismatch(format!(
            "message embeddings {m:?} vs candidate embeddings {c:?}"
        )));
    }
    let scores = tape.matmul_nt(message_embeddings, candidate_embeddings);
    let targets: Vec<usize> = (0..m.0).collect();
    let loss = tape.softmax_cross_entropy(scores, &targets);
    Ok(ReferentialEpisode {
        loss,
        scores,
        targets,
    })
}

/// Mean contrastive loss over the batch.
pub fn contrastive_loss(
    tape: &mut Tape,
    message_embeddings: Var,
    candidate_embeddings: Var,
) -> Result<Var, GameError> {
    contrastive_episode(tape, message_embeddings, candidate_embeddings).map(|e| e.loss)
}

/// Conventional referential loss for one message: each call encodes its full
/// candidate set afresh.
pub fn conventional_referential_loss(
    tape: &mut Tape,
    h_m: Var,
    target_index: usize,
    candidates: &Matrix,
    encoder: &BoundEncoder<'_>,
) -> Result<Var, GameError> {
    if target_index >= candidates.rows() {
        return Err(GameError::TargetOutOfRange {
            target: target_index,
            candidates: candidates.rows(),
        });
    }
    let scores = candidate_scores(tape, h_m, candidates, encoder)?;
    Ok(tape.softmax_cross_entropy(scores, &[target_index]))
}

/// Batched conventional objective: `candidate_flats` stacks each element's
/// candidate set contiguously (|B|·|D| rows), so a step encodes |B|·|D|
/// meanings.
pub fn conventional_batch_episode(
    tape: &mut Tape,
    message_embeddings: Var,
    targets: &[usize],
    candidate_flats: &Matrix,
    candidates_per_element: usize,
    encoder: &BoundEncoder<'_>,
) -> Result<ReferentialEpisode, GameError> {
    let batch = tape.value(message_embeddings).rows();
    if batch == 0 {
        return Err(GameError::EmptyBatch);
    }
    if targets.len() != batch {
        return Err(GameError::DimensionMismatch(String::from(
            "one target per batch row",
        )));
    }
    if candidate_flats.rows() != batch * candidates_per_element {
        return Err(GameError::DimensionMismatch(format!(
            "{} candidate rows for batch {batch} × |D| {candidates_per_element}",
            candidate_flats.rows()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= candidates_per_element) {
        return Err(GameError::TargetOutOfRange {
            target: t,
            candidates: candidates_per_element,
        });
    }
    let cand = tape.leaf(candidate_flats.clone());
    let f = encoder.forward(tape, cand);
    let scores = tape.group_dot(f, message_embeddings, candidates_per_element);
    let loss = tape.softmax_cross_entropy(scores, targets);
    Ok(ReferentialEpisode {
        loss,
        scores,
        targets: targets.to_vec(),
    })
}

/// Mean binary cross-entropy of the generator logits against the flattened
/// meaning, sigmoid applied internally, probabilities clamped to
/// `[ε, 1−ε]` with ε = 1e-7.
pub fn reconstruction_loss(
    tape: &mut Tape,
    targets: &Matrix,
    logits: Var,
) -> Result<Var, GameError> {
    if tape.value(logits).shape() != targets.shape() {
        return Err(GameError::DimensionMismatch(format!(
            "logits {:?} vs targets {:?}",
            tape.value(logits).shape(),
            targets.shape()
        )));
    }
    Ok(tape.bce_with_logits(logits, targets, PROB_CLAMP_EPS))
}

/// Plain-math mean BCE of `sigmoid(logits)` against a binary target vector,
/// with the same clamping as [`reconstruction_loss`].
pub fn bce_from_logits(targets: &[f64], logits: &[f64]) -> f64 {
    assert_eq!(targets.len(), logits.len());
    let mut total = 0.0;
    for (&t, &z) in targets.iter().zip(logits) {
        let p = crate::nn::sigmoid(z).clamp(PROB_CLAMP_EPS, 1.0 - PROB_CLAMP_EPS);
        total -= t * crate::fmath::ln(p) + (1.0 - t) * crate::fmath::ln(1.0 - p);
    }
    total / targets.len() as f64
}

/// `1 − BCE`; higher is better.
pub fn reconstruction_score(targets: &[f64], logits: &[f64]) -> f64 {
    1.0 - bce_from_logits(targets, logits)
}

/// Fraction of rows whose argmax score hits the target; ties break to the
/// lowest index.
pub fn referential_accuracy(scores: &Matrix, targets: &[usize]) -> f64 {
    assert!(!targets.is_empty(), "accuracy of an empty batch");
    assert_eq!(scores.rows(), targets.len());
    let mut correct = 0usize;
    for (r, &t) in targets.iter().enumerate() {
        if argmax(scores.row(r)) == t {
            correct += 1;
        }
    }
    correct as f64 / targets.len() as f64
}

/// Per-row `−ln softmax(row)[target]`; the independent route used to
/// cross-check the fused loss ops.
pub fn softmax_nll_rows(scores: &Matrix, targets: &[usize]) -> Vec<f64> {
    assert_eq!(scores.rows(), targets.len());
    targets
        .iter()
        .enumerate()
        .map(|(r, &t)| -log_softmax_at(scores.row(r), t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmath;
    use crate::nn::Encoder;
    use crate::rng::subrng;
    use alloc::vec;

    fn test_encoder(input: usize, hidden: usize, seed: u64) -> Encoder {
        let mut rng = subrng(seed, "games-test-encoder", 0);
        Encoder::init(input, hidden, &mut rng)
    }

    /// tanh(x·w) with one-hot candidate rows selects atanh'd weights, letting
    /// tests pin exact candidate energies.
    fn encoder_with_energies(h_m_value: f64, energies: &[f64]) -> (Encoder, Matrix, Matrix) {
        let d = energies.len();
        let mut enc = test_encoder(d, 1, 0);
        for (j, &e) in energies.iter().enumerate() {
            let y = e / h_m_value;
            assert!(y.abs() < 1.0, "energy not reachable through tanh");
            // atanh
            let w = 0.5 * fmath::ln((1.0 + y) / (1.0 - y));
            enc.linear.w.set(j, 0, w);
        }
        for v in enc.linear.b.data_mut() {
            *v = 0.0;
        }
        let mut candidates = Matrix::zeros(d, d);
        for j in 0..d {
            candidates.set(j, j, 1.0);
        }
        let h_m = Matrix::from_vec(1, 1, vec![h_m_value]);
        (enc, candidates, h_m)
    }

    #[test]
    fn identical_candidates_give_uniform_choice() {
        let enc = test_encoder(4, 8, 1);
        let mut tape = Tape::new();
        let bound = enc.bind(&mut tape);
        let h = tape.leaf(Matrix::from_vec(1, 8, vec![0.3; 8]));
        let mut cands = Matrix::zeros(5, 4);
        for r in 0..5 {
            cands.row_mut(r).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        }
        let scores = candidate_scores(&mut tape, h, &cands, &bound).unwrap();
        let mut probs = tape.value(scores).row(0).to_vec();
        crate::nn::softmax_in_place(&mut probs);
        for &p in &probs {
            assert!((p - 0.2).abs() < 1e-12, "p = {p}");
        }
    }

    #[test]
    fn argmax_score_is_argmax_choice_probability() {
        let enc = test_encoder(6, 8, 2);
        let mut tape = Tape::new();
        let bound = enc.bind(&mut tape);
        let h = tape.leaf(Matrix::from_vec(1, 8, vec![0.5, -0.2, 0.8, 0.1, -0.6, 0.3, 0.9, -0.4]));
        let mut rng = subrng(2, "cands", 0);
        let mut cands = Matrix::zeros(7, 6);
        for r in 0..7 {
            let hot = rng.random_range(0..6);
            cands.set(r, hot, 1.0);
        }
        let scores = candidate_scores(&mut tape, h, &cands, &bound).unwrap();
        let raw = tape.value(scores).row(0).to_vec();
        let mut probs = raw.clone();
        crate::nn::softmax_in_place(&mut probs);
        assert_eq!(argmax(&raw), argmax(&probs));
    }

    #[test]
    fn two_candidate_scores_softmax_to_known_probabilities() {
        // independent oracle: softmax(1, 0) = (1/(1+e⁻¹), e⁻¹/(1+e⁻¹))
        let (enc, cands, h) = encoder_with_energies(2.0, &[1.0, 0.0]);
        let mut tape = Tape::new();
        let bound = enc.bind(&mut tape);
        let hv = tape.leaf(h);
        let scores = candidate_scores(&mut tape, hv, &cands, &bound).unwrap();
        let mut probs = tape.value(scores).row(0).to_vec();
        crate::nn::softmax_in_place(&mut probs);
        let oracle0 = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((probs[0] - oracle0).abs() < 1e-9, "got {probs:?}");
        assert!((probs[0] - 0.7311).abs() < 1e-4);
        assert!((probs[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn empty_candidates_error() {
        let enc = test_encoder(4, 8, 3);
        let mut tape = Tape::new();
        let bound = enc.bind(&mut tape);
        let h = tape.leaf(Matrix::zeros(1, 8));
        let empty = Matrix::zeros(0, 4);
        assert_eq!(
            candidate_scores(&mut tape, h, &empty, &bound).err(),
            Some(GameError::EmptyCandidates)
        );
    }

    #[test]
    fn contrastive_single_element_batch_is_zero() {
        let mut tape = Tape::new();
        let m = tape.leaf(Matrix::from_vec(1, 3, vec![0.4, -0.2, 0.9]));
        let c = tape.leaf(Matrix::from_vec(1, 3, vec![0.1, 0.3, -0.5]));
        let loss = contrastive_loss(&mut tape, m, c).unwrap();
        assert_eq!(tape.value(loss).at(0, 0), 0.0);
    }

    #[test]
    fn contrastive_equal_dots_is_ln_batch() {
        // all-zero embeddings make every pairwise dot equal
        let mut tape = Tape::new();
        let m = tape.leaf(Matrix::zeros(4, 5));
        let c = tape.leaf(Matrix::zeros(4, 5));
        let loss = contrastive_loss(&mut tape, m, c).unwrap();
        assert!((tape.value(loss).at(0, 0) - (4.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn contrastive_two_by_two_known_value() {
        // score matrix [[2,0],[0,2]] → loss = ln(1+e⁻²)
        let mut tape = Tape::new();
        let m = tape.leaf(Matrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 2.0]));
        let c = tape.leaf(Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let loss = contrastive_loss(&mut tape, m, c).unwrap();
        let oracle = (1.0 + (-2.0f64).exp()).ln();
        assert!((tape.value(loss).at(0, 0) - oracle).abs() < 1e-12);
        assert!((oracle - 0.1269).abs() < 1e-4);
    }

    #[test]
    fn contrastive_rejects_empty_and_mismatched() {
        let mut tape = Tape::new();
        let e = tape.leaf(Matrix::zeros(0, 3));
        let e2 = tape.leaf(Matrix::zeros(0, 3));
        assert_eq!(contrastive_loss(&mut tape, e, e2).err(), Some(GameError::EmptyBatch));
        let a = tape.leaf(Matrix::zeros(2, 3));
        let b = tape.leaf(Matrix::zeros(3, 3));
        assert!(matches!(
            contrastive_loss(&mut tape, a, b),
            Err(GameError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn contrastive_is_permutation_invariant() {
        let mut rng = subrng(4, "perm", 0);
        let mut m = Matrix::zeros(5, 4);
        let mut c = Matrix::zeros(5, 4);
        for v in m.data_mut() {
            *v = rng.random::<f64>() - 0.5;
        }
        for v in c.data_mut() {
            *v = rng.random::<f64>() - 0.5;
        }
        let run = |mm: &Matrix, cm: &Matrix| {
            let mut tape = Tape::new();
            let mv = tape.leaf(mm.clone());
            let cv = tape.leaf(cm.clone());
            let loss = contrastive_loss(&mut tape, mv, cv).unwrap();
            tape.value(loss).at(0, 0)
        };
        let base = run(&m, &c);
        let perm = [3usize, 0, 4, 1, 2];
        let mut mp = Matrix::zeros(5, 4);
        let mut cp = Matrix::zeros(5, 4);
        for (to, &from) in perm.iter().enumerate() {
            mp.row_mut(to).copy_from_slice(m.row(from));
            cp.row_mut(to).copy_from_slice(c.row(from));
        }
        assert!((base - run(&mp, &cp)).abs() < 1e-12);
    }

    #[test]
    fn conventional_two_equal_energies_is_ln_two() {
        let (enc, cands, h) = encoder_with_energies(2.0, &[0.5, 0.5]);
        let mut tape = Tape::new();
        let bound = enc.bind(&mut tape);
        let hv = tape.leaf(h);
        let loss = conventional_referential_loss(&mut tape, hv, 0, &cands, &bound).unwrap();
        assert!((tape.value(loss).at(0, 0) - (2.0f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn conventional_dominant_target_loss_vanishes() {
        let (enc, cands, h) = encoder_with_energies(100.0, &[90.0, -90.0, -90.0]);
        let mut tape = Tape::new();
        let bound = enc.bind(&mut tape);
        let hv = tape.leaf(h);
        let loss = conventional_referential_loss(&mut tape, hv, 0, &cands, &bound).unwrap();
        assert!(tape.value(loss).at(0, 0) < 1e-9);
    }

    #[test]
    fn conventional_known_energies_match_direct_softmax() {
        let (enc, cands, h) = encoder_with_energies(2.0, &[1.0, 0.0, -1.0]);
        let mut tape = Tape::new();
        let bound = enc.bind(&mut tape);
        let hv = tape.leaf(h);
        let loss = conventional_referential_loss(&mut tape, hv, 0, &cands, &bound).unwrap();
        // independent softmax evaluation
        let e: Vec<f64> = [1.0f64, 0.0, -1.0].iter().map(|&x| x.exp()).collect();
        let oracle = -(e[0] / (e[0] + e[1] + e[2])).ln();
        assert!((tape.value(loss).at(0, 0) - oracle).abs() < 1e-9);
        assert!((oracle - 0.4076).abs() < 1e-4);
    }

    #[test]
    fn conventional_rejects_target_out_of_range() {
        let (enc, cands, h) = encoder_with_energies(2.0, &[0.5, 0.5]);
        let mut tape = Tape::new();
        let bound = enc.bind(&mut tape);
        let hv = tape.leaf(h);
        assert_eq!(
            conventional_referential_loss(&mut tape, hv, 2, &cands, &bound).err(),
            Some(GameError::TargetOutOfRange { target: 2, candidates: 2 })
        );
    }

    #[test]
    fn equivalence_contrastive_vs_conventional_per_item_is_exact() {
        // With identical candidate sets and embeddings the per-item losses
        // must agree exactly, not approximately.
        let mut rng = subrng(5, "equiv", 0);
        for _ in 0..50 {
            let b = 2 + rng.random_range(0..5);
            let hdim = 1 + rng.random_range(0..6);
            let flat = 4 + rng.random_range(0..4);
            let enc = test_encoder(flat, hdim, rng.random());
            let mut meanings = Matrix::zeros(b, flat);
            for r in 0..b {
                let hot = rng.random_range(0..flat);
                meanings.set(r, hot, 1.0);
            }
            let mut msg_emb = Matrix::zeros(b, hdim);
            for v in msg_emb.data_mut() {
                *v = rng.random::<f64>() * 2.0 - 1.0;
            }

            // contrastive route
            let mut tape = Tape::new();
            let bound = enc.bind(&mut tape);
            let m = tape.leaf(msg_emb.clone());
            let cand = tape.leaf(meanings.clone());
            let f = bound.forward(&mut tape, cand);
            let episode = contrastive_episode(&mut tape, m, f).unwrap();
            let per_item = softmax_nll_rows(tape.value(episode.scores), &episode.targets);

            // conventional route, one call per item, batch as candidate set
            for (i, &item_loss) in per_item.iter().enumerate() {
                let mut t2 = Tape::new();
                let b2 = enc.bind(&mut t2);
                let h = t2.leaf(Matrix::row_vector(msg_emb.row(i)));
                let loss = conventional_referential_loss(&mut t2, h, i, &meanings, &b2).unwrap();
                assert_eq!(
                    t2.value(loss).at(0, 0),
                    item_loss,
                    "per-item losses must be bit-identical"
                );
            }
        }
    }

    #[test]
    fn candidate_encoder_row_counts_expose_memory_regimes() {
        // contrastive: |B| rows per step; conventional: |B|·|D| rows
        let (b, d, flat, hdim) = (6usize, 4usize, 5usize, 3usize);
        let enc = test_encoder(flat, hdim, 6);
        let mut rng = subrng(6, "mem", 0);

        enc.reset_row_count();
        {
            let mut tape = Tape::new();
            let bound = enc.bind(&mut tape);
            let meanings = Matrix::zeros(b, flat);
            let msg = tape.leaf(Matrix::zeros(b, hdim));
            let cand = tape.leaf(meanings);
            let f = bound.forward(&mut tape, cand);
            let _ = contrastive_episode(&mut tape, msg, f).unwrap();
        }
        assert_eq!(enc.rows_encoded(), b as u64);

        enc.reset_row_count();
        {
            let mut tape = Tape::new();
            let bound = enc.bind(&mut tape);
            let msg = tape.leaf(Matrix::zeros(b, hdim));
            let mut cand_flats = Matrix::zeros(b * d, flat);
            for r in 0..b * d {
                let hot = rng.random_range(0..flat);
                cand_flats.set(r, hot, 1.0);
            }
            let targets: Vec<usize> = (0..b).map(|i| i % d).collect();
            let _ = conventional_batch_episode(&mut tape, msg, &targets, &cand_flats, d, &bound).unwrap();
        }
        assert_eq!(enc.rows_encoded(), (b * d) as u64);
    }

    #[test]
    fn reconstruction_perfect_prediction_sits_at_clamp_floor() {
        // logits pushed to saturation: post-clamp probabilities are 1−ε,
        // so the loss floor is −ln(1−ε) ≈ ε
        let targets = Matrix::from_vec(1, 4, vec![1.0, 0.0, 0.0, 1.0]);
        let logits = Matrix::from_vec(1, 4, vec![40.0, -40.0, -40.0, 40.0]);
        let mut tape = Tape::new();
        let z = tape.leaf(logits);
        let loss = reconstruction_loss(&mut tape, &targets, z).unwrap();
        let v = tape.value(loss).at(0, 0);
        assert!(v > 0.0 && v < 2e-6, "loss at clamp floor, got {v}");
        assert!((v - 1e-7).abs() < 1e-9);
    }

    #[test]
    fn reconstruction_uniform_prediction_is_ln_two() {
        let targets = Matrix::from_vec(2, 3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let logits = Matrix::zeros(2, 3);
        let mut tape = Tape::new();
        let z = tape.leaf(logits);
        let loss = reconstruction_loss(&mut tape, &targets, z).unwrap();
        assert!((tape.value(loss).at(0, 0) - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_known_miniature_case() {
        // x = [1,0,0,1], x̂ = [0.9, 0.1, 0.2, 0.8]: per-term hand evaluation
        let p: [f64; 4] = [0.9, 0.1, 0.2, 0.8];
        let x = [1.0, 0.0, 0.0, 1.0];
        let logits: Vec<f64> = p.iter().map(|&p| (p / (1.0 - p)).ln()).collect();
        let oracle = -(x[0] * p[0].ln()
            + (1.0 - x[1]) * (1.0 - p[1]).ln()
            + (1.0 - x[2]) * (1.0 - p[2]).ln()
            + x[3] * p[3].ln())
            / 4.0;
        assert!((oracle - 0.1643).abs() < 1e-4);

        let targets = Matrix::row_vector(&x);
        let mut tape = Tape::new();
        let z = tape.leaf(Matrix::row_vector(&logits));
        let loss = reconstruction_loss(&mut tape, &targets, z).unwrap();
        assert!((tape.value(loss).at(0, 0) - oracle).abs() < 1e-9);
        // plain-math route agrees
        assert!((bce_from_logits(&x, &logits) - oracle).abs() < 1e-9);
    }

    #[test]
    fn reconstruction_score_values() {
        let x = [1.0, 0.0];
        assert!((reconstruction_score(&x, &[40.0, -40.0]) - 1.0).abs() < 1e-5);
        let half = reconstruction_score(&x, &[0.0, 0.0]);
        assert!((half - (1.0 - (2.0f64).ln())).abs() < 1e-12);
        assert!((half - 0.3069).abs() < 1e-4);
    }

    #[test]
    fn accuracy_all_correct_and_ties() {
        let scores = Matrix::from_vec(2, 3, vec![0.9, 0.1, 0.0, 0.2, 0.2, 0.9]);
        assert_eq!(referential_accuracy(&scores, &[0, 2]), 1.0);
        // tie in row 0 breaks to index 0
        let tied = Matrix::from_vec(1, 2, vec![0.5, 0.5]);
        assert_eq!(referential_accuracy(&tied, &[0]), 1.0);
        assert_eq!(referential_accuracy(&tied, &[1]), 0.0);
    }

    #[test]
    fn accuracy_of_random_chooser_near_half() {
        let mut rng = subrng(7, "acc", 0);
        let trials = 1000;
        let mut scores = Matrix::zeros(trials, 2);
        for v in scores.data_mut() {
            *v = rng.random::<f64>();
        }
        let targets = vec![0usize; trials];
        let acc = referential_accuracy(&scores, &targets);
        assert!((acc - 0.5).abs() < 0.05, "acc = {acc}");
    }

    #[test]
    fn losses_are_bounded() {
        let mut rng = subrng(8, "bounds", 0);
        for _ in 0..20 {
            let b = 2 + rng.random_range(0..4);
            let hdim = 3;
            let mut m = Matrix::zeros(b, hdim);
            let mut c = Matrix::zeros(b, hdim);
            for v in m.data_mut() {
                *v = rng.random::<f64>() * 4.0 - 2.0;
            }
            for v in c.data_mut() {
                *v = rng.random::<f64>() * 4.0 - 2.0;
            }
            let mut tape = Tape::new();
            let mv = tape.leaf(m);
            let cv = tape.leaf(c);
            let loss = contrastive_loss(&mut tape, mv, cv).unwrap();
            assert!(tape.value(loss).at(0, 0) >= 0.0);

            // reconstruction loss ∈ [0, −ln ε]
            let targets = Matrix::from_vec(1, 4, vec![1.0, 0.0, 1.0, 0.0]);
            let mut logits = Matrix::zeros(1, 4);
            for v in logits.data_mut() {
                *v = rng.random::<f64>() * 100.0 - 50.0;
            }
            let z = tape.leaf(logits);
            let r = reconstruction_loss(&mut tape, &targets, z).unwrap();
            let rv = tape.value(r).at(0, 0);
            assert!(rv >= 0.0 && rv <= -PROB_CLAMP_EPS.ln());
        }
    }

    #[test]
    fn game_spec_validation_and_names() {
        let space = 1000;
        assert!(GameSpec::reconstruction(128).validate(space).is_ok());
        assert!(GameSpec::referential(100).validate(space).is_ok());
        assert!(GameSpec::referential_conventional(100, 32).validate(space).is_ok());
        // contrastive must have |D| = |B|
        let mut bad = GameSpec::referential(100);
        bad.batch_size = 64;
        assert!(bad.validate(space).is_err());
        assert!(GameSpec::referential(1).validate(space).is_err());
        assert!(GameSpec::referential(1001).validate(space).is_err());

        assert_eq!(GameSpec::reconstruction(128).name(), "recon");
        assert_eq!(GameSpec::referential(100).name(), "refer100");
        assert_eq!(GameSpec::referential_conventional(100, 32).name(), "refer100-conv");
        assert_eq!(GameSpec::reconstruction(1).metric(), MetricKind::ReconstructionScore);
        assert_eq!(GameSpec::referential(2).metric(), MetricKind::Accuracy);
    }

    #[test]
    fn episode_sampling_respects_invariants() {
        let mut rng = subrng(9, "episodes", 0);
        let spec = GameSpec::referential_conventional(10, 4);
        let batch = sample_episode_batch(&spec, &[3, 7, 3, 9], 50, &mut rng).unwrap();
        let d = batch.distractors.as_ref().unwrap();
        assert_eq!(d.len(), 4);
        for (i, &t) in batch.target_indices.iter().enumerate() {
            assert_eq!(d[i].len(), 9);
            assert!(!d[i].contains(&t));
            let mut s = d[i].clone();
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), 9);
        }

        // contrastive: duplicate targets are rejected
        let cspec = GameSpec::referential(4);
        assert_eq!(
            sample_episode_batch(&cspec, &[1, 2, 2, 3], 50, &mut rng).err(),
            Some(GameError::DuplicateTargets)
        );
        let ok = sample_episode_batch(&cspec, &[1, 2, 4, 3], 50, &mut rng).unwrap();
        assert!(ok.distractors.is_none());

        assert_eq!(
            sample_episode_batch(&cspec, &[], 50, &mut rng).err(),
            Some(GameError::EmptyBatch)
        );
    }
}
