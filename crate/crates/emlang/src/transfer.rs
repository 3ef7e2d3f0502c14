//! Language transfer: split a recorded language, train a fresh listener on
//! the train split only (the speaker is frozen out entirely), and measure
//! generalisation on the held-out split. Accumulates the full
//! (source × target × seed) performance matrix.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::agents::{
    listener_encode_message, AgentError, BoundHead, ChannelSpec, HeadKind, ListenerParams,
    Message, MessageInput,
};
use crate::games::{
    bce_from_logits, contrastive_episode, referential_accuracy, reconstruction_loss, GameError,
    GameKind, GameSpec, MetricKind,
};
use crate::nn::{argmax, Adam, AdamConfig, HasParams, Matrix, Tape};
use crate::rng::{sample_distinct_excluding, shuffle, subrng};
use crate::space::InputSpace;
use crate::trainer::{
    train_game, ConvergenceSpec, EmergentLanguage, TrainError, TrainRunConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub enum TransferError {
    /// Splitting needs at least 10 pairs.
    LanguageTooSmall(usize),
    /// Split messages do not fit the target channel.
    Agent(AgentError),
    Game(GameError),
    Train(TrainError),
    /// Training a transfer listener diverged.
    Diverged { epoch: usize },
}

impl fmt::Display for TransferError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransferError::LanguageTooSmall(n) => {
                write!(f, "language of {n} pairs is too small to split (need ≥ 10)")
            }
            TransferError::Agent(e) => write!(f, "{e}"),
            TransferError::Game(e) => write!(f, "{e}"),
            TransferError::Train(e) => write!(f, "{e}"),
            TransferError::Diverged { epoch } => {
                write!(f, "transfer listener diverged at epoch {epoch}")
            }
        }
    }
}

impl core::error::Error for TransferError {}

impl From<AgentError> for TransferError {
    fn from(e: AgentError) -> Self {
        TransferError::Agent(e)
    }
}

impl From<GameError> for TransferError {
    fn from(e: GameError) -> Self {
        TransferError::Game(e)
    }
}

impl From<TrainError> for TransferError {
    fn from(e: TrainError) -> Self {
        TransferError::Train(e)
    }
}

/// A seeded 90/10 split of a recorded language.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageSplit {
    pub train: Vec<(usize, Message)>,
    pub test: Vec<(usize, Message)>,
    pub seed: u64,
}

/// Seeded uniform shuffle, then a prefix of ⌊0.9·|ℒ|⌋ pairs for training and
/// the rest for evaluation.
pub fn split_language(lang: &EmergentLanguage, seed: u64) -> Result<LanguageSplit, TransferError> {
    if lang.len() < 10 {
        return Err(TransferError::LanguageTooSmall(lang.len()));
    }
    let mut order: Vec<usize> = (0..lang.len()).collect();
    shuffle(&mut order, &mut subrng(seed, "language-split", 0));
    let train_len = lang.len() * 9 / 10;
    let take = |indices: &[usize]| {
        indices
            .iter()
            .map(|&i| (i, lang.message(i).clone()))
            .collect::<Vec<_>>()
    };
    Ok(LanguageSplit {
        train: take(&order[..train_len]),
        test: take(&order[train_len..]),
        seed,
    })
}

/// Hyperparameters for transfer-listener training and evaluation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransferConfig {
    pub hidden_size: usize,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    pub convergence: Option<ConvergenceSpec>,
    /// Pins the distractor sets drawn during evaluation.
    pub eval_seed: u64,
}

/// Meaning indices that flowed into parameter updates; lets tests assert
/// that no held-out pair leaks into training.
#[derive(Debug, Clone, Default)]
pub struct DataAudit {
    pub touched_meanings: BTreeSet<usize>,
}

/// Trains a freshly initialised listener on `(message → meaning)` supervision
/// from the train split only. Referential targets train contrastively with
/// |B| = |D| capped at the split size; reconstruction targets train the
/// generator head.
pub fn train_transfer_listener(
    train_pairs: &[(usize, Message)],
    target: &GameSpec,
    channel: ChannelSpec,
    space: &InputSpace,
    config: &TransferConfig,
    seed: u64,
) -> Result<(ListenerParams, DataAudit), TransferError> {
    target.validate(space.len())?;
    for (_, m) in train_pairs {
        if m.tokens().len() != channel.message_length {
            return Err(TransferError::Agent(AgentError::LengthMismatch {
                expected: channel.message_length,
                got: m.tokens().len(),
            }));
        }
    }
    let head = match target.kind {
        GameKind::Reconstruction => HeadKind::Reconstruction,
        GameKind::Referential { .. } => HeadKind::Referential,
    };
    let mut listener = ListenerParams::init(
        space.spec().flat_len(),
        config.hidden_size,
        channel,
        head,
        &mut subrng(seed, "transfer-listener-init", 0),
    );

    let batch_size = match target.kind {
        GameKind::Reconstruction => target.batch_size.min(train_pairs.len()),
        GameKind::Referential { candidates, .. } => candidates.min(train_pairs.len()),
    };
    let drop_tail = matches!(target.kind, GameKind::Referential { .. });

    let mut audit = DataAudit::default();
    let mut adam = Adam::new(config.adam);
    let mut scores: Vec<f64> = Vec::new();

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train_pairs.len()).collect();
        shuffle(&mut order, &mut subrng(seed, "transfer-shuffle", epoch as u64));

        let mut score_sum = 0.0;
        let mut seen = 0usize;
        let mut start = 0usize;
        while start + batch_size <= order.len() || (!drop_tail && start < order.len()) {
            let end = (start + batch_size).min(order.len());
            let batch: Vec<&(usize, Message)> =
                order[start..end].iter().map(|&i| &train_pairs[i]).collect();
            start = end;

            let meaning_indices: Vec<usize> = batch.iter().map(|p| p.0).collect();
            audit.touched_meanings.extend(meaning_indices.iter().copied());
            let messages: Vec<Message> = batch.iter().map(|p| p.1.clone()).collect();
            let meanings = space.gather_flat(&meaning_indices);

            let mut tape = Tape::new();
            let bound = listener.bind(&mut tape);
            let h = listener_encode_message(&mut tape, &bound, MessageInput::Tokens(&messages))?;

            let (loss_var, score) = match &bound.head {
                BoundHead::Reconstruction(generator) => {
                    let logits = generator.forward(&mut tape, h);
                    let loss = reconstruction_loss(&mut tape, &meanings, logits)?;
                    let v = tape.value(loss).at(0, 0);
                    (loss, 1.0 - v)
                }
                BoundHead::Referential(encoder) => {
                    let cand = tape.leaf(meanings.clone());
                    let f = encoder.forward(&mut tape, cand);
                    let ep = contrastive_episode(&mut tape, h, f)?;
                    let acc = referential_accuracy(tape.value(ep.scores), &ep.targets);
                    (ep.loss, acc)
                }
            };

            let loss_value = tape.value(loss_var).at(0, 0);
            if !loss_value.is_finite() {
                return Err(TransferError::Diverged { epoch });
            }
            tape.backward(loss_var);
            let grads: Vec<Matrix> = bound
                .param_vars()
                .iter()
                .map(|v| {
                    tape.grad(*v).cloned().unwrap_or_else(|| {
                        let (r, c) = tape.value(*v).shape();
                        Matrix::zeros(r, c)
                    })
                })
                .collect();
            adam.begin_step();
            let mut slot = 0usize;
            listener.for_each_param_mut(&mut |_, m| {
                adam.update(slot, m, &grads[slot]);
                slot += 1;
            });

            let bsize = end - (start - (end - (start - batch.len())));
            let bsize = bsize.max(batch.len());
            score_sum += score * bsize as f64;
            seen += bsize;
        }

        if seen == 0 {
            break;
        }
        scores.push(score_sum / seen as f64);
        if let Some(conv) = &config.convergence {
            if conv.should_stop(&scores) {
                break;
            }
        }
    }

    Ok((listener, audit))
}

/// Generalisation of a trained listener on the held-out split: accuracy for
/// referential targets (distractors drawn uniformly from the full space,
/// target excluded), mean `1 − BCE` for reconstruction.
pub fn evaluate_generalisation(
    listener: &ListenerParams,
    split: &LanguageSplit,
    target: &GameSpec,
    space: &InputSpace,
    eval_seed: u64,
) -> Result<f64, TransferError> {
    match target.kind {
        GameKind::Reconstruction => {
            let mut total = 0.0;
            for chunk in split.test.chunks(512) {
                let messages: Vec<Message> = chunk.iter().map(|p| p.1.clone()).collect();
                let indices: Vec<usize> = chunk.iter().map(|p| p.0).collect();
                let mut tape = Tape::new();
                let bound = listener.bind(&mut tape);
                let h = listener_encode_message(&mut tape, &bound, MessageInput::Tokens(&messages))?;
                let BoundHead::Reconstruction(generator) = &bound.head else {
                    return Err(TransferError::Train(TrainError::InvalidConfig(
                        String::from("listener head does not match the target game"),
                    )));
                };
                let logits = generator.forward(&mut tape, h);
                let z = tape.value(logits);
                for (r, &i) in indices.iter().enumerate() {
                    total += 1.0 - bce_from_logits(space.flat_matrix().row(i), z.row(r));
                }
            }
            Ok(total / split.test.len() as f64)
        }
        GameKind::Referential { candidates, .. } => {
            let scorer = listener_choice_scorer(listener)?;
            evaluate_referential_with(scorer, split, candidates, space, eval_seed)
        }
    }
}

/// Builds the real listener's candidate scorer: encodes the message, encodes
/// the candidates, and returns the energy row.
fn listener_choice_scorer(
    listener: &ListenerParams,
) -> Result<impl FnMut(&Message, &Matrix) -> Result<Vec<f64>, TransferError> + '_, TransferError> {
    if listener.head_kind() != HeadKind::Referential {
        return Err(TransferError::Train(TrainError::InvalidConfig(String::from(
            "listener head does not match the target game",
        ))));
    }
    Ok(move |message: &Message, candidate_flats: &Matrix| {
        let mut tape = Tape::new();
        let bound = listener.bind(&mut tape);
        let h = listener_encode_message(
            &mut tape,
            &bound,
            MessageInput::Tokens(core::slice::from_ref(message)),
        )?;
        let BoundHead::Referential(encoder) = &bound.head else {
            unreachable!("head checked above");
        };
        let scores = crate::games::candidate_scores(&mut tape, h, candidate_flats, encoder)?;
        Ok(tape.value(scores).row(0).to_vec())
    })
}

/// Referential evaluation generic over the choice rule: one episode per test
/// pair, |D|−1 distractors sampled uniformly without replacement from the
/// full space (target excluded), target placed at a seeded random position.
/// The argmax choice wins; ties break to the lowest index.
fn evaluate_referential_with(
    mut score_candidates: impl FnMut(&Message, &Matrix) -> Result<Vec<f64>, TransferError>,
    split: &LanguageSplit,
    candidates: usize,
    space: &InputSpace,
    eval_seed: u64,
) -> Result<f64, TransferError> {
    assert!(!split.test.is_empty(), "empty test split");
    let mut rng = subrng(eval_seed, "eval-distractors", candidates as u64);
    let mut correct = 0usize;
    for (meaning_index, message) in &split.test {
        let distractors = sample_distinct_excluding(space.len(), *meaning_index, candidates - 1, &mut rng);
        let pos = rng.random_range(0..candidates);
        let mut indices = Vec::with_capacity(candidates);
        indices.extend_from_slice(&distractors[..pos]);
        indices.push(*meaning_index);
        indices.extend_from_slice(&distractors[pos..]);
        let flats = space.gather_flat(&indices);
        let scores = score_candidates(message, &flats)?;
        if argmax(&scores) == pos {
            correct += 1;
        }
    }
    Ok(correct as f64 / split.test.len() as f64)
}

/// One matrix entry.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferCell {
    pub source: String,
    pub target: String,
    pub seed: u64,
    pub metric: MetricKind,
    pub outcome: CellOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellOutcome {
    Value(f64),
    Failed(String),
}

/// The (source × target × seed) generalisation matrix. Failed cells are
/// recorded explicitly rather than omitted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransferMatrix {
    pub cells: Vec<TransferCell>,
}

/// Mean/σ aggregate of one (source, target) cell group.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateCell {
    pub source: String,
    pub target: String,
    pub metric: MetricKind,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

/// Sort key for game ids: `referN` ascending by N, then `recon`, then
/// anything else lexicographically.
pub fn game_sort_key(name: &str) -> (u8, u64, String) {
    if let Some(rest) = name.strip_prefix("refer") {
        let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
        if let Ok(n) = digits.parse::<u64>() {
            return (0, n, name.to_string());
        }
    }
    if name == "recon" {
        return (1, 0, name.to_string());
    }
    (2, 0, name.to_string())
}

impl TransferMatrix {
    pub fn sources(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .cells
            .iter()
            .map(|c| c.source.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        out.sort_by_key(|n| game_sort_key(n));
        out
    }

    pub fn targets(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .cells
            .iter()
            .map(|c| c.target.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        out.sort_by_key(|n| game_sort_key(n));
        out
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.cells
            .iter()
            .map(|c| c.seed)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Successful per-seed values of one (source, target) group, seed order.
    pub fn values(&self, source: &str, target: &str) -> Vec<f64> {
        let mut cells: Vec<(u64, f64)> = self
            .cells
            .iter()
            .filter(|c| c.source == source && c.target == target)
            .filter_map(|c| match c.outcome {
                CellOutcome::Value(v) => Some((c.seed, v)),
                CellOutcome::Failed(_) => None,
            })
            .collect();
        cells.sort_by_key(|(s, _)| *s);
        cells.into_iter().map(|(_, v)| v).collect()
    }

    /// Cells that are absent or failed, against the full
    /// sources × targets × seeds cross product.
    pub fn incomplete_cells(&self) -> Vec<String> {
        let mut out = Vec::new();
        for source in self.sources() {
            for target in self.targets() {
                for &seed in &self.seeds() {
                    let found = self
                        .cells
                        .iter()
                        .find(|c| c.source == source && c.target == target && c.seed == seed);
                    match found {
                        None => out.push(format!("{source}->{target}@{seed}: missing")),
                        Some(TransferCell {
                            outcome: CellOutcome::Failed(reason),
                            ..
                        }) => out.push(format!("{source}->{target}@{seed}: failed ({reason})")),
                        Some(_) => {}
                    }
                }
            }
        }
        out
    }

    pub fn is_complete(&self) -> bool {
        self.incomplete_cells().is_empty()
    }

    /// Mean and sample σ per (source, target), successful cells only.
    pub fn aggregate(&self) -> Vec<AggregateCell> {
        let mut out = Vec::new();
        for source in self.sources() {
            for target in self.targets() {
                let values = self.values(&source, &target);
                if values.is_empty() {
                    continue;
                }
                let metric = self
                    .cells
                    .iter()
                    .find(|c| c.source == source && c.target == target)
                    .map(|c| c.metric)
                    .expect("group has cells");
                out.push(AggregateCell {
                    source: source.clone(),
                    target: target.clone(),
                    metric,
                    mean: crate::analysis::stats::mean(&values),
                    sd: crate::analysis::stats::sample_sd(&values),
                    n: values.len(),
                });
            }
        }
        out
    }
}

/// Everything a full transfer experiment needs.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub sources: Vec<GameSpec>,
    pub targets: Vec<GameSpec>,
    pub seeds: Vec<u64>,
    pub channel: ChannelSpec,
    pub hidden_size: usize,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    pub convergence: Option<ConvergenceSpec>,
    pub transfer: TransferConfig,
}

impl ExperimentPlan {
    pub fn source_config(&self, game: GameSpec, seed: u64) -> TrainRunConfig {
        TrainRunConfig {
            game,
            channel: self.channel,
            hidden_size: self.hidden_size,
            adam: self.adam,
            max_epochs: self.max_epochs,
            convergence: self.convergence,
            seed,
        }
    }
}

/// Transfers one recorded language to every target: split once, then train
/// and evaluate a fresh listener per target. Per-target failures land in the
/// returned cells, not a top-level error.
pub fn transfer_language(
    lang: &EmergentLanguage,
    targets: &[GameSpec],
    space: &InputSpace,
    config: &TransferConfig,
    seed: u64,
) -> Vec<TransferCell> {
    let source_name = lang.provenance.game.name();
    let split = match split_language(lang, seed) {
        Ok(s) => s,
        Err(e) => {
            return targets
                .iter()
                .map(|t| TransferCell {
                    source: source_name.clone(),
                    target: t.name(),
                    seed,
                    metric: t.metric(),
                    outcome: CellOutcome::Failed(format!("{e}")),
                })
                .collect()
        }
    };
    targets
        .iter()
        .map(|target| {
            let outcome = train_transfer_listener(
                &split.train,
                target,
                lang.provenance.channel,
                space,
                config,
                seed,
            )
            .and_then(|(listener, _)| {
                evaluate_generalisation(&listener, &split, target, space, config.eval_seed)
            });
            TransferCell {
                source: source_name.clone(),
                target: target.name(),
                seed,
                metric: target.metric(),
                outcome: match outcome {
                    Ok(v) => CellOutcome::Value(v),
                    Err(e) => CellOutcome::Failed(format!("{e}")),
                },
            }
        })
        .collect()
}

/// Full experiment loop: per (source, seed), train source agents, record and
/// split the language, then train/evaluate a fresh listener per target. The
/// matrix is complete by construction; failures are marked per cell.
pub fn run_transfer_experiment(plan: &ExperimentPlan, space: &InputSpace) -> TransferMatrix {
    run_transfer_experiment_with(plan, space, |config, space| {
        train_game(config, space).map(|out| out.language)
    })
}

/// Experiment loop with an injectable source-training step (tests use this
/// to exercise failure marking).
pub fn run_transfer_experiment_with(
    plan: &ExperimentPlan,
    space: &InputSpace,
    mut train_source: impl FnMut(&TrainRunConfig, &InputSpace) -> Result<EmergentLanguage, TrainError>,
) -> TransferMatrix {
    let mut matrix = TransferMatrix::default();
    for source in &plan.sources {
        for &seed in &plan.seeds {
            let config = plan.source_config(*source, seed);
            match train_source(&config, space) {
                Ok(language) => {
                    matrix.cells.extend(transfer_language(
                        &language,
                        &plan.targets,
                        space,
                        &plan.transfer,
                        seed,
                    ));
                }
                Err(e) => {
                    for target in &plan.targets {
                        matrix.cells.push(TransferCell {
                            source: source.name(),
                            target: target.name(),
                            seed,
                            metric: target.metric(),
                            outcome: CellOutcome::Failed(format!("source training: {e}")),
                        });
                    }
                }
            }
        }
    }
    matrix
}
