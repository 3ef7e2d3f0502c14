//! Source-game training: runs epochs over the shuffled input space until
//! convergence, records the emergent language by greedy decoding, and emits
//! per-epoch diagnostics (loss, score, message-type count, mutual
//! information) so collapse and MI curves need no retraining.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use crate::agents::{
    listener_encode_message, speaker_forward, BoundHead, ChannelSpec, HeadKind, ListenerParams,
    MessageInput, SpeakerMode, SpeakerParams,
};
use crate::games::{
    contrastive_episode, conventional_batch_episode, reconstruction_loss, referential_accuracy,
    sample_episode_batch, GameError, GameKind, GameSpec, LossVariant,
};
use crate::nn::{Adam, AdamConfig, HasParams, Matrix, Tape};
use crate::rng::{shuffle, subrng};
use crate::space::InputSpace;

/// Rows decoded per tape during language recording; bounds peak memory.
const RECORD_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    /// Training produced non-finite values; carries the diagnostics of the
    /// epochs that completed before the blow-up.
    Diverged {
        epoch: usize,
        diagnostics: Vec<EpochDiagnostics>,
    },
    InvalidConfig(String),
    Game(GameError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Diverged { epoch, .. } => {
                write!(f, "training diverged at epoch {epoch}")
            }
            TrainError::InvalidConfig(msg) => write!(f, "invalid training config: {msg}"),
            TrainError::Game(e) => write!(f, "game error: {e}"),
        }
    }
}

impl core::error::Error for TrainError {}

impl From<GameError> for TrainError {
    fn from(e: GameError) -> Self {
        TrainError::Game(e)
    }
}

/// Stop when the moving average (over `window` epochs) of the training score
/// improves by less than `min_delta` for `patience` consecutive epochs.
/// A pure function of the score history, so runs are resumable.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvergenceSpec {
    pub window: usize,
    pub min_delta: f64,
    pub patience: usize,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        ConvergenceSpec {
            window: 20,
            min_delta: 1e-3,
            patience: 50,
        }
    }
}

impl ConvergenceSpec {
    /// Whether the score history says training has converged.
    pub fn should_stop(&self, scores: &[f64]) -> bool {
        if scores.len() < self.window + self.patience {
            return false;
        }
        let ma = |end: usize| -> f64 {
            let s: f64 = scores[end - self.window..end].iter().sum();
            s / self.window as f64
        };
        // the last `patience` moving-average steps must all be flat
        for k in 0..self.patience {
            let end = scores.len() - k;
            let improvement = ma(end) - ma(end - 1);
            if improvement >= self.min_delta {
                return false;
            }
        }
        true
    }
}

/// Everything that pins one training run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainRunConfig {
    pub game: GameSpec,
    pub channel: ChannelSpec,
    pub hidden_size: usize,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    pub convergence: Option<ConvergenceSpec>,
    pub seed: u64,
}

impl TrainRunConfig {
    pub fn validate(&self, space: &InputSpace) -> Result<(), TrainError> {
        self.channel
            .validate()
            .map_err(|e| TrainError::InvalidConfig(format!("{e}")))?;
        self.game.validate(space.len())?;
        if self.hidden_size < 1 {
            return Err(TrainError::InvalidConfig(String::from("hidden size must be ≥ 1")));
        }
        if self.max_epochs < 1 {
            return Err(TrainError::InvalidConfig(String::from("max_epochs must be ≥ 1")));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig(String::from(
                "learning rate must be positive",
            )));
        }
        Ok(())
    }
}

/// Where a recorded language came from.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LanguageProvenance {
    pub game: GameSpec,
    pub channel: ChannelSpec,
    pub seed: u64,
    /// Epoch after which the language was recorded; 0 means initialisation.
    pub epoch: usize,
}

/// A total mapping from the input space to messages, recorded by greedy
/// decoding. Possibly non-injective: distinct meanings may share a message.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EmergentLanguage {
    messages: Vec<crate::agents::Message>,
    pub provenance: LanguageProvenance,
}

impl EmergentLanguage {
    pub fn new(messages: Vec<crate::agents::Message>, provenance: LanguageProvenance) -> Self {
        assert!(!messages.is_empty(), "a language must cover its space");
        EmergentLanguage {
            messages,
            provenance,
        }
    }

    /// Number of meanings covered (`|𝒳|`).
    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Message for the meaning at a canonical space index.
    pub fn message(&self, meaning_index: usize) -> &crate::agents::Message {
        &self.messages[meaning_index]
    }

    pub fn messages(&self) -> &[crate::agents::Message] {
        &self.messages
    }

    /// `(meaning index, message)` pairs in canonical order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, &crate::agents::Message)> {
        self.messages.iter().enumerate()
    }
}

/// Number of distinct message types a language uses.
pub fn count_message_types(lang: &EmergentLanguage) -> usize {
    let mut set = BTreeSet::new();
    for m in lang.messages() {
        set.insert(m.tokens());
    }
    set.len()
}

/// Greedy-decodes every meaning of the space; deterministic and total.
pub fn record_language(
    speaker: &SpeakerParams,
    space: &InputSpace,
    provenance: LanguageProvenance,
) -> EmergentLanguage {
    let mut messages = Vec::with_capacity(space.len());
    let all: Vec<usize> = (0..space.len()).collect();
    for chunk in all.chunks(RECORD_CHUNK) {
        let mut tape = Tape::new();
        let bound = speaker.bind(&mut tape);
        let inputs = tape.leaf(space.gather_flat(chunk));
        let out = speaker_forward(&mut tape, &bound, inputs, SpeakerMode::Greedy);
        messages.extend(out.messages);
    }
    EmergentLanguage::new(messages, provenance)
}

/// One epoch's worth of training measurements.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochDiagnostics {
    pub epoch: usize,
    /// Mean training loss over the epoch, weighted by batch size.
    pub loss: f64,
    /// Mean training accuracy (referential) or reconstruction score.
    pub score: f64,
    /// Distinct message types under greedy decoding after the epoch.
    pub message_types: usize,
    /// Mutual-information statistic of the recorded language.
    pub paper_mi: f64,
}

/// Per-step record streamed to an observer. Computing the message-type count
/// requires a full greedy decode per step, so observers are opt-in.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub score: f64,
    pub message_types: usize,
}

pub type StepObserver<'a> = &'a mut dyn FnMut(StepRecord);

/// Result of a full training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub speaker: SpeakerParams,
    pub listener: ListenerParams,
    /// Language recorded before any parameter update (epoch 0).
    pub initial_language: EmergentLanguage,
    /// Language recorded after the final epoch.
    pub language: EmergentLanguage,
    pub diagnostics: Vec<EpochDiagnostics>,
}

/// Trains fresh agents on the configured game over the whole space.
pub fn train_game(config: &TrainRunConfig, space: &InputSpace) -> Result<TrainOutcome, TrainError> {
    config.validate(space)?;
    let speaker = SpeakerParams::init(
        space.spec().flat_len(),
        config.hidden_size,
        config.channel,
        &mut subrng(config.seed, "speaker-init", 0),
    );
    let head = match config.game.kind {
        GameKind::Reconstruction => HeadKind::Reconstruction,
        GameKind::Referential { .. } => HeadKind::Referential,
    };
    let listener = ListenerParams::init(
        space.spec().flat_len(),
        config.hidden_size,
        config.channel,
        head,
        &mut subrng(config.seed, "listener-init", 0),
    );
    train_game_with(config, space, speaker, listener, None)
}

/// Trains the given agents in place of a fresh initialisation (checkpoint
/// restarts, tests). The listener head must match the game kind.
pub fn train_game_with(
    config: &TrainRunConfig,
    space: &InputSpace,
    mut speaker: SpeakerParams,
    mut listener: ListenerParams,
    mut observer: Option<StepObserver<'_>>,
) -> Result<TrainOutcome, TrainError> {
    config.validate(space)?;
    let head_ok = match config.game.kind {
        GameKind::Reconstruction => listener.head_kind() == HeadKind::Reconstruction,
        GameKind::Referential { .. } => listener.head_kind() == HeadKind::Referential,
    };
    if !head_ok {
        return Err(TrainError::InvalidConfig(String::from(
            "listener head does not match the game kind",
        )));
    }

    let provenance = |epoch: usize| LanguageProvenance {
        game: config.game,
        channel: config.channel,
        seed: config.seed,
        epoch,
    };

    let initial_language = record_language(&speaker, space, provenance(0));
    let mut adam = Adam::new(config.adam);
    let mut diagnostics: Vec<EpochDiagnostics> = Vec::new();
    let mut scores: Vec<f64> = Vec::new();
    let mut language = initial_language.clone();

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..space.len()).collect();
        shuffle(&mut order, &mut subrng(config.seed, "epoch-shuffle", epoch as u64));
        let mut gumbel_rng = subrng(config.seed, "gumbel", epoch as u64);
        let mut distractor_rng = subrng(config.seed, "distractors", epoch as u64);

        let mut loss_sum = 0.0;
        let mut score_sum = 0.0;
        let mut seen = 0usize;
        for (step, range) in batch_ranges(space.len(), &config.game).into_iter().enumerate() {
            let targets = &order[range];
            let episode =
                sample_episode_batch(&config.game, targets, space.len(), &mut distractor_rng)?;
            let (loss, score) = train_step(
                config,
                space,
                &mut speaker,
                &mut listener,
                &mut adam,
                &episode,
                &mut gumbel_rng,
                &mut distractor_rng,
            )?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    diagnostics,
                });
            }
            let bsize = targets.len();
            loss_sum += loss * bsize as f64;
            score_sum += score * bsize as f64;
            seen += bsize;
            if let Some(obs) = observer.as_mut() {
                let lang_now = record_language(&speaker, space, provenance(epoch));
                obs(StepRecord {
                    epoch,
                    step,
                    loss,
                    score,
                    message_types: count_message_types(&lang_now),
                });
            }
        }

        language = record_language(&speaker, space, provenance(epoch));
        let message_types = count_message_types(&language);
        let paper_mi = crate::analysis::paper_mutual_information(&language);
        let epoch_loss = loss_sum / seen as f64;
        let epoch_score = score_sum / seen as f64;
        diagnostics.push(EpochDiagnostics {
            epoch,
            loss: epoch_loss,
            score: epoch_score,
            message_types,
            paper_mi,
        });
        scores.push(epoch_score);

        if let Some(conv) = &config.convergence {
            if conv.should_stop(&scores) {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        speaker,
        listener,
        initial_language,
        language,
        diagnostics,
    })
}

/// Epoch partition: one shuffled pass, chunked by batch size. The contrastive
/// variant needs |B| = |D| exactly, so a short tail is dropped there; other
/// games keep it.
pub(crate) fn batch_ranges(n: usize, game: &GameSpec) -> Vec<Range<usize>> {
    let b = game.batch_size.min(n);
    let drop_tail = matches!(
        game.kind,
        GameKind::Referential {
            loss: LossVariant::Contrastive,
            ..
        }
    );
    let mut out = Vec::new();
    let mut start = 0;
    while start + b <= n {
        out.push(start..start + b);
        start += b;
    }
    if !drop_tail && start < n {
        out.push(start..n);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    config: &TrainRunConfig,
    space: &InputSpace,
    speaker: &mut SpeakerParams,
    listener: &mut ListenerParams,
    adam: &mut Adam,
    episode: &crate::games::EpisodeBatch,
    gumbel_rng: &mut rand_chacha::ChaCha8Rng,
    position_rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(f64, f64), TrainError> {
    use rand::Rng;

    let mut tape = Tape::new();
    let bound_speaker = speaker.bind(&mut tape);
    let bound_listener = listener.bind(&mut tape);

    let inputs = space.gather_flat(&episode.target_indices);
    let input_var = tape.leaf(inputs.clone());
    let spoken = speaker_forward(
        &mut tape,
        &bound_speaker,
        input_var,
        SpeakerMode::Train { rng: gumbel_rng },
    );
    let h_l = listener_encode_message(
        &mut tape,
        &bound_listener,
        MessageInput::Steps(&spoken.step_feed),
    )
    .map_err(|e| TrainError::InvalidConfig(format!("{e}")))?;

    let (loss_var, score) = match (&config.game.kind, &bound_listener.head) {
        (GameKind::Reconstruction, BoundHead::Reconstruction(generator)) => {
            let logits = generator.forward(&mut tape, h_l);
            let loss = reconstruction_loss(&mut tape, &inputs, logits)?;
            let loss_value = tape.value(loss).at(0, 0);
            (loss, 1.0 - loss_value)
        }
        (
            GameKind::Referential {
                loss: LossVariant::Contrastive,
                ..
            },
            BoundHead::Referential(encoder),
        ) => {
            let cand_emb = encoder.forward(&mut tape, input_var);
            let ep = contrastive_episode(&mut tape, h_l, cand_emb)?;
            let acc = referential_accuracy(tape.value(ep.scores), &ep.targets);
            (ep.loss, acc)
        }
        (
            GameKind::Referential {
                candidates,
                loss: LossVariant::Conventional,
            },
            BoundHead::Referential(encoder),
        ) => {
            let d = *candidates;
            let batch = episode.target_indices.len();
            let distractors = episode
                .distractors
                .as_ref()
                .expect("conventional episodes carry distractors");
            let mut candidate_indices = Vec::with_capacity(batch * d);
            let mut positions = Vec::with_capacity(batch);
            for (i, &target) in episode.target_indices.iter().enumerate() {
                let pos = position_rng.random_range(0..d);
                positions.push(pos);
                let dl = &distractors[i];
                candidate_indices.extend_from_slice(&dl[..pos]);
                candidate_indices.push(target);
                candidate_indices.extend_from_slice(&dl[pos..]);
            }
            let cand_flats = space.gather_flat(&candidate_indices);
            let ep = conventional_batch_episode(
                &mut tape,
                h_l,
                &positions,
                &cand_flats,
                d,
                encoder,
            )?;
            let acc = referential_accuracy(tape.value(ep.scores), &ep.targets);
            (ep.loss, acc)
        }
        _ => unreachable!("head/game consistency checked on entry"),
    };

    let loss_value = tape.value(loss_var).at(0, 0);
    tape.backward(loss_var);

    let mut vars = bound_speaker.param_vars();
    vars.extend(bound_listener.param_vars());
    let grads: Vec<Matrix> = vars
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
    speaker.for_each_param_mut(&mut |_, m| {
        adam.update(slot, m, &grads[slot]);
        slot += 1;
    });
    listener.for_each_param_mut(&mut |_, m| {
        adam.update(slot, m, &grads[slot]);
        slot += 1;
    });
    debug_assert_eq!(slot, grads.len());

    // The straight-through channel can keep the loss finite while NaNs eat
    // the speaker (argmax of an all-NaN row still emits a token), so
    // divergence is checked on the parameters, not just the loss.
    if !params_finite(speaker) || !params_finite(listener) {
        return Ok((f64::NAN, score));
    }

    Ok((loss_value, score))
}

fn params_finite(params: &impl HasParams) -> bool {
    let mut ok = true;
    params.for_each_param(&mut |_, m| ok &= m.is_finite());
    ok
}
