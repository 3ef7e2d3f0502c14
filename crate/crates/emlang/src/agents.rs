//! Speaker and listener networks plus the discrete communication channel.
//!
//! The speaker perceives a flattened meaning, initialises a recurrent decoder
//! from the percept, and emits a fixed-length token sequence. During training
//! each token is sampled with the Gumbel-Softmax trick and discretised
//! straight-through: the listener sees exact one-hot tokens while gradients
//! flow through the relaxed distribution. The listener embeds the token
//! sequence with its own recurrent encoder; its action head (candidate
//! encoder or generator) is applied by the games module.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{
    argmax, BoundEncoder, BoundLinear, BoundLstmCell, Encoder, HasParams, Linear, LstmCell,
    Matrix, Tape, Var,
};
use crate::rng::sample_gumbel;

#[derive(Debug, Clone, PartialEq)]
pub enum AgentError {
    NonFiniteLogits,
    InvalidTemperature(f64),
    InvalidChannel(String),
    /// Message length differs from the channel's.
    LengthMismatch { expected: usize, got: usize },
    /// A token is outside the channel's inventory.
    TokenOutOfRange { token: u16, vocab: usize },
}

impl fmt::Display for AgentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentError::NonFiniteLogits => write!(f, "logits contain non-finite values"),
            AgentError::InvalidTemperature(t) => write!(f, "temperature must be positive, got {t}"),
            AgentError::InvalidChannel(msg) => write!(f, "invalid channel spec: {msg}"),
            AgentError::LengthMismatch { expected, got } => {
                write!(f, "message length {got} does not match channel length {expected}")
            }
            AgentError::TokenOutOfRange { token, vocab } => {
                write!(f, "token {token} outside inventory of size {vocab}")
            }
        }
    }
}

impl core::error::Error for AgentError {}

/// The discrete channel: fixed message length, finite token inventory, and
/// the Gumbel-Softmax temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelSpec {
    pub message_length: usize,
    pub vocab_size: usize,
    pub temperature: f64,
}

impl ChannelSpec {
    pub fn new(message_length: usize, vocab_size: usize, temperature: f64) -> Result<Self, AgentError> {
        let spec = ChannelSpec {
            message_length,
            vocab_size,
            temperature,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.message_length < 1 {
            return Err(AgentError::InvalidChannel(String::from(
                "message length must be ≥ 1",
            )));
        }
        if self.vocab_size < 2 {
            return Err(AgentError::InvalidChannel(String::from(
                "token inventory must have ≥ 2 entries",
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(AgentError::InvalidTemperature(self.temperature));
        }
        Ok(())
    }

    /// `vocab_size ^ message_length`, saturating.
    pub fn message_space_size(&self) -> u128 {
        let mut size: u128 = 1;
        for _ in 0..self.message_length {
            size = size.saturating_mul(self.vocab_size as u128);
        }
        size
    }
}

/// A fixed-length token sequence. A unique value of this type is a
/// "message type"; occurrences during play may repeat.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Message {
    tokens: Vec<u16>,
}

impl Message {
    pub fn new(tokens: Vec<u16>, channel: &ChannelSpec) -> Result<Self, AgentError> {
        if tokens.len() != channel.message_length {
            return Err(AgentError::LengthMismatch {
                expected: channel.message_length,
                got: tokens.len(),
            });
        }
        for &t in &tokens {
            if t as usize >= channel.vocab_size {
                return Err(AgentError::TokenOutOfRange {
                    token: t,
                    vocab: channel.vocab_size,
                });
            }
        }
        Ok(Message { tokens })
    }

    pub fn tokens(&self) -> &[u16] {
        &self.tokens
    }
}

/// One Gumbel-Softmax draw over a logit vector: the relaxed vector is
/// `softmax((logits + gumbel)/τ)`, the one-hot is its argmax. Consumers take
/// the one-hot value while gradients follow the relaxed vector.
pub fn gumbel_softmax_sample(
    logits: &[f64],
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
    if !(temperature > 0.0) {
        return Err(AgentError::InvalidTemperature(temperature));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(AgentError::NonFiniteLogits);
    }
    let inv_t = 1.0 / temperature;
    let mut relaxed: Vec<f64> = logits
        .iter()
        .map(|&l| (l + sample_gumbel(rng)) * inv_t)
        .collect();
    crate::nn::softmax_in_place(&mut relaxed);
    let hot = argmax(&relaxed);
    let mut one_hot = vec![0.0; logits.len()];
    one_hot[hot] = 1.0;
    Ok((one_hot, relaxed))
}

/// Speaker: perception MLP plus an LSTM decoder over the token inventory.
/// Token embeddings share the hidden width; the decoder's hidden state is
/// initialised from the percept and its cell state from zero, with a learned
/// start-symbol embedding as the first step input.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpeakerParams {
    pub channel: ChannelSpec,
    pub input_dim: usize,
    pub hidden: usize,
    pub perception: Encoder,
    pub embed: Matrix,
    pub start: Matrix,
    pub cell: LstmCell,
    pub out: Linear,
}

impl SpeakerParams {
    pub fn init(input_dim: usize, hidden: usize, channel: ChannelSpec, rng: &mut impl Rng) -> Self {
        SpeakerParams {
            channel,
            input_dim,
            hidden,
            perception: Encoder::init(input_dim, hidden, rng),
            embed: crate::nn::init_weight(channel.vocab_size, hidden, channel.vocab_size, rng),
            start: crate::nn::init_weight(1, hidden, channel.vocab_size, rng),
            cell: LstmCell::init(hidden, hidden, rng),
            out: Linear::init(hidden, channel.vocab_size, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundSpeaker<'_> {
        BoundSpeaker {
            perception: self.perception.bind(tape),
            embed: tape.param(self.embed.clone()),
            start: tape.param(self.start.clone()),
            cell: self.cell.bind(tape),
            out: self.out.bind(tape),
            channel: self.channel,
            hidden: self.hidden,
        }
    }
}

impl HasParams for SpeakerParams {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("perception.w", &self.perception.linear.w);
        f("perception.b", &self.perception.linear.b);
        f("embed", &self.embed);
        f("start", &self.start);
        visit_cell(&self.cell, f);
        f("out.w", &self.out.w);
        f("out.b", &self.out.b);
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("perception.w", &mut self.perception.linear.w);
        f("perception.b", &mut self.perception.linear.b);
        f("embed", &mut self.embed);
        f("start", &mut self.start);
        visit_cell_mut(&mut self.cell, f);
        f("out.w", &mut self.out.w);
        f("out.b", &mut self.out.b);
    }
}

fn visit_cell(cell: &LstmCell, f: &mut dyn FnMut(&str, &Matrix)) {
    for (m, n) in cell.wx.iter().zip(["cell.wx_i", "cell.wx_f", "cell.wx_g", "cell.wx_o"]) {
        f(n, m);
    }
    for (m, n) in cell.wh.iter().zip(["cell.wh_i", "cell.wh_f", "cell.wh_g", "cell.wh_o"]) {
        f(n, m);
    }
    for (m, n) in cell.b.iter().zip(["cell.b_i", "cell.b_f", "cell.b_g", "cell.b_o"]) {
        f(n, m);
    }
}

fn visit_cell_mut(cell: &mut LstmCell, f: &mut dyn FnMut(&str, &mut Matrix)) {
    for (m, n) in cell.wx.iter_mut().zip(["cell.wx_i", "cell.wx_f", "cell.wx_g", "cell.wx_o"]) {
        f(n, m);
    }
    for (m, n) in cell.wh.iter_mut().zip(["cell.wh_i", "cell.wh_f", "cell.wh_g", "cell.wh_o"]) {
        f(n, m);
    }
    for (m, n) in cell.b.iter_mut().zip(["cell.b_i", "cell.b_f", "cell.b_g", "cell.b_o"]) {
        f(n, m);
    }
}

pub struct BoundSpeaker<'a> {
    pub perception: BoundEncoder<'a>,
    pub embed: Var,
    pub start: Var,
    pub cell: BoundLstmCell,
    pub out: BoundLinear,
    channel: ChannelSpec,
    hidden: usize,
}

impl BoundSpeaker<'_> {
    /// Vars in the same order as [`HasParams`] visits `SpeakerParams`.
    pub fn param_vars(&self) -> Vec<Var> {
        let mut out: Vec<Var> = Vec::with_capacity(18);
        out.extend_from_slice(&self.perception.param_vars());
        out.push(self.embed);
        out.push(self.start);
        out.extend(self.cell.param_vars());
        out.extend_from_slice(&self.out.param_vars());
        out
    }
}

/// How the speaker emits tokens.
pub enum SpeakerMode<'a> {
    /// Gumbel-Softmax sampling with straight-through discretisation; the
    /// step outputs fed downstream are exact one-hot.
    Train { rng: &'a mut ChaCha8Rng },
    /// Deterministic argmax decoding; used for language recording.
    Greedy,
    /// Sampling without discretisation: downstream sees the relaxed
    /// distributions themselves. Diagnostic path for gradient verification,
    /// where the loss must be a smooth function of the parameters.
    Relaxed { rng: &'a mut ChaCha8Rng },
}

/// Result of one speaker forward pass over a batch.
pub struct SpeakerOutput {
    /// Decoded token sequences, one per batch row.
    pub messages: Vec<Message>,
    /// Per-step values fed downstream (one-hot under `Train`/`Greedy`,
    /// relaxed under `Relaxed`), each B×vocab.
    pub step_feed: Vec<Var>,
    /// Per-step token distributions (softmax of the perturbed logits under
    /// sampling modes, plain softmax under `Greedy`).
    pub step_probs: Vec<Var>,
}

/// Runs the speaker over a batch of flattened meanings (rows of `input`).
pub fn speaker_forward(
    tape: &mut Tape,
    speaker: &BoundSpeaker<'_>,
    input: Var,
    mode: SpeakerMode<'_>,
) -> SpeakerOutput {
    let batch = tape.value(input).rows();
    let channel = speaker.channel;
    let vocab = channel.vocab_size;
    let inv_t = 1.0 / channel.temperature;

    let mut mode = mode;
    let mut h = speaker.perception.forward(tape, input);
    let mut c = tape.leaf(Matrix::zeros(batch, speaker.hidden));
    let mut feed = tape.repeat_row(speaker.start, batch);

    let mut step_feed = Vec::with_capacity(channel.message_length);
    let mut step_probs = Vec::with_capacity(channel.message_length);
    let mut tokens: Vec<Vec<u16>> = vec![Vec::with_capacity(channel.message_length); batch];

    for _ in 0..channel.message_length {
        let (h2, c2) = speaker.cell.step(tape, feed, h, c);
        h = h2;
        c = c2;
        let logits = speaker.out.forward(tape, h);

        let (fed, probs, step_tokens) = match &mut mode {
            SpeakerMode::Train { rng } | SpeakerMode::Relaxed { rng } => {
                let mut noise = Matrix::zeros(batch, vocab);
                for v in noise.data_mut() {
                    *v = sample_gumbel(*rng);
                }
                let shifted = tape.offset(logits, &noise);
                let scaled = tape.scale(shifted, inv_t);
                let relaxed = tape.softmax_rows(scaled);
                let fed = if matches!(mode, SpeakerMode::Train { .. }) {
                    tape.straight_through(relaxed)
                } else {
                    relaxed
                };
                let toks = tape.value(relaxed).argmax_rows();
                (fed, relaxed, toks)
            }
            SpeakerMode::Greedy => {
                let toks = tape.value(logits).argmax_rows();
                let mut hot = Matrix::zeros(batch, vocab);
                for (r, &t) in toks.iter().enumerate() {
                    hot.set(r, t, 1.0);
                }
                let fed = tape.leaf(hot);
                let probs = tape.softmax_rows(logits);
                (fed, probs, toks)
            }
        };

        for (row, &t) in tokens.iter_mut().zip(&step_tokens) {
            row.push(t as u16);
        }
        step_feed.push(fed);
        step_probs.push(probs);
        feed = tape.matmul(fed, speaker.embed);
    }

    let messages = tokens
        .into_iter()
        .map(|t| Message::new(t, &channel).expect("decoder emits in-range tokens"))
        .collect();
    SpeakerOutput {
        messages,
        step_feed,
        step_probs,
    }
}

/// The listener's game-specific action module.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ListenerHead {
    /// Candidate encoder for referential games.
    Referential(Encoder),
    /// Generator head mapping the message embedding to meaning logits.
    Reconstruction(Linear),
}

/// Listener: recurrent message encoder plus a game-specific head.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ListenerParams {
    pub channel: ChannelSpec,
    pub input_dim: usize,
    pub hidden: usize,
    pub embed: Matrix,
    pub cell: LstmCell,
    pub head: ListenerHead,
}

/// Which action head a listener carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Referential,
    Reconstruction,
}

impl ListenerParams {
    pub fn init(
        input_dim: usize,
        hidden: usize,
        channel: ChannelSpec,
        head: HeadKind,
        rng: &mut impl Rng,
    ) -> Self {
        ListenerParams {
            channel,
            input_dim,
            hidden,
            embed: crate::nn::init_weight(channel.vocab_size, hidden, channel.vocab_size, rng),
            cell: LstmCell::init(hidden, hidden, rng),
            head: match head {
                HeadKind::Referential => ListenerHead::Referential(Encoder::init(input_dim, hidden, rng)),
                HeadKind::Reconstruction => {
                    ListenerHead::Reconstruction(Linear::init(hidden, input_dim, rng))
                }
            },
        }
    }

    pub fn head_kind(&self) -> HeadKind {
        match self.head {
            ListenerHead::Referential(_) => HeadKind::Referential,
            ListenerHead::Reconstruction(_) => HeadKind::Reconstruction,
        }
    }

    /// The candidate encoder, if this is a referential listener.
    pub fn candidate_encoder(&self) -> Option<&Encoder> {
        match &self.head {
            ListenerHead::Referential(enc) => Some(enc),
            ListenerHead::Reconstruction(_) => None,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundListener<'_> {
        BoundListener {
            embed: tape.param(self.embed.clone()),
            cell: self.cell.bind(tape),
            head: match &self.head {
                ListenerHead::Referential(enc) => BoundHead::Referential(enc.bind(tape)),
                ListenerHead::Reconstruction(lin) => BoundHead::Reconstruction(lin.bind(tape)),
            },
            channel: self.channel,
            hidden: self.hidden,
        }
    }
}

impl HasParams for ListenerParams {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("embed", &self.embed);
        visit_cell(&self.cell, f);
        match &self.head {
            ListenerHead::Referential(enc) => {
                f("candidate_encoder.w", &enc.linear.w);
                f("candidate_encoder.b", &enc.linear.b);
            }
            ListenerHead::Reconstruction(lin) => {
                f("generator.w", &lin.w);
                f("generator.b", &lin.b);
            }
        }
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("embed", &mut self.embed);
        visit_cell_mut(&mut self.cell, f);
        match &mut self.head {
            ListenerHead::Referential(enc) => {
                f("candidate_encoder.w", &mut enc.linear.w);
                f("candidate_encoder.b", &mut enc.linear.b);
            }
            ListenerHead::Reconstruction(lin) => {
                f("generator.w", &mut lin.w);
                f("generator.b", &mut lin.b);
            }
        }
    }
}

pub enum BoundHead<'a> {
    Referential(BoundEncoder<'a>),
    Reconstruction(BoundLinear),
}

pub struct BoundListener<'a> {
    pub embed: Var,
    pub cell: BoundLstmCell,
    pub head: BoundHead<'a>,
    channel: ChannelSpec,
    hidden: usize,
}

impl BoundListener<'_> {
    /// Vars in the same order as [`HasParams`] visits `ListenerParams`.
    pub fn param_vars(&self) -> Vec<Var> {
        let mut out: Vec<Var> = Vec::with_capacity(15);
        out.push(self.embed);
        out.extend(self.cell.param_vars());
        match &self.head {
            BoundHead::Referential(enc) => out.extend_from_slice(&enc.param_vars()),
            BoundHead::Reconstruction(lin) => out.extend_from_slice(&lin.param_vars()),
        }
        out
    }

    pub fn candidate_encoder(&self) -> Option<&BoundEncoder<'_>> {
        match &self.head {
            BoundHead::Referential(enc) => Some(enc),
            BoundHead::Reconstruction(_) => None,
        }
    }
}

/// The message as the listener receives it.
pub enum MessageInput<'a> {
    /// Per-step B×vocab distributions (straight-through one-hots or relaxed
    /// vectors) still attached to the tape.
    Steps(&'a [Var]),
    /// Plain token sequences; embedded as exact one-hots.
    Tokens(&'a [Message]),
}

/// Encodes a batch of messages into the final recurrent state, one row per
/// message. Step inputs may be relaxed distributions, in which case the
/// token embedding is the distribution-weighted mixture of embedding rows.
pub fn listener_encode_message(
    tape: &mut Tape,
    listener: &BoundListener<'_>,
    input: MessageInput<'_>,
) -> Result<Var, AgentError> {
    let channel = listener.channel;
    let step_vars: Vec<Var> = match input {
        MessageInput::Steps(vars) => {
            if vars.len() != channel.message_length {
                return Err(AgentError::LengthMismatch {
                    expected: channel.message_length,
                    got: vars.len(),
                });
            }
            for v in vars {
                let (_, cols) = tape.value(*v).shape();
                if cols != channel.vocab_size {
                    return Err(AgentError::TokenOutOfRange {
                        token: cols as u16,
                        vocab: channel.vocab_size,
                    });
                }
            }
            vars.to_vec()
        }
        MessageInput::Tokens(messages) => {
            let batch = messages.len();
            let mut vars = Vec::with_capacity(channel.message_length);
            for m in messages {
                if m.tokens().len() != channel.message_length {
                    return Err(AgentError::LengthMismatch {
                        expected: channel.message_length,
                        got: m.tokens().len(),
                    });
                }
                if let Some(&t) = m.tokens().iter().find(|&&t| t as usize >= channel.vocab_size) {
                    return Err(AgentError::TokenOutOfRange {
                        token: t,
                        vocab: channel.vocab_size,
                    });
                }
            }
            for step in 0..channel.message_length {
                let mut hot = Matrix::zeros(batch, channel.vocab_size);
                for (r, m) in messages.iter().enumerate() {
                    hot.set(r, m.tokens()[step] as usize, 1.0);
                }
                vars.push(tape.leaf(hot));
            }
            vars
        }
    };

    let batch = tape.value(step_vars[0]).rows();
    let mut h = tape.leaf(Matrix::zeros(batch, listener.hidden));
    let mut c = tape.leaf(Matrix::zeros(batch, listener.hidden));
    for v in step_vars {
        let emb = tape.matmul(v, listener.embed);
        let (h2, c2) = listener.cell.step(tape, emb, h, c);
        h = h2;
        c = c2;
    }
    Ok(h)
}
