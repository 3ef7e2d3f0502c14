//! Finite-difference verification of the analytic gradients through the
//! full agent stack: perception, decoder, channel relaxation, listener
//! encoder, and every game loss. Gumbel noise is held fixed by replaying the
//! same stream, and the channel runs in its relaxed (undiscretised) mode so
//! the loss is a smooth function of the parameters. The straight-through
//! contract gets its own check with a linear downstream.

use emlang::agents::{
    listener_encode_message, speaker_forward, ChannelSpec, HeadKind, ListenerParams,
    MessageInput, SpeakerMode, SpeakerParams,
};
use emlang::games::{
    contrastive_episode, conventional_batch_episode, reconstruction_loss,
};
use emlang::gradcheck::compare_gradients;
use emlang::agents::BoundHead;
use emlang::nn::{HasParams, Matrix, Tape};
use emlang::rng::subrng;
use emlang::space::{AttributeSpec, InputSpace};

const HIDDEN: usize = 8;
const FD_STEP: f64 = 1e-5;
const RTOL: f64 = 1e-4;

fn small_setup(seed: u64) -> (InputSpace, ChannelSpec, SpeakerParams) {
    let space = InputSpace::generate(AttributeSpec::new(2, 3).unwrap()).unwrap();
    let channel = ChannelSpec::new(3, 4, 1.0).unwrap();
    let speaker = SpeakerParams::init(
        space.spec().flat_len(),
        HIDDEN,
        channel,
        &mut subrng(seed, "gc-speaker", 0),
    );
    (space, channel, speaker)
}

#[derive(Clone, Copy)]
enum Loss {
    Contrastive,
    Conventional,
    Reconstruction,
}

/// End-to-end loss with fixed Gumbel noise (replayed from `noise_seed`) and
/// a relaxed channel, as a plain function of the parameter structs.
fn full_loss(
    loss: Loss,
    space: &InputSpace,
    speaker: &SpeakerParams,
    listener: &ListenerParams,
    targets: &[usize],
    noise_seed: u64,
) -> f64 {
    let mut tape = Tape::new();
    let bs = speaker.bind(&mut tape);
    let bl = listener.bind(&mut tape);
    let inputs = space.gather_flat(targets);
    let input_var = tape.leaf(inputs.clone());
    let mut noise_rng = subrng(noise_seed, "gc-gumbel", 0);
    let spoken = speaker_forward(
        &mut tape,
        &bs,
        input_var,
        SpeakerMode::Relaxed {
            rng: &mut noise_rng,
        },
    );
    let h = listener_encode_message(&mut tape, &bl, MessageInput::Steps(&spoken.step_feed)).unwrap();
    let loss_var = match (loss, &bl.head) {
        (Loss::Contrastive, BoundHead::Referential(enc)) => {
            let f = enc.forward(&mut tape, input_var);
            contrastive_episode(&mut tape, h, f).unwrap().loss
        }
        (Loss::Conventional, BoundHead::Referential(enc)) => {
            // fixed candidate sets: every element faces the whole space
            let all: Vec<usize> = (0..space.len()).collect();
            let mut cand_indices = Vec::new();
            for _ in targets {
                cand_indices.extend_from_slice(&all);
            }
            let cand = space.gather_flat(&cand_indices);
            conventional_batch_episode(&mut tape, h, targets, &cand, space.len(), enc)
                .unwrap()
                .loss
        }
        (Loss::Reconstruction, BoundHead::Reconstruction(gen)) => {
            let logits = gen.forward(&mut tape, h);
            reconstruction_loss(&mut tape, &inputs, logits).unwrap()
        }
        _ => unreachable!("listener head matches the loss"),
    };
    tape.value(loss_var).at(0, 0)
}

/// Analytic gradients of the same computation, flattened in parameter order
/// (speaker first, then listener).
fn analytic_gradients(
    loss: Loss,
    space: &InputSpace,
    speaker: &SpeakerParams,
    listener: &ListenerParams,
    targets: &[usize],
    noise_seed: u64,
) -> Vec<f64> {
    let mut tape = Tape::new();
    let bs = speaker.bind(&mut tape);
    let bl = listener.bind(&mut tape);
    let inputs = space.gather_flat(targets);
    let input_var = tape.leaf(inputs.clone());
    let mut noise_rng = subrng(noise_seed, "gc-gumbel", 0);
    let spoken = speaker_forward(
        &mut tape,
        &bs,
        input_var,
        SpeakerMode::Relaxed {
            rng: &mut noise_rng,
        },
    );
    let h = listener_encode_message(&mut tape, &bl, MessageInput::Steps(&spoken.step_feed)).unwrap();
    let loss_var = match (loss, &bl.head) {
        (Loss::Contrastive, BoundHead::Referential(enc)) => {
            let f = enc.forward(&mut tape, input_var);
            contrastive_episode(&mut tape, h, f).unwrap().loss
        }
        (Loss::Conventional, BoundHead::Referential(enc)) => {
            let all: Vec<usize> = (0..space.len()).collect();
            let mut cand_indices = Vec::new();
            for _ in targets {
                cand_indices.extend_from_slice(&all);
            }
            let cand = space.gather_flat(&cand_indices);
            conventional_batch_episode(&mut tape, h, targets, &cand, space.len(), enc)
                .unwrap()
                .loss
        }
        (Loss::Reconstruction, BoundHead::Reconstruction(gen)) => {
            let logits = gen.forward(&mut tape, h);
            reconstruction_loss(&mut tape, &inputs, logits).unwrap()
        }
        _ => unreachable!(),
    };
    tape.backward(loss_var);

    let mut vars = bs.param_vars();
    vars.extend(bl.param_vars());
    let mut flat = Vec::new();
    for v in vars {
        match tape.grad(v) {
            Some(g) => flat.extend_from_slice(g.data()),
            None => flat.extend(std::iter::repeat(0.0).take(tape.value(v).value_len())),
        }
    }
    flat
}

trait ValueLen {
    fn value_len(&self) -> usize;
}
impl ValueLen for Matrix {
    fn value_len(&self) -> usize {
        self.data().len()
    }
}

/// Central finite differences over every scalar parameter.
fn numeric_gradients(
    loss: Loss,
    space: &InputSpace,
    speaker: &SpeakerParams,
    listener: &ListenerParams,
    targets: &[usize],
    noise_seed: u64,
) -> Vec<f64> {
    let mut flat = Vec::new();
    let eval = |sp: &SpeakerParams, li: &ListenerParams| {
        full_loss(loss, space, sp, li, targets, noise_seed)
    };

    fn bump(params: &mut impl HasParams, pi: usize, e: usize, delta: f64) {
        let mut k = 0;
        params.for_each_param_mut(&mut |_, m| {
            if k == pi {
                m.data_mut()[e] += delta;
            }
            k += 1;
        });
    }
    fn entry_counts(params: &impl HasParams) -> Vec<usize> {
        let mut out = Vec::new();
        params.for_each_param(&mut |_, m| out.push(m.data().len()));
        out
    }

    let mut speaker_work = speaker.clone();
    for (pi, &len) in entry_counts(speaker).iter().enumerate() {
        for e in 0..len {
            bump(&mut speaker_work, pi, e, FD_STEP);
            let up = eval(&speaker_work, listener);
            bump(&mut speaker_work, pi, e, -2.0 * FD_STEP);
            let down = eval(&speaker_work, listener);
            bump(&mut speaker_work, pi, e, FD_STEP);
            flat.push((up - down) / (2.0 * FD_STEP));
        }
    }

    let mut listener_work = listener.clone();
    for (pi, &len) in entry_counts(listener).iter().enumerate() {
        for e in 0..len {
            bump(&mut listener_work, pi, e, FD_STEP);
            let up = eval(speaker, &listener_work);
            bump(&mut listener_work, pi, e, -2.0 * FD_STEP);
            let down = eval(speaker, &listener_work);
            bump(&mut listener_work, pi, e, FD_STEP);
            flat.push((up - down) / (2.0 * FD_STEP));
        }
    }
    flat
}

fn check_loss(loss: Loss, head: HeadKind, seed: u64) {
    let (space, channel, speaker) = small_setup(seed);
    let listener = ListenerParams::init(
        space.spec().flat_len(),
        HIDDEN,
        channel,
        head,
        &mut subrng(seed, "gc-listener", 0),
    );
    let targets = [0usize, 3, 5, 8];
    let analytic = analytic_gradients(loss, &space, &speaker, &listener, &targets, seed);
    let numeric = numeric_gradients(loss, &space, &speaker, &listener, &targets, seed);
    assert_eq!(analytic.len(), numeric.len());
    let report = compare_gradients(&analytic, &numeric, 1e-3);
    assert!(
        report.max_discrepancy < RTOL,
        "max relative discrepancy {} at flat index {}",
        report.max_discrepancy,
        report.worst_index
    );
}

#[test]
fn contrastive_loss_gradients_match_finite_differences() {
    check_loss(Loss::Contrastive, HeadKind::Referential, 1);
    check_loss(Loss::Contrastive, HeadKind::Referential, 2);
}

#[test]
fn conventional_loss_gradients_match_finite_differences() {
    check_loss(Loss::Conventional, HeadKind::Referential, 3);
    check_loss(Loss::Conventional, HeadKind::Referential, 4);
}

#[test]
fn reconstruction_loss_gradients_match_finite_differences() {
    check_loss(Loss::Reconstruction, HeadKind::Reconstruction, 5);
    check_loss(Loss::Reconstruction, HeadKind::Reconstruction, 6);
}

/// The straight-through contract through the speaker: the value the channel
/// emits is exactly one-hot, and the gradient path is exactly that of the
/// relaxed vector. With a loss that is linear in the first step's output,
/// both runs share every upstream value (same noise, same states), so the
/// parameter gradients must be bit-identical — not merely close.
#[test]
fn straight_through_contract_holds_through_the_speaker() {
    let (space, _channel, speaker) = small_setup(7);
    let targets = [1usize, 4, 7];
    let readout = Matrix::from_vec(4, 1, vec![0.3, -0.8, 0.5, 0.1]);

    let run = |discretize: bool| -> (Vec<Option<Matrix>>, Matrix) {
        let mut tape = Tape::new();
        let bs = speaker.bind(&mut tape);
        let inputs = tape.leaf(space.gather_flat(&targets));
        let mut rng = subrng(7, "st-contract", 0);
        let mode = if discretize {
            SpeakerMode::Train { rng: &mut rng }
        } else {
            SpeakerMode::Relaxed { rng: &mut rng }
        };
        let spoken = speaker_forward(&mut tape, &bs, inputs, mode);
        let w = tape.leaf(readout.clone());
        let ones_row = tape.leaf(Matrix::from_vec(1, targets.len(), vec![1.0; targets.len()]));
        let y = tape.matmul(spoken.step_feed[0], w);
        let total = tape.matmul(ones_row, y);
        tape.backward(total);
        let grads = bs
            .param_vars()
            .into_iter()
            .map(|v| tape.grad(v).cloned())
            .collect();
        (grads, tape.value(spoken.step_feed[0]).clone())
    };

    let (hard_grads, hard_feed) = run(true);
    let (relaxed_grads, relaxed_feed) = run(false);

    // forward: the discretised rows are exactly one-hot, the relaxed ones
    // are proper probability rows
    for r in 0..hard_feed.rows() {
        let row = hard_feed.row(r);
        assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 3);
        assert!(relaxed_feed.row(r).iter().all(|&p| p > 0.0 && p < 1.0));
    }

    // backward: identical gradient path
    assert_eq!(hard_grads.len(), relaxed_grads.len());
    let mut saw_nonzero = false;
    for (a, b) in hard_grads.iter().zip(&relaxed_grads) {
        match (a, b) {
            (Some(ga), Some(gb)) => {
                assert_eq!(ga.data(), gb.data(), "gradient paths must coincide exactly");
                saw_nonzero |= ga.data().iter().any(|&v| v != 0.0);
            }
            (None, None) => {}
            other => panic!("gradient presence differs between modes: {other:?}"),
        }
    }
    assert!(saw_nonzero, "the check must exercise a real gradient");
}
