use emlang::agents::ChannelSpec;
use emlang::games::GameSpec;
use emlang::nn::AdamConfig;
use emlang::space::{AttributeSpec, InputSpace};
use emlang::trainer::{train_game, TrainRunConfig};
use emlang::transfer::{split_language, train_transfer_listener, evaluate_generalisation, TransferConfig};

#[test]
fn pilot() {
    let space = InputSpace::generate(AttributeSpec::new(3, 10).unwrap()).unwrap();
    let channel = ChannelSpec::new(6, 10, 1.0).unwrap();
    let run = |game: GameSpec, lr: f64, epochs: usize, seed: u64| {
        let config = TrainRunConfig {
            game, channel, hidden_size: 64,
            adam: AdamConfig::with_learning_rate(lr),
            max_epochs: epochs, convergence: None, seed,
        };
        train_game(&config, &space).unwrap()
    };
    // criterion-5 shape: long contrastive vs conventional, two seeds
    std::thread::scope(|s| {
        let space = &space;
        let mut handles = vec![];
        for seed in [0u64, 1] {
            handles.push(s.spawn(move || {
                let config = TrainRunConfig {
                    game: GameSpec::referential(100), channel, hidden_size: 64,
                    adam: AdamConfig::with_learning_rate(1e-3),
                    max_epochs: 700, convergence: None, seed,
                };
                let out = train_game(&config, space).unwrap();
                let t: Vec<usize> = [99usize, 249, 399, 549, 699].iter()
                    .filter(|&&i| i < out.diagnostics.len())
                    .map(|&i| out.diagnostics[i].message_types).collect();
                println!("contrastive s{seed}: types at 100/250/400/550/700 = {t:?} acc={:.3}", out.diagnostics.last().unwrap().score);
                out
            }));
        }
        let contrastive: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        let mut handles = vec![];
        for seed in [0u64, 1] {
            handles.push(s.spawn(move || {
                let config = TrainRunConfig {
                    game: GameSpec::referential_conventional(100, 100), channel, hidden_size: 64,
                    adam: AdamConfig::with_learning_rate(1e-3),
                    max_epochs: 700, convergence: None, seed,
                };
                let out = train_game(&config, space).unwrap();
                let t: Vec<usize> = [99usize, 249, 399, 549, 699].iter()
                    .filter(|&&i| i < out.diagnostics.len())
                    .map(|&i| out.diagnostics[i].message_types).collect();
                println!("conventional s{seed}: types at 100/250/400/550/700 = {t:?} acc={:.3}", out.diagnostics.last().unwrap().score);
                out
            }));
        }
        let conventional: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        for i in 0..2 {
            let c = contrastive[i].diagnostics.last().unwrap().message_types;
            let v = conventional[i].diagnostics.last().unwrap().message_types;
            println!("seed {i}: contrastive={c} conventional={v} ratio={:.2}", v as f64 / c as f64);
        }

        // criterion-6 shape: transfer refer2-lang and refer100-lang to refer1000 target (seed 0)
        let refer2 = run(GameSpec::referential(2), 1e-3, 60, 0);
        let tc = TransferConfig {
            hidden_size: 64, adam: AdamConfig::with_learning_rate(2e-3),
            max_epochs: 150, convergence: None, eval_seed: 7,
        };
        let target = GameSpec::referential(1000);
        for (name, lang) in [("refer2", &refer2.language), ("refer100", &contrastive[0].language)] {
            let t0 = std::time::Instant::now();
            let split = split_language(lang, 0).unwrap();
            let (listener, _) = train_transfer_listener(&split.train, &target, channel, space, &tc, 0).unwrap();
            let acc = evaluate_generalisation(&listener, &split, &target, space, tc.eval_seed).unwrap();
            println!("transfer {name}-lang -> refer1000: acc = {acc:.4} [{:.0}s]", t0.elapsed().as_secs_f64());
        }
    });
}
