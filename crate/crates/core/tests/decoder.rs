mod common;

use aom::autodiff::{grad_check_params, Adam, ParamStore, Tape, Tensor, DEFAULT_EPS};
use aom::data::{decode_target, encode_target, synth_lexicon, EOS};
use aom::decoder::{combine_streams, pointer_logits, Decoder, DecoderConfig};
use aom::error::TensorError;
use aom::model::AomModel;
use aom::verify::{tiny_config, tiny_example};
use common::*;
use proptest::prelude::*;

fn decoder(cfg: DecoderConfig, seed: u64) -> (Decoder, ParamStore) {
    let mut store = ParamStore::new();
    let d = Decoder::new(&mut store, cfg, &mut rng(seed)).unwrap();
    (d, store)
}

fn small() -> DecoderConfig {
    DecoderConfig { d_model: 8, n_heads: 2, d_ff: 16, max_decode_len: 8, ..DecoderConfig::default() }
}

#[test]
fn combine_streams_cases() {
    let a = random_mat(3, 4, &mut rng(1));
    let b = random_mat(3, 4, &mut rng(2));
    let mut tape = Tape::new();
    let (av, bv) = (tape.constant(to_tensor(&a)), tape.constant(to_tensor(&b)));
    let only_first = combine_streams(&mut tape, av, Some(bv), 2.0, 0.0).unwrap();
    let doubled: Mat = a.iter().map(|r| r.iter().map(|x| 2.0 * x).collect()).collect();
    assert_eq!(to_mat(tape.value(only_first)), doubled);
    let zero = combine_streams(&mut tape, av, Some(bv), 0.0, 0.0).unwrap();
    assert!(tape.value(zero).data().iter().all(|&x| x == 0.0));
    let published = combine_streams(&mut tape, av, Some(bv), 1.0, 0.5).unwrap();
    let mut reference = a.clone();
    for (r, s) in reference.iter_mut().zip(&b) {
        for (x, y) in r.iter_mut().zip(s) {
            *x = 1.0 * *x + 0.5 * y;
        }
    }
    assert!(max_diff(&to_mat(tape.value(published)), &reference) < 1e-12);
}

#[test]
fn pointer_logits_width_and_zero_state() {
    let mut tape = Tape::new();
    let table = tape.constant(to_tensor(&random_mat(7, 4, &mut rng(3))));
    let state = tape.constant(Tensor::zeros(&[1, 4]));
    let logits = pointer_logits(&mut tape, state, table).unwrap();
    assert_eq!(tape.shape(logits), &[1, 7]);
    assert!(tape.value(logits).data().iter().all(|&x| x == 0.0));
}

#[test]
fn uniform_output_costs_length_times_log_vocabulary() {
    let (dec, store) = decoder(small(), 4);
    let n = 5;
    let target = encode_target(&tiny_example(&mut rng(5)).gold_triples, n).unwrap().indices;
    let mut tape = Tape::new();
    let memory = tape.constant(to_tensor(&random_mat(9, 8, &mut rng(6))));
    let table = tape.constant(Tensor::zeros(&[4 + n, 8]));
    let loss = dec.sequence_loss(&mut tape, &store, memory, table, &target).unwrap();
    let expected = target.len() as f64 * ((n + 4) as f64).ln();
    assert!((tape.item(loss) - expected).abs() < 1e-12);
}

#[test]
fn eos_only_target_is_one_step() {
    let (dec, store) = decoder(small(), 7);
    let mut tape = Tape::new();
    let memory = tape.constant(to_tensor(&random_mat(6, 8, &mut rng(8))));
    let table = tape.constant(to_tensor(&random_mat(6, 8, &mut rng(9))));
    let loss = dec.sequence_loss(&mut tape, &store, memory, table, &[EOS]).unwrap();
    let logits = dec.teacher_forced_logits(&mut tape, &store, memory, table, &[EOS]).unwrap();
    let row = tape.value(logits).data().to_vec();
    let reference = -softmax(&row)[EOS].ln();
    assert_eq!(tape.shape(logits), &[1, 6]);
    assert!((tape.item(loss) - reference).abs() < 1e-12);
}

#[test]
fn empty_prefix_is_a_contract_error() {
    let (dec, store) = decoder(small(), 10);
    let mut tape = Tape::new();
    let memory = tape.constant(to_tensor(&random_mat(6, 8, &mut rng(11))));
    let inputs = tape.constant(Tensor::zeros(&[0, 8]));
    assert!(matches!(dec.decode_step(&mut tape, &store, memory, inputs), Err(TensorError::Contract(_))));
}

#[test]
fn decode_step_has_model_width() {
    let (dec, store) = decoder(small(), 12);
    let mut tape = Tape::new();
    let memory = tape.constant(to_tensor(&random_mat(6, 8, &mut rng(13))));
    let inputs = tape.constant(to_tensor(&random_mat(3, 8, &mut rng(14))));
    let state = dec.decode_step(&mut tape, &store, memory, inputs).unwrap();
    assert_eq!(tape.shape(state), &[8]);
}

#[test]
fn future_inputs_do_not_change_earlier_states() {
    let (dec, store) = decoder(small(), 15);
    let mut inputs = random_mat(5, 8, &mut rng(16));
    let memory = random_mat(7, 8, &mut rng(17));
    let run = |inputs: &Mat| {
        let mut tape = Tape::new();
        let m = tape.constant(to_tensor(&memory));
        let x = tape.constant(to_tensor(inputs));
        let s = dec.states(&mut tape, &store, m, x).unwrap();
        to_mat(tape.value(s))
    };
    let before = run(&inputs);
    inputs[3] = vec![9.0; 8];
    inputs[4][0] = -4.0;
    let after = run(&inputs);
    assert_eq!(before[..3], after[..3]);
    assert_ne!(before[3], after[3]);
}

#[test]
fn one_step_grad_check() {
    let (dec, mut store) = decoder(small(), 18);
    let memory = to_tensor(&random_mat(6, 8, &mut rng(19)));
    let inputs = to_tensor(&random_mat(3, 8, &mut rng(20)));
    let weights = to_tensor(&vec![random_mat(1, 8, &mut rng(21)).remove(0)]);
    let ids = dec.params();
    let report = grad_check_params::<_, TensorError>(
        &mut store,
        &ids,
        |tape, store| {
            let m = tape.constant(memory.clone());
            let x = tape.constant(inputs.clone());
            let s = dec.decode_step(tape, store, m, x)?;
            let s = tape.reshape(s, vec![1, 8])?;
            let w = tape.constant(weights.clone());
            let p = tape.mul(s, w)?;
            Ok(tape.sum(p))
        },
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(report.passes(1e-3), "{report:?}");
}

#[test]
fn budget_of_one_emits_only_eos() {
    let (dec, store) = decoder(DecoderConfig { max_decode_len: 1, ..small() }, 22);
    let mut tape = Tape::new();
    let memory = tape.constant(to_tensor(&random_mat(6, 8, &mut rng(23))));
    let table = tape.constant(to_tensor(&random_mat(7, 8, &mut rng(24))));
    assert_eq!(dec.generate(&mut tape, &store, memory, table).unwrap(), vec![EOS]);
}

fn tiny_model(seed: u64) -> (AomModel, aom::data::Example) {
    let ex = tiny_example(&mut rng(seed));
    let vocab = aom::data::Vocab::build([std::slice::from_ref(&ex)]);
    (AomModel::new(tiny_config(seed), vocab).unwrap(), ex)
}

#[test]
fn repeated_example_loss_strictly_decreases() {
    let (mut model, ex) = tiny_model(25);
    let lex = synth_lexicon();
    let mut adam = Adam::new(1e-3);
    let mut previous = f64::INFINITY;
    for step in 0..50 {
        let mut tape = Tape::new();
        let loss = model.loss(&mut tape, &ex, &lex).unwrap();
        let value = tape.item(loss);
        assert!(value < previous, "step {step}: {value} after {previous}");
        previous = value;
        tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&mut model.store);
        adam.step(&mut model.store);
    }
}

#[test]
fn memorised_example_is_reproduced() {
    let (mut model, ex) = tiny_model(26);
    let lex = synth_lexicon();
    let gold = encode_target(&ex.gold_triples, ex.n()).unwrap().indices;
    let mut adam = Adam::new(3e-3);
    for _ in 0..150 {
        let mut tape = Tape::new();
        let loss = model.loss(&mut tape, &ex, &lex).unwrap();
        tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&mut model.store);
        adam.step(&mut model.store);
    }
    assert_eq!(model.generate(&ex, &lex).unwrap(), gold);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn constrained_output_always_parses(seed in 0u64..100_000, n in 1usize..9, budget in 1usize..12) {
        let (dec, mut store) = decoder(DecoderConfig { max_decode_len: budget, ..small() }, seed);
        randomize(&mut store, &mut rng(seed ^ 1));
        let mut tape = Tape::new();
        let memory = tape.constant(to_tensor(&random_mat(n + 4, 8, &mut rng(seed ^ 2))));
        let table = tape.constant(to_tensor(&random_mat(n + 4, 8, &mut rng(seed ^ 3))));
        let out = dec.generate(&mut tape, &store, memory, table).unwrap();
        prop_assert!(out.len() <= budget);
        prop_assert_eq!(*out.last().unwrap(), EOS);
        let parsed = decode_target(&out, n);
        prop_assert_eq!(parsed.dropped, 0);
    }
}
