use rand::Rng;

use super::*;
use crate::annotate::SAMPLING_PROMPT;
use crate::nn::gradcheck::{all_coordinates, check_gradients, max_rel_error};
use crate::nn::{Params, Tape};
use crate::seed::rng;
use crate::vocab::{Vocab, VocabularyConfig};
use crate::world::{generate_corpus, render_gold_caption, SceneLimits};

pub(crate) fn tiny_vocab() -> Vocab {
    Vocab::new(VocabularyConfig {
        nouns: vec!["dog".into(), "cat".into()],
        attributes: vec!["red".into()],
        predicates: vec!["on".into()],
        ..Default::default()
    })
    .unwrap()
}

pub(crate) fn tiny_config() -> PolicyConfig {
    PolicyConfig {
        embed_dim: 1,
        mem_window: 1,
        mem_dim: 2,
        pos_dim: 2,
        hidden: 2,
        heads: 1,
        max_response_len: 16,
        max_context_len: 32,
    }
}

pub(crate) fn randomize(params: &mut Params, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for e in &mut params.entries {
        for x in &mut e.tensor.data {
            *x = r.random_range(-scale..scale);
        }
    }
}

fn small_policy(v: &Vocab, seed: u64) -> Policy {
    let config = PolicyConfig {
        embed_dim: 8,
        mem_window: 4,
        mem_dim: 8,
        pos_dim: 4,
        hidden: 12,
        heads: 2,
        max_response_len: 40,
        max_context_len: 96,
    };
    let mut p = Policy::new(config, v, seed).unwrap();
    randomize(&mut p.params, seed + 100, 0.5);
    p
}

#[test]
fn parameter_count_matches_closed_form() {
    let v = Vocab::new(VocabularyConfig::default()).unwrap();
    let c = PolicyConfig::default();
    let p = Policy::new(c, &v, 0).unwrap();
    assert_eq!(p.param_count(), c.param_count(v.len()));
    assert!(p.param_count() <= model::PARAM_BUDGET);
    let t = tiny_vocab();
    let p = Policy::new(tiny_config(), &t, 0).unwrap();
    assert_eq!(p.param_count(), tiny_config().param_count(t.len()));
}

#[test]
fn config_validation() {
    let bad = PolicyConfig {
        heads: 5,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    let bad = PolicyConfig {
        pos_dim: 3,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn untrained_policy_is_uniform() {
    let v = Vocab::new(VocabularyConfig::default()).unwrap();
    let p = Policy::new(PolicyConfig::default(), &v, 0).unwrap();
    let ctx = context_ids(SAMPLING_PROMPT, "dog red - ,", &v);
    let actions = v.encode("there is a dog .");
    for row in next_token_distributions(&p, &ctx, &actions).unwrap() {
        for x in row {
            assert!((x - 1.0 / v.len() as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn distributions_are_normalized() {
    let v = Vocab::new(VocabularyConfig::default()).unwrap();
    let p = small_policy(&v, 4);
    let ctx = context_ids(SAMPLING_PROMPT, "dog red - , cat - - , dog on cat ;", &v);
    let actions = v.encode("there is a red dog . the dog is on the cat .");
    for row in next_token_distributions(&p, &ctx, &actions).unwrap() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn sampling_is_seeded_and_batch_independent() {
    let v = Vocab::new(VocabularyConfig::default()).unwrap();
    let p = small_policy(&v, 1);
    let scenes = generate_corpus(5, 4, &v, &SceneLimits::default()).unwrap();
    let obs: Vec<String> = scenes.iter().map(|s| s.observation()).collect();
    let requests: Vec<SampleRequest<'_>> = obs
        .iter()
        .enumerate()
        .map(|(i, o)| SampleRequest {
            prompt: SAMPLING_PROMPT,
            observation: o,
            seed: row_seed(9, i),
        })
        .collect();
    let a = sample_batch(&p, &v, &requests, 1.0, None).unwrap();
    let b = sample_batch(&p, &v, &requests, 1.0, None).unwrap();
    assert_eq!(a, b);
    for (i, r) in requests.iter().enumerate() {
        let single = sample_response(&p, &v, r.observation, r.prompt, 1.0, r.seed).unwrap();
        assert_eq!(single, a[i]);
    }
    let other = sample_response(&p, &v, &obs[0], SAMPLING_PROMPT, 1.0, 12345).unwrap();
    assert_ne!(other.1.actions, a[0].1.actions);
}

#[test]
fn greedy_decoding_ignores_the_seed() {
    let v = Vocab::new(VocabularyConfig::default()).unwrap();
    let p = small_policy(&v, 2);
    let o = "dog red - , cat - - ,";
    let a = sample_response(&p, &v, o, SAMPLING_PROMPT, 0.0, 1).unwrap();
    let b = sample_response(&p, &v, o, SAMPLING_PROMPT, 0.0, 2).unwrap();
    assert_eq!(a, b);
}

#[test]
fn rescoring_reproduces_sampling_bit_for_bit() {
    let v = Vocab::new(VocabularyConfig::default()).unwrap();
    let p = small_policy(&v, 3);
    let scenes = generate_corpus(6, 5, &v, &SceneLimits::default()).unwrap();
    let obs: Vec<String> = scenes.iter().map(|s| s.observation()).collect();
    let requests: Vec<SampleRequest<'_>> = obs
        .iter()
        .enumerate()
        .map(|(i, o)| SampleRequest {
            prompt: SAMPLING_PROMPT,
            observation: o,
            seed: i as u64,
        })
        .collect();
    let out = sample_batch(&p, &v, &requests, 1.0, None).unwrap();
    let items: Vec<(&[u32], &[u32])> = out
        .iter()
        .map(|(_, t)| (t.context(), t.actions.as_slice()))
        .collect();
    let scored = evaluate_logprobs_values(&p, &items).unwrap();
    for ((_, t), s) in out.iter().zip(&scored) {
        assert_eq!(t.logprobs, s.logprobs);
        assert_eq!(t.values, s.values);
        t.validate().unwrap();
    }
}

#[test]
fn length_cap_ends_without_eos() {
    let v = Vocab::new(VocabularyConfig::default()).unwrap();
    let mut p = small_policy(&v, 5);
    // Forbid EOS so every row runs to the cap.
    let eos = v.eos() as usize;
    let tb = p.params.id("tok_b").unwrap();
    p.params.get_mut(tb).data[eos] = -1e9;
    let o = "dog red - ,";
    let reqs = [SampleRequest {
        prompt: SAMPLING_PROMPT,
        observation: o,
        seed: 0,
    }];
    let (text, t) = sample_batch(&p, &v, &reqs, 1.0, Some(5)).unwrap().remove(0);
    assert_eq!(t.len(), 5);
    assert_eq!(t.terminal, Terminal::LengthCap);
    assert!(!t.actions.contains(&v.eos()));
    assert_eq!(text.split_whitespace().count(), 5);
    assert_eq!(t.stream.response.len(), 5);
}

#[test]
fn overlong_context_is_rejected() {
    let v = Vocab::new(VocabularyConfig::default()).unwrap();
    let p = Policy::new(tiny_config(), &tiny_vocab(), 0);
    let p = p.unwrap();
    assert!(p.check_vocab(&v).is_err());
    let t = tiny_vocab();
    let long = vec!["dog - - ,"; 20].join(" ");
    let err = sample_response(&p, &t, &long, SAMPLING_PROMPT, 1.0, 0).unwrap_err();
    assert!(matches!(err, crate::Error::Truncation { .. }), "{err}");
}

#[test]
fn summed_logprob_gradient_matches_finite_differences() {
    let v = tiny_vocab();
    let mut p = Policy::new(tiny_config(), &v, 3).unwrap();
    assert!(p.param_count() <= 200, "{}", p.param_count());
    randomize(&mut p.params, 17, 0.9);
    let ctx = context_ids(SAMPLING_PROMPT, "dog red - , cat - - ,", &v);
    let a1 = v.encode("there is a red dog .");
    let a2 = v.encode("the cat is on");
    let items: Vec<(&[u32], &[u32])> = vec![(&ctx, &a1), (&ctx, &a2)];
    let total = |policy: &Policy, tape: &mut Tape<'_>| {
        let forced = policy.teacher_force(tape, &items).unwrap();
        let mut acc = None;
        for s in &forced.steps {
            let x = tape.sum(s.logp);
            acc = Some(acc.map_or(x, |a| tape.add(a, x)));
        }
        acc.unwrap()
    };
    let loss_at = |params: &Params| {
        let mut q = p.clone();
        q.params = params.clone();
        let mut t = Tape::new(&q.params);
        let l = total(&q, &mut t);
        t.value(l).item()
    };
    let mut tape = Tape::new(&p.params);
    let l = total(&p, &mut tape);
    let grads = tape.backward(l);
    let probes: Vec<_> = all_coordinates(&p.params)
        .into_iter()
        .filter(|(id, _)| !p.is_value_head(*id))
        .collect();
    let results = check_gradients(&p.params, &grads, &probes, 1e-4, loss_at);
    let worst = max_rel_error(&results);
    assert!(worst < 1e-3, "max relative error {worst}");
}

#[test]
fn sft_starts_at_log_vocab_and_learns() {
    let v = Vocab::new(VocabularyConfig::default()).unwrap();
    let scenes = generate_corpus(2, 40, &v, &SceneLimits::default()).unwrap();
    let examples: Vec<SftExample> = scenes
        .iter()
        .map(|s| SftExample {
            observation: s.observation(),
            target: render_gold_caption(s),
        })
        .collect();
    let config = PolicyConfig {
        hidden: 16,
        mem_dim: 8,
        heads: 2,
        ..Default::default()
    };
    let p = Policy::new(config, &v, 0).unwrap();
    let sft = SftConfig {
        epochs: 6,
        batch_size: 8,
        lr: 1e-2,
        val_fraction: 0.0,
        ..Default::default()
    };
    let (trained, report) = sft_train(p, &examples, &v, &sft).unwrap();
    assert!((report.initial_ce - (v.len() as f64).ln()).abs() < 1e-9);
    let last = report.epochs.last().unwrap();
    assert!(last.val_ce < report.initial_ce - 1.0, "{report:?}");
    assert!(trained.training_config_hash.is_some());
    let vi = trained.params.id("val_w").unwrap();
    assert!(trained.params.get(vi).data.iter().all(|&x| x == 0.0));
}

#[test]
fn checkpoint_round_trip() {
    let v = Vocab::new(VocabularyConfig::default()).unwrap();
    let p = small_policy(&v, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    p.to_checkpoint().save(&path).unwrap();
    let q = Policy::from_checkpoint(crate::checkpoint::Checkpoint::load(&path, Some(POLICY_KIND)).unwrap(), &v)
        .unwrap();
    assert_eq!(p.params, q.params);
    assert_eq!(p.checkpoint_id().unwrap(), q.checkpoint_id().unwrap());
    assert!(Policy::from_checkpoint(p.to_checkpoint(), &tiny_vocab()).is_err());
}
