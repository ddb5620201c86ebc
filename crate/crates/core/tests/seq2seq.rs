use seqadv::autodiff::{log_softmax_rows, Tape};
use seqadv::data::{
    generate_synthetic, SyntheticConfig, SyntheticRule, TokenId, TokenSequence, BOS, EOS, NUM_RESERVED, UNK,
};
use seqadv::nn::AdamConfig;
use seqadv::seq2seq::{
    reconstruction_accuracy, train_seq2seq, BeamResult, EmbeddedState, MaskOp, MaskerSet, Seq2Seq, Seq2SeqConfig,
};

fn toy_config() -> Seq2SeqConfig {
    Seq2SeqConfig {
        d_emb: 16,
        d_hidden: 32,
        epochs: 25,
        batch_size: 8,
        optimizer: AdamConfig {
            lr: 5e-3,
            ..AdamConfig::default()
        },
        ..Seq2SeqConfig::default()
    }
}

fn toy_data() -> (seqadv::data::Vocabulary, Vec<TokenSequence>, Vec<TokenSequence>) {
    // 12 vocabulary entries: 8 reserved + 4 regular tokens.
    let data = generate_synthetic(&SyntheticConfig {
        vocab_size: 4,
        min_len: 3,
        max_len: 7,
        rule: SyntheticRule::Parity { token: 0 },
        n_train: 200,
        n_test: 50,
        seed: 11,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let train = data.train.iter().map(|e| e.sequence.clone()).collect();
    let test = data.test.iter().map(|e| e.sequence.clone()).collect();
    (data.vocab, train, test)
}

#[test]
fn toy_copy_task_reconstructs_held_out() {
    let (vocab, train, test) = toy_data();
    assert_eq!(vocab.len(), 12);
    let untrained = Seq2Seq::<f64>::new(toy_config(), &vocab);
    let m = MaskerSet::all();
    let before = untrained.clean_loss(&train[..50], &m);
    let model = train_seq2seq::<f64>(&train, &vocab, toy_config()).unwrap();
    assert!(model.history.iter().all(|l| l.is_finite()));
    let after = model.clean_loss(&train[..50], &m);
    assert!(after < before, "loss {before} -> {after}");

    let stats = reconstruction_accuracy(&model, &test, &m, 5);
    assert!(stats.token_accuracy >= 0.9, "token accuracy {}", stats.token_accuracy);
    assert!(stats.exact_match >= 0.9, "identity reconstruction {}", stats.exact_match);

    // Decoding properties on the trained model.
    for x in &test {
        let z = model.encode(x, &m);
        let len = 2 * x.len();
        let b1 = model.decode(&z, 1, len);
        let b5 = model.decode(&z, 5, len);
        assert!(b5.hypotheses[0].log_prob >= b1.hypotheses[0].log_prob - 1e-12);
        check_beam(&model, &z, &b5);
        assert_eq!(b1.hypotheses[0].sequence, greedy(&model, &z, len));
    }
}

fn check_beam(model: &Seq2Seq<f64>, z: &EmbeddedState<f64>, beam: &BeamResult) {
    assert!(beam.hypotheses.len() <= beam.beam);
    for w in beam.hypotheses.windows(2) {
        assert!(w[0].log_prob >= w[1].log_prob);
    }
    for h in &beam.hypotheses {
        let rescored = model.score(z, h.sequence.ids(), h.terminated);
        assert!((rescored - h.log_prob).abs() < 1e-9, "{rescored} vs {}", h.log_prob);
    }
}

/// Independent greedy decoder written against the step API.
fn greedy(model: &Seq2Seq<f64>, z: &EmbeddedState<f64>, max_len: usize) -> TokenSequence {
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let zv = tape.borrowed(z.matrix());
    let dc = model.decoder_context(&mut tape, &p, zv);
    let (mut state, mut context) = (dc.initial_state(), dc.initial_context());
    let mut out: Vec<TokenId> = Vec::new();
    let mut prev = BOS;
    for step in 0..max_len {
        let (s, c, l) = model.decoder_step(&mut tape, &p, &dc, &[prev], state, context);
        let lp = log_softmax_rows(tape.value(l));
        let mut best: Option<(TokenId, f64)> = None;
        for v in 0..model.vocab_size() {
            let t = v as TokenId;
            let ok = if t == EOS { step > 0 } else { t == UNK || v >= NUM_RESERVED };
            if ok && best.map_or(true, |(_, b)| lp[[0, v]] > b) {
                best = Some((t, lp[[0, v]]));
            }
        }
        let (t, _) = best.unwrap();
        if t == EOS {
            break;
        }
        out.push(t);
        prev = t;
        state = s;
        context = c;
    }
    TokenSequence::new(out).unwrap()
}

#[test]
fn encode_shape_determinism_and_sensitivity() {
    let (vocab, _, _) = toy_data();
    let cfg = Seq2SeqConfig {
        d_hidden: 32,
        ..toy_config()
    };
    let model = Seq2Seq::<f64>::new(cfg, &vocab);
    let x = TokenSequence::new(vec![8, 9, 10, 11, 8]).unwrap();
    let m = MaskerSet::all();
    let z = model.encode(&x, &m);
    assert_eq!((z.rows(), z.width()), (7, 64));
    assert!(z.is_finite());
    assert_eq!(z, model.encode(&x, &m));
    let y = TokenSequence::new(vec![8, 9, 11, 11, 8]).unwrap();
    assert!(z.distance(&model.encode(&y, &m)) > 0.0);
    // control tokens condition the encoding
    assert!(z.distance(&model.encode(&x, &MaskerSet::single(MaskOp::Add))) > 0.0);
    // unknown ids are treated as UNK
    let big = TokenSequence::new(vec![8, 999]).unwrap();
    let unk = TokenSequence::new(vec![8, 3]).unwrap();
    assert_eq!(model.encode(&big, &m), model.encode(&unk, &m));
}

#[test]
fn untrained_beam_is_consistent() {
    let (vocab, train, _) = toy_data();
    let model = Seq2Seq::<f64>::new(toy_config(), &vocab);
    let m = MaskerSet::all();
    for x in train.iter().take(10) {
        let z = model.encode(x, &m);
        let b = model.decode(&z, 4, 2 * x.len());
        check_beam(&model, &z, &b);
        for h in &b.hypotheses {
            assert!(h.terminated || h.sequence.len() == 2 * x.len());
        }
        assert_eq!(b, model.decode(&z, 4, 2 * x.len()));
    }
}
