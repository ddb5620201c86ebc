use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BeamResult, EmbeddedState, Hypothesis, MaskerSet};
use crate::autodiff::{log_softmax_rows, Tape, Var};
use crate::data::{control_token_id, TokenId, TokenSequence, Vocabulary, BOS, EOS, NUM_RESERVED, PAD, UNK};
use crate::nn::{AdamConfig, BiGru, Bound, GruCell, Linear, ParamId, ParamSet};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seq2SeqConfig {
    pub d_emb: usize,
    pub d_hidden: usize,
    /// Stacked bi-directional encoder layers.
    pub layers: usize,
    pub beam: usize,
    /// Decoding stops after `max_len_factor * |x|` tokens.
    pub max_len_factor: usize,
    pub corruption_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Maskers sampled uniformly per training example.
    pub train_maskers: Vec<MaskerSet>,
    pub seed: u64,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        Self {
            d_emb: 64,
            d_hidden: 128,
            layers: 1,
            beam: 5,
            max_len_factor: 2,
            corruption_rate: 0.15,
            epochs: 10,
            batch_size: 16,
            optimizer: AdamConfig::default(),
            train_maskers: MaskerSet::training_default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Layout {
    embedding: ParamId,
    encoder: Vec<BiGru>,
    init: Linear,
    attention: ParamId,
    cell: GruCell,
    output: Linear,
}

/// Encoder/decoder pair: bi-directional GRU encoder, GRU decoder with
/// bilinear attention over the encoder states and input feeding.
#[derive(Debug, Clone)]
pub struct Seq2Seq<T: Scalar> {
    config: Seq2SeqConfig,
    vocab_size: usize,
    vocab_hash: String,
    params: ParamSet<T>,
    layout: Layout,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
}

/// Decoder quantities derived once per embedded state.
pub struct DecoderContext {
    z: Var,
    keys_t: Var,
    init_state: Var,
    init_context: Var,
}

impl DecoderContext {
    pub fn initial_state(&self) -> Var {
        self.init_state
    }

    pub fn initial_context(&self) -> Var {
        self.init_context
    }
}

impl<T: Scalar> Seq2Seq<T> {
    /// Randomly initialised model.
    pub fn new(config: Seq2SeqConfig, vocab: &Vocabulary) -> Self {
        Self::build(config, vocab.len(), vocab.hash())
    }

    pub(crate) fn build(config: Seq2SeqConfig, v: usize, vocab_hash: String) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let (e, h) = (config.d_emb, config.d_hidden);
        let embedding = params.add_uniform("embedding", (v, e), 0.5, &mut rng);
        let mut encoder = Vec::new();
        let mut input = e;
        for l in 0..config.layers.max(1) {
            let layer = BiGru::new(&mut params, &format!("encoder.{l}"), input, h, &mut rng);
            input = layer.output_width();
            encoder.push(layer);
        }
        let d = input;
        let init = Linear::new(&mut params, "decoder.init", d, h, &mut rng);
        let attention = params.add_uniform("decoder.attention", (d, h), 1.0 / (d as f64).sqrt(), &mut rng);
        let cell = GruCell::new(&mut params, "decoder.cell", e + d, h, &mut rng);
        let output = Linear::new(&mut params, "decoder.output", h + d, v, &mut rng);
        Self {
            config,
            vocab_size: v,
            vocab_hash,
            params,
            layout: Layout {
                embedding,
                encoder,
                init,
                attention,
                cell,
                output,
            },
            history: Vec::new(),
        }
    }

    pub fn config(&self) -> &Seq2SeqConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Width `d` of each encoder state row.
    pub fn state_width(&self) -> usize {
        self.layout.encoder.last().map(BiGru::output_width).unwrap_or(0)
    }

    fn clamp_id(&self, id: TokenId) -> TokenId {
        if (id as usize) < self.vocab_size {
            id
        } else {
            UNK
        }
    }

    /// Encoder states for `[BOS] x [EOS]` on a tape. The masker's control
    /// tokens are prepended to the encoder input; their rows are dropped
    /// from the returned state.
    pub fn encode_on_tape(&self, tape: &mut Tape<'_, T>, p: &Bound, x: &[TokenId], m: &MaskerSet) -> Var {
        let n_ctrl = m.ops().len();
        let ids: Vec<usize> = m
            .ops()
            .iter()
            .map(|&op| control_token_id(op))
            .chain(std::iter::once(BOS))
            .chain(x.iter().map(|&t| self.clamp_id(t)))
            .chain(std::iter::once(EOS))
            .map(|t| t as usize)
            .collect();
        let mut h = tape.gather_rows(p.get(self.layout.embedding), &ids);
        for layer in &self.layout.encoder {
            h = layer.run(tape, p, h);
        }
        let keep: Vec<usize> = (n_ctrl..ids.len()).collect();
        tape.gather_rows(h, &keep)
    }

    pub fn encode(&self, x: &TokenSequence, m: &MaskerSet) -> EmbeddedState<T> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let z = self.encode_on_tape(&mut tape, &p, x.ids(), m);
        EmbeddedState::new(tape.value(z).clone())
    }

    pub fn decoder_context(&self, tape: &mut Tape<'_, T>, p: &Bound, z: Var) -> DecoderContext {
        let pooled = tape.mean_rows(z);
        let init = self.layout.init.forward(tape, p, pooled);
        let init_state = tape.tanh(init);
        let keys = tape.matmul(z, p.get(self.layout.attention));
        let keys_t = tape.transpose(keys);
        DecoderContext {
            z,
            keys_t,
            init_state,
            init_context: pooled,
        }
    }

    /// One decoder step for `k` parallel hypotheses. Returns the new state,
    /// the attention context and the `k x V` logits.
    pub fn decoder_step(
        &self,
        tape: &mut Tape<'_, T>,
        p: &Bound,
        ctx: &DecoderContext,
        prev: &[TokenId],
        state: Var,
        context: Var,
    ) -> (Var, Var, Var) {
        let prev: Vec<usize> = prev.iter().map(|&t| self.clamp_id(t) as usize).collect();
        let emb = tape.gather_rows(p.get(self.layout.embedding), &prev);
        let input = tape.concat_cols(&[emb, context]);
        let state = self.layout.cell.step(tape, p, input, state);
        let scores = tape.matmul(state, ctx.keys_t);
        let weights = tape.softmax(scores);
        let context = tape.matmul(weights, ctx.z);
        let features = tape.concat_cols(&[state, context]);
        let logits = self.layout.output.forward(tape, p, features);
        (state, context, logits)
    }

    /// Teacher-forced mean token cross-entropy of reconstructing `target`
    /// (plus `EOS`) from the encoding of `input` under masker `m`.
    pub fn reconstruction_loss(
        &self,
        tape: &mut Tape<'_, T>,
        p: &Bound,
        input: &[TokenId],
        m: &MaskerSet,
        target: &[TokenId],
    ) -> Var {
        let z = self.encode_on_tape(tape, p, input, m);
        self.teacher_forced_loss(tape, p, z, target)
    }

    pub fn teacher_forced_loss(&self, tape: &mut Tape<'_, T>, p: &Bound, z: Var, target: &[TokenId]) -> Var {
        let dc = self.decoder_context(tape, p, z);
        let mut state = dc.init_state;
        let mut context = dc.init_context;
        let mut prev = BOS;
        let mut logits = Vec::with_capacity(target.len() + 1);
        let targets: Vec<usize> = target
            .iter()
            .map(|&t| self.clamp_id(t) as usize)
            .chain(std::iter::once(EOS as usize))
            .collect();
        for &t in &targets {
            let (s, c, l) = self.decoder_step(tape, p, &dc, &[prev], state, context);
            state = s;
            context = c;
            logits.push(l);
            prev = t as TokenId;
        }
        let all = tape.concat_rows(&logits);
        tape.nll(all, &targets)
    }

    /// Total log-probability of emitting `tokens` from `z`, followed by
    /// `EOS` when `terminated`.
    pub fn score(&self, z: &EmbeddedState<T>, tokens: &[TokenId], terminated: bool) -> f64 {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let zv = tape.borrowed(z.matrix());
        let dc = self.decoder_context(&mut tape, &p, zv);
        let mut state = dc.init_state;
        let mut context = dc.init_context;
        let mut prev = BOS;
        let mut total = 0.0;
        let steps = tokens.iter().copied().chain(terminated.then_some(EOS));
        for t in steps {
            let (s, c, l) = self.decoder_step(&mut tape, &p, &dc, &[prev], state, context);
            let lp = log_softmax_rows(tape.value(l));
            total += lp[[0, t as usize]].as_f64();
            state = s;
            context = c;
            prev = t;
        }
        total
    }

    fn allowed(&self, token: usize, step: usize) -> bool {
        let t = token as TokenId;
        if t == EOS {
            return step > 0;
        }
        t == UNK || (t != PAD && t != BOS && token >= NUM_RESERVED)
    }

    /// Length-bounded beam search. Hypotheses are never empty: `EOS` is
    /// not allowed as the first token, and framing/control tokens are never
    /// emitted. No length normalisation is applied.
    pub fn decode(&self, z: &EmbeddedState<T>, beam: usize, max_len: usize) -> BeamResult {
        let beam = beam.max(1);
        let max_len = max_len.max(1);
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let zv = tape.borrowed(z.matrix());
        let dc = self.decoder_context(&mut tape, &p, zv);

        struct Alive {
            tokens: Vec<TokenId>,
            log_prob: f64,
        }
        let mut alive = vec![Alive {
            tokens: Vec::new(),
            log_prob: 0.0,
        }];
        let mut state = dc.init_state;
        let mut context = dc.init_context;
        let mut finished: Vec<Hypothesis> = Vec::new();

        for step in 0..max_len {
            let prev: Vec<TokenId> = alive.iter().map(|a| *a.tokens.last().unwrap_or(&BOS)).collect();
            let (s, c, l) = self.decoder_step(&mut tape, &p, &dc, &prev, state, context);
            let lp = log_softmax_rows(tape.value(l));
            // (score, parent, token)
            let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(alive.len() * self.vocab_size);
            for (i, a) in alive.iter().enumerate() {
                for v in 0..self.vocab_size {
                    if self.allowed(v, step) {
                        cands.push((a.log_prob + lp[[i, v]].as_f64(), i, v));
                    }
                }
            }
            cands.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
            cands.truncate(beam);

            let mut next = Vec::new();
            let mut parents = Vec::new();
            for &(score, parent, v) in &cands {
                if v as TokenId == EOS {
                    finished.push(Hypothesis {
                        sequence: TokenSequence::new(alive[parent].tokens.clone())
                            .expect("EOS is never the first token"),
                        log_prob: score,
                        terminated: true,
                    });
                } else {
                    let mut tokens = alive[parent].tokens.clone();
                    tokens.push(v as TokenId);
                    next.push(Alive { tokens, log_prob: score });
                    parents.push(parent);
                }
            }
            if finished.len() >= beam {
                // Extending the survivors can only lower their scores.
                alive = Vec::new();
                break;
            }
            if next.is_empty() {
                alive = next;
                break;
            }
            state = tape.gather_rows(s, &parents);
            context = tape.gather_rows(c, &parents);
            alive = next;
        }
        for a in alive {
            finished.push(Hypothesis {
                sequence: TokenSequence::new(a.tokens).expect("alive hypotheses are non-empty"),
                log_prob: a.log_prob,
                terminated: false,
            });
        }
        finished.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
        finished.truncate(beam);
        BeamResult {
            hypotheses: finished,
            beam,
        }
    }

    /// Top beam hypothesis with the configured beam width and length bound.
    pub fn reconstruct(&self, z: &EmbeddedState<T>, beam: usize) -> TokenSequence {
        let max_len = self.config.max_len_factor.max(1) * z.sequence_len().max(1);
        self.decode(z, beam, max_len).top().clone()
    }
}
