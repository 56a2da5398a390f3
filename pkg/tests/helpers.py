"""Shared builders for randomized model cases."""

import numpy as np

from covgen.autodiff import Tape
from covgen.model import ModelConfig, ModelParams, encode, init_params, initial_decoder_inputs
from covgen.text import START_ID, Vocabulary, collate, encode_example

MODES = ("baseline", "pointer", "coverage")


def random_case(rng, mode, scale=None):
    """Random small config, weights and example.  Returns (params, vocab, example)."""
    h = int(rng.integers(1, 5))
    e = int(rng.integers(1, 4))
    words = [f"t{i}" for i in range(int(rng.integers(2, 7)))]
    vocab = Vocabulary(words)
    cfg = ModelConfig.for_mode(mode, hidden_dim=h, emb_dim=e, vocab_size=vocab.size)
    params = init_params(cfg, int(rng.integers(0, 2**31)))
    s = scale if scale is not None else float(rng.choice([0.02, 0.5, 2.0]))
    params = params.with_arrays({k: rng.normal(0.0, s, v.shape) for k, v in params.arrays.items()})
    pool = words + ["oovA", "oovB", "oovC"]
    L = int(rng.integers(1, 9))
    article = [str(w) for w in rng.choice(pool, size=L)]
    abstract = [str(w) for w in rng.choice(pool + ["absent"], size=int(rng.integers(0, 5)))]
    return params, vocab, encode_example(article, abstract, vocab)


def run_steps(params, example, n_steps, rng=None):
    """Teacher-free unroll with random in-vocabulary inputs; yields StepOutputs."""
    from covgen.model import decoder_step

    rng = rng or np.random.default_rng(0)
    cfg = params.config
    tape = Tape(record=False)
    P = params.on(tape)
    batch = collate([example])
    enc = encode(P, cfg, batch.enc_ids, batch.enc_mask)
    ctx, cov = initial_decoder_inputs(tape, cfg, enc)
    state = enc.init_state
    prev = START_ID
    outs = []
    for _ in range(n_steps):
        out = decoder_step(P, cfg, [prev], ctx, state, enc, batch.enc_ext_ids,
                           batch.max_oov if cfg.use_pointer else 0, cov)
        outs.append(out)
        ctx, state, cov = out.context, out.new_state, out.new_coverage
        prev = int(rng.integers(0, cfg.vocab_size))
    return outs


def pinned_pgen(params: ModelParams, value: float) -> ModelParams:
    """Zero the switch weights and saturate its bias so p_gen is exactly 0 or 1."""
    arrays = dict(params.arrays)
    for k in ("ptr.w_h", "ptr.w_s", "ptr.w_x"):
        arrays[k] = np.zeros_like(arrays[k])
    arrays["ptr.b"] = np.array([50.0 if value == 1 else -50.0])
    return params.with_arrays(arrays)


def synthetic_examples(kind, count, seed, lexicon, oov_rate=0.0, cap=None, max_dec=100):
    """Generate a synthetic corpus and encode it against its own vocabulary."""
    from covgen.synthetic import SyntheticSpec, gen_synthetic
    from covgen.text import build_vocab, corpus_tokens, encode_records

    records = gen_synthetic(SyntheticSpec(kind, count, seed=seed, vocab_size=lexicon, oov_rate=oov_rate))
    vocab = build_vocab(corpus_tokens(records), cap or lexicon + 5)
    return records, vocab, encode_records(records, vocab, max_dec=max_dec)
