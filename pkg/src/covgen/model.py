"""Attention encoder-decoder with pointer-generator mixing and coverage.

Shapes use ``B`` for batch, ``L`` for source length, ``h`` for hidden size
and ``e`` for embedding size.  The decoder state seen by attention and the
generation switch is the concatenation ``[cell; hidden]`` (width ``2h``);
the output layers see ``[hidden; context]`` (width ``3h``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from covgen import autodiff as ad
from covgen.autodiff import Node, Tape
from covgen.text import UNK_ID, Batch

INIT_SCALE = 0.02
GATES = ("i", "f", "o", "g")


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 256
    emb_dim: int = 128
    vocab_size: int = 50_000
    use_pointer: bool = False
    use_coverage: bool = False
    max_enc: int = 400
    max_dec: int = 100

    def __post_init__(self):
        for name in ("hidden_dim", "emb_dim", "vocab_size", "max_enc", "max_dec"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def attn_dim(self) -> int:
        return 2 * self.hidden_dim

    @property
    def mode(self) -> str:
        if self.use_coverage:
            return "coverage" if self.use_pointer else "baseline+coverage"
        return "pointer" if self.use_pointer else "baseline"

    @classmethod
    def for_mode(cls, mode: str, **kw) -> "ModelConfig":
        flags = {
            "baseline": (False, False),
            "pointer": (True, False),
            "coverage": (True, True),
        }
        if mode not in flags:
            raise ValueError(f"unknown mode {mode!r}")
        p, c = flags[mode]
        return cls(use_pointer=p, use_coverage=c, **kw)


def _lstm_shapes(prefix: str, in_dim: int, h: int) -> dict:
    shapes = {}
    for g in GATES:
        shapes[f"{prefix}.W_{g}"] = (in_dim + h, h)
        shapes[f"{prefix}.b_{g}"] = (h,)
    return shapes


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Every weight tensor, in canonical order.

    Pointer and coverage weights come last so that the shared weights draw
    the same initial values in every mode.
    """
    h, e, V, a = config.hidden_dim, config.emb_dim, config.vocab_size, config.attn_dim
    shapes = {"embedding": (V, e)}
    shapes.update(_lstm_shapes("enc_fw", e, h))
    shapes.update(_lstm_shapes("enc_bw", e, h))
    shapes.update({
        "reduce_c.W": (2 * h, h), "reduce_c.b": (h,),
        "reduce_h.W": (2 * h, h), "reduce_h.b": (h,),
        "input_feed.W": (e + 2 * h, e), "input_feed.b": (e,),
    })
    shapes.update(_lstm_shapes("dec", e, h))
    shapes.update({
        "attn.W_h": (2 * h, a), "attn.W_s": (2 * h, a), "attn.b": (a,), "attn.v": (a,),
        "out.V": (3 * h, h), "out.b": (h,), "out.V2": (h, V), "out.b2": (V,),
    })
    if config.use_pointer:
        shapes.update({"ptr.w_h": (2 * h,), "ptr.w_s": (2 * h,), "ptr.w_x": (e,), "ptr.b": (1,)})
    if config.use_coverage:
        shapes["attn.w_c"] = (a,)
    return shapes


PARAM_GROUPS = {
    "embedding": "embedding",
    "enc_fw": "encoder",
    "enc_bw": "encoder",
    "reduce_c": "state_reduction",
    "reduce_h": "state_reduction",
    "input_feed": "input_feed",
    "dec": "decoder_lstm",
    "attn": "attention",
    "out": "output",
    "ptr": "pointer",
}


def param_group(name: str) -> str:
    if name == "attn.w_c":
        return "coverage"
    return PARAM_GROUPS[name.split(".")[0]]


def count_params(config: ModelConfig) -> tuple[int, dict[str, int]]:
    """Exact parameter total and per-group breakdown."""
    breakdown: dict[str, int] = {}
    for name, shape in param_shapes(config).items():
        g = param_group(name)
        breakdown[g] = breakdown.get(g, 0) + int(np.prod(shape))
    return sum(breakdown.values()), breakdown


def _is_bias(name: str) -> bool:
    leaf = name.split(".")[-1]
    return leaf == "b" or leaf == "b2" or leaf.startswith("b_")


@dataclass(frozen=True)
class ModelParams:
    config: ModelConfig
    arrays: dict[str, np.ndarray] = field(repr=False)

    def on(self, tape: Tape) -> dict[str, Node]:
        return {name: tape.param(name, arr) for name, arr in self.arrays.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "ModelParams":
        return ModelParams(self.config, arrays)

    def with_coverage(self) -> "ModelParams":
        if self.config.use_coverage:
            raise ValueError("parameters already include coverage")
        cfg = replace(self.config, use_coverage=True)
        arrays = dict(self.arrays)
        arrays["attn.w_c"] = np.zeros(cfg.attn_dim)
        return ModelParams(cfg, arrays)

    def check(self) -> None:
        expected = param_shapes(self.config)
        if set(expected) != set(self.arrays):
            missing = set(expected) - set(self.arrays)
            extra = set(self.arrays) - set(expected)
            raise ValueError(f"parameter set mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, shape in expected.items():
            if self.arrays[name].shape != tuple(shape):
                raise ValueError(f"{name}: shape {self.arrays[name].shape} != {shape}")


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Weights uniform in [-0.02, 0.02]; biases and the coverage weight zero."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in param_shapes(config).items():
        if _is_bias(name) or name == "attn.w_c":
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)
    return ModelParams(config, arrays)


# ---------------------------------------------------------------------------
# forward computation
# ---------------------------------------------------------------------------


@dataclass
class EncoderOutput:
    h: Node  # (B, L, 2h)
    feats: Node  # h @ W_h, reused at every decoder step
    mask: np.ndarray  # (B, L)
    init_state: tuple[Node, Node]  # reduced (cell, hidden)


@dataclass
class StepOutput:
    attn: Node
    scores: Node
    context: Node
    vocab_dist: Node
    final_dist: Node
    new_state: tuple[Node, Node]
    p_gen: Optional[Node] = None
    covloss: Optional[Node] = None
    new_coverage: Optional[Node] = None


def lstm_cell(P: dict, prefix: str, x: Node, c: Node, h: Node) -> tuple[Node, Node]:
    xh = ad.concat([x, h], axis=-1)
    i = ad.sigmoid(xh @ P[f"{prefix}.W_i"] + P[f"{prefix}.b_i"])
    f = ad.sigmoid(xh @ P[f"{prefix}.W_f"] + P[f"{prefix}.b_f"])
    o = ad.sigmoid(xh @ P[f"{prefix}.W_o"] + P[f"{prefix}.b_o"])
    g = ad.tanh(xh @ P[f"{prefix}.W_g"] + P[f"{prefix}.b_g"])
    c_new = f * c + i * g
    return c_new, o * ad.tanh(c_new)


def _gate(m: np.ndarray, new: Node, old: Node) -> Node:
    # keep the old state on padded positions
    if m.all():
        return new
    return new * m + old * (1.0 - m)


def encode(P: dict, config: ModelConfig, article_ids, enc_mask) -> EncoderOutput:
    """Bidirectional LSTM over the (padded) source batch."""
    tape = P["embedding"].tape
    ids = np.asarray(article_ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    mask = np.asarray(enc_mask, dtype=np.float64).reshape(ids.shape)
    if not mask.any(axis=1).all():
        raise ValueError("empty source: every position is masked")
    B, L = ids.shape
    hd = config.hidden_dim
    zeros = tape.const(np.zeros((B, hd)))

    xs = [ad.gather_rows(P["embedding"], ids[:, t]) for t in range(L)]
    fw, bw = [None] * L, [None] * L
    c, h = zeros, zeros
    for t in range(L):
        m = mask[:, t : t + 1]
        c_new, h_new = lstm_cell(P, "enc_fw", xs[t], c, h)
        c, h = _gate(m, c_new, c), _gate(m, h_new, h)
        fw[t] = ad.reshape(h, (B, 1, hd))
    c_fw, h_fw = c, h
    c, h = zeros, zeros
    for t in reversed(range(L)):
        m = mask[:, t : t + 1]
        c_new, h_new = lstm_cell(P, "enc_bw", xs[t], c, h)
        c, h = _gate(m, c_new, c), _gate(m, h_new, h)
        bw[t] = ad.reshape(h, (B, 1, hd))
    c_bw, h_bw = c, h

    enc_h = ad.concat([ad.concat(fw, axis=1), ad.concat(bw, axis=1)], axis=2)
    c0 = ad.relu(ad.concat([c_fw, c_bw], axis=-1) @ P["reduce_c.W"] + P["reduce_c.b"])
    h0 = ad.relu(ad.concat([h_fw, h_bw], axis=-1) @ P["reduce_h.W"] + P["reduce_h.b"])
    return EncoderOutput(h=enc_h, feats=enc_h @ P["attn.W_h"], mask=mask, init_state=(c0, h0))


def attention(P: dict, config: ModelConfig, state, enc: EncoderOutput, coverage: Optional[Node] = None):
    """Returns (attention distribution, scores, context vector)."""
    c, h = state
    B = c.shape[0]
    L = enc.mask.shape[1]
    s = ad.concat([c, h], axis=-1)
    dec_feat = ad.reshape(s @ P["attn.W_s"] + P["attn.b"], (B, 1, config.attn_dim))
    pre = enc.feats + dec_feat
    if coverage is not None:
        pre = pre + ad.reshape(coverage, (B, L, 1)) * P["attn.w_c"]
    scores = ad.tanh(pre) @ P["attn.v"]
    attn = ad.masked_softmax(scores, enc.mask > 0)
    context = ad.reduce_sum(ad.reshape(attn, (B, L, 1)) * enc.h, axis=1)
    return attn, scores, context


def decoder_step(P: dict, config: ModelConfig, prev_ids, prev_context: Node, state, enc: EncoderOutput,
                 ext_ids, max_oov: int, coverage: Optional[Node] = None) -> StepOutput:
    """One decoder timestep for a batch of rows."""
    prev_ids = np.asarray(prev_ids, dtype=np.int64).reshape(-1)
    if (prev_ids >= config.vocab_size).any() or (prev_ids < 0).any():
        raise ValueError("decoder input must be in-vocabulary")
    if (coverage is not None) != config.use_coverage:
        raise ValueError("coverage must be given exactly in coverage mode")

    emb = ad.gather_rows(P["embedding"], prev_ids)
    x = ad.concat([emb, prev_context], axis=-1) @ P["input_feed.W"] + P["input_feed.b"]
    c, h = lstm_cell(P, "dec", x, *state)
    attn, scores, context = attention(P, config, (c, h), enc, coverage)

    hidden_out = ad.concat([h, context], axis=-1) @ P["out.V"] + P["out.b"]
    vocab_dist = ad.masked_softmax(hidden_out @ P["out.V2"] + P["out.b2"])

    p_gen = None
    if config.use_pointer:
        s = ad.concat([c, h], axis=-1)
        p_gen = ad.sigmoid(context @ P["ptr.w_h"] + s @ P["ptr.w_s"] + x @ P["ptr.w_x"] + P["ptr.b"])
        final = mix_distributions(p_gen, vocab_dist, attn, ext_ids, max_oov)
    else:
        final = vocab_dist

    covloss = new_cov = None
    if coverage is not None:
        covloss, new_cov = coverage_update(attn, coverage)
    return StepOutput(attn=attn, scores=scores, context=context, vocab_dist=vocab_dist, final_dist=final,
                      new_state=(c, h), p_gen=p_gen, covloss=covloss, new_coverage=new_cov)


def mix_distributions(p_gen: Node, vocab_dist: Node, attn: Node, ext_ids, max_oov: int) -> Node:
    """p_gen * P_vocab (zero on extended slots) + (1 - p_gen) * attention summed per extended id."""
    B, V = vocab_dist.shape
    pg = ad.reshape(p_gen, (B, 1))
    gen = pg * vocab_dist
    if max_oov > 0:
        gen = ad.concat([gen, vocab_dist.tape.const(np.zeros((B, max_oov)))], axis=-1)
    ext = np.asarray(ext_ids, dtype=np.int64)
    ext = np.broadcast_to(ext.reshape(1, -1) if ext.ndim == 1 else ext, attn.shape)
    copy = ad.scatter_add((1.0 - pg) * attn, ext, V + max_oov)
    return gen + copy


def coverage_update(attn: Node, coverage: Node) -> tuple[Node, Node]:
    """(sum_i min(a_i, c_i), c + a)"""
    return ad.reduce_sum(ad.minimum(attn, coverage), axis=1), coverage + attn


def initial_decoder_inputs(tape: Tape, config: ModelConfig, enc: EncoderOutput):
    """Zero context and (when covering) zero coverage for the first step."""
    B, L = enc.mask.shape
    ctx = tape.const(np.zeros((B, config.attn_dim)))
    cov = tape.const(np.zeros((B, L))) if config.use_coverage else None
    return ctx, cov


@dataclass
class LossDiagnostics:
    nll: float
    covloss: float
    pgen_mean: float
    step_nll: np.ndarray  # (B, T)
    step_covloss: Optional[np.ndarray]
    step_pgen: Optional[np.ndarray]
    attn: list = field(default_factory=list, repr=False)


def sequence_loss(P: dict, config: ModelConfig, batch: Batch, lam: float = 1.0):
    """Mean over examples of the per-example mean step loss.

    Each step contributes ``-log P(target)`` plus, in coverage mode,
    ``lam * covloss``.  Padded decoder steps contribute nothing.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    tape = P["embedding"].tape
    enc = encode(P, config, batch.enc_ids, batch.enc_mask)
    state = enc.init_state
    ctx, cov = initial_decoder_inputs(tape, config, enc)
    B, T = batch.dec_inputs.shape
    width = config.vocab_size + (batch.max_oov if config.use_pointer else 0)
    targets = batch.targets
    if not config.use_pointer:
        targets = np.where(targets >= config.vocab_size, UNK_ID, targets)
    lengths = batch.dec_mask.sum(axis=1)
    rows = np.arange(B)

    total = None
    step_nll = np.zeros((B, T))
    step_cov = np.zeros((B, T)) if cov is not None else None
    step_pgen = np.zeros((B, T)) if config.use_pointer else None
    attns = []
    for t in range(T):
        out = decoder_step(P, config, batch.dec_inputs[:, t], ctx, state, enc, batch.enc_ext_ids,
                           batch.max_oov, cov)
        onehot = np.zeros((B, width))
        onehot[rows, targets[:, t]] = 1.0
        p_target = ad.reduce_sum(out.final_dist * onehot, axis=1)
        loss_t = -ad.log(p_target)
        step_nll[:, t] = loss_t.value
        if out.covloss is not None:
            step_cov[:, t] = out.covloss.value
            if lam > 0:
                loss_t = loss_t + out.covloss * lam
        if out.p_gen is not None:
            step_pgen[:, t] = out.p_gen.value
        m = batch.dec_mask[:, t]
        term = loss_t * m if not m.all() else loss_t
        total = term if total is None else total + term
        attns.append(out.attn.value)
        ctx, state, cov = out.context, out.new_state, out.new_coverage
    per_example = total * (1.0 / lengths)
    loss = ad.reduce_sum(per_example) * (1.0 / B)

    mask = batch.dec_mask
    def masked_mean(a):
        return float(((a * mask).sum(axis=1) / lengths).mean())
    diag = LossDiagnostics(
        nll=masked_mean(step_nll),
        covloss=masked_mean(step_cov) if step_cov is not None else 0.0,
        pgen_mean=float((step_pgen * mask).sum() / mask.sum()) if step_pgen is not None else float("nan"),
        step_nll=step_nll,
        step_covloss=step_cov,
        step_pgen=step_pgen,
        attn=attns,
    )
    return loss, diag


def batch_loss(params: ModelParams, batch: Batch, lam: float = 1.0, record: bool = True):
    """Build a fresh tape, run ``sequence_loss``; returns (tape, loss node, diagnostics)."""
    tape = Tape(record=record)
    P = params.on(tape)
    loss, diag = sequence_loss(P, params.config, batch, lam)
    return tape, loss, diag
