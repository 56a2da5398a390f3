"""Finite-difference check of the full unrolled loss at tiny dimensions."""

from __future__ import annotations

import numpy as np

from covgen.gradients import grad_check
from covgen.model import ModelConfig, init_params, sequence_loss
from covgen.text import Vocabulary, collate, encode_example

TINY = dict(hidden_dim=4, emb_dim=3, vocab_size=9)


def tiny_batch():
    """Source length 5 with one OOV word; two decoder steps."""
    vocab = Vocabulary(["a", "b", "c", "d", "."])
    assert vocab.size == TINY["vocab_size"]
    ex = encode_example("a zz b c .".split(), "zz c".split(), vocab, max_dec=2)
    assert len(ex.article_oovs) == 1 and len(ex.dec_input_ids) == 2
    return vocab, collate([ex])


def model_grad_check(mode: str, seed: int = 0, lam: float = 1.0, epsilon: float = 1e-5) -> float:
    """Max relative gradient error over every parameter for ``mode``.

    Weights are drawn at a larger scale than the training init so that
    every nonlinearity operates away from its linear regime.
    """
    config = ModelConfig.for_mode(mode, **TINY)
    _, batch = tiny_batch()
    rng = np.random.default_rng(seed)
    point = {k: rng.normal(0.0, 0.5, v.shape) for k, v in init_params(config, seed).arrays.items()}

    def f(tape, P):
        return sequence_loss(P, config, batch, lam)[0]

    return grad_check(f, point, epsilon)
