"""Expression encoding and the step-wise constituent analyzer.

An expression is embedded, run through a bidirectional LSTM, and then
an analyzer RNN emits one soft word distribution per reasoning step,
each picking out the sub-phrase that matters at that step.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, VocabularyError

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

L_MAX_DEFAULT = 20


class Vocabulary:
    """Bijective token <-> id map with reserved padding/unknown slots."""

    def __init__(self, tokens=()):
        self._tokens = [PAD_TOKEN, UNK_TOKEN]
        self._index = {PAD_TOKEN: 0, UNK_TOKEN: 1}
        for tok in tokens:
            self.add(tok)

    @classmethod
    def from_corpus(cls, token_lists):
        """Build from token lists; sorted insertion keeps ids stable."""
        seen = set()
        for toks in token_lists:
            seen.update(toks)
        return cls(sorted(seen))

    @classmethod
    def from_list(cls, ordered_tokens):
        """Rebuild from a serialized ordered token list."""
        if ordered_tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise VocabularyError("serialized vocabulary missing reserved tokens")
        vocab = cls()
        for tok in ordered_tokens[2:]:
            vocab.add(tok)
        return vocab

    def add(self, token):
        if token not in self._index:
            self._index[token] = len(self._tokens)
            self._tokens.append(token)
        return self._index[token]

    def encode(self, words):
        unk = self._index[UNK_TOKEN]
        return [self._index.get(w, unk) for w in words]

    def token_of(self, idx):
        return self._tokens[idx]

    def to_list(self):
        return list(self._tokens)

    def __contains__(self, token):
        return token in self._index

    def __len__(self):
        return len(self._tokens)


@dataclass
class Expression:
    """Token-id sequence; length bounded by construction."""

    tokens: list
    l_max: int = L_MAX_DEFAULT

    def __post_init__(self):
        n = len(self.tokens)
        if n < 1:
            raise ContractError("expression must contain at least one token")
        if n > self.l_max:
            raise ContractError(f"expression length {n} exceeds limit {self.l_max}")

    def __len__(self):
        return len(self.tokens)


@dataclass
class EncodedExpression:
    F: object   # L x D_emb word embeddings
    H: object   # L x 2*D_h contextual vectors, forward||backward
    q: object   # 2*D_h expression vector


@dataclass
class ReasoningProgram:
    """T soft word distributions and their summary vectors."""

    R: list = field(default_factory=list)
    Y: list = field(default_factory=list)

    @property
    def steps(self):
        return len(self.R)


def _run_lstm(zx, w_h, hidden, order):
    # zx already holds the input projection plus bias, one row per token
    h = T.Tensor(np.zeros(hidden))
    c = T.Tensor(np.zeros(hidden))
    states = {}
    for idx in order:
        z = T.add(T.row(zx, idx), T.matmul(h, w_h))
        h, c = T.lstm_cell(z, c)
        states[idx] = h
    return states, h


def encode_expression(expr, params):
    """Embed, then encode with a bidirectional LSTM.

    Row l of H concatenates the forward state at l with the backward
    state at l; q concatenates the two final states.
    """
    ids = list(expr.tokens)
    if not ids:
        raise ContractError("cannot encode an empty expression")
    embed = params["embed.table"]
    vocab_size = embed.shape[0]
    for tok in ids:
        if not 0 <= tok < vocab_size:
            raise VocabularyError(
                f"token id {tok} out of range for vocabulary of {vocab_size}")
    hidden = params["lstm.fwd.w_h"].shape[0]

    f = T.gather_rows(embed, np.asarray(ids, dtype=np.int64))
    zx_f = T.add(T.matmul(f, params["lstm.fwd.w_x"]), params["lstm.fwd.b"])
    zx_b = T.add(T.matmul(f, params["lstm.bwd.w_x"]), params["lstm.bwd.b"])

    length = len(ids)
    fwd, fwd_final = _run_lstm(zx_f, params["lstm.fwd.w_h"], hidden,
                               range(length))
    bwd, bwd_final = _run_lstm(zx_b, params["lstm.bwd.w_h"], hidden,
                               range(length - 1, -1, -1))

    h_rows = [T.concat([fwd[l], bwd[l]]) for l in range(length)]
    h_mat = T.stack_rows(h_rows)
    q = T.concat([fwd_final, bwd_final])
    return EncodedExpression(F=f, H=h_mat, q=q)


def analyzer_step(q, y_prev, h_mat, t, params):
    """One analyzer step: a word distribution and its summary vector.

    The step projection (w, b) is per-step; everything downstream of it
    is shared across steps.
    """
    key = f"analyzer.step{t}.w"
    if key not in params:
        raise ContractError(f"analyzer step {t} out of configured range")
    q_t = T.add(T.matmul(q, params[key]), params[f"analyzer.step{t}.b"])
    u = T.concat([q_t, y_prev])
    s = T.relu(T.add(T.matmul(u, params["analyzer.w_u"]), params["analyzer.b_u"]))
    # logit per word: w_s2 . tanh(W_s0 s + W_s1 h_l)
    base = T.matmul(s, params["analyzer.w_s0"])
    per_word = T.matmul(h_mat, params["analyzer.w_s1"])
    logits = T.matmul(T.tanh(T.add(per_word, base)), params["analyzer.w_s2"])
    r_t = T.softmax(logits)
    y_t = T.matmul(r_t, h_mat)
    return r_t, y_t


def run_analyzer(enc, steps, params):
    """Chain analyzer steps, threading the summary vector through."""
    if steps < 1:
        raise ContractError(f"analyzer needs at least one step, got {steps}")
    program = ReasoningProgram()
    y = params["analyzer.y0"]
    for t in range(1, steps + 1):
        r_t, y = analyzer_step(enc.q, y, enc.H, t, params)
        program.R.append(r_t)
        program.Y.append(y)
    return program
