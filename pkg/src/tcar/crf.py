"""Linear-chain CRF with SGD training, exact log-space inference and
sequence-level confidence.

One implementation serves the task-type, argument and argument-only models;
callers supply already-featurized sequences (lists of active feature names per
position).  Weights live in two sparse maps: (feature, label) emissions and
(label, label) transitions.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field

from .textfeat import FEATURIZER_VERSION

MODEL_FORMAT = "tcar-crf/1"


class EmptyCorpusError(ValueError):
    pass


class UnknownLabelError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass
class Hyper:
    epochs: int = 50
    learning_rate: float = 0.1
    l2: float = 1e-4
    seed: int = 0


@dataclass
class LabeledSequence:
    labels: list[str]
    confidence: float


@dataclass
class CrfModel:
    labels: list[str]
    emit: dict = field(default_factory=dict)    # (feature, label) -> weight
    trans: dict = field(default_factory=dict)   # (prev, label) -> weight
    featurizer_version: str = FEATURIZER_VERSION
    l2: float = 1e-4
    meta: dict = field(default_factory=dict)

    # -- scoring ---------------------------------------------------------

    def emission_matrix(self, feats: list[list[str]]) -> list[list[float]]:
        emit = self.emit
        rows = []
        for fs in feats:
            row = []
            for y in self.labels:
                s = 0.0
                for f in fs:
                    w = emit.get((f, y))
                    if w is not None:
                        s += w
                row.append(s)
            rows.append(row)
        return rows

    def trans_matrix(self) -> list[list[float]]:
        L = self.labels
        return [[self.trans.get((a, b), 0.0) for b in L] for a in L]

    # -- serialization ---------------------------------------------------

    def to_file(self, path) -> None:
        doc = {
            "format": MODEL_FORMAT,
            "featurizer_version": self.featurizer_version,
            "labels": self.labels,
            "l2": self.l2,
            "meta": self.meta,
            "emit": {f"{f}\t{y}": w for (f, y), w in sorted(self.emit.items())},
            "trans": {f"{a}\t{b}": w for (a, b), w in sorted(self.trans.items())},
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=0)
            fh.write("\n")

    @classmethod
    def from_file(cls, path, expect_featurizer: str | None = FEATURIZER_VERSION):
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != MODEL_FORMAT:
            raise ModelFormatError(f"not a {MODEL_FORMAT} file: {path}")
        if expect_featurizer and doc["featurizer_version"] != expect_featurizer:
            raise ModelFormatError(
                f"model built with featurizer {doc['featurizer_version']!r}, "
                f"expected {expect_featurizer!r}")
        emit = {}
        for key, w in doc["emit"].items():
            f, y = key.split("\t")
            emit[(f, y)] = w
        trans = {}
        for key, w in doc["trans"].items():
            a, b = key.split("\t")
            trans[(a, b)] = w
        return cls(labels=doc["labels"], emit=emit, trans=trans,
                   featurizer_version=doc["featurizer_version"],
                   l2=doc["l2"], meta=doc.get("meta", {}))


def _logsumexp(xs):
    m = max(xs)
    if m == -math.inf:
        return m
    return m + math.log(sum(math.exp(x - m) for x in xs))


def _forward(em, tr):
    """Log-space forward lattice; returns (alpha, logZ)."""
    n, L = len(em), len(em[0])
    alpha = [em[0][:]]
    for i in range(1, n):
        prev = alpha[-1]
        row = []
        for y in range(L):
            row.append(_logsumexp([prev[yp] + tr[yp][y] for yp in range(L)])
                       + em[i][y])
        alpha.append(row)
    return alpha, _logsumexp(alpha[-1])


def _backward(em, tr):
    n, L = len(em), len(em[0])
    beta = [[0.0] * L for _ in range(n)]
    for i in range(n - 2, -1, -1):
        nxt = beta[i + 1]
        for y in range(L):
            beta[i][y] = _logsumexp(
                [tr[y][yn] + em[i + 1][yn] + nxt[yn] for yn in range(L)])
    return beta


def decode(model: CrfModel, feats: list[list[str]]) -> LabeledSequence:
    """Viterbi-optimal labels plus their exact normalized probability."""
    if not feats:
        raise ValueError("empty sequence")
    em = model.emission_matrix(feats)
    tr = model.trans_matrix()
    n, L = len(em), len(model.labels)
    delta = [em[0][:]]
    back = []
    for i in range(1, n):
        prev = delta[-1]
        row, brow = [], []
        for y in range(L):
            best, arg = -math.inf, 0
            for yp in range(L):
                s = prev[yp] + tr[yp][y]
                if s > best:
                    best, arg = s, yp
            row.append(best + em[i][y])
            brow.append(arg)
        delta.append(row)
        back.append(brow)
    best_y = max(range(L), key=lambda y: (delta[-1][y], -y))
    path = [best_y]
    for brow in reversed(back):
        path.append(brow[path[-1]])
    path.reverse()
    _, logz = _forward(em, tr)
    conf = math.exp(delta[-1][best_y] - logz)
    return LabeledSequence(labels=[model.labels[y] for y in path],
                           confidence=min(conf, 1.0))


def sequence_probability(model: CrfModel, feats: list[list[str]],
                         labels: list[str]) -> float:
    """Exact P(labels | sequence) via the forward normalizer."""
    if len(labels) != len(feats):
        raise ValueError("labels/sequence length mismatch")
    idx = {}
    for i, y in enumerate(model.labels):
        idx[y] = i
    try:
        ys = [idx[y] for y in labels]
    except KeyError as e:
        raise UnknownLabelError(f"label {e.args[0]!r} not in alphabet") from None
    em = model.emission_matrix(feats)
    tr = model.trans_matrix()
    score = em[0][ys[0]]
    for i in range(1, len(ys)):
        score += tr[ys[i - 1]][ys[i]] + em[i][ys[i]]
    _, logz = _forward(em, tr)
    return math.exp(score - logz)


def _sequence_gradient(model, feats, labels, idx):
    """(negative log-likelihood, sparse gradient of the NLL) for one sequence.

    Gradient keys are ("e", feature, label) and ("t", prev, label).
    """
    ys = [idx[y] for y in labels]
    em = model.emission_matrix(feats)
    tr = model.trans_matrix()
    n, L = len(em), len(model.labels)
    alpha, logz = _forward(em, tr)
    beta = _backward(em, tr)
    labset = model.labels

    score = em[0][ys[0]]
    for i in range(1, n):
        score += tr[ys[i - 1]][ys[i]] + em[i][ys[i]]
    nll = logz - score

    grad = {}
    # expected - observed (gradient of the NLL)
    for i in range(n):
        ai, bi = alpha[i], beta[i]
        for y in range(L):
            p = math.exp(ai[y] + bi[y] - logz)
            if y == ys[i]:
                p -= 1.0
            if p != 0.0:
                lab = labset[y]
                for f in feats[i]:
                    k = ("e", f, lab)
                    grad[k] = grad.get(k, 0.0) + p
    for i in range(1, n):
        ap, bi, emi = alpha[i - 1], beta[i], em[i]
        for yp in range(L):
            base = ap[yp] - logz
            row = tr[yp]
            for y in range(L):
                p = math.exp(base + row[y] + emi[y] + bi[y])
                if yp == ys[i - 1] and y == ys[i]:
                    p -= 1.0
                if p != 0.0:
                    k = ("t", labset[yp], labset[y])
                    grad[k] = grad.get(k, 0.0) + p
    return nll, grad


def objective(model: CrfModel, corpus, l2: float):
    """Full-batch regularized NLL and its gradient over (feature keys).

    Used for gradient checking and loss monitoring; training itself is
    stochastic.
    """
    idx = {y: i for i, y in enumerate(model.labels)}
    total = 0.0
    grad = {}
    for feats, labels in corpus:
        nll, g = _sequence_gradient(model, feats, labels, idx)
        total += nll
        for k, v in g.items():
            grad[k] = grad.get(k, 0.0) + v
    for (f, y), w in model.emit.items():
        total += 0.5 * l2 * w * w
        k = ("e", f, y)
        grad[k] = grad.get(k, 0.0) + l2 * w
    for (a, b), w in model.trans.items():
        total += 0.5 * l2 * w * w
        k = ("t", a, b)
        grad[k] = grad.get(k, 0.0) + l2 * w
    return total, grad


def train(corpus, labels: list[str], hyper: Hyper | None = None,
          featurizer_version: str = FEATURIZER_VERSION,
          monitor=None) -> CrfModel:
    """SGD training with 1/sqrt(t) step decay and L2 via weight scaling.

    corpus: list of (features_per_position, gold_labels).  Deterministic for
    a fixed seed: per-epoch shuffling uses its own Random instance and weight
    maps are only ever iterated in insertion or sorted order.
    """
    hyper = hyper or Hyper()
    if not corpus:
        raise EmptyCorpusError("training corpus is empty")
    labset = set(labels)
    for feats, gold in corpus:
        if not feats:
            raise EmptyCorpusError("empty sequence in corpus")
        for y in gold:
            if y not in labset:
                raise UnknownLabelError(f"gold label {y!r} not in alphabet")

    model = CrfModel(labels=list(labels), l2=hyper.l2,
                     featurizer_version=featurizer_version,
                     meta={"epochs": hyper.epochs, "seed": hyper.seed,
                           "learning_rate": hyper.learning_rate})
    idx = {y: i for i, y in enumerate(model.labels)}
    rng = random.Random(hyper.seed)
    order = list(range(len(corpus)))

    # All weights are stored as scale * raw; L2 decay multiplies the scale so
    # the per-step cost stays proportional to the sparse gradient.
    scale = 1.0
    t = 0
    for epoch in range(hyper.epochs):
        rng.shuffle(order)
        epoch_nll = 0.0
        for si in order:
            feats, gold = corpus[si]
            t += 1
            lr = hyper.learning_rate / math.sqrt(t)
            nll, grad = _sequence_gradient(model, feats, gold, idx)
            epoch_nll += nll
            decay = 1.0 - lr * hyper.l2
            scale *= decay
            if scale < 1e-6:
                _materialize(model, scale)
                scale = 1.0
            for (kind, a, b), g in grad.items():
                store = model.emit if kind == "e" else model.trans
                key = (a, b)
                store[key] = store.get(key, 0.0) - (lr * g) / scale
        if monitor:
            monitor(epoch, epoch_nll)
    _materialize(model, scale)
    return model


def _materialize(model, scale):
    if scale == 1.0:
        return
    for k in model.emit:
        model.emit[k] *= scale
    for k in model.trans:
        model.trans[k] *= scale


def enumerate_probabilities(model: CrfModel, feats: list[list[str]]):
    """Brute-force distribution over all label sequences (test oracle)."""
    from itertools import product
    em = model.emission_matrix(feats)
    tr = model.trans_matrix()
    n, L = len(em), len(model.labels)
    scores = {}
    for combo in product(range(L), repeat=n):
        s = em[0][combo[0]]
        for i in range(1, n):
            s += tr[combo[i - 1]][combo[i]] + em[i][combo[i]]
        scores[combo] = s
    logz = _logsumexp(list(scores.values()))
    return {tuple(model.labels[y] for y in c): math.exp(s - logz)
            for c, s in scores.items()}
