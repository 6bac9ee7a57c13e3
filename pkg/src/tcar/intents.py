"""Utterance-level intent classification.

Multinomial logistic regression over lowercased word {1,2}-gram counts,
trained by SGD.  Six intents gate every dialogue transition; utterances with
no known n-gram at all fall back to wh_general with a uniform distribution,
which downstream treats as "cannot answer".
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field
from importlib import resources

INTENTS = [
    "welcome_greetings",
    "question_on_self",
    "wh_general",
    "instruction",
    "question_own_location",
    "bye_greetings",
]

MODEL_FORMAT = "tcar-intent/1"

_WORD_RE = re.compile(r"[a-z']+|\d+")


class InsufficientExamplesError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass
class IntentHyper:
    epochs: int = 30
    learning_rate: float = 0.5
    l2: float = 1e-4
    seed: int = 0


def ngram_features(utterance: str, orders=(1, 2)) -> dict[str, float]:
    words = _WORD_RE.findall(utterance.lower())
    feats: dict[str, float] = {}
    for n in orders:
        for i in range(len(words) - n + 1):
            key = f"{n}g:" + " ".join(words[i:i + n])
            feats[key] = feats.get(key, 0.0) + 1.0
    return feats


@dataclass
class IntentModel:
    intents: list[str]
    weights: dict = field(default_factory=dict)   # (feature, intent) -> w
    bias: dict = field(default_factory=dict)      # intent -> w
    orders: tuple = (1, 2)
    meta: dict = field(default_factory=dict)

    def distribution(self, utterance: str) -> dict[str, float]:
        feats = ngram_features(utterance, self.orders)
        active = {f: v for f, v in feats.items()
                  if any((f, y) in self.weights for y in self.intents)}
        if not active:
            u = 1.0 / len(self.intents)
            return {y: u for y in self.intents}
        scores = []
        for y in self.intents:
            s = self.bias.get(y, 0.0)
            for f, v in feats.items():
                w = self.weights.get((f, y))
                if w is not None:
                    s += w * v
            scores.append(s)
        m = max(scores)
        exps = [math.exp(s - m) for s in scores]
        z = sum(exps)
        return {y: e / z for y, e in zip(self.intents, exps)}

    def classify(self, utterance: str):
        """(argmax intent, full distribution); ties break by alphabet order."""
        if not utterance.strip():
            raise ValueError("blank utterance")
        dist = self.distribution(utterance)
        best = max(sorted(dist), key=lambda y: dist[y])
        return best, dist

    def to_file(self, path) -> None:
        doc = {
            "format": MODEL_FORMAT,
            "intents": self.intents,
            "orders": list(self.orders),
            "bias": self.bias,
            "weights": {f"{f}\t{y}": w
                        for (f, y), w in sorted(self.weights.items())},
            "meta": self.meta,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=0)
            fh.write("\n")

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != MODEL_FORMAT:
            raise ModelFormatError(f"not a {MODEL_FORMAT} file: {path}")
        weights = {}
        for key, w in doc["weights"].items():
            f, y = key.split("\t")
            weights[(f, y)] = w
        return cls(intents=doc["intents"], weights=weights, bias=doc["bias"],
                   orders=tuple(doc["orders"]), meta=doc.get("meta", {}))


def train_intents(corpus, hyper: IntentHyper | None = None,
                  intents=INTENTS) -> IntentModel:
    """corpus: list of (utterance, intent). Every intent needs >=3 examples."""
    hyper = hyper or IntentHyper()
    counts = {y: 0 for y in intents}
    for _, y in corpus:
        if y not in counts:
            raise ValueError(f"unknown intent {y!r}")
        counts[y] += 1
    for y, c in counts.items():
        if c < 3:
            raise InsufficientExamplesError(
                f"intent {y!r} has only {c} training examples (need >= 3)")

    model = IntentModel(intents=list(intents),
                        meta={"epochs": hyper.epochs, "seed": hyper.seed})
    featurized = [(ngram_features(x, model.orders), y) for x, y in corpus]
    rng = random.Random(hyper.seed)
    order = list(range(len(featurized)))
    t = 0
    for _ in range(hyper.epochs):
        rng.shuffle(order)
        for si in order:
            feats, gold = featurized[si]
            t += 1
            lr = hyper.learning_rate / math.sqrt(t)
            scores = []
            for y in model.intents:
                s = model.bias.get(y, 0.0)
                for f, v in feats.items():
                    w = model.weights.get((f, y))
                    if w is not None:
                        s += w * v
                scores.append(s)
            m = max(scores)
            exps = [math.exp(s - m) for s in scores]
            z = sum(exps)
            for yi, y in enumerate(model.intents):
                p = exps[yi] / z
                g = p - (1.0 if y == gold else 0.0)
                if g == 0.0:
                    continue
                model.bias[y] = model.bias.get(y, 0.0) - lr * g
                for f, v in feats.items():
                    k = (f, y)
                    w = model.weights.get(k, 0.0)
                    model.weights[k] = w - lr * (g * v + hyper.l2 * w)
    return model


def load_seed_corpus():
    """The bundled starter corpus (20 utterances per intent)."""
    text = resources.files("tcar.data").joinpath("intents.tsv").read_text()
    corpus = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        intent, utterance = line.split("\t")
        corpus.append((utterance, intent))
    return corpus
