"""Deterministic linguistic featurizer: tokenization, lemmas, POS tags and
window features for the sequence models.

The tagger is a closed-class lexicon plus suffix rules; the lemmatizer is an
exception table plus regular inflection stripping.  The goal is stable feature
names, not linguistic perfection: downstream dialogue confirms uncertain
interpretations anyway.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

# Bumped whenever tokenization, tagging or feature naming changes in a way
# that invalidates trained models.
FEATURIZER_VERSION = "tf-1"

POS_TAGS = ("NOUN", "VERB", "ADJ", "ADV", "PRON", "DET", "ADP", "NUM", "CONJ",
            "PART", "OTHER")

BOS = "<BOS>"
EOS = "<EOS>"

_TOKEN_RE = re.compile(r"[A-Za-z]+(?:'[A-Za-z]+)?|\d+|[^\w\s]")


class EmptyUtteranceError(ValueError):
    pass


@dataclass
class Token:
    surface: str
    index: int
    lemma: str = ""
    pos: str = ""
    shape: str = ""


def _load_lexicon():
    lemmas, tags = {}, {}
    text = resources.files("tcar.data").joinpath("lexicon.tsv").read_text()
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        surface, lemma, pos = line.split("\t")
        lemmas[surface] = lemma
        tags[surface] = pos
    return lemmas, tags


_LEMMAS, _TAGS = _load_lexicon()
_VERB_LEMMAS = {l for s, l in _LEMMAS.items() if _TAGS[s] == "VERB"}


def tokenize(utterance: str) -> list[Token]:
    """Split an utterance into tokens, separating punctuation."""
    if not utterance or not utterance.strip():
        raise EmptyUtteranceError("utterance is blank")
    parts = _TOKEN_RE.findall(utterance)
    return [Token(surface=p, index=i) for i, p in enumerate(parts)]


def _shape(surface: str) -> str:
    if surface.isdigit():
        return "d"
    if not surface[0].isalpha():
        return "p"
    if surface.isupper():
        return "X"
    if surface[0].isupper():
        return "Xx"
    return "x"


def _lemma(word: str) -> str:
    if word in _LEMMAS:
        return _LEMMAS[word]
    if len(word) > 4 and word.endswith("ies"):
        return word[:-3] + "y"
    if len(word) > 4 and (word.endswith("xes") or word.endswith("ches")
                          or word.endswith("shes") or word.endswith("sses")):
        return word[:-2]
    if len(word) > 3 and word.endswith("s") and not word.endswith("ss"):
        return word[:-1]
    if len(word) > 5 and word.endswith("ing"):
        return word[:-3]
    if len(word) > 4 and word.endswith("ed"):
        return word[:-2]
    return word


def _fallback_pos(word: str) -> str:
    if word.isdigit():
        return "NUM"
    if word.endswith("ly"):
        return "ADV"
    if word.endswith("ful") or word.endswith("ous") or word.endswith("ive"):
        return "ADJ"
    return "NOUN"


_ADJECTIVES = {"red", "blue", "green", "big", "small", "nice", "old", "new",
               "little", "large", "tall", "short", "white", "black", "wooden"}


def analyze(tokens: list[Token]) -> list[Token]:
    """Fill lemma, pos and shape in place; returns the same list.

    Imperative heuristic: a sentence-initial word, or a word right after a
    conjunction, whose lemma is in the verb lexicon is tagged VERB even if
    the lexicon would otherwise be silent on it.
    """
    for i, tok in enumerate(tokens):
        word = tok.surface.lower()
        tok.shape = _shape(tok.surface)
        tok.lemma = _lemma(word) if word else ""
        if not tok.surface[0].isalnum():
            tok.pos = "OTHER"
        elif word in _TAGS:
            tok.pos = _TAGS[word]
        elif word in _ADJECTIVES:
            tok.pos = "ADJ"
        else:
            tok.pos = _fallback_pos(word)
        imperative_slot = i == 0 or (i > 0 and tokens[i - 1].pos == "CONJ")
        if imperative_slot and tok.lemma in _VERB_LEMMAS:
            tok.pos = "VERB"
    return tokens


def featurize(tokens: list[Token], position: int, window: int = 2) -> list[str]:
    """Feature names active for one position of an analyzed sentence.

    Window features use explicit BOS/EOS placeholders at the boundaries so
    the feature alphabet is identical regardless of sentence length.
    """
    n = len(tokens)
    if position < 0 or position >= n:
        raise IndexError(f"position {position} out of range for {n} tokens")
    if window < 0:
        raise ValueError("window must be >= 0")

    def lem(i):
        if i < 0:
            return BOS
        if i >= n:
            return EOS
        return tokens[i].lemma

    def pos_(i):
        if i < 0:
            return BOS
        if i >= n:
            return EOS
        return tokens[i].pos

    def shp(i):
        if i < 0:
            return BOS
        if i >= n:
            return EOS
        return tokens[i].shape

    feats = []
    for off in range(-window, window + 1):
        i = position + off
        feats.append(f"w[{off}]={lem(i)}")
        feats.append(f"p[{off}]={pos_(i)}")
        feats.append(f"sh[{off}]={shp(i)}")
    feats.append(f"bg[-1]={lem(position - 1)}|{lem(position)}")
    feats.append(f"bg[+1]={lem(position)}|{lem(position + 1)}")
    if position == 0:
        feats.append("first")
    if position == n - 1:
        feats.append("last")
    # Nearest preceding verb stands in for syntactic relations.  Distance is
    # bucketed coarsely on purpose: exact distances would leak argument
    # positions that a real dependency parse would not.
    pv = None
    pvd = 0
    for j in range(position - 1, -1, -1):
        if tokens[j].pos == "VERB":
            pv = tokens[j].lemma
            pvd = position - j
            break
    if pv is not None:
        feats.append(f"pv={pv}")
        feats.append("pvd=1" if pvd == 1 else "pvd=2+")
    else:
        feats.append("pv=<none>")
    return feats


def featurize_sequence(tokens: list[Token], window: int = 2) -> list[list[str]]:
    return [featurize(tokens, i, window) for i in range(len(tokens))]


def analyze_utterance(utterance: str) -> list[Token]:
    """tokenize + analyze in one call."""
    return analyze(tokenize(utterance))
