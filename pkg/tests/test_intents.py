import pytest

from tcar.intents import (INTENTS, InsufficientExamplesError, IntentModel,
                          ModelFormatError, ngram_features, load_seed_corpus,
                          train_intents)


@pytest.fixture(scope="module")
def model():
    return train_intents(load_seed_corpus())


def test_ngram_features_counts():
    feats = ngram_features("go go home")
    assert feats["1g:go"] == 2.0
    assert feats["2g:go home"] == 1.0
    assert feats["2g:go go"] == 1.0


def test_seed_corpus_covers_all_intents():
    corpus = load_seed_corpus()
    counts = {}
    for _, intent in corpus:
        counts[intent] = counts.get(intent, 0) + 1
    assert set(counts) == set(INTENTS)
    assert all(c >= 20 for c in counts.values())


@pytest.mark.parametrize("utterance,expected", [
    ("hello there", "welcome_greetings"),
    ("hi", "welcome_greetings"),
    ("bring me the pen", "instruction"),
    ("take the mug to the kitchen", "instruction"),
    ("where are you", "question_own_location"),
    ("what can you do", "question_on_self"),
    ("goodbye", "bye_greetings"),
    ("bye", "bye_greetings"),
])
def test_seed_model_classifies_core_phrases(model, utterance, expected):
    intent, dist = model.classify(utterance)
    assert intent == expected
    assert sum(dist.values()) == pytest.approx(1.0)


def test_unknown_words_fall_back_to_uniform(model):
    dist = model.distribution("zzz qqq xyzzy")
    values = set(round(p, 12) for p in dist.values())
    assert values == {round(1.0 / len(INTENTS), 12)}


def test_classify_rejects_blank(model):
    with pytest.raises(ValueError):
        model.classify("   ")


def test_insufficient_examples_rejected():
    corpus = [("hi", "welcome_greetings")] * 3
    corpus += [("go", "instruction")] * 3
    # remaining intents starved
    with pytest.raises(InsufficientExamplesError):
        train_intents(corpus)


def test_unknown_intent_rejected():
    with pytest.raises(ValueError):
        train_intents([("hi", "nonsense")] * 3)


def test_model_round_trip(tmp_path, model):
    model.to_file(tmp_path / "intent.model")
    back = IntentModel.from_file(tmp_path / "intent.model")
    for utt in ("hello", "bring me the pen", "where are you"):
        assert back.classify(utt) == model.classify(utt)


def test_model_format_check(tmp_path):
    (tmp_path / "x.model").write_text('{"format": "nope"}')
    with pytest.raises(ModelFormatError):
        IntentModel.from_file(tmp_path / "x.model")


def test_training_determinism():
    corpus = load_seed_corpus()
    a = train_intents(corpus)
    b = train_intents(corpus)
    assert a.weights == b.weights and a.bias == b.bias
