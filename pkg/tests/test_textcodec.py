import numpy as np
import pytest
from hypothesis import given, strategies as st

from atvc.rules import enumerate_queries
from atvc.scenes import sample_scene
from atvc.textcodec import (
    CanonicalAnswer,
    OOVError,
    Vocabulary,
    answers_equal,
    canonicalize_answer,
    explanation_score,
    normalize,
)


@pytest.fixture(scope="module")
def vocab():
    return Vocabulary.default()


def test_no_problem_encodes_to_five_tokens(vocab):
    ids = vocab.encode("No problem.", max_len=8)
    nonpad = [i for i in ids if i != vocab.pad_id]
    assert len(nonpad) == 5  # [SOS] no problem . [EOS]


def test_round_trip_on_generated_text(vocab):
    for seed in range(60):
        scene = sample_scene(seed)
        for rec in enumerate_queries(scene, np.random.default_rng(seed)):
            for text in (rec.question_text, rec.answer_text):
                ids = vocab.encode(text, max_len=64)
                assert vocab.decode(ids) == normalize(text)


def test_oov_failure_names_word(vocab):
    with pytest.raises(OOVError, match="banana"):
        vocab.encode("Please put the banana on top.")


def test_overflow_rejected(vocab):
    with pytest.raises(ValueError, match="max_len"):
        vocab.encode("no problem.", max_len=3)


def test_vocabulary_save_load_stable(tmp_path, vocab):
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    loaded = Vocabulary.load(path)
    assert loaded.tokens == vocab.tokens
    assert (loaded.pad_id, loaded.sos_id, loaded.eos_id, loaded.sepa_id) == (
        vocab.pad_id,
        vocab.sos_id,
        vocab.eos_id,
        vocab.sepa_id,
    )
    assert loaded.pad_id == 0


# -- canonicalization ------------------------------------------------------------


def test_conjunct_order_is_irrelevant():
    a = canonicalize_answer(
        "This action cannot be done. Because there is no kiwi and no bottle."
    )
    b = canonicalize_answer(
        "This action cannot be done. Because there is no bottle and no kiwi."
    )
    assert a == b
    assert a.missing == frozenset({"kiwi", "bottle"})


def test_no_problem_parses_to_can():
    assert canonicalize_answer("No problem.") == CanonicalAnswer("can")


def test_forbidden_phrase_parses_reason():
    out = canonicalize_answer(
        "This action is forbidden. Because you cannot put the sphere under an object."
    )
    assert out.answer_type == "forbidden"
    assert out.missing == frozenset()
    assert out.forbidden_reason == "sphere_under"


def test_forbidden_with_absences():
    out = canonicalize_answer(
        "This action is forbidden. Because you cannot put an object on top of the "
        "sphere, and there is no small gray metal sphere and no large red rubber cube."
    )
    assert out.forbidden_reason == "on_top_of_sphere"
    assert out.missing == frozenset(
        {"small gray metal sphere", "large red rubber cube"}
    )


def test_garbage_is_invalid_but_total():
    assert canonicalize_answer("").answer_type == "invalid"
    assert canonicalize_answer("qwerty . 123").answer_type == "invalid"
    assert canonicalize_answer("the sphere is problematic").answer_type == "invalid"


@given(st.permutations(["kiwi", "bottle", "large red rubber cube"]))
def test_canonicalization_congruent_under_permutation(order):
    clauses = " and ".join(f"no {c}" for c in order)
    out = canonicalize_answer(f"This action cannot be done. Because there is {clauses}.")
    assert out.missing == frozenset({"kiwi", "bottle", "large red rubber cube"})


# -- explanation score -----------------------------------------------------------


def _cannot(*missing):
    return CanonicalAnswer("cannot", frozenset(missing))


def test_identical_sets_score_one():
    assert explanation_score(_cannot("a", "b"), _cannot("a", "b")) == 1.0
    assert explanation_score(CanonicalAnswer("can"), CanonicalAnswer("can")) == 1.0


def test_partial_overlap_is_jaccard():
    assert explanation_score(_cannot("kiwi", "bottle"), _cannot("bottle")) == 0.5


def test_disjoint_sets_score_zero():
    assert explanation_score(_cannot("a"), _cannot("b")) == 0.0


def test_reason_mismatch_scores_zero():
    f1 = CanonicalAnswer("forbidden", frozenset({"x"}), "sphere_under")
    f2 = CanonicalAnswer("forbidden", frozenset({"x"}), "on_top_of_sphere")
    assert explanation_score(f1, f2) == 0.0
    assert explanation_score(f1, f1) == 1.0


@given(
    st.sets(st.sampled_from("abcdef"), max_size=4),
    st.sets(st.sampled_from("abcdef"), max_size=4),
)
def test_score_symmetric_and_one_iff_equal(xs, ys):
    p, g = _cannot(*xs), _cannot(*ys)
    assert explanation_score(p, g) == explanation_score(g, p)
    assert (explanation_score(p, g) == 1.0) == (xs == ys)


def test_answers_equal_is_exact():
    assert answers_equal(_cannot("a"), _cannot("a"))
    assert not answers_equal(_cannot("a"), _cannot("a", "b"))
    assert not answers_equal(CanonicalAnswer("can"), _cannot("a"))
