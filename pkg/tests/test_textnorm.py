import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sieve.textnorm import (
    PhraseList,
    default_phrase_list,
    load_phrase_list,
    mask_medium_phrases,
    normalize_whitespace,
)

from reference import reference_mask

# Vocabulary chosen so random strings collide with phrase words constantly.
VOCAB = ("a", "an", "photo", "of", "image", "picture", "cat", "snow", "red", "mat")

TRICKY = PhraseList(("photo of", "a photo of", "image of", "picture showing", "a"))


def both(text: str, phrases: PhraseList) -> tuple[str, str]:
    return mask_medium_phrases(text, phrases), reference_mask(text, phrases.phrases)


class TestFrozenExamples:
    def test_default_list_removes_article_with_phrase(self):
        # Oracle-verified: the article variant "a photo of" outranks "photo of".
        assert mask_medium_phrases("a photo of a cat on a mat") == "a cat on a mat"
        assert reference_mask(
            "a photo of a cat on a mat", default_phrase_list().phrases
        ) == "a cat on a mat"

    def test_bare_list_leaves_article_behind(self):
        engine, oracle = both("a photo of a cat on a mat", PhraseList(("photo of",)))
        assert engine == oracle == "a a cat on a mat"

    def test_case_insensitive_repeated_occurrences(self):
        engine, oracle = both("An IMAGE OF an image of snow", PhraseList(("image of",)))
        assert engine == oracle == "An an snow"

    def test_phrase_free_text_is_identity(self):
        assert mask_medium_phrases("red tulips in bloom") == "red tulips in bloom"

    def test_empty_text(self):
        assert mask_medium_phrases("") == ""

    def test_whitespace_collapses(self):
        assert mask_medium_phrases("  red \t cat \n") == "red cat"

    def test_deletion_joins_neighbours_into_new_match(self):
        engine, oracle = both("photo photo of of cat", PhraseList(("photo of",)))
        assert engine == oracle == "cat"

    def test_longest_phrase_wins_at_a_position(self):
        engine, oracle = both("a photo of cat", PhraseList(("a photo of", "photo of")))
        assert engine == oracle == "cat"

    def test_punctuation_binds_to_tokens(self):
        # "of," is a different whitespace token than "of", so no match.
        engine, oracle = both("photo of, cat", PhraseList(("photo of",)))
        assert engine == oracle == "photo of, cat"

    def test_whole_text_can_vanish(self):
        engine, oracle = both("A Photo Of", PhraseList(("a photo of",)))
        assert engine == oracle == ""


class TestPhraseList:
    def test_default_contains_paper_phrases(self):
        phrases = default_phrase_list()
        assert "photo of" in phrases
        assert "picture of" in phrases
        assert "image of" in phrases
        assert "cat" not in phrases

    def test_article_variant_precedes_bare_phrase(self):
        ordered = default_phrase_list().phrases
        assert ordered.index("a photo of") < ordered.index("photo of")
        assert ordered.index("an image of") < ordered.index("image of")

    def test_normalizes_and_dedupes(self):
        assert PhraseList(("Photo  OF", "photo of", " ", "")).phrases == ("photo of",)

    def test_sorted_longest_token_count_first(self):
        ordered = PhraseList(("of", "photo of", "a photo of")).phrases
        assert ordered == ("a photo of", "photo of", "of")

    def test_load_from_file(self, tmp_text):
        path = tmp_text(
            "phrases.txt",
            "# medium phrases\nphoto of\n  image of  # trailing note\n\npicture of\n",
        )
        loaded = load_phrase_list(path)
        assert set(loaded.phrases) == {"image of", "photo of", "picture of"}
        assert loaded.phrases[0] == "picture of"  # longest first


class TestNormalizeWhitespace:
    def test_collapses_and_trims(self):
        assert normalize_whitespace(" a\t b\nc ") == "a b c"

    def test_empty(self):
        assert normalize_whitespace("  \t ") == ""


def text_strategy(max_tokens: int = 12):
    token = st.sampled_from(VOCAB).flatmap(
        lambda t: st.sampled_from([t, t.upper(), t.capitalize()])
    )
    separator = st.sampled_from([" ", "  ", "\t"])
    return st.lists(st.tuples(token, separator), max_size=max_tokens).map(
        lambda pairs: "".join(tok + sep for tok, sep in pairs)
    )


class TestProperties:
    @given(text=text_strategy())
    @settings(max_examples=300)
    def test_agrees_with_reference_on_default_list(self, text):
        phrases = default_phrase_list()
        assert mask_medium_phrases(text, phrases) == reference_mask(text, phrases.phrases)

    @given(text=text_strategy())
    @settings(max_examples=300)
    def test_agrees_with_reference_on_tricky_list(self, text):
        assert mask_medium_phrases(text, TRICKY) == reference_mask(text, TRICKY.phrases)

    @given(text=text_strategy())
    @settings(max_examples=200)
    def test_idempotent(self, text):
        once = mask_medium_phrases(text, TRICKY)
        assert mask_medium_phrases(once, TRICKY) == once

    @given(text=text_strategy())
    @settings(max_examples=200)
    def test_never_expands(self, text):
        assert len(mask_medium_phrases(text, TRICKY)) <= len(normalize_whitespace(text))

    @given(text=text_strategy())
    @settings(max_examples=200)
    def test_output_contains_no_listed_phrase(self, text):
        masked = mask_medium_phrases(text, TRICKY).lower().split()
        for phrase in TRICKY.phrases:
            tokens = phrase.split()
            for start in range(len(masked) - len(tokens) + 1):
                assert masked[start : start + len(tokens)] != tokens

    @given(text=st.text(max_size=60))
    @settings(max_examples=200)
    def test_total_on_arbitrary_text(self, text):
        masked = mask_medium_phrases(text)
        assert masked == normalize_whitespace(masked)


@pytest.mark.parametrize("phrases", [default_phrase_list(), TRICKY])
def test_exhaustive_small_vocabulary(phrases):
    # Every token string up to length 5 over a vocabulary dense in phrase
    # words; the regex oracle must agree on all of them.
    vocab = ("a", "photo", "of", "cat")
    stack = [""]
    strings = []
    for _ in range(5):
        stack = [f"{prefix} {token}".strip() for prefix in stack for token in vocab]
        strings.extend(stack)
    assert len(strings) == 4 + 16 + 64 + 256 + 1024
    for text in strings:
        assert mask_medium_phrases(text, phrases) == reference_mask(text, phrases.phrases)
