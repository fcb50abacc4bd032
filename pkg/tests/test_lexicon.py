import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from silentwave.errors import ParameterError, UntokenizableWordError
from silentwave.lexicon import EOS_ID, EOW, Lexicon, TokenSequence, build_lexicon, word_frequencies


def oracle_merges(freqs: dict, max_size: int) -> list:
    """Plain re-implementation: count every adjacent pair by scanning, pick the
    highest count (smallest pair on ties), stop at max_size or once the best
    remaining count is 1 after the first merge."""
    words = {w: [*w[:-1], w[-1] + EOW] for w in freqs}
    chars = set("".join(freqs))
    n_symbols = 2 * len(chars)
    merges = []
    while n_symbols < max_size:
        counts = {}
        for w, seq in words.items():
            for i in range(len(seq) - 1):
                counts[(seq[i], seq[i + 1])] = counts.get((seq[i], seq[i + 1]), 0) + freqs[w]
        if not counts:
            break
        top = max(counts.values())
        if top <= 1 and merges:
            break
        pair = sorted(p for p in counts if counts[p] == top)[0]
        merges.append(pair)
        known = set()
        for seq in words.values():
            known.update(seq)
        if pair[0] + pair[1] not in known and pair[0] + pair[1] not in {a + b for a, b in merges[:-1]}:
            n_symbols += 1
        for w, seq in words.items():
            out, i = [], 0
            while i < len(seq):
                if i + 1 < len(seq) and (seq[i], seq[i + 1]) == pair:
                    out.append(seq[i] + seq[i + 1])
                    i += 2
                else:
                    out.append(seq[i])
                    i += 1
            words[w] = out
    return merges


def random_corpus(rng, n_words=None):
    n_words = n_words or int(rng.integers(1, 31))
    letters = list("abcde")
    corpus = {}
    for _ in range(n_words):
        w = "".join(rng.choice(letters, size=int(rng.integers(1, 7))))
        corpus[w] = corpus.get(w, 0) + int(rng.integers(1, 6))
    return corpus


def test_single_pair_first_merge():
    lex = build_lexicon({"ab": 1}, max_size=100)
    assert lex.merges[0] == ("a", "b" + EOW)


def test_classic_corpus_first_merge():
    freqs = {"low": 5, "lower": 2, "newest": 6, "widest": 3}
    lex = build_lexicon(freqs, max_size=100)
    assert lex.merges[0] == ("e", "s")  # 9 occurrences, ties with ("s", "t") broken lexicographically
    assert lex.merges == oracle_merges(freqs, 100)


def test_merges_match_oracle_on_random_corpora():
    rng = np.random.default_rng(0)
    for _ in range(50):
        corpus = random_corpus(rng)
        size = int(rng.integers(10, 60))
        base = 2 * len(set("".join(corpus)))
        size = max(size, base)
        assert build_lexicon(corpus, size).merges == oracle_merges(corpus, size)


def test_size_bound_and_determinism():
    rng = np.random.default_rng(1)
    for _ in range(20):
        corpus = random_corpus(rng)
        base = 2 * len(set("".join(corpus)))
        a = build_lexicon(corpus, base + 5)
        assert a.size <= base + 5
        assert build_lexicon(corpus, base + 5).merges == a.merges


def test_max_size_below_alphabet():
    with pytest.raises(ParameterError):
        build_lexicon({"abc": 2}, max_size=3)
    with pytest.raises(ParameterError):
        build_lexicon({}, max_size=10)


def test_looks_decomposes_into_look_and_s():
    lex = build_lexicon({"look": 6, "looking": 5, "looked": 4, "dogs": 3}, max_size=40)
    toks = lex.tokenize("looks")
    assert [lex.token(i) for i in toks.ids] == ["look", "s" + EOW, "<eos>"]
    assert lex.detokenize(toks) == "looks"


def test_full_word_single_token():
    lex = build_lexicon({"door": 10, "open": 8}, max_size=100)
    toks = lex.tokenize("door")
    assert [lex.token(i) for i in toks.ids] == ["door" + EOW, "<eos>"]


def test_detokenize_cases():
    lex = build_lexicon({"look": 6, "looking": 3, "books": 2}, max_size=40)
    assert lex.detokenize(TokenSequence([EOS_ID])) == ""
    ids = list(lex.tokenize("look books").ids)
    assert lex.detokenize(TokenSequence(ids)) == "look books"
    assert lex.detokenize(TokenSequence(ids[:-1] + [EOS_ID, ids[0]])) == "look books"
    with pytest.raises(ParameterError):
        lex.detokenize(TokenSequence([lex.vocab_size]))


def test_untokenizable_names_the_word():
    lex = build_lexicon({"abc": 3}, max_size=20)
    with pytest.raises(UntokenizableWordError) as err:
        lex.tokenize("cab xyz")
    assert err.value.word == "xyz"


def test_roundtrip_training_words_and_random_sentences():
    rng = np.random.default_rng(2)
    corpus = random_corpus(rng, 30)
    lex = build_lexicon(corpus, 40)
    for w in corpus:
        assert lex.detokenize(lex.tokenize(w)) == w
    letters = sorted(set("".join(corpus)))
    for _ in range(100):
        words = ["".join(rng.choice(letters, size=int(rng.integers(1, 9)))) for _ in range(int(rng.integers(1, 6)))]
        s = " ".join(words)
        assert lex.detokenize(lex.tokenize(s)) == s


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.text(alphabet="abcd", min_size=1, max_size=6), st.integers(1, 5), min_size=1, max_size=30),
       st.lists(st.text(alphabet="abcd", min_size=1, max_size=8), min_size=1, max_size=5))
def test_extensibility_and_compression(corpus, new_words):
    lex = build_lexicon(corpus, 60)
    for w in new_words:
        if set(w) <= lex.alphabet:
            assert lex.detokenize(lex.tokenize(w)) == w
    assert all(b <= a for a, b in zip(lex.token_counts, lex.token_counts[1:]))


def test_file_roundtrip(tmp_path):
    lex = build_lexicon(word_frequencies(["Open the door", "close the window"]), 50)
    lex.save(tmp_path / "lex.txt")
    text = (tmp_path / "lex.txt").read_text().splitlines()
    assert text[0].startswith("#silentwave-lexicon version=1 max_size=50")
    back = Lexicon.load(tmp_path / "lex.txt")
    assert back.merges == lex.merges and back.symbols == lex.symbols
    assert back.tokenize("open the window").ids == lex.tokenize("OPEN the window").ids
