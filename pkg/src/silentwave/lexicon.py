"""Subword lexicon built by greedy adjacent-pair merging.

Words are split into characters with an end-of-word marker glued onto the last
one (``love -> l o v e</w>``).  The most frequent adjacent pair is merged
repeatedly; ties go to the lexicographically smallest ``(left, right)``.
Tokenising replays the learned merges in training order, so any word spelled
with known characters can be encoded without relearning anything.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParameterError, UntokenizableWordError

EOW = "</w>"
PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
SPECIALS = (PAD, BOS, EOS)
PAD_ID, BOS_ID, EOS_ID = 0, 1, 2
FILE_VERSION = 1


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))

    def __len__(self):
        return len(self.ids)

    def content_ids(self) -> list:
        return [i for i in self.ids if i >= len(SPECIALS)]


def _split_word(word: str) -> list:
    return list(word[:-1]) + [word[-1] + EOW]


def _merge_pair(seq: list, left: str, right: str) -> list:
    out, i = [], 0
    while i < len(seq):
        if i + 1 < len(seq) and seq[i] == left and seq[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


@dataclass
class Lexicon:
    base: list
    merges: list
    max_size: int
    lowercase: bool = True
    symbols: list = field(default_factory=list)
    token_counts: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.symbols:
            syms = list(self.base)
            seen = set(syms)
            for left, right in self.merges:
                s = left + right
                if s not in seen:
                    seen.add(s)
                    syms.append(s)
            self.symbols = syms
        self.alphabet = {s[:-len(EOW)] if s.endswith(EOW) else s for s in self.base}
        self._index = {s: i + len(SPECIALS) for i, s in enumerate(self.symbols)}
        self._cache = {}

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def vocab(self) -> list:
        return list(SPECIALS) + list(self.symbols)

    @property
    def vocab_size(self) -> int:
        return len(SPECIALS) + len(self.symbols)

    def token(self, idx: int) -> str:
        if not 0 <= idx < self.vocab_size:
            raise ParameterError(f"token id {idx} outside vocabulary of size {self.vocab_size}")
        return SPECIALS[idx] if idx < len(SPECIALS) else self.symbols[idx - len(SPECIALS)]

    def index(self, symbol: str) -> int:
        if symbol in SPECIALS:
            return SPECIALS.index(symbol)
        return self._index[symbol]

    def normalize(self, text: str) -> list:
        return (text.lower() if self.lowercase else text).split()

    def encode_word(self, word: str) -> list:
        if word in self._cache:
            return self._cache[word]
        for ch in word:
            if ch not in self.alphabet:
                raise UntokenizableWordError(word, ch)
        seq = _split_word(word)
        for left, right in self.merges:
            if len(seq) == 1:
                break
            seq = _merge_pair(seq, left, right)
        self._cache[word] = seq
        return seq

    def tokenize(self, sentence: str) -> TokenSequence:
        ids = []
        for word in self.normalize(sentence):
            ids.extend(self._index[s] for s in self.encode_word(word))
        ids.append(EOS_ID)
        return TokenSequence(ids)

    def detokenize(self, tokens) -> str:
        ids = tokens.ids if isinstance(tokens, TokenSequence) else tokens
        text = []
        for i in ids:
            i = int(i)
            if i == EOS_ID:
                break
            if i in (PAD_ID, BOS_ID):
                continue
            text.append(self.token(i))
        words = "".join(text).split(EOW)
        return " ".join(w for w in words if w)

    # ------------------------------------------------------------------ io
    def save(self, path) -> Path:
        path = Path(path)
        lines = [
            f"#silentwave-lexicon version={FILE_VERSION} max_size={self.max_size} lowercase={int(self.lowercase)}",
            "#base\t" + "\t".join(self.base),
        ]
        lines += [f"{l}\t{r}" for l, r in self.merges]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "Lexicon":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        header = dict(kv.split("=", 1) for kv in lines[0].split()[1:])
        if int(header["version"]) != FILE_VERSION:
            raise ParameterError(f"unsupported lexicon file version {header['version']}")
        base = lines[1].split("\t")[1:]
        merges = [tuple(line.split("\t")) for line in lines[2:] if line]
        return cls(base, merges, int(header["max_size"]), bool(int(header.get("lowercase", 1))))


def word_frequencies(sentences, lowercase: bool = True) -> Counter:
    freqs = Counter()
    for s in sentences:
        freqs.update((s.lower() if lowercase else s).split())
    return freqs


def count_pairs(corpus: dict) -> Counter:
    pairs = Counter()
    for seq, freq in corpus.items():
        for a, b in zip(seq, seq[1:]):
            pairs[(a, b)] += freq
    return pairs


def build_lexicon(word_freqs: dict, max_size: int = 1000, lowercase: bool = True) -> Lexicon:
    """Learn merges until ``max_size`` symbols exist or, after at least one
    merge, no remaining pair occurs more than once."""
    if not word_freqs:
        raise ParameterError("cannot build a lexicon from an empty corpus")
    freqs = Counter()
    for w, c in word_freqs.items():
        freqs[w.lower() if lowercase else w] += int(c)
    chars = sorted({ch for w in freqs for ch in w})
    base = sorted(chars + [c + EOW for c in chars])
    if max_size < len(base):
        raise ParameterError(f"max_size {max_size} below base alphabet size {len(base)}")

    corpus = {tuple(_split_word(w)): c for w, c in sorted(freqs.items())}
    symbols = set(base)
    merges = []
    token_counts = [sum(len(s) * c for s, c in corpus.items())]
    while len(symbols) < max_size:
        pairs = count_pairs(corpus)
        if not pairs:
            break
        best_count = max(pairs.values())
        # the stop test looks at what remains after a merge, so the first merge always happens
        if best_count <= 1 and merges:
            break
        left, right = min(p for p, c in pairs.items() if c == best_count)
        merges.append((left, right))
        symbols.add(left + right)
        corpus = {tuple(_merge_pair(list(s), left, right)): c for s, c in corpus.items()}
        token_counts.append(sum(len(s) * c for s, c in corpus.items()))
    lex = Lexicon(base, merges, max_size, lowercase)
    lex.token_counts = token_counts
    return lex
