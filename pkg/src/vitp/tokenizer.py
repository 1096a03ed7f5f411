"""Character-level tokenizer with fixed special ids.

Specials occupy ids 0..3 (<pad>, <bos>, <eos>, <img>); observed symbols
follow in sorted order, so two corpora with the same symbol set produce the
same vocabulary. Framing with <bos>/<eos> is the caller's job.
"""

from __future__ import annotations

from dataclasses import dataclass

PAD, BOS, EOS, IMG = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<img>")


class OutOfVocabularyError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    symbols: tuple  # specials first, then sorted single characters

    @property
    def size(self) -> int:
        return len(self.symbols)

    def __post_init__(self):
        object.__setattr__(self, "_ids", {s: i for i, s in enumerate(self.symbols)})

    def encode(self, text: str) -> list[int]:
        ids = []
        table = self._ids
        for ch in text:
            i = table.get(ch)
            if i is None:
                raise OutOfVocabularyError(f"symbol {ch!r} not in vocabulary")
            ids.append(i)
        return ids

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.symbols):
                raise OutOfVocabularyError(f"id {i} out of range for V={len(self.symbols)}")
            out.append(self.symbols[i])
        return "".join(out)


def build_vocab(corpus) -> Vocabulary:
    """Vocabulary over all characters of a text stream plus the specials.

    ``corpus`` is a string or an iterable of strings; it must contribute at
    least one character.
    """
    if isinstance(corpus, str):
        corpus = [corpus]
    seen = set()
    for chunk in corpus:
        seen.update(chunk)
    if not seen:
        raise ValueError("empty corpus")
    for bad in seen:
        if bad in ("\n", "\r"):
            raise ValueError("newline characters cannot be vocabulary symbols")
    return Vocabulary(SPECIALS + tuple(sorted(seen)))


def save_vocab(vocab: Vocabulary, path) -> None:
    """One symbol per line, specials first; line index = id."""
    with open(path, "w", encoding="utf-8") as f:
        for s in vocab.symbols:
            f.write(s + "\n")


def load_vocab(path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as f:
        symbols = [line[:-1] if line.endswith("\n") else line for line in f]
    if tuple(symbols[:4]) != SPECIALS:
        raise ValueError("vocabulary file does not start with the special tokens")
    return Vocabulary(tuple(symbols))
