"""Corpus ingestion: vocabulary construction, tokenization, train/valid split.

Plain UTF-8 text in. Word mode splits on whitespace (matching corpora that
are distributed pre-tokenized); char mode iterates Unicode scalar values.
The unknown token is always reserved as the last id, even if unused, so a
model sized to `vocab.size` can score any stream the vocab encodes.
"""

import json

import numpy as np

from .config import ConfigError

UNK_TEXT = "<unk>"


class Vocab:
    """Bijective token <-> id map with a reserved unknown id.

    Known tokens get dense ids [0, n_known) in order of first occurrence
    in the corpus they were built from. The unknown id is n_known, i.e.
    always the last id; `size` includes it.
    """

    def __init__(self, tokens, mode):
        if mode not in ("word", "char"):
            raise ConfigError(f"mode must be 'word' or 'char', got {mode!r}")
        self.mode = mode
        self.id_to_token = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")
        if UNK_TEXT in self.token_to_id:
            raise ValueError(f"{UNK_TEXT!r} cannot be a known token")

    @property
    def n_known(self):
        return len(self.id_to_token)

    @property
    def unk_id(self):
        return len(self.id_to_token)

    @property
    def size(self):
        """Total id count, unknown included. Models take this as V."""
        return len(self.id_to_token) + 1

    def lookup(self, token):
        return self.token_to_id.get(token, self.unk_id)

    def token_of(self, idx):
        if idx == self.unk_id:
            return UNK_TEXT
        return self.id_to_token[idx]

    def save(self, path):
        payload = {"mode": self.mode, "tokens": self.id_to_token}
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, ensure_ascii=False)
            f.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
        return cls(payload["tokens"], payload["mode"])


class TokenStream:
    """A sequence of token ids plus a role tag (train or valid)."""

    def __init__(self, ids, role, vocab_size):
        self.ids = np.asarray(ids, dtype=np.int64)
        if self.ids.ndim != 1:
            raise ValueError(f"token stream must be 1-d, got shape {self.ids.shape}")
        if self.ids.size and (self.ids.min() < 0 or self.ids.max() >= vocab_size):
            raise ValueError("token id out of range for vocabulary")
        if role not in ("train", "valid"):
            raise ValueError(f"role must be 'train' or 'valid', got {role!r}")
        self.role = role
        self.vocab_size = vocab_size

    def __len__(self):
        return int(self.ids.size)


def _split_text(text, mode):
    if mode == "word":
        return text.split()
    if mode == "char":
        return list(text)
    raise ConfigError(f"mode must be 'word' or 'char', got {mode!r}")


def build_vocab(text, mode, max_size=None):
    """Construct a Vocab from corpus text.

    Ids follow first occurrence. With max_size, only the max_size most
    frequent tokens are kept (ties broken by first occurrence) and the
    rest encode to the unknown id; kept tokens still get ids by first
    occurrence. The literal "<unk>" in pre-tokenized text is never a
    known token: it always means the unknown id.
    """
    pieces = _split_text(text, mode)
    if not pieces:
        raise ConfigError("corpus is empty")
    counts = {}
    first_seen = {}
    for pos, tok in enumerate(pieces):
        if tok == UNK_TEXT:
            continue
        counts[tok] = counts.get(tok, 0) + 1
        if tok not in first_seen:
            first_seen[tok] = pos
    if max_size is not None:
        if max_size < 1:
            raise ConfigError(f"vocab max size must be >= 1, got {max_size}")
        ranked = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))
        kept = set(ranked[:max_size])
    else:
        kept = set(counts)
    ordered = sorted(kept, key=first_seen.__getitem__)
    return Vocab(ordered, mode)


def encode(text, vocab, role="train"):
    """Order-preserving id sequence; out-of-vocabulary tokens become unk."""
    pieces = _split_text(text, vocab.mode)
    ids = np.fromiter((vocab.lookup(t) for t in pieces), dtype=np.int64,
                      count=len(pieces))
    return TokenStream(ids, role, vocab.size)


def decode(stream, vocab):
    """Inverse of encode for in-vocab text.

    Word mode joins with single spaces, so the round trip holds modulo
    whitespace normalization; char mode is exact.
    """
    toks = [vocab.token_of(int(i)) for i in stream.ids]
    return (" " if vocab.mode == "word" else "").join(toks)


def split_stream(stream, valid_frac=0.05):
    """Split one stream into (train, valid) by position: the tail is valid."""
    if not 0.0 < valid_frac < 1.0:
        raise ConfigError(f"valid fraction must be in (0, 1), got {valid_frac}")
    n = len(stream)
    n_valid = int(n * valid_frac)
    if n_valid < 2 or n - n_valid < 2:
        raise ConfigError(
            f"stream of {n} tokens cannot be split with valid_frac={valid_frac}")
    train = TokenStream(stream.ids[: n - n_valid], "train", stream.vocab_size)
    valid = TokenStream(stream.ids[n - n_valid:], "valid", stream.vocab_size)
    return train, valid


def load_corpus(path):
    with open(path, "r", encoding="utf-8") as f:
        return f.read()
