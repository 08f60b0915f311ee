"""Sequence encoders and the Tanimoto similarity.

Encoders map a batch of equal-length sequences to a dense ``(n, D)`` float
array. Single-sequence helpers return an :class:`Embedding` that carries the
id of the producing encoder so that embeddings of different encoders are
never compared by accident.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence as Seq

import numpy as np

from .errors import (
    DecompositionFailure,
    DimensionMismatch,
    EncodingError,
    SequenceTooShort,
    ZeroVectors,
)
from .seqspace import AMINO_ACIDS

_INDEX = np.full(256, -1, dtype=np.int64)
for _i, _c in enumerate(AMINO_ACIDS):
    _INDEX[ord(_c)] = _i

# BLOSUM45 in the conventional residue order used by the published table.
BLOSUM_ORDER = "ARNDCQEGHILKMFPSTWYV"
BLOSUM45 = np.array(
    [
        # A   R   N   D   C   Q   E   G   H   I   L   K   M   F   P   S   T   W   Y   V
        [5, -2, -1, -2, -1, -1, -1, 0, -2, -1, -1, -1, -1, -2, -1, 1, 0, -2, -2, 0],
        [-2, 7, 0, -1, -3, 1, 0, -2, 0, -3, -2, 3, -1, -2, -2, -1, -1, -2, -1, -2],
        [-1, 0, 6, 2, -2, 0, 0, 0, 1, -2, -3, 0, -2, -2, -2, 1, 0, -4, -2, -3],
        [-2, -1, 2, 7, -3, 0, 2, -1, 0, -4, -3, 0, -3, -4, -1, 0, -1, -4, -2, -3],
        [-1, -3, -2, -3, 12, -3, -3, -3, -3, -3, -2, -3, -2, -2, -4, -1, -1, -5, -3, -1],
        [-1, 1, 0, 0, -3, 6, 2, -2, 1, -2, -2, 1, 0, -4, -1, 0, -1, -2, -1, -3],
        [-1, 0, 0, 2, -3, 2, 6, -2, 0, -3, -2, 1, -2, -3, 0, 0, -1, -3, -2, -3],
        [0, -2, 0, -1, -3, -2, -2, 7, -2, -4, -3, -2, -2, -3, -2, 0, -2, -2, -3, -3],
        [-2, 0, 1, 0, -3, 1, 0, -2, 10, -3, -2, -1, 0, -2, -2, -1, -2, -3, 2, -3],
        [-1, -3, -2, -4, -3, -2, -3, -4, -3, 5, 2, -3, 2, 0, -2, -2, -1, -2, 0, 3],
        [-1, -2, -3, -3, -2, -2, -2, -3, -2, 2, 5, -3, 2, 1, -3, -3, -1, -2, 0, 1],
        [-1, 3, 0, 0, -3, 1, 1, -2, -1, -3, -3, 5, -1, -3, -1, -1, -1, -2, -1, -2],
        [-1, -1, -2, -3, -2, 0, -2, -2, 0, 2, 2, -1, 6, 0, -2, -2, -1, -2, 0, 1],
        [-2, -2, -2, -4, -2, -4, -3, -3, -2, 0, 1, -3, 0, 8, -3, -2, -1, 1, 3, 0],
        [-1, -2, -2, -1, -4, -1, 0, -2, -2, -2, -3, -1, -2, -3, 9, -1, -1, -3, -3, -3],
        [1, -1, 1, 0, -1, 0, 0, 0, -1, -2, -3, -1, -2, -2, -1, 4, 2, -4, -2, -1],
        [0, -1, 0, -1, -1, -1, -1, -2, -2, -1, -1, -1, -1, -1, -1, 2, 5, -3, -1, 0],
        [-2, -2, -4, -4, -5, -2, -3, -2, -3, -2, -2, -2, -2, 1, -3, -4, -3, 15, 3, -3],
        [-2, -1, -2, -2, -3, -1, -2, -3, 2, 0, 0, -1, 0, 3, -3, -2, -1, 3, 8, -1],
        [0, -2, -3, -3, -1, -3, -3, -3, -3, 3, 1, -2, 1, 0, -3, -1, 0, -3, -1, 5],
    ],
    dtype=np.int64,
)


def _check_blosum45(m: np.ndarray) -> None:
    if not np.array_equal(m, m.T):
        raise ValueError("BLOSUM45 constant is not symmetric")
    i = BLOSUM_ORDER.index
    spots = {("W", "W"): 15, ("C", "C"): 12, ("H", "H"): 10, ("W", "C"): -5, ("K", "R"): 3, ("S", "T"): 2}
    for (a, b), v in spots.items():
        if m[i(a), i(b)] != v:
            raise ValueError(f"BLOSUM45 constant corrupted at {a}{b}")
    if int(m.sum()) != -367 or int(np.trace(m)) != 141:
        raise ValueError("BLOSUM45 constant checksum mismatch")


_check_blosum45(BLOSUM45)


def residue_indices(seqs: Seq[str]) -> np.ndarray:
    """Map equal-length sequences to an ``(n, L)`` array of alphabet indices."""
    if len(seqs) == 0:
        return np.zeros((0, 0), dtype=np.int64)
    length = len(seqs[0])
    if any(len(s) != length for s in seqs):
        raise DimensionMismatch("sequences in a batch must share one length")
    raw = np.frombuffer("".join(seqs).encode("ascii"), dtype=np.uint8).reshape(len(seqs), length)
    idx = _INDEX[raw]
    if (idx < 0).any():
        raise EncodingError("non-canonical residue in batch")
    return idx


@dataclass(frozen=True)
class Embedding:
    values: np.ndarray
    encoder_id: str

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


class Encoder:
    encoder_id = "base"

    def encode_batch(self, seqs: Seq[str]) -> np.ndarray:
        raise NotImplementedError

    def encode(self, s: str) -> Embedding:
        return Embedding(self.encode_batch([s])[0], self.encoder_id)


class OneHotEncoder(Encoder):
    encoder_id = "onehot"

    def encode_batch(self, seqs: Seq[str]) -> np.ndarray:
        idx = residue_indices(seqs)
        n, length = idx.shape
        out = np.zeros((n, length, 20))
        out[np.arange(n)[:, None], np.arange(length)[None, :], idx] = 1.0
        return out.reshape(n, 20 * length)


@dataclass(frozen=True)
class BlosumEmbeddingTable:
    """Per-residue vectors (rows indexed in :data:`AMINO_ACIDS` order)."""

    vectors: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def vector(self, residue: str) -> np.ndarray:
        return self.vectors[AMINO_ACIDS.index(residue)]

    def gram(self) -> np.ndarray:
        return self.vectors @ self.vectors.T


def build_blosum_table(matrix: np.ndarray, order: str = AMINO_ACIDS) -> BlosumEmbeddingTable:
    """Eigen-embed a symmetric substitution matrix as ``U |D|^(1/2)``.

    ``order`` names the residue of each row of ``matrix``; the returned table
    is re-indexed to :data:`AMINO_ACIDS` order.
    """
    m = np.asarray(matrix, dtype=float)
    if m.shape != (20, 20):
        raise DimensionMismatch(f"expected a 20x20 matrix, got {m.shape}")
    if not np.allclose(m, m.T):
        raise ValueError("substitution matrix must be symmetric")
    perm = [order.index(c) for c in AMINO_ACIDS]
    m = m[np.ix_(perm, perm)]
    try:
        d, u = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise DecompositionFailure(str(exc)) from exc
    vectors = u * np.sqrt(np.abs(d))[None, :]
    return BlosumEmbeddingTable(vectors, d, u)


def blosum45_table() -> BlosumEmbeddingTable:
    return build_blosum_table(BLOSUM45, order=BLOSUM_ORDER)


class BlosumEncoder(Encoder):
    encoder_id = "blosum"

    def __init__(self, table: BlosumEmbeddingTable | None = None):
        self.table = table if table is not None else blosum45_table()

    def encode_batch(self, seqs: Seq[str]) -> np.ndarray:
        idx = residue_indices(seqs)
        n, length = idx.shape
        return self.table.vectors[idx].reshape(n, length * 20)


class BagEncoder(Encoder):
    """Counts of overlapping n-grams over a fixed vocabulary.

    The vocabulary is frozen at construction from a reference corpus; n-grams
    outside it are counted in one shared overflow bucket (the last column).
    """

    encoder_id = "bag"

    def __init__(self, corpus: Iterable[str], n: int = 5):
        self.n = n
        grams = {gram for s in corpus for gram in _ngrams(s, n)}
        self.vocabulary = {g: i for i, g in enumerate(sorted(grams))}
        self.dim = len(self.vocabulary) + 1

    def encode_batch(self, seqs: Seq[str]) -> np.ndarray:
        out = np.zeros((len(seqs), self.dim))
        overflow = self.dim - 1
        for row, s in enumerate(seqs):
            for gram, c in Counter(_ngrams(s, self.n)).items():
                out[row, self.vocabulary.get(gram, overflow)] += c
        return out

    def counts(self, s: str) -> dict[str, int]:
        return dict(Counter(_ngrams(s, self.n)))


def _ngrams(s: str, n: int) -> list[str]:
    if len(s) < n:
        raise SequenceTooShort(f"sequence of length {len(s)} is shorter than n={n}")
    return [s[i : i + n] for i in range(len(s) - n + 1)]


class PrecomputedEncoder(Encoder):
    """Embeddings read from a file of ``<sequence>\\t<v1> ... <vD>`` rows.

    The first line must be ``dim=<D>``.
    """

    encoder_id = "external-file"

    def __init__(self, table: dict[str, np.ndarray], dim: int):
        self.table = table
        self.dim = dim

    @classmethod
    def from_file(cls, path: str | Path) -> "PrecomputedEncoder":
        table: dict[str, np.ndarray] = {}
        with open(path) as fh:
            header = fh.readline().strip()
            if not header.startswith("dim="):
                raise ValueError(f"{path}: first line must be 'dim=<D>', got {header!r}")
            dim = int(header[4:])
            for lineno, line in enumerate(fh, start=2):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                seq, _, values = line.partition("\t")
                vec = np.array(values.split(), dtype=float)
                if vec.shape[0] != dim:
                    raise DimensionMismatch(f"{path}:{lineno}: expected {dim} values, got {vec.shape[0]}")
                table[seq] = vec
        return cls(table, dim)

    def encode_batch(self, seqs: Seq[str]) -> np.ndarray:
        try:
            return np.stack([self.table[s] for s in seqs]) if seqs else np.zeros((0, self.dim))
        except KeyError as exc:
            raise EncodingError(f"no precomputed embedding for sequence {exc.args[0]!r}") from None


def encode_onehot(s: str) -> Embedding:
    return OneHotEncoder().encode(s)


def encode_blosum(s: str, table: BlosumEmbeddingTable | None = None) -> Embedding:
    return BlosumEncoder(table).encode(s)


def encode_bag(s: str, n: int = 5, encoder: BagEncoder | None = None) -> Embedding:
    enc = encoder if encoder is not None else BagEncoder([s], n)
    return enc.encode(s)


def tanimoto(x: Embedding, y: Embedding) -> float:
    """<x,y> / (|x|^2 + |y|^2 - <x,y>)."""
    if x.encoder_id != y.encoder_id:
        raise DimensionMismatch(f"embeddings from {x.encoder_id!r} and {y.encoder_id!r}")
    if x.values.shape != y.values.shape:
        raise DimensionMismatch(f"dimensions {x.values.shape} and {y.values.shape} differ")
    xy = float(x.values @ y.values)
    denom = float(x.values @ x.values) + float(y.values @ y.values) - xy
    if denom == 0.0:
        raise ZeroVectors("Tanimoto similarity undefined for two zero vectors")
    return xy / denom


def tanimoto_matrix(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Pairwise Tanimoto similarities between the rows of ``X`` and ``Y``."""
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatch(f"dimensions {X.shape[1]} and {Y.shape[1]} differ")
    xy = X @ Y.T
    denom = np.einsum("ij,ij->i", X, X)[:, None] + np.einsum("ij,ij->i", Y, Y)[None, :] - xy
    if np.any(denom == 0.0):
        raise ZeroVectors("Tanimoto similarity undefined for two zero vectors")
    return xy / denom


def make_encoder(name: str, *, corpus: Iterable[str] | None = None, n: int = 5, path: str | None = None) -> Encoder:
    if name == "onehot":
        return OneHotEncoder()
    if name == "blosum":
        return BlosumEncoder()
    if name == "bag":
        if corpus is None:
            raise ValueError("the bag encoder needs a reference corpus")
        return BagEncoder(corpus, n)
    if name == "external-file":
        if path is None:
            raise ValueError("the external-file encoder needs an embedding file path")
        return PrecomputedEncoder.from_file(path)
    raise ValueError(f"unknown encoder {name!r}")
