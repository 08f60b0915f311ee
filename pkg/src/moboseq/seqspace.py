"""Sequences, the constrained mutation space around a parental sequence,
liability motifs, and the variation operators shared by every optimizer.

Sequences are plain ``str`` objects over the 20 canonical amino acids. All
operators are closed over the feasible set of a :class:`MutationSpace`: their
outputs never exceed ``max_mutations``, never carry a liability motif and only
differ from the parental at editable positions.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence as Seq

import numpy as np
import yaml

from .errors import (
    InvalidResidue,
    LengthMismatch,
    RepairFailure,
    SpaceTooLarge,
    SpaceTooSmall,
)

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
_CANONICAL = frozenset(AMINO_ACIDS)

MAX_REPAIR_ATTEMPTS = 100
DEFAULT_ENUMERATION_CAP = 10**8

Sequence = str


def validate_sequence(text: str, length: int) -> Sequence:
    """Return ``text`` if it is a canonical amino-acid string of ``length``."""
    for i, ch in enumerate(text):
        if ch not in _CANONICAL:
            raise InvalidResidue(i, ch)
    if len(text) != length:
        raise LengthMismatch(f"expected length {length}, got {len(text)}")
    return text


# ---------------------------------------------------------------------------
# Liability motifs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Motif:
    """A forbidden sequence pattern.

    Pattern syntax: an uppercase letter matches itself, ``x`` matches any
    residue, ``[ST]`` matches one of the listed residues and ``[^P]`` any
    residue except the listed ones.
    """

    pattern: str
    label: str = ""
    regex: re.Pattern = field(init=False, repr=False, compare=False)
    width: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        body, width = _compile_motif(self.pattern)
        object.__setattr__(self, "regex", re.compile(f"(?=({body}))"))
        object.__setattr__(self, "width", width)
        if not self.label:
            object.__setattr__(self, "label", self.pattern)


def _compile_motif(pattern: str) -> tuple[str, int]:
    parts: list[str] = []
    i = 0
    while i < len(pattern):
        ch = pattern[i]
        if ch == "x":
            parts.append("[A-Z]")
            i += 1
        elif ch == "[":
            end = pattern.find("]", i)
            if end < 0:
                raise ValueError(f"unterminated character class in motif {pattern!r}")
            inner = pattern[i + 1 : end]
            negate = inner.startswith("^")
            letters = inner[1:] if negate else inner
            if not letters or any(c not in _CANONICAL for c in letters):
                raise ValueError(f"malformed character class [{inner}] in motif {pattern!r}")
            parts.append(f"[{'^' if negate else ''}{letters}]")
            i = end + 1
        elif ch in _CANONICAL:
            parts.append(ch)
            i += 1
        else:
            raise ValueError(f"unexpected character {ch!r} in motif {pattern!r}")
    if not parts:
        raise ValueError("empty motif pattern")
    return "".join(parts), len(parts)


# Canonical N-linked glycosylation sequon: N, any residue but proline, S or T.
GLYCOSYLATION = Motif("N[^P][ST]", label="Nx[ST]")


@dataclass(frozen=True)
class LiabilityRules:
    motifs: tuple[Motif, ...] = (GLYCOSYLATION,)

    @classmethod
    def from_patterns(cls, patterns: Seq[str]) -> "LiabilityRules":
        return cls(tuple(Motif(p) for p in patterns))

    @classmethod
    def none(cls) -> "LiabilityRules":
        return cls(())

    def first_violation(self, s: str) -> tuple[int, Motif] | None:
        best: tuple[int, Motif] | None = None
        for motif in self.motifs:
            m = motif.regex.search(s)
            if m is not None and (best is None or m.start() < best[0]):
                best = (m.start(), motif)
        return best


def liability_check(s: Sequence, rules: LiabilityRules) -> list[tuple[int, str]]:
    """List every (start position, motif label) match, sorted by position."""
    hits = []
    for order, motif in enumerate(rules.motifs):
        for m in motif.regex.finditer(s):
            hits.append((m.start(), order, motif.label))
    hits.sort()
    return [(pos, label) for pos, _, label in hits]


# ---------------------------------------------------------------------------
# Mutation space
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MutationSpace:
    """Edit space around a parental sequence.

    ``allowed`` maps a 0-based position to the letters permitted there. The
    parental letter is always added to its position's set. Positions whose
    set collapses to the parental letter alone are not editable.
    """

    parental: Sequence
    allowed: Mapping[int, str]
    max_mutations: int
    liabilities: LiabilityRules = field(default_factory=LiabilityRules)

    def __post_init__(self):
        validate_sequence(self.parental, len(self.parental))
        if self.max_mutations < 1:
            raise ValueError("max_mutations must be a positive integer")
        norm: dict[int, str] = {}
        for pos, letters in self.allowed.items():
            pos = int(pos)
            if not 0 <= pos < len(self.parental):
                raise ValueError(f"editable position {pos} outside [0, {len(self.parental)})")
            for i, ch in enumerate(letters):
                if ch not in _CANONICAL:
                    raise InvalidResidue(i, ch)
            norm[pos] = "".join(sorted(set(letters) | {self.parental[pos]}))
        object.__setattr__(self, "allowed", dict(sorted(norm.items())))
        editable = tuple(p for p, letters in self.allowed.items() if len(letters) > 1)
        object.__setattr__(self, "editable_positions", editable)
        alternatives = {p: "".join(c for c in self.allowed[p] if c != self.parental[p]) for p in editable}
        object.__setattr__(self, "alternatives", alternatives)
        if liability_check(self.parental, self.liabilities):
            raise ValueError("parental sequence carries a liability motif; adjust the rules or the parental")

    editable_positions: tuple[int, ...] = field(init=False, default=())
    alternatives: dict = field(init=False, default_factory=dict)

    @property
    def length(self) -> int:
        return len(self.parental)

    def count(self, max_mutations: int | None = None) -> int:
        """Closed-form size of the space ignoring liabilities.

        Sum over j <= m of the elementary symmetric polynomial e_j of the
        per-position counts of non-parental letters.
        """
        m = self.max_mutations if max_mutations is None else max_mutations
        e = [1] + [0] * m
        for p in self.editable_positions:
            d = len(self.alternatives[p])
            for j in range(m, 0, -1):
                e[j] += e[j - 1] * d
        return sum(e)

    def counts_by_distance(self, max_mutations: int | None = None) -> list[int]:
        m = self.max_mutations if max_mutations is None else max_mutations
        e = [1] + [0] * m
        for p in self.editable_positions:
            d = len(self.alternatives[p])
            for j in range(m, 0, -1):
                e[j] += e[j - 1] * d
        return e

    def contains(self, s: Sequence) -> bool:
        if len(s) != self.length:
            return False
        n_mut = 0
        for p, (a, b) in enumerate(zip(s, self.parental)):
            if a != b:
                letters = self.allowed.get(p)
                if letters is None or a not in letters:
                    return False
                n_mut += 1
        return n_mut <= self.max_mutations and not liability_check(s, self.liabilities)

    @classmethod
    def from_dict(cls, data: Mapping) -> "MutationSpace":
        known = {"parental", "positions", "max_mutations", "liabilities"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown mutation-space keys: {sorted(unknown)}")
        missing = {"parental", "positions", "max_mutations"} - set(data)
        if missing:
            raise ValueError(f"missing mutation-space keys: {sorted(missing)}")
        liabilities = data.get("liabilities")
        rules = LiabilityRules() if liabilities is None else LiabilityRules.from_patterns(liabilities)
        positions = {int(k): str(v) for k, v in dict(data["positions"]).items()}
        return cls(str(data["parental"]), positions, int(data["max_mutations"]), rules)

    def to_dict(self) -> dict:
        return {
            "parental": self.parental,
            "positions": {p: self.allowed[p] for p in self.allowed},
            "max_mutations": self.max_mutations,
            "liabilities": [m.pattern for m in self.liabilities.motifs],
        }


def load_space(path: str | Path) -> MutationSpace:
    """Load a mutation space from a YAML file (keys as in :meth:`MutationSpace.from_dict`)."""
    with open(path) as fh:
        return MutationSpace.from_dict(yaml.safe_load(fh))


def mutation_count(s: Sequence, space: MutationSpace) -> int:
    if len(s) != space.length:
        raise LengthMismatch(f"expected length {space.length}, got {len(s)}")
    return sum(a != b for a, b in zip(s, space.parental))


# ---------------------------------------------------------------------------
# Variation operators
# ---------------------------------------------------------------------------


def repair(chars: list[str], space: MutationSpace, rng: np.random.Generator) -> Sequence:
    """Revert mutated positions until the sequence is feasible."""
    parental = space.parental
    for _ in range(MAX_REPAIR_ATTEMPTS):
        mutated = [p for p in space.editable_positions if chars[p] != parental[p]]
        excess = len(mutated) - space.max_mutations
        if excess > 0:
            for i in rng.choice(len(mutated), size=excess, replace=False):
                chars[mutated[i]] = parental[mutated[i]]
            continue
        text = "".join(chars)
        if not space.liabilities.motifs:
            return text
        hit = space.liabilities.first_violation(text)
        if hit is None:
            return text
        start, motif = hit
        inside = [p for p in mutated if start <= p < start + motif.width]
        if not inside:
            break
        p = inside[rng.integers(len(inside))]
        chars[p] = parental[p]
    raise RepairFailure(f"no feasible repair within {MAX_REPAIR_ATTEMPTS} attempts")


def mutate(
    s: Sequence, space: MutationSpace, per_position_prob: float, rng: np.random.Generator
) -> Sequence:
    """Resample each editable position with probability ``per_position_prob``."""
    edit = space.editable_positions
    if per_position_prob <= 0.0 or not edit:
        return s
    hits = np.flatnonzero(rng.random(len(edit)) < per_position_prob)
    if hits.size == 0:
        return s
    chars = list(s)
    for i in hits:
        p = edit[i]
        options = space.allowed[p]
        cur = options.find(chars[p])
        k = int(rng.integers(len(options) - 1))
        if cur >= 0 and k >= cur:
            k += 1
        chars[p] = options[k]
    return _feasible("".join(chars), space, rng)


def crossover_at(a: Sequence, b: Sequence, cut: int) -> tuple[Sequence, Sequence]:
    return a[:cut] + b[cut:], b[:cut] + a[cut:]


def single_point_crossover(
    a: Sequence, b: Sequence, space: MutationSpace, rng: np.random.Generator
) -> tuple[Sequence, Sequence]:
    """Cut both parents at one position in [1, L-1] and swap the tails."""
    if len(a) != len(b):
        raise LengthMismatch(f"parents have lengths {len(a)} and {len(b)}")
    if len(a) < 2:
        return a, b
    cut = int(rng.integers(1, len(a)))
    if a == b:
        return a, b
    c1, c2 = crossover_at(a, b, cut)
    return _feasible(c1, space, rng), _feasible(c2, space, rng)


def _feasible(s: Sequence, space: MutationSpace, rng: np.random.Generator) -> Sequence:
    parental = space.parental
    n_mut = sum(1 for p in space.editable_positions if s[p] != parental[p])
    if n_mut <= space.max_mutations and (
        not space.liabilities.motifs or space.liabilities.first_violation(s) is None
    ):
        return s
    return repair(list(s), space, rng)


# ---------------------------------------------------------------------------
# Sampling and enumeration
# ---------------------------------------------------------------------------


def random_member(
    space: MutationSpace, rng: np.random.Generator, max_mutations: int | None = None, min_mutations: int = 0
) -> Sequence:
    """Draw one feasible sequence; the number of mutations is drawn in
    proportion to the closed-form count at each distance."""
    m = space.max_mutations if max_mutations is None else min(max_mutations, space.max_mutations)
    counts = np.array(space.counts_by_distance(m), dtype=float)
    counts[:min_mutations] = 0.0
    if counts.sum() == 0:
        raise SpaceTooSmall("no sequences at the requested mutation distances")
    edit = space.editable_positions
    for _ in range(MAX_REPAIR_ATTEMPTS):
        j = int(rng.choice(len(counts), p=counts / counts.sum()))
        chars = list(space.parental)
        for i in rng.choice(len(edit), size=j, replace=False):
            p = edit[i]
            alts = space.alternatives[p]
            chars[p] = alts[rng.integers(len(alts))]
        text = "".join(chars)
        if not space.liabilities.motifs or space.liabilities.first_violation(text) is None:
            return text
    raise RepairFailure("could not draw a liability-free sequence")


def sample_initial(
    space: MutationSpace, n: int, init_max_mut: int, rng: np.random.Generator
) -> list[Sequence]:
    """``n`` distinct feasible sequences; element 0 is the parental, the rest
    carry between 1 and ``init_max_mut`` mutations."""
    limit = min(init_max_mut, space.max_mutations)
    available = space.count(limit)
    if n > available:
        raise SpaceTooSmall(f"requested {n} sequences but only {available} exist within {limit} mutations")
    out = [space.parental]
    seen = {space.parental}
    attempts = 0
    max_attempts = 50 * n + 1000
    while len(out) < n and attempts < max_attempts:
        attempts += 1
        s = random_member(space, rng, max_mutations=limit, min_mutations=1)
        if s not in seen:
            seen.add(s)
            out.append(s)
    if len(out) < n:
        # rejection stalled (dense liabilities or near-exhaustive request)
        rest = [s for s in enumerate_space(space, max_mutations=limit) if s not in seen]
        need = n - len(out)
        if len(rest) < need:
            raise SpaceTooSmall(f"only {len(out) + len(rest)} feasible sequences within {limit} mutations")
        for i in sorted(rng.choice(len(rest), size=need, replace=False)):
            out.append(rest[i])
    return out


def enumerate_space(
    space: MutationSpace, cap: int = DEFAULT_ENUMERATION_CAP, max_mutations: int | None = None
) -> Iterator[Sequence]:
    """Yield every feasible sequence exactly once.

    Order: mutation count ascending, then position subsets in lexicographic
    order of ascending indices, then letters alphabetically.
    """
    m = space.max_mutations if max_mutations is None else min(max_mutations, space.max_mutations)
    total = space.count(m)
    if total > cap:
        raise SpaceTooLarge(f"space has {total} members, above the enumeration cap {cap}")
    return _enumerate(space, m)


def _enumerate(space: MutationSpace, m: int) -> Iterator[Sequence]:
    parental = list(space.parental)
    check = space.liabilities.motifs and space.liabilities.first_violation
    for j in range(m + 1):
        for positions in itertools.combinations(space.editable_positions, j):
            choices = [space.alternatives[p] for p in positions]
            for letters in itertools.product(*choices):
                chars = parental.copy()
                for p, ch in zip(positions, letters):
                    chars[p] = ch
                s = "".join(chars)
                if check and check(s) is not None:
                    continue
                yield s


def closed_form_count(k: int, d: int, m: int) -> int:
    """Size of a space with ``k`` positions of ``d`` alternatives each, at most ``m`` mutations."""
    return sum(math.comb(k, j) * d**j for j in range(min(k, m) + 1))
