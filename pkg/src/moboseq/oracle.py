"""Scoring boundary: built-in synthetic oracles, the external line-protocol
oracle, and the budgeted, caching :class:`OracleBank`.

Every stored score follows the maximization convention; a minimize-direction
oracle is negated when its result is ingested.
"""

from __future__ import annotations

import json
import math
import queue
import shlex
import subprocess
import sys
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence as Seq

import numpy as np

from .encoding import residue_indices
from .errors import (
    BudgetExhausted,
    ConfigError,
    ExternalOracleRefused,
    HandshakeTimeout,
    MissingWeight,
    OracleFailure,
    ProtocolViolation,
    SpaceTooLarge,
    SpawnFailure,
)
from .pareto import ParetoState, default_reference, nondominated_mask
from .runlog import Evaluation
from .seqspace import AMINO_ACIDS, DEFAULT_ENUMERATION_CAP, MutationSpace, enumerate_space

DIRECTIONS = ("maximize", "minimize")
BUILTIN_TYPES = ("pwm", "lookup", "motif_distance")
EXTERNAL_BATCH = 64
STDERR_TAIL_LINES = 20


@dataclass
class OracleSpec:
    name: str
    kind: str = "builtin"
    direction: str = "maximize"
    params: dict = field(default_factory=dict)
    command: list[str] | None = None
    cwd: str | None = None
    startup_timeout: float = 10.0
    request_timeout: float = 60.0

    def __post_init__(self):
        if self.kind not in ("builtin", "external"):
            raise ConfigError(f"oracle {self.name!r}: kind must be builtin or external, got {self.kind!r}")
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"oracle {self.name!r}: direction must be maximize or minimize, got {self.direction!r}")
        if isinstance(self.command, str):
            self.command = shlex.split(self.command)
        if self.kind == "external" and not self.command:
            raise ConfigError(f"oracle {self.name!r}: external oracles need a command")
        if self.kind == "builtin" and self.params.get("type") not in BUILTIN_TYPES:
            raise ConfigError(f"oracle {self.name!r}: builtin type must be one of {BUILTIN_TYPES}")

    @classmethod
    def from_dict(cls, data: Mapping) -> "OracleSpec":
        allowed = {"name", "kind", "direction", "params", "command", "cwd", "startup_timeout", "request_timeout"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown oracle key(s): {', '.join(sorted(unknown))}")
        if "name" not in data or "direction" not in data:
            raise ConfigError("every oracle needs a name and an explicit direction")
        return cls(**dict(data))

    def to_dict(self) -> dict:
        out = {"name": self.name, "kind": self.kind, "direction": self.direction}
        if self.kind == "builtin":
            out["params"] = self.params
        else:
            out.update(command=list(self.command), cwd=self.cwd, startup_timeout=self.startup_timeout,
                       request_timeout=self.request_timeout)
        return out


class Oracle:
    """A scorer of one objective. ``score_batch`` returns raw values."""

    name: str = "oracle"
    direction: str = "maximize"
    external: bool = False

    def score_batch(self, seqs: Seq[str]) -> np.ndarray:
        raise NotImplementedError

    def close(self) -> None:
        pass


# ---------------------------------------------------------------------------
# Built-in synthetic landscapes
# ---------------------------------------------------------------------------


def _weight_matrix(weights: Mapping[int, Mapping[str, float]], length: int) -> np.ndarray:
    """(length, 20) table; positions without weights score 0, listed positions
    leave unlisted letters as NaN."""
    W = np.zeros((length, len(AMINO_ACIDS)))
    for pos, table in weights.items():
        p = int(pos)
        if not 0 <= p < length:
            raise ConfigError(f"weight position {p} outside sequence of length {length}")
        W[p] = np.nan
        for letter, w in table.items():
            W[p, AMINO_ACIDS.index(letter)] = float(w)
    return W


def pwm_score(s: str, w: Mapping[int, Mapping[str, float]]) -> float:
    """Sum over positions of the weight of the residue found there.

    Positions absent from ``w`` contribute zero.
    """
    total = 0.0
    for pos, table in w.items():
        letter = s[int(pos)]
        if letter not in table:
            raise MissingWeight(f"no weight for {letter!r} at position {pos}")
        total += float(table[letter])
    return total


class PwmOracle(Oracle):
    def __init__(self, name: str, weights: Mapping[int, Mapping[str, float]], length: int, direction: str = "maximize"):
        self.name = name
        self.direction = direction
        self.weights = {int(p): dict(t) for p, t in weights.items()}
        self.length = length
        self._W = _weight_matrix(self.weights, length)

    def score_batch(self, seqs: Seq[str]) -> np.ndarray:
        if len(seqs) == 0:
            return np.zeros(0)
        idx = residue_indices(seqs)
        vals = self._W[np.arange(self.length)[None, :], idx]
        bad = np.isnan(vals)
        if bad.any():
            i, p = np.argwhere(bad)[0]
            raise MissingWeight(f"no weight for {seqs[i][p]!r} at position {p}")
        return vals.sum(axis=1)


def random_pwm(space: MutationSpace, seed: int, anti: bool = False, noise: float = 0.3) -> dict[int, dict[str, float]]:
    """Weights drawn U(-1, 1) for every alternative letter at the editable
    positions, parental letters weighted 0.

    ``anti=True`` returns the negated weights plus Gaussian noise of scale
    ``noise``; the same seed gives the partner of the non-anti table.
    """
    rng = np.random.default_rng(seed)
    base: dict[int, dict[str, float]] = {}
    for p in space.editable_positions:
        base[p] = {space.parental[p]: 0.0}
        for letter in space.alternatives[p]:
            base[p][letter] = float(rng.uniform(-1.0, 1.0))
    if not anti:
        return base
    out: dict[int, dict[str, float]] = {}
    for p in space.editable_positions:
        out[p] = {space.parental[p]: 0.0}
        for letter in space.alternatives[p]:
            out[p][letter] = -base[p][letter] + noise * float(rng.standard_normal())
    return out


class LookupOracle(Oracle):
    def __init__(self, name: str, table: Mapping[str, float], direction: str = "maximize"):
        self.name = name
        self.direction = direction
        self.table = {str(k): float(v) for k, v in table.items()}

    def score_batch(self, seqs: Seq[str]) -> np.ndarray:
        try:
            return np.array([self.table[s] for s in seqs], dtype=float)
        except KeyError as exc:
            raise OracleFailure(f"lookup oracle {self.name!r} has no entry for {exc.args[0]!r}") from None


class MotifDistanceOracle(Oracle):
    """Negative Hamming distance to ``target`` over the given positions."""

    def __init__(self, name: str, target: str, positions: Seq[int] | None = None, direction: str = "maximize"):
        self.name = name
        self.direction = direction
        self.target = target
        self.positions = np.asarray(list(positions) if positions is not None else range(len(target)), dtype=int)

    def score_batch(self, seqs: Seq[str]) -> np.ndarray:
        if len(seqs) == 0:
            return np.zeros(0)
        idx = residue_indices(seqs)[:, self.positions]
        tgt = residue_indices([self.target])[0, self.positions]
        return -(idx != tgt[None, :]).sum(axis=1).astype(float)


def build_builtin(spec: OracleSpec, space: MutationSpace | None) -> Oracle:
    p = dict(spec.params)
    kind = p.pop("type")
    if kind == "pwm":
        if "weights" in p:
            length = space.length if space is not None else int(p.get("length", 0))
            return PwmOracle(spec.name, p["weights"], length, spec.direction)
        if "random" in p:
            if space is None:
                raise ConfigError("random PWM weights need a mutation space")
            r = dict(p["random"])
            unknown = set(r) - {"seed", "anti", "noise"}
            if unknown:
                raise ConfigError(f"unknown random PWM key(s): {', '.join(sorted(unknown))}")
            w = random_pwm(space, int(r.get("seed", 0)), bool(r.get("anti", False)), float(r.get("noise", 0.3)))
            return PwmOracle(spec.name, w, space.length, spec.direction)
        raise ConfigError(f"oracle {spec.name!r}: pwm needs weights or random")
    if kind == "lookup":
        if "table" in p:
            return LookupOracle(spec.name, p["table"], spec.direction)
        if "path" in p:
            table = {}
            for line in Path(p["path"]).read_text(encoding="utf-8").splitlines():
                if line.strip() and not line.startswith("#"):
                    seq, val = line.replace(",", " ").split()[:2]
                    table[seq] = float(val)
            return LookupOracle(spec.name, table, spec.direction)
        raise ConfigError(f"oracle {spec.name!r}: lookup needs table or path")
    if kind == "motif_distance":
        positions = p.get("positions")
        if positions is None and space is not None:
            positions = list(space.editable_positions)
        return MotifDistanceOracle(spec.name, p["target"], positions, spec.direction)
    raise ConfigError(f"unknown builtin oracle type {kind!r}")


# ---------------------------------------------------------------------------
# External subprocess oracle
# ---------------------------------------------------------------------------

_EOF = object()


class ExternalOracle(Oracle):
    """Child process speaking one JSON object per line over stdin/stdout."""

    external = True

    def __init__(self, spec: OracleSpec):
        self.spec = spec
        self.name = spec.name
        self.direction = spec.direction
        self._next_id = 0
        self._stderr: deque[str] = deque(maxlen=STDERR_TAIL_LINES)
        self._lines: queue.Queue = queue.Queue()
        try:
            self.proc = subprocess.Popen(
                spec.command, cwd=spec.cwd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.PIPE, text=True, bufsize=1,
            )
        except OSError as exc:
            raise SpawnFailure(f"cannot start oracle {spec.name!r}: {exc}") from exc
        threading.Thread(target=self._pump_stdout, daemon=True).start()
        threading.Thread(target=self._pump_stderr, daemon=True).start()
        self.hello = self._handshake()

    def _pump_stdout(self):
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(_EOF)

    def _pump_stderr(self):
        for line in self.proc.stderr:
            self._stderr.append(line.rstrip("\n"))

    def stderr_tail(self) -> str:
        return "\n".join(self._stderr)

    def _failure(self, cls, msg: str):
        time.sleep(0.05)  # let the stderr reader catch up
        tail = self.stderr_tail()
        return cls(f"{msg}\n--- stderr tail ---\n{tail}" if tail else msg)

    def _read(self, timeout: float, what: str) -> dict:
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            exc_cls = HandshakeTimeout if what == "hello" else OracleFailure
            raise self._failure(exc_cls, f"oracle {self.name!r}: no {what} within {timeout}s") from None
        if line is _EOF:
            code = self.proc.poll()
            raise self._failure(OracleFailure, f"oracle {self.name!r} closed its output (exit code {code}) while waiting for {what}")
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            raise self._failure(ProtocolViolation, f"oracle {self.name!r} sent a malformed line: {line.rstrip()!r}") from None
        if not isinstance(msg, dict):
            raise self._failure(ProtocolViolation, f"oracle {self.name!r} sent a non-object line: {line.rstrip()!r}")
        return msg

    def _handshake(self) -> dict:
        msg = self._read(self.spec.startup_timeout, "hello")
        if msg.get("type") != "hello" or not isinstance(msg.get("name"), str):
            self.close()
            raise ProtocolViolation(f"oracle {self.name!r}: expected a hello message, got {json.dumps(msg)!r}")
        if msg.get("direction") not in DIRECTIONS:
            self.close()
            raise ProtocolViolation(f"oracle {self.name!r}: hello has invalid direction {msg.get('direction')!r}")
        if msg["direction"] != self.spec.direction:
            self.close()
            raise ProtocolViolation(
                f"oracle {self.name!r} declares direction {msg['direction']!r}, configuration says {self.spec.direction!r}"
            )
        if msg.get("objectives", 1) != 1:
            self.close()
            raise ProtocolViolation(f"oracle {self.name!r} declares {msg['objectives']} objectives; exactly 1 is supported")
        return msg

    def _send(self, msg: dict) -> None:
        try:
            self.proc.stdin.write(json.dumps(msg) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError):
            raise self._failure(OracleFailure, f"oracle {self.name!r} is not accepting requests") from None

    def request(self, seqs: Seq[str]) -> tuple[int, dict]:
        """Send one score request and return (request id, raw response)."""
        rid = self._next_id
        self._next_id += 1
        self._send({"type": "score", "id": rid, "sequences": list(seqs)})
        return rid, self._read(self.spec.request_timeout, f"response to request {rid}")

    def score_batch(self, seqs: Seq[str]) -> np.ndarray:
        out = []
        for start in range(0, len(seqs), EXTERNAL_BATCH):
            chunk = list(seqs[start : start + EXTERNAL_BATCH])
            rid, msg = self.request(chunk)
            if msg.get("type") != "scores":
                raise ProtocolViolation(f"oracle {self.name!r}: expected scores, got {json.dumps(msg)!r}")
            if msg.get("id") != rid:
                raise ProtocolViolation(f"oracle {self.name!r}: response id {msg.get('id')!r} for request {rid}")
            values = msg.get("values")
            if not isinstance(values, list) or len(values) != len(chunk):
                n = len(values) if isinstance(values, list) else "no"
                raise ProtocolViolation(f"oracle {self.name!r}: {n} values for {len(chunk)} sequences")
            try:
                vals = [float(v) for v in values]
            except (TypeError, ValueError):
                raise ProtocolViolation(f"oracle {self.name!r}: non-numeric values {values!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ProtocolViolation(f"oracle {self.name!r}: non-finite values {values!r}")
            out.extend(vals)
        return np.array(out, dtype=float)

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.proc.stdin.write(json.dumps({"type": "bye"}) + "\n")
                self.proc.stdin.flush()
                self.proc.stdin.close()
            except (BrokenPipeError, OSError, ValueError):
                pass
            try:
                self.proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()


def spawn_external(spec: OracleSpec) -> ExternalOracle:
    return ExternalOracle(spec)


def build_oracle(spec: OracleSpec, space: MutationSpace | None = None) -> Oracle:
    if spec.kind == "external":
        return spawn_external(spec)
    return build_builtin(spec, space)


def echo_oracle_command(mode: str = "normal") -> list[str]:
    """Command line of the bundled test oracle that scores sequence length."""
    return [sys.executable, "-m", "moboseq.oracles.echo_length", "--mode", mode]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


CANNED_BATCH = ("ACDEFGHIK", "LMNPQRSTV", "WY", "A")


def check_external(spec: OracleSpec, batch: Seq[str] = CANNED_BATCH) -> list[CheckResult]:
    """Protocol conformance checks: handshake, alignment, id ordering, determinism, latency."""
    results: list[CheckResult] = []
    try:
        oracle = spawn_external(spec)
    except OracleFailure as exc:
        return [CheckResult("handshake", False, str(exc))]
    results.append(CheckResult("handshake", True, json.dumps(oracle.hello)))
    try:
        responses = []
        latencies = []
        for _ in range(2):
            t0 = time.perf_counter()
            rid, msg = oracle.request(list(batch))
            latencies.append(time.perf_counter() - t0)
            responses.append((rid, msg))
        aligned = all(
            m.get("type") == "scores" and isinstance(m.get("values"), list) and len(m["values"]) == len(batch)
            for _, m in responses
        )
        counts = [len(m["values"]) if isinstance(m.get("values"), list) else None for _, m in responses]
        results.append(CheckResult("alignment", aligned, f"{len(batch)} sequences, value counts {counts}"))
        ids_ok = all(m.get("id") == rid for rid, m in responses) and responses[0][0] < responses[1][0]
        results.append(CheckResult("ids", ids_ok, f"sent {[r for r, _ in responses]}, got {[m.get('id') for _, m in responses]}"))
        v1, v2 = (m.get("values") for _, m in responses)
        results.append(CheckResult("determinism", v1 == v2, f"first {v1}, second {v2}"))
        worst = max(latencies)
        results.append(CheckResult("latency", worst <= spec.request_timeout, f"max round trip {worst * 1e3:.1f} ms"))
    except OracleFailure as exc:
        results.append(CheckResult("protocol", False, str(exc)))
    finally:
        oracle.close()
    return results


# ---------------------------------------------------------------------------
# Budgeted bank
# ---------------------------------------------------------------------------


class OracleBank:
    """Ordered oracles, exact-match cache and strict call budget.

    One call is one novel sequence scored on every objective. ``replay`` is a
    store of previously paid results (a resumed run): a miss that is found
    there still counts as a call of this run but skips the oracle I/O.
    """

    def __init__(self, oracles: Seq[Oracle], budget: int | None = None, replay: Mapping[str, np.ndarray] | None = None):
        if not oracles:
            raise ConfigError("at least one oracle is required")
        names = [o.name for o in oracles]
        if len(set(names)) != len(names):
            raise ConfigError(f"oracle names must be unique, got {names}")
        if budget is not None and budget < 0:
            raise ValueError("budget must be non-negative")
        self.oracles = list(oracles)
        self.initial_budget = budget
        self.cache: dict[str, np.ndarray] = {}
        self.replay = dict(replay or {})
        self.call_log: list[Evaluation] = []
        self.oracle_seconds = np.zeros(len(self.oracles))
        self.oracle_queries = np.zeros(len(self.oracles), dtype=int)

    @property
    def k(self) -> int:
        return len(self.oracles)

    @property
    def spent(self) -> int:
        return len(self.call_log)

    @property
    def remaining(self) -> float:
        if self.initial_budget is None:
            return math.inf
        return self.initial_budget - self.spent

    def is_cached(self, s: str) -> bool:
        return s in self.cache

    def novel(self, seqs: Seq[str]) -> list[str]:
        """Distinct uncached sequences in first-occurrence order."""
        seen = set()
        out = []
        for s in seqs:
            if s not in self.cache and s not in seen:
                seen.add(s)
                out.append(s)
        return out

    def score(self, seqs: Seq[str], phase: str = "bo") -> np.ndarray:
        """Score vectors of ``seqs`` with shape (len(seqs), k)."""
        novel = self.novel(seqs)
        if len(novel) > self.remaining:
            raise BudgetExhausted(f"{len(novel)} novel sequences but only {self.remaining} calls left")
        if novel:
            fresh = [s for s in novel if s not in self.replay]
            t0 = time.perf_counter()
            raw = np.empty((len(fresh), self.k))
            if fresh:
                for j, oracle in enumerate(self.oracles):
                    tj = time.perf_counter()
                    vals = np.asarray(oracle.score_batch(fresh), dtype=float)
                    self.oracle_seconds[j] += time.perf_counter() - tj
                    self.oracle_queries[j] += len(fresh)
                    if vals.shape != (len(fresh),):
                        raise OracleFailure(f"oracle {oracle.name!r} returned {vals.shape} values for {len(fresh)} sequences")
                    raw[:, j] = -vals if oracle.direction == "minimize" else vals
            per_call = (time.perf_counter() - t0) / len(novel)
            row = {s: raw[i] for i, s in enumerate(fresh)}
            for s in novel:
                vec = row[s] if s in row else np.asarray(self.replay[s], dtype=float)
                self.cache[s] = vec
                self.call_log.append(Evaluation(self.spent, s, phase, vec, per_call))
        if len(seqs) == 0:
            return np.empty((0, self.k))
        return np.stack([self.cache[s] for s in seqs])

    def close(self) -> None:
        for o in self.oracles:
            o.close()


def score(bank: OracleBank, sequences: Seq[str], phase: str = "bo") -> np.ndarray:
    return bank.score(sequences, phase)


# ---------------------------------------------------------------------------
# Ground truth by enumeration
# ---------------------------------------------------------------------------


@dataclass
class GroundTruth:
    front: ParetoState
    count: int
    reference: np.ndarray

    @property
    def hypervolume(self) -> float:
        return self.front.hypervolume


def brute_force_front(
    space: MutationSpace,
    oracles: Seq[Oracle],
    reference: Seq[float] | None = None,
    cap: int = DEFAULT_ENUMERATION_CAP,
    chunk: int = 8192,
    allow_external: bool = False,
) -> GroundTruth:
    """Score every member of ``space`` and return the exact front.

    Without an explicit ``reference`` the default rule is applied to the
    full score table.
    """
    if not allow_external and any(o.external for o in oracles):
        raise ExternalOracleRefused("enumeration against external oracles is refused; pass allow_external=True")
    total = space.count()
    if total > cap:
        raise SpaceTooLarge(f"space has {total} members, above the enumeration cap {cap}")
    k = len(oracles)
    front_seqs: list[str] = []
    front_pts = np.empty((0, k))
    lo = np.full(k, np.inf)
    count = 0
    it = enumerate_space(space, cap=cap)
    while True:
        block = [s for _, s in zip(range(chunk), it)]
        if not block:
            break
        count += len(block)
        S = np.empty((len(block), k))
        for j, o in enumerate(oracles):
            v = np.asarray(o.score_batch(block), dtype=float)
            S[:, j] = -v if o.direction == "minimize" else v
        lo = np.minimum(lo, S.min(axis=0))
        pts = np.vstack([front_pts, S])
        seqs = front_seqs + block
        mask = nondominated_mask(pts)
        front_pts = pts[mask]
        front_seqs = [s for s, m in zip(seqs, mask) if m]
    ref = default_reference(lo[None, :]) if reference is None else np.asarray(reference, dtype=float)
    state = ParetoState(ref)
    state.update_many(front_seqs, front_pts)
    return GroundTruth(state, count, ref)
