"""Run orchestration: initialization, the BO loop, baselines, traces and benchmarks."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence as Seq

import numpy as np
import yaml

from .acquisition import (
    AcquisitionContext,
    EHVIAcquisition,
    LogEIAcquisition,
    QEHVIAcquisition,
    QNEHVIAcquisition,
)
from .config import BenchmarkConfig, RunConfig
from .encoding import Encoder, make_encoder
from .errors import SpaceExhausted, WrongObjectiveCount
from .evolve import ga_batch_optimize, ga_sum_baseline, nsga2
from .oracle import GroundTruth, OracleBank, brute_force_front, build_oracle
from .pareto import ParetoState, default_reference, hypervolume, nondominated_mask, shannon_entropy
from .runlog import IterationDiagnostics, RunLog, rows_to_csv, write_atomic
from .seqspace import MutationSpace, enumerate_space, random_member, sample_initial
from .surrogate import fit

__all__ = ["RunConfig", "RunLog", "run", "hv_trace", "entropy_trace", "benchmark", "write_run_files"]

FRESH_DRAW_ATTEMPTS = 1000


def _seed_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    init_ss, method_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(method_ss)


def _fresh(space: MutationSpace, taken, rng: np.random.Generator) -> str:
    """A feasible sequence outside ``taken``."""
    for _ in range(FRESH_DRAW_ATTEMPTS):
        s = random_member(space, rng)
        if s not in taken:
            return s
    rest = [s for s in enumerate_space(space) if s not in taken]
    if not rest:
        raise SpaceExhausted("every feasible sequence has been scored")
    return rest[int(rng.integers(len(rest)))]


class _EmbeddingCache:
    def __init__(self, encoder: Encoder):
        self.encoder = encoder
        self.rows: dict[str, np.ndarray] = {}

    def __call__(self, seqs: Seq[str]) -> np.ndarray:
        missing = [s for s in dict.fromkeys(seqs) if s not in self.rows]
        if missing:
            for s, v in zip(missing, self.encoder.encode_batch(missing)):
                self.rows[s] = v
        return np.stack([self.rows[s] for s in seqs])


def _reference(config: RunConfig, init_scores: np.ndarray) -> np.ndarray:
    if isinstance(config.reference, str):
        return default_reference(init_scores)
    return np.asarray(config.reference, dtype=float)


def _acquisition(config: RunConfig, model, ctx: AcquisitionContext, q: int, rng: np.random.Generator):
    k = model.k
    method = config.method
    if method == "boat-logei":
        if k != 1:
            raise WrongObjectiveCount(f"boat-logei needs one objective, got {k}")
        return LogEIAcquisition(model, float(model.fits[0].y.max() * model.fits[0].y_std + model.fits[0].y_mean))
    if method == "boat-ehvi":
        if k == 1:
            best = float(np.max(model.fits[0].y) * model.fits[0].y_std + model.fits[0].y_mean)
            return LogEIAcquisition(model, best)
        if k == 2:
            return EHVIAcquisition(model, ctx)
        return QEHVIAcquisition(model, ctx, 1, rng)
    if method == "boat-qehvi":
        return QEHVIAcquisition(model, ctx, q, rng)
    if method == "boat-qnehvi":
        return QNEHVIAcquisition(model, ctx, q, rng)
    raise ValueError(f"{method} is not a BO method")


def _bo_loop(config: RunConfig, bank: OracleBank, encoder: Encoder, ref: np.ndarray,
             rng: np.random.Generator, log: RunLog, checkpoint, t_start: float) -> None:
    space = config.space
    embed = _EmbeddingCache(encoder)
    iteration = 0
    while bank.remaining > 0:
        iteration += 1
        q = int(min(config.q, bank.remaining))
        seqs = [e.sequence for e in bank.call_log]
        Y = np.stack([e.scores for e in bank.call_log])
        t0 = time.perf_counter()
        model = fit(embed(seqs), Y, config.surrogate)
        fit_seconds = time.perf_counter() - t0
        front = nondominated_mask(Y)
        ctx = AcquisitionContext(Y[front], ref, config.acquisition.mc_samples)
        acq = _acquisition(config, model, ctx, q, rng)
        scored = bank.cache

        def batch_values(batches: list[tuple]) -> np.ndarray:
            uniq = list(dict.fromkeys(s for b in batches for s in b))
            pos = {s: i for i, s in enumerate(uniq)}
            idx = np.array([[pos[s] for s in b] for b in batches], dtype=int)
            vals = np.asarray(acq.evaluate(embed(uniq), idx), dtype=float)
            bad = [any(s in scored for s in b) or len(set(b)) < len(b) for b in batches]
            vals[np.array(bad)] = -np.inf
            return vals

        weights = np.where(front, config.acquisition.front_weight, 1.0)
        t0 = time.perf_counter()
        res = ga_batch_optimize(batch_values, space, config.ga, q, seqs, rng, weights, vectorized=True)
        ga_seconds = time.perf_counter() - t0
        batch: list[str] = []
        for s in res.best:
            if s in scored or s in batch:
                s = _fresh(space, set(scored) | set(batch), rng)
            batch.append(s)
        bank.score(batch, phase="bo")
        _stamp(bank, log, t_start)
        hv = hypervolume(np.stack([e.scores for e in bank.call_log]), ref)
        log.diagnostics.append(IterationDiagnostics(
            iteration, model.n,
            [f.lml for f in model.fits],
            [f.hyper.signal_variance for f in model.fits],
            [f.hyper.noise_variance for f in model.fits],
            float(res.best_fitness), fit_seconds, ga_seconds, hv,
        ))
        checkpoint()


def _stamp(bank: OracleBank, log: RunLog, t_start: float) -> None:
    """Copy new bank calls into the log with their elapsed run time."""
    now = time.perf_counter() - t_start
    for e in bank.call_log[len(log.evaluations):]:
        log.elapsed.append(now)
        log.evaluations.append(e)


def run(config: RunConfig, run_dir: str | Path | None = None, resume: bool = False) -> RunLog:
    """Execute one run; with ``run_dir`` every output file is kept current on disk.

    ``resume`` replays results already recorded in ``run_dir/runlog.csv``
    instead of querying the oracles again.
    """
    t_start = time.perf_counter()
    rng_init, rng = _seed_streams(config.seed)
    replay = None
    if resume and run_dir is not None and (Path(run_dir) / "runlog.csv").exists():
        prior = RunLog.from_csv(Path(run_dir) / "runlog.csv")
        replay = {e.sequence: e.scores for e in prior.evaluations}
    oracles = []
    try:
        for spec in config.oracles:
            oracles.append(build_oracle(spec, config.space))
    except BaseException:
        for o in oracles:
            o.close()
        raise
    bank = OracleBank(oracles, budget=config.total_budget, replay=replay)
    log = RunLog(k=config.k, seed=config.seed, config=config.to_dict())
    ref_holder: list = [None]

    def checkpoint(final: bool = False):
        if run_dir is not None:
            write_run_files(run_dir, log, ref_holder[0], config, derived=final)

    try:
        if config.total_budget == 0:
            log.status = "no-op"
            checkpoint(final=True)
            return log
        init = sample_initial(config.space, min(config.n_init, config.total_budget), config.init_max_mut, rng_init)
        init_scores = bank.score(init, phase="init")
        _stamp(bank, log, t_start)
        ref = ref_holder[0] = _reference(config, init_scores)
        checkpoint()
        if config.method.startswith("boat-") and bank.remaining > 0:
            corpus = [e.sequence for e in bank.call_log]
            encoder = make_encoder(config.encoder, corpus=corpus, n=int(config.encoder_options.get("n", 5)),
                                   path=config.encoder_options.get("path"))
            _bo_loop(config, bank, encoder, ref, rng, log, checkpoint, t_start)
        elif config.method == "ga-sum":
            ga_sum_baseline(bank, config.space, config.ga, None, rng, initial=init)
        elif config.method == "nsga2":
            nsga2(bank, config.space, config.ga, None, rng, initial=init)
        elif config.method == "random":
            taken = set(bank.cache)
            batch = []
            while len(batch) < bank.remaining:
                s = _fresh(config.space, taken, rng)
                taken.add(s)
                batch.append(s)
            bank.score(batch, phase="baseline")
        _stamp(bank, log, t_start)
        log.status = "complete"
    except BaseException as exc:
        _stamp(bank, log, t_start)
        log.status = f"error: {type(exc).__name__}: {exc}"
        checkpoint(final=True)
        raise
    finally:
        bank.close()
    log.oracle_seconds = bank.oracle_seconds.tolist()
    checkpoint(final=True)
    return log


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


def hv_trace(log: RunLog, ref: Seq[float]) -> np.ndarray:
    """(oracle_calls, hypervolume) after every call, replayed with a fixed reference."""
    state = ParetoState(np.asarray(ref, dtype=float))
    out = np.empty((len(log.evaluations), 2))
    for i, e in enumerate(log.evaluations):
        state.update(i, e.scores)
        out[i] = (i + 1, state.hypervolume)
    return out


def entropy_trace(log: RunLog, window: int = 100) -> np.ndarray:
    """(oracle_calls, cumulative entropy, windowed entropy) every ``window`` calls.

    A final partial window is reported at the last call.
    """
    if window < 1:
        raise ValueError("window must be at least 1")
    seqs = log.sequences
    n = len(seqs)
    marks = list(range(window, n + 1, window))
    if n and (not marks or marks[-1] != n):
        marks.append(n)
    rows = []
    prev = 0
    for c in marks:
        rows.append((c, shannon_entropy(seqs[:c]), shannon_entropy(seqs[prev:c])))
        prev = c
    return np.array(rows, dtype=float).reshape(-1, 3)


def front_of(log: RunLog) -> tuple[list[str], np.ndarray]:
    Y = log.scores
    if len(Y) == 0:
        return [], Y
    mask = nondominated_mask(Y)
    idx = np.flatnonzero(mask)
    return [log.evaluations[i].sequence for i in idx], Y[idx]


def write_run_files(run_dir: str | Path, log: RunLog, ref, config: RunConfig | None = None,
                    window: int = 100, derived: bool = True) -> None:
    """Write the run files atomically; derived files (front, traces) come
    from the log alone and are skipped when ``derived`` is false."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot = dict(config.to_dict() if config is not None else (log.config or {}))
    snapshot["status"] = log.status
    if ref is not None:
        snapshot["resolved_reference"] = [float(v) for v in ref]
    write_atomic(run_dir / "config.snapshot", yaml.safe_dump(snapshot, sort_keys=False))
    write_atomic(run_dir / "runlog.csv", log.runlog_csv())
    if derived:
        write_derived(run_dir, log, ref, window)
    diag_header = ["iteration", "n_train"]
    for j in range(log.k):
        diag_header += [f"lml_{j + 1}", f"signal_variance_{j + 1}", f"noise_variance_{j + 1}"]
    diag_header += ["acquisition_value", "fit_seconds", "ga_seconds", "hypervolume"]
    rows = []
    for d in log.diagnostics:
        r = [d.iteration, d.n_train]
        for j in range(log.k):
            r += [float(d.lml[j]), float(d.signal_variance[j]), float(d.noise_variance[j])]
        r += [float(d.acquisition_value), float(d.fit_seconds), float(d.ga_seconds), float(d.hypervolume)]
        rows.append(r)
    write_atomic(run_dir / "diagnostics.csv", rows_to_csv(diag_header, rows))


def write_derived(run_dir: str | Path, log: RunLog, ref, window: int = 100) -> None:
    run_dir = Path(run_dir)
    score_cols = [f"score_{j + 1}" for j in range(log.k)]
    seqs, F = front_of(log)
    write_atomic(run_dir / "front.csv", rows_to_csv(["sequence"] + score_cols,
                                                    [[s] + [float(v) for v in f] for s, f in zip(seqs, F)]))
    if ref is not None:
        tr = hv_trace(log, ref)
        write_atomic(run_dir / "hv_trace.csv", rows_to_csv(["oracle_calls", "hypervolume"],
                                                           [[int(c), float(h)] for c, h in tr]))
    et = entropy_trace(log, window)
    write_atomic(run_dir / "entropy_trace.csv", rows_to_csv(
        ["oracle_calls", "cumulative_entropy", "windowed_entropy"],
        [[int(c), float(a), float(b)] for c, a, b in et]))


def read_reference(run_dir: str | Path) -> np.ndarray | None:
    path = Path(run_dir) / "config.snapshot"
    if not path.exists():
        return None
    data = yaml.safe_load(path.read_text()) or {}
    ref = data.get("resolved_reference")
    return None if ref is None else np.asarray(ref, dtype=float)


# ---------------------------------------------------------------------------
# Benchmarks
# ---------------------------------------------------------------------------


@dataclass
class BenchmarkReport:
    reference: np.ndarray
    logs: dict[str, list[RunLog]]
    hv: dict[str, np.ndarray]  # method -> (seeds, calls)
    entropy: dict[str, np.ndarray]  # method -> (seeds,) final cumulative entropy
    ground_truth: GroundTruth | None = None
    flags: list[str] = field(default_factory=list)

    def mean_se(self, method: str) -> tuple[np.ndarray, np.ndarray]:
        H = self.hv[method]
        mean = H.mean(axis=0)
        se = H.std(axis=0, ddof=1) / math.sqrt(H.shape[0]) if H.shape[0] > 1 else np.zeros(H.shape[1])
        return mean, se

    def final(self, method: str) -> np.ndarray:
        return self.hv[method][:, -1]

    def fraction(self, method: str) -> np.ndarray | None:
        if self.ground_truth is None or self.ground_truth.hypervolume <= 0:
            return None
        return self.final(method) / self.ground_truth.hypervolume


def _stack_traces(traces: list[np.ndarray]) -> np.ndarray:
    n = max(len(t) for t in traces)
    out = np.empty((len(traces), n))
    for i, t in enumerate(traces):
        out[i, : len(t)] = t
        out[i, len(t):] = t[-1] if len(t) else 0.0  # error paths end early; hold the last value
    return out


def benchmark(
    configs: Seq[tuple[str, int, RunConfig]],
    ground_truth: GroundTruth | None = None,
    reference: Seq[float] | None = None,
    out_dir: str | Path | None = None,
    window: int = 100,
) -> BenchmarkReport:
    """Run every (label, seed, config) and aggregate traces on one fixed reference.

    The reference is, in order of preference: ``reference``, the ground
    truth's, a fixed reference shared by the configs, or the default rule
    applied to every score observed across all runs.
    """
    logs: dict[str, list[RunLog]] = {}
    for label, seed, cfg in configs:
        run_dir = None if out_dir is None else Path(out_dir) / "runs" / f"{label}_seed{seed}"
        logs.setdefault(label, []).append(run(cfg, run_dir))
    if reference is not None:
        ref = np.asarray(reference, dtype=float)
    elif ground_truth is not None:
        ref = ground_truth.reference
    elif configs and not isinstance(configs[0][2].reference, str):
        ref = np.asarray(configs[0][2].reference, dtype=float)
    else:
        ref = default_reference(np.vstack([l.scores for ls in logs.values() for l in ls]))
    hv = {m: _stack_traces([hv_trace(l, ref)[:, 1] for l in ls]) for m, ls in logs.items()}
    ent = {m: np.array([shannon_entropy(l.sequences) for l in ls]) for m, ls in logs.items()}
    report = BenchmarkReport(ref, logs, hv, ent, ground_truth)
    report.flags.extend(below_random_flags(report))
    if out_dir is not None:
        write_report(out_dir, report)
    return report


def below_random_flags(report: BenchmarkReport) -> list[str]:
    """Methods whose mean final hypervolume is below random search; reported, not raised."""
    if "random" not in report.hv:
        return []
    floor = report.final("random").mean()
    return [f"{m} finished below random search ({report.final(m).mean():.6g} < {floor:.6g})"
            for m in report.hv if m != "random" and report.final(m).mean() < floor]


def write_report(out_dir: str | Path, report: BenchmarkReport) -> None:
    out_dir = Path(out_dir)
    rows = []
    for m in report.hv:
        mean, se = report.mean_se(m)
        n = report.hv[m].shape[0]
        rows.extend([m, c + 1, float(mu), float(s), n] for c, (mu, s) in enumerate(zip(mean, se)))
    write_atomic(out_dir / "hv_mean_se.csv", rows_to_csv(["method", "oracle_calls", "mean", "se", "n_seeds"], rows))
    rows = []
    for m, ls in report.logs.items():
        frac = report.fraction(m)
        for i, l in enumerate(ls):
            rows.append([m, l.seed, float(report.final(m)[i]), float(report.entropy[m][i]),
                         "" if frac is None else float(frac[i])])
    write_atomic(out_dir / "entropy_hv_scatter.csv",
                 rows_to_csv(["method", "seed", "final_hypervolume", "cumulative_entropy", "ground_truth_fraction"], rows))
    lines = [f"reference: {', '.join(repr(float(v)) for v in report.reference)}"]
    if report.ground_truth is not None:
        lines.append(f"ground truth: hypervolume {report.ground_truth.hypervolume!r} over {report.ground_truth.count} sequences")
    for m in report.hv:
        fin = report.final(m)
        se = fin.std(ddof=1) / math.sqrt(len(fin)) if len(fin) > 1 else 0.0
        line = f"{m}: final hypervolume {fin.mean():.6g} +/- {se:.3g} (n={len(fin)})"
        frac = report.fraction(m)
        if frac is not None:
            line += f"; ground-truth fraction {frac.mean():.4f}"
        lines.append(line)
    lines.extend(f"FLAG: {f}" for f in report.flags)
    write_atomic(out_dir / "summary.txt", "\n".join(lines) + "\n")


def run_benchmark(bench: BenchmarkConfig, out_dir: str | Path | None = None) -> BenchmarkReport:
    configs = bench.run_configs()
    gt = None
    if bench.ground_truth:
        cfg0 = configs[0][2]
        oracles = [build_oracle(s, cfg0.space) for s in cfg0.oracles]
        try:
            ref = None if isinstance(cfg0.reference, str) else cfg0.reference
            gt = brute_force_front(cfg0.space, oracles, reference=ref)
        finally:
            for o in oracles:
                o.close()
    return benchmark(configs, ground_truth=gt, reference=bench.reference, out_dir=out_dir, window=bench.window)
