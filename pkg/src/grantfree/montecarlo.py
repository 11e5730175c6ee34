"""Seeded, trial-parallel Monte-Carlo experiments.

Randomness is derived from one master seed. Trial ``i`` draws everything from
``SeedSequence(seed, spawn_key=(1, i))``; fixed pilots, when requested, come
from ``SeedSequence(seed, spawn_key=(0,))``. Every trial is therefore a pure
function of ``(seed, i)`` and the configuration, whatever the worker count or
execution order. Sweep points reuse the same trial streams (common random
numbers), which tightens comparisons between neighbouring points.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import decision
from .detector import DetectorOptions, run_detector
from .initializers import IllConditioned, build_design_matrix, initialize, prior_moments
from .model import (
    ChannelSet,
    SystemConfig,
    device_snr,
    draw_activity,
    draw_channels,
    draw_pilots,
    synthesize_received,
)

logger = logging.getLogger(__name__)

STUDIES = ("convergence", "lambda_sweep", "snr_sweep", "single")
DETECTORS = ("iterative_ml", "lmmse_threshold_baseline")
FULL_CSI_BASELINE = "lmmse_full_csi"


@dataclass
class ExperimentSpec:
    base: SystemConfig = field(default_factory=SystemConfig)
    study: str = "single"
    sweep_values: list[float] = field(default_factory=list)
    initializers: list[str] = field(default_factory=lambda: ["lmmse"])
    detectors: list[str] = field(default_factory=lambda: list(DETECTORS))
    target_pfa: list[float] = field(default_factory=lambda: [0.1, 0.01, 0.001])
    fixed_pilots: bool = False
    full_csi_baseline: bool = False
    trace: bool = False
    v_points: int = 81
    refresh_every: int | None = 1

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ValueError(f"study must be one of {STUDIES}, got {self.study!r}")
        if self.study in ("lambda_sweep", "snr_sweep") and not self.sweep_values:
            raise ValueError("sweep_values must be non-empty for sweep studies")
        for p in self.target_pfa:
            if not 0.0 < p < 1.0:
                raise ValueError(f"target_pfa entries must lie in (0, 1), got {p!r}")
        for d in self.detectors:
            if d not in DETECTORS:
                raise ValueError(f"unknown detector {d!r}; expected one of {DETECTORS}")
        if self.v_points < 2:
            raise ValueError("v_points must be >= 2")

    @property
    def v_grid(self) -> np.ndarray:
        return decision.default_v_grid(self.v_points)

    def with_base(self, **changes) -> "ExperimentSpec":
        return dataclasses.replace(self, base=dataclasses.replace(self.base, **changes))

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["base"] = self.base.to_dict()
        return out


@dataclass
class TrialResult:
    trial_index: int
    gamma_true: np.ndarray
    active: np.ndarray
    estimates: dict[str, np.ndarray]
    snr: dict[str, np.ndarray]
    traces: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    counters: Counter = field(default_factory=Counter)
    wall_time: float = 0.0


def trial_rng(seed: int, trial_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(1, int(trial_index))))


def pilot_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0,)))


def detector_label(detector: str, initializer: str, spec: ExperimentSpec) -> str:
    if detector == "iterative_ml" and len(spec.initializers) > 1:
        return f"iterative_ml[{initializer}]"
    return detector


def run_trial(spec: ExperimentSpec, trial_index: int) -> TrialResult:
    start = time.perf_counter()
    cfg = spec.base
    rng = trial_rng(cfg.seed, trial_index)
    if spec.fixed_pilots:
        pilots = draw_pilots(pilot_rng(cfg.seed), cfg.K, cfg.T)
    else:
        pilots = draw_pilots(rng, cfg.K, cfg.T)
    channels = draw_channels(rng, cfg.K, cfg.M, cfg.lambdas(), cfg.betas())
    truth = draw_activity(rng, cfg.K, cfg.epsilon_a, cfg.rhos())
    sigma2 = cfg.sigma2
    received = synthesize_received(channels, pilots, truth.gamma, sigma2, rng)

    prior = prior_moments(cfg.epsilon_a, cfg.rhos(), cfg.K) if cfg.epsilon_a > 0 else None
    design = build_design_matrix(channels.g, pilots, received.y)
    snr = device_snr(channels, sigma2)
    result = TrialResult(trial_index, truth.gamma, truth.active, {}, {})
    options = DetectorOptions(
        n_sweeps=cfg.n_sweeps, trace=spec.trace, refresh_every=spec.refresh_every
    )

    def start_point(name):
        if name in ("lmmse", "mf") and prior is None:
            # epsilon_a = 0 leaves D singular; the zero vector is the only consistent prior mean
            result.counters["degenerate_prior"] += 1
            return np.zeros(cfg.K, dtype=complex)
        try:
            return initialize(name, design, sigma2, prior, truth.gamma).gamma
        except IllConditioned:
            result.counters["zf_ill_conditioned"] += 1
            if prior is None:
                return np.zeros(cfg.K, dtype=complex)
            return initialize("lmmse", design, sigma2, prior).gamma

    if "lmmse_threshold_baseline" in spec.detectors:
        result.estimates["lmmse_threshold_baseline"] = start_point("lmmse")
        result.snr["lmmse_threshold_baseline"] = snr
    if "iterative_ml" in spec.detectors:
        for name in spec.initializers:
            label = detector_label("iterative_ml", name, spec)
            init = start_point(name)
            run = run_detector(
                received, channels.g, channels.lam, pilots, init, options, gamma_true=truth.gamma
            )
            result.estimates[label] = run.gamma
            result.snr[label] = snr
            result.counters["inverse_fallbacks"] += run.state.fallbacks
            result.counters["amplitude_special_cases"] += run.state.degenerate
            if spec.trace:
                result.traces[label] = (np.array(run.trace.loglik), np.array(run.trace.mse))
    if spec.full_csi_baseline:
        full = ChannelSet(g=channels.h, lam=np.zeros(cfg.K), h=channels.h, beta=channels.beta)
        full_design = build_design_matrix(full.g, pilots, received.y)
        if prior is None:
            est = np.zeros(cfg.K, dtype=complex)
        else:
            est = initialize("lmmse", full_design, sigma2, prior).gamma
        result.estimates[FULL_CSI_BASELINE] = est
        result.snr[FULL_CSI_BASELINE] = device_snr(full, sigma2)
    result.wall_time = time.perf_counter() - start
    return result


def _run_chunk(args) -> list[TrialResult]:
    spec, indices = args
    return [run_trial(spec, i) for i in indices]


def run_trials(spec: ExperimentSpec, n_trials: int | None = None, workers: int = 1) -> list[TrialResult]:
    """All trials of ``spec``, ordered by trial index."""
    n = spec.base.n_trials if n_trials is None else n_trials
    if workers <= 1 or n <= 1:
        return [run_trial(spec, i) for i in range(n)]
    n_chunks = min(n, workers * 4)
    chunks = [list(range(n))[c::n_chunks] for c in range(n_chunks)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, [(spec, c) for c in chunks]))
    results = [r for part in parts for r in part]
    results.sort(key=lambda r: r.trial_index)
    return results


def merge_counters(results) -> dict[str, int]:
    total = Counter()
    for r in results:
        total.update(r.counters)
    return dict(sorted(total.items()))


def roc_curves(results: list[TrialResult], v_grid) -> dict[str, decision.RocCurve]:
    labels = list(results[0].estimates)
    return {
        label: decision.roc(
            [r.estimates[label] for r in results],
            [r.active for r in results],
            [r.snr[label] for r in results],
            v_grid,
        )
        for label in labels
    }


@dataclass
class StudyOutput:
    """Tabular results of a study, ready for the CSV writers."""

    study: str
    convergence: list[tuple] = field(default_factory=list)  # (initializer, update_index, mean_loglik, mean_mse)
    roc: list[tuple] = field(default_factory=list)  # (detector, sweep_value, v_db, p_fa, p_md)
    slices: list[tuple] = field(default_factory=list)  # (detector, sweep_value, target_pfa, p_md, se)
    counters: dict[str, int] = field(default_factory=dict)
    curves: dict = field(default_factory=dict)

    def slice_value(self, detector: str, sweep_value: float, target_pfa: float) -> tuple[float, float]:
        for d, sv, p, md, se in self.slices:
            if d == detector and sv == sweep_value and p == target_pfa:
                return md, se
        raise KeyError((detector, sweep_value, target_pfa))


def summarize(out: StudyOutput, results, spec: ExperimentSpec, sweep_value: float) -> None:
    curves = roc_curves(results, spec.v_grid)
    out.curves[sweep_value] = curves
    for label, curve in curves.items():
        for v, md, fa in curve.points():
            out.roc.append((label, sweep_value, v, fa, md))
        for p in spec.target_pfa:
            md, se = curve.p_md_at(p)
            out.slices.append((label, sweep_value, p, md, se))


def add_counters(out: StudyOutput, results) -> None:
    merged = Counter(out.counters)
    merged.update(merge_counters(results))
    out.counters = dict(sorted(merged.items()))


def convergence_study(spec: ExperimentSpec, workers: int = 1) -> StudyOutput:
    spec = dataclasses.replace(
        spec,
        study="convergence",
        trace=True,
        detectors=["iterative_ml"],
        initializers=spec.initializers if len(spec.initializers) > 1 else ["zero", "zf", "lmmse", "mf", "genie"],
    )
    results = run_trials(spec, workers=workers)
    out = StudyOutput("convergence")
    for name in spec.initializers:
        label = detector_label("iterative_ml", name, spec)
        ll = np.mean([r.traces[label][0] for r in results], axis=0)
        err = np.mean([r.traces[label][1] for r in results], axis=0)
        for i, (a, b) in enumerate(zip(ll, err)):
            out.convergence.append((name, i, float(a), float(b)))
    add_counters(out, results)
    return out


def lambda_sweep(spec: ExperimentSpec, workers: int = 1) -> StudyOutput:
    out = StudyOutput("lambda_sweep")
    for lam in spec.sweep_values:
        point = dataclasses.replace(spec.with_base(lam=float(lam)), study="lambda_sweep")
        results = run_trials(point, workers=workers)
        summarize(out, results, point, float(lam))
        add_counters(out, results)
    return out


def snr_sweep(spec: ExperimentSpec, workers: int = 1) -> StudyOutput:
    out = StudyOutput("snr_sweep")
    for snr_db in spec.sweep_values:
        point = dataclasses.replace(
            spec.with_base(snr_db=float(snr_db)), study="snr_sweep", full_csi_baseline=True
        )
        results = run_trials(point, workers=workers)
        summarize(out, results, point, float(snr_db))
        add_counters(out, results)
    return out


def single_study(spec: ExperimentSpec, workers: int = 1) -> StudyOutput:
    out = StudyOutput("single")
    results = run_trials(spec, workers=workers)
    sweep_value = float(spec.base.lam)
    summarize(out, results, spec, sweep_value)
    add_counters(out, results)
    return out


def run_study(spec: ExperimentSpec, workers: int = 1) -> StudyOutput:
    runners = {
        "convergence": convergence_study,
        "lambda_sweep": lambda_sweep,
        "snr_sweep": snr_sweep,
        "single": single_study,
    }
    return runners[spec.study](spec, workers=workers)


def first_crossing(trace: np.ndarray, target: float, eps: float) -> int | None:
    """First update index from which the trace stays within ``eps`` of ``target``."""
    close = np.abs(np.asarray(trace) - target) <= eps
    if not close[-1]:
        return None
    far = np.flatnonzero(~close)
    return 0 if far.size == 0 else int(far[-1] + 1)


def standard_error(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else math.nan
