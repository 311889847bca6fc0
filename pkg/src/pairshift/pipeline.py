"""
End-to-end routes: prepare, shift, difference, clean up, Fourier-sample Z.

``run`` dispatches on a ``RouteConfig``. Each run harvests (V, Delta) once and
threads them through as read-only basis data; nothing is shared across runs.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .analysis import (
    _branch_transform,
    _outcome_grid,
    dense_fourier_distribution,
    enumerate_annihilator,
    fourier_distribution,
    in_annihilator,
    perturbed_dft,
)
from .circuits import (
    GateLog,
    audit_read_only,
    audit_scratch,
    gate_cleanup_jfree,
    gate_cleanup_reeval,
    gate_copy,
    gate_difference,
    gate_mul_data_neg,
    gate_reeval_shift,
    gate_unshift_known_T,
    priority_table,
)
from .errors import AccessibilityViolation, GateError, InstanceError, NoAccessiblePrime
from .groupstate import (
    Distribution,
    Instance,
    RegisterLayout,
    SparseState,
    affine_X,
    harvest,
    initial_state,
)
from .modarith import canonical

SCHEMA_VERSION = 1
ROUTES = ("jfree", "reeval")
CRT_SCHEMES = ("garner", "product_tree")
FALLBACKS = ("none", "partial", "postselect")


@dataclass(frozen=True)
class RouteConfig:
    route: str = "jfree"
    crt_scheme: str = "garner"
    cleanup: bool = True
    fallback: str = "none"
    qft_perturbation: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.route not in ROUTES:
            raise InstanceError(f"route must be one of {ROUTES}, got {self.route!r}")
        if self.crt_scheme not in CRT_SCHEMES:
            raise InstanceError(f"crt_scheme must be one of {CRT_SCHEMES}, got {self.crt_scheme!r}")
        if self.fallback not in FALLBACKS:
            raise InstanceError(f"fallback must be one of {FALLBACKS}, got {self.fallback!r}")
        if not self.cleanup and self.fallback != "none":
            raise InstanceError("cleanup=off is a diagnostic mode and requires fallback=none")
        if not 0.0 <= self.qft_perturbation <= 0.1:
            raise InstanceError(f"qft_perturbation must lie in [0, 0.1], got {self.qft_perturbation}")


@dataclass
class RunResult:
    instance: Instance
    config: RouteConfig
    final_state: SparseState
    z_distribution: Distribution
    gate_log: GateLog
    trace: list[tuple[str, str]] = field(default_factory=list)
    accessibility_report: list[dict] = field(default_factory=list)
    states: dict[str, SparseState] = field(default_factory=dict)
    success_probability: float | None = None


def state_checksum(state: SparseState) -> str:
    h = hashlib.sha256()
    for k in sorted(state.amps):
        a = state.amps[k]
        h.update(f"{k}:{a.real:.12e},{a.imag:.12e};".encode())
    return h.hexdigest()[:16]


class _Run:
    """Mutable bookkeeping for one run; the states it records are immutable."""

    def __init__(self, inst: Instance, config: RouteConfig, layout: RegisterLayout):
        self.inst = inst
        self.config = config
        self.layout = layout
        self.V, self.delta = harvest(inst)
        self.log = GateLog(route=config.route if config.fallback == "none" else f"{config.route}+{config.fallback}")
        self.trace: list[tuple[str, str]] = []
        self.states: dict[str, SparseState] = {}
        self.table = priority_table(self.delta, inst.primes)

    def record(self, name: str, state: SparseState) -> SparseState:
        state.check_normalized()
        audit_read_only(state, self.V, self.delta)
        self.trace.append((name, state_checksum(state)))
        self.states[name] = state
        return state

    def step(self, name, gate, state, scratch_clean=True) -> SparseState:
        state = gate.apply(state, self.log)
        if scratch_clean:
            audit_scratch(state)
        return self.record(name, state)

    def accessibility(self) -> list[dict]:
        return [
            {"prime": p, "index": None if i is None else i + 1}
            for p, i in zip(self.inst.primes, self.table)
        ]

    def missing(self) -> list[int]:
        return [p for p, i in zip(self.inst.primes, self.table) if i is None]

    def finish(self, state: SparseState, **extra) -> RunResult:
        dist = sample_distribution(state, self.config)
        if abs(dist.total() - 1.0) > 1e-9:
            raise AssertionError(f"Z distribution sums to {dist.total()}")
        return RunResult(
            self.inst,
            self.config,
            state,
            dist,
            self.log,
            self.trace,
            self.accessibility(),
            self.states,
            **extra,
        )


def sample_distribution(state: SparseState, config: RouteConfig) -> Distribution:
    """Fourier distribution of Z, through a perturbed QFT when epsilon > 0."""
    if config.qft_perturbation > 0:
        M = state.layout.meta["M2"]
        U, _ = perturbed_dft(M, config.qft_perturbation, np.random.default_rng(config.rng_seed))
        return dense_fourier_distribution(state, U)
    return fourier_distribution(state)


def _assert_T_zero(state: SparseState, modulus: int) -> None:
    t = state.layout["T"][0]
    for k in state.amps:
        if k[t] % modulus:
            raise GateError(f"T register not erased: {k[t]} (mod {modulus})")


def run_jfree(inst: Instance, config: RouteConfig | None = None) -> RunResult:
    """Prepare, Z <- -T*Delta, clean up, sample. Never allocates Y or J."""
    config = config or RouteConfig()
    layout = RegisterLayout.build(inst, crt_scheme=config.crt_scheme)
    run = _Run(inst, config, layout)
    state = run.record("prepare", initial_state(inst, layout))
    state = run.step("shift", gate_mul_data_neg(layout), state)
    if config.cleanup:
        if run.missing():
            raise AccessibilityViolation(run.missing())
        state = run.step("cleanup", gate_cleanup_jfree(layout, run.delta), state)
        _assert_T_zero(state, inst.P)
    return run.finish(state)


def run_reeval(inst: Instance, config: RouteConfig | None = None) -> RunResult:
    """Copy X to Y, re-evaluate Y at J+T, Z <- X - Y, clean up, sample."""
    config = config or RouteConfig(route="reeval")
    layout = RegisterLayout.build(inst, reeval=True, crt_scheme=config.crt_scheme)
    run = _Run(inst, config, layout)
    state = run.record("prepare", initial_state(inst, layout))
    state = run.step("copy", gate_copy(layout), state)
    state = run.step("shift", gate_reeval_shift(layout), state)
    state = run.step("difference", gate_difference(layout), state)
    if config.cleanup:
        if run.missing():
            raise AccessibilityViolation(run.missing())
        state = run.step("cleanup", gate_cleanup_reeval(layout, run.delta), state)
        _assert_T_zero(state, inst.P)
    return run.finish(state)


def run_partial_P(inst: Instance, config: RouteConfig | None = None) -> RunResult:
    """Clean up only the accessible primes; Z obeys the relation modulo their product."""
    config = config or RouteConfig(fallback="partial")
    _, delta = harvest(inst)
    table = priority_table(delta, inst.primes)
    acc = tuple(p for p, i in zip(inst.primes, table) if i is not None)
    if not acc:
        raise NoAccessiblePrime(inst.primes)
    reeval = config.route == "reeval"
    layout = RegisterLayout.build(inst, reeval=reeval, crt_scheme=config.crt_scheme, recover_primes=acc)
    run = _Run(inst, config, layout)
    state = run.record("prepare", initial_state(inst, layout))
    if reeval:
        state = run.step("copy", gate_copy(layout), state)
        state = run.step("shift", gate_reeval_shift(layout), state)
        state = run.step("difference", gate_difference(layout), state)
        state = run.step("cleanup", gate_cleanup_reeval(layout, run.delta, acc), state)
    else:
        state = run.step("shift", gate_mul_data_neg(layout), state)
        state = run.step("cleanup", gate_cleanup_jfree(layout, run.delta, acc), state)
    _assert_T_zero(state, math.prod(acc))
    return run.finish(state)


def project_zero_frequency(state: SparseState, slot: str = "T") -> tuple[SparseState, float]:
    """Inverse QFT on ``slot`` followed by projection onto frequency 0.

    Only the zero-frequency component is formed: its amplitude is the slot
    sum divided by sqrt(modulus). Returns the renormalized state and the
    projection probability.
    """
    pos = state.layout[slot][0]
    m = state.layout.moduli[pos]
    acc: dict[tuple[int, ...], list[complex]] = {}
    for k, a in state.amps.items():
        lab = list(k)
        lab[pos] = 0
        acc.setdefault(tuple(lab), []).append(a)
    scale = 1.0 / math.sqrt(m)
    out = {k: sum(v) * scale for k, v in acc.items()}
    out = {k: a for k, a in out.items() if a != 0}
    prob = math.fsum(abs(a) ** 2 for a in out.values())
    if prob == 0:
        raise GateError("zero-frequency projection has probability 0")
    return SparseState(state.layout, out).normalized(), prob


def run_postselect(inst: Instance, config: RouteConfig | None = None) -> tuple[RunResult, float]:
    """Postselection fallback: no T recovery, so accessibility is not needed."""
    config = config or RouteConfig(fallback="postselect")
    reeval = config.route == "reeval"
    layout = RegisterLayout.build(inst, reeval=reeval, crt_scheme=config.crt_scheme)
    run = _Run(inst, config, layout)
    state = run.record("prepare", initial_state(inst, layout))
    if reeval:
        state = run.step("copy", gate_copy(layout), state)
        state = run.step("shift", gate_reeval_shift(layout), state)
        state = run.step("difference", gate_difference(layout), state)
        state = run.step("unshift", gate_unshift_known_T(layout), state)
        state = run.step("uncopy", gate_copy(layout).inverted(), state)
    else:
        state = run.step("shift", gate_mul_data_neg(layout), state)
    state, prob = project_zero_frequency(state, "T")
    state = run.record("postselect", state)
    res = run.finish(state, success_probability=prob)
    return res, prob


def run(inst: Instance, config: RouteConfig) -> RunResult:
    if config.fallback == "partial":
        return run_partial_P(inst, config)
    if config.fallback == "postselect":
        return run_postselect(inst, config)[0]
    if config.route == "reeval":
        return run_reeval(inst, config)
    return run_jfree(inst, config)


def route_gates(inst: Instance, config: RouteConfig) -> tuple[RegisterLayout, list]:
    """The gate sequence a full-cleanup run would apply, without building any state."""
    reeval = config.route == "reeval"
    layout = RegisterLayout.build(inst, reeval=reeval, crt_scheme=config.crt_scheme)
    _, delta = harvest(inst)
    if reeval:
        gates = [gate_copy(layout), gate_reeval_shift(layout), gate_difference(layout)]
        cleanup = gate_cleanup_reeval
    else:
        gates = [gate_mul_data_neg(layout)]
        cleanup = gate_cleanup_jfree
    if config.cleanup:
        gates.append(cleanup(layout, delta))
    return layout, gates


def static_gate_log(inst: Instance, config: RouteConfig | None = None) -> GateLog:
    """Gate counts of a run, read off the gate descriptors (cheap at any P)."""
    config = config or RouteConfig()
    log = GateLog(route=config.route)
    for g in route_gates(inst, config)[1]:
        log.record(g)
    return log


def sample_outcomes(result: RunResult | Distribution, count: int, seed: int) -> list[tuple[int, ...]]:
    """I.i.d. draws from the Z distribution (numpy PCG64 seeded by ``seed``)."""
    dist = result.z_distribution if isinstance(result, RunResult) else result
    items = dist.sorted_items()
    keys = [k for k, _ in items]
    p = np.array([v for _, v in items], dtype=float)
    p = p / p.sum()
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(keys), size=count, p=p)
    return [keys[i] for i in idx]


def demo_domain_extension_failure(inst: Instance, periods: int | None = None) -> dict:
    """Model of the one-coordinate domain extension and where its support lands.

    Coordinate 1 is evaluated on the prolonged index j in [0, periods*P);
    coordinates 2..n take the per-step increment read at j=1 (origin assumed
    at zero) and scale it by j mod P. Amplitudes are flat, so the only source
    of misalignment is the offset. The resulting Fourier support is compared
    with the annihilator of b* mod P.
    """
    P, M2, n = inst.P, inst.M2, inst.n
    periods = periods or inst.D * inst.D
    step = affine_X(inst, 1)
    zs = []
    for j in range(periods * P):
        x1 = affine_X(inst, j)[0]
        rest = [canonical((j % P) * s, M2) for s in step[1:]]
        zs.append([canonical(x1, M2)] + rest)
    zs = np.array(zs, dtype=np.int64)
    U = _outcome_grid(M2, n)
    amps = np.full(len(zs), 1.0 + 0j)
    _, mask = _branch_transform(zs, amps, U, M2, exact=True)
    support = {tuple(int(x) for x in U[r]) for r in np.nonzero(mask)[0]}
    ann = enumerate_annihilator(inst).as_set()
    off = sorted(support - ann)
    missing = sorted(ann - support)
    return {
        "n": n,
        "P": P,
        "M2": M2,
        "v_star": list(inst.v_star),
        "extended_length": periods * P,
        "support_size": len(support),
        "annihilator_size": len(ann),
        "violation_count": len(off),
        "missing_count": len(missing),
        "violations": [list(u) for u in off],
        "missing": [list(u) for u in missing],
        "misaligned": bool(off or missing),
    }


# --- export ------------------------------------------------------------------


def result_to_dict(result: RunResult) -> dict:
    inst = result.instance
    dist = result.z_distribution
    return {
        "schema_version": SCHEMA_VERSION,
        "instance": inst.to_dict(),
        "config": asdict(result.config),
        "accessibility": result.accessibility_report,
        "gate_log": result.gate_log.as_dict(),
        "gate_log_route": result.gate_log.route,
        "trace": [{"step": s, "checksum": c} for s, c in result.trace],
        "success_probability": result.success_probability,
        "support_size": len(dist),
        "z_distribution": [[list(u), p] for u, p in dist.sorted_items()],
    }


def result_to_json(result: RunResult) -> str:
    return json.dumps(result_to_dict(result), indent=1, sort_keys=True)


def distribution_csv(dist: Distribution, b_star: Sequence[int], P: int) -> str:
    """One row per outcome: u_1..u_n, probability, in_annihilator (exact 0/1)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"u_{i + 1}" for i in range(dist.n)] + ["probability", "in_annihilator"])
    for u, p in dist.sorted_items():
        w.writerow(list(u) + [repr(p), int(in_annihilator(b_star, u, P))])
    return buf.getvalue()
