"""
Fourier sampling and the checks built on it.

The QFT over (Z_M)^n is evaluated as a direct character sum. Which outcomes
have nonzero amplitude is decided in exact integer arithmetic whenever a
branch carries one common amplitude: the amplitude is then a multiple of
sum_k m_k w^k with integer multiplicities m_k, which vanishes iff
sum_k m_k x^k is divisible by the M-th cyclotomic polynomial.
"""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from math import prod
from typing import Iterable, Sequence

import numpy as np
import sympy
from scipy import stats

from .errors import SupportTooLarge
from .groupstate import Distribution, Instance, SparseState
from .modarith import canonical, mod_reduce

BRUTE_FORCE_CAP = 1 << 20
_CHUNK = 1 << 15


# --- exact zero test ---------------------------------------------------------


@lru_cache(maxsize=None)
def cyclotomic_reduction(m: int) -> np.ndarray:
    """Row k holds the coefficients of x^k mod Phi_m(x), for k in [0, m)."""
    x = sympy.Symbol("x")
    phi = [int(c) for c in reversed(sympy.Poly(sympy.cyclotomic_poly(m, x), x).all_coeffs())]
    deg = len(phi) - 1
    rows = []
    cur = [0] * deg
    cur[0] = 1 if deg > 0 else 0
    for _ in range(m):
        rows.append(list(cur))
        # multiply by x, then reduce the x^deg term using the monic Phi_m
        top = cur[-1]
        cur = [0] + cur[:-1]
        if top:
            for i in range(deg):
                cur[i] -= top * phi[i]
    return np.array(rows, dtype=np.int64).reshape(m, max(deg, 1))


def _outcome_grid(M: int, n: int) -> np.ndarray:
    if M**n > BRUTE_FORCE_CAP:
        raise SupportTooLarge(f"brute-force DFT over {M}^{n} = {M**n} outcomes exceeds {BRUTE_FORCE_CAP}")
    grids = np.indices((M,) * n).reshape(n, -1).T
    return grids.astype(np.int64)


def _branches(state: SparseState, names: Sequence[str]):
    """Group amplitudes by the labels outside ``names``: rest -> [(z, amp)]."""
    pos = state.layout.positions(names)
    mods = [state.layout.moduli[i] for i in pos]
    if len(set(mods)) != 1:
        raise ValueError("Fourier registers must share one modulus")
    pset = set(pos)
    rest = [i for i in range(state.layout.width) if i not in pset]
    groups: dict[tuple[int, ...], list] = defaultdict(list)
    for k, a in state.amps.items():
        z = tuple(canonical(k[i], mods[0]) for i in pos)
        groups[tuple(k[i] for i in rest)].append((z, a))
    return groups, pos, rest, mods[0]


def _branch_transform(zs: np.ndarray, amps: np.ndarray, U: np.ndarray, M: int, exact: bool):
    """Amplitudes over all outcomes for one branch, and the exact nonzero mask."""
    N, n = U.shape
    omega = np.exp(2j * np.pi * np.arange(M) / M)
    out = np.empty(N, dtype=complex)
    mask = np.zeros(N, dtype=bool) if exact else None
    red = cyclotomic_reduction(M) if exact else None
    scale = 1.0 / math.sqrt(float(M) ** n)
    for lo in range(0, N, _CHUNK):
        Uc = U[lo : lo + _CHUNK]
        K = (Uc @ zs.T) % M
        out[lo : lo + len(Uc)] = (omega[K] @ amps) * scale
        if exact:
            counts = np.zeros((len(Uc), M), dtype=np.int64)
            rows = np.arange(len(Uc))
            for c in range(K.shape[1]):
                np.add.at(counts, (rows, K[:, c]), 1)
            mask[lo : lo + len(Uc)] = np.any(counts @ red != 0, axis=1)
    return out, mask


def qft_state(state: SparseState, slots: Sequence[str] = ("Z",)) -> SparseState:
    """Apply QFT_{Z_M}^{(x)n} to the named registers by direct character sums.

    Output labels carry the outcome u (balanced) in place of the register
    contents. Exactly-zero amplitudes are dropped when the branch test is exact.
    """
    groups, pos, rest, M = _branches(state, slots)
    n = len(pos)
    U = _outcome_grid(M, n)
    out: dict[tuple[int, ...], complex] = {}
    for rk, items in groups.items():
        zs = np.array([z for z, _ in items], dtype=np.int64)
        amps = np.array([a for _, a in items], dtype=complex)
        exact = bool(np.all(amps == amps[0]))
        A, mask = _branch_transform(zs, amps, U, M, exact)
        keep = np.nonzero(mask)[0] if exact else np.arange(len(U))
        for r in keep:
            lab = [0] * state.layout.width
            for i, v in zip(rest, rk):
                lab[i] = v
            for i, v in zip(pos, U[r]):
                lab[i] = mod_reduce(int(v), M)
            out[tuple(lab)] = complex(A[r])
    return SparseState(state.layout, out)


def fourier_distribution(state: SparseState, slots: Sequence[str] = ("Z",)) -> Distribution:
    """Outcome law of measuring the named registers after the QFT.

    Support is the exact union of per-branch supports when every branch has a
    single common amplitude; otherwise every outcome is listed.
    """
    groups, pos, _, M = _branches(state, slots)
    n = len(pos)
    U = _outcome_grid(M, n)
    probs = np.zeros(len(U))
    support = np.zeros(len(U), dtype=bool)
    all_exact = True
    for items in groups.values():
        zs = np.array([z for z, _ in items], dtype=np.int64)
        amps = np.array([a for _, a in items], dtype=complex)
        exact = bool(np.all(amps == amps[0]))
        A, mask = _branch_transform(zs, amps, U, M, exact)
        probs += np.abs(A) ** 2
        if exact:
            support |= mask
        else:
            all_exact = False
    keep = np.nonzero(support)[0] if all_exact else np.arange(len(U))
    return Distribution({tuple(int(x) for x in U[r]): float(probs[r]) for r in keep}, (M,) * n)


def perturbed_dft(M: int, epsilon: float, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """DFT matrix times exp(iH) for a random Hermitian H with ||F - F~||_op = epsilon.

    Returns the perturbed unitary and the operator-norm distance measured by SVD.
    """
    F = np.exp(2j * np.pi * np.outer(np.arange(M), np.arange(M)) / M) / math.sqrt(M)
    if epsilon == 0:
        return F, 0.0
    G = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))
    H = (G + G.conj().T) / 2
    w, V = np.linalg.eigh(H)
    # |1 - e^{i theta}| = 2 sin(theta/2)
    theta = 2 * math.asin(epsilon / 2)
    w = w * (theta / np.max(np.abs(w)))
    E = (V * np.exp(1j * w)) @ V.conj().T
    Ft = F @ E
    return Ft, float(np.linalg.norm(F - Ft, 2))


def dense_fourier_distribution(state: SparseState, unitary: np.ndarray, slots: Sequence[str] = ("Z",)) -> Distribution:
    """Apply ``unitary`` to each named register of every branch (dense tensors)."""
    groups, pos, _, M = _branches(state, slots)
    n = len(pos)
    if M**n > BRUTE_FORCE_CAP:
        raise SupportTooLarge(f"dense transform over {M}^{n} outcomes exceeds {BRUTE_FORCE_CAP}")
    probs = np.zeros((M,) * n)
    for items in groups.values():
        psi = np.zeros((M,) * n, dtype=complex)
        for z, a in items:
            psi[z] += a
        for ax in range(n):
            psi = np.moveaxis(np.tensordot(unitary, psi, axes=([1], [ax])), 0, ax)
        probs += np.abs(psi) ** 2
    U = _outcome_grid(M, n)
    flat = probs.reshape(-1)
    return Distribution({tuple(int(x) for x in U[r]): float(flat[r]) for r in range(len(U))}, (M,) * n)


@dataclass
class LeakageReport:
    epsilon: float
    measured_norm: float
    leakage: float
    bound: float

    @property
    def within_bound(self) -> bool:
        return self.leakage <= self.bound + 1e-12

    def as_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "measured_norm": self.measured_norm,
            "leakage": self.leakage,
            "bound": self.bound,
            "within_bound": self.within_bound,
        }


def approx_qft_experiment(inst: Instance, epsilon: float, state: SparseState, seed: int = 0) -> LeakageReport:
    """Probability mass off the annihilator when each Z register sees an epsilon-close DFT.

    ``state`` is a post-cleanup state; the bound asserted is n * epsilon.
    """
    if not 0.0 <= epsilon <= 0.1:
        raise ValueError(f"epsilon must lie in [0, 0.1], got {epsilon}")
    U, norm = perturbed_dft(inst.M2, epsilon, np.random.default_rng(seed))
    dist = dense_fourier_distribution(state, U)
    leak = math.fsum(p for u, p in dist.probs.items() if not in_annihilator(inst.b_star, u, inst.P))
    return LeakageReport(epsilon, norm, leak, inst.n * epsilon)


# --- closed form and annihilator --------------------------------------------


def in_annihilator(b_star: Sequence[int], u: Sequence[int], P: int) -> bool:
    return sum(b * x for b, x in zip(b_star, u)) % P == 0


def closed_form_amplitude(inst: Instance, u: Sequence[int]) -> complex:
    """QFT amplitude of the uniform coset {-2 D^2 T b*} at u, global phase fixed.

    The geometric sum over T has ratio exp(-2 pi i * 2 <b*,u> / P); it is P
    when the ratio is 1 and 0 otherwise, decided here on integers.
    """
    ip = sum(b * x for b, x in zip(inst.b_star, u))
    if (2 * ip) % inst.P:
        return 0j
    return complex(math.sqrt(inst.P) / math.sqrt(float(inst.M2) ** inst.n))


@dataclass
class Annihilator:
    instance: Instance
    P: int
    b_mod_P: tuple[int, ...]
    outcomes: list[tuple[int, ...]] = field(default_factory=list)

    def __contains__(self, u) -> bool:
        return in_annihilator(self.b_mod_P, u, self.P)

    def __len__(self) -> int:
        return len(self.outcomes)

    def as_set(self) -> set[tuple[int, ...]]:
        return set(self.outcomes)


def enumerate_annihilator(inst: Instance, modulus: int | None = None) -> Annihilator:
    """All u in (Z_M2)^n with <b*, u> = 0 mod ``modulus`` (default P)."""
    P = inst.P if modulus is None else modulus
    U = _outcome_grid(inst.M2, inst.n)
    b = np.array([canonical(x, P) for x in inst.b_star], dtype=np.int64)
    hit = (U @ b) % P == 0
    outs = [tuple(int(x) for x in row) for row in U[hit]]
    return Annihilator(inst, P, tuple(int(x) for x in b), outs)


def accessible_primes(b_star: Sequence[int], primes: Sequence[int]) -> list[int]:
    return [p for p in primes if any(b % p for b in b_star)]


def expected_annihilator_count(inst: Instance) -> int:
    """(D^2)^n * prod_p p^(n-1) over accessible primes, p^n over the rest."""
    acc = set(accessible_primes(inst.b_star, inst.primes))
    per_prime = prod(p ** (inst.n - 1) if p in acc else p**inst.n for p in inst.primes)
    return (inst.D * inst.D) ** inst.n * per_prime


@dataclass
class InjectivityReport:
    injective: bool
    kernel: list[int]
    accessible: list[int]
    missing: list[int]

    @property
    def agrees(self) -> bool:
        return self.injective == (not self.missing)


def check_injectivity(inst: Instance) -> InjectivityReport:
    """Brute-force kernel of T -> T b* (mod P) over Z_P, next to the per-prime verdict."""
    P = inst.P
    b = [canonical(x, P) for x in inst.b_star]
    kernel = [t for t in range(P) if all(t * x % P == 0 for x in b)]
    acc = accessible_primes(inst.b_star, inst.primes)
    missing = [p for p in inst.primes if p not in acc]
    return InjectivityReport(kernel == [0], kernel, acc, missing)


# --- statistics --------------------------------------------------------------


@dataclass
class UniformityReport:
    samples: int
    cells: int
    chi2: float
    dof: int
    p_value: float
    violations: list[tuple[int, ...]]

    @property
    def violation_rate(self) -> float:
        return len(self.violations) / self.samples if self.samples else 0.0

    def passes(self, alpha: float = 0.001) -> bool:
        return not self.violations and self.p_value > alpha

    def as_dict(self) -> dict:
        return {
            "samples": self.samples,
            "cells": self.cells,
            "chi2": self.chi2,
            "dof": self.dof,
            "p_value": self.p_value,
            "violation_count": len(self.violations),
            "violation_rate": self.violation_rate,
        }


def uniformity_test(samples: Iterable[Sequence[int]], annihilator: Annihilator) -> UniformityReport:
    """Pearson chi-square against uniform-over-annihilator; off-set samples listed apart."""
    samples = [tuple(int(x) for x in s) for s in samples]
    cells = annihilator.as_set()
    inside = [s for s in samples if s in cells]
    violations = [s for s in samples if s not in cells]
    counts = Counter(inside)
    obs = np.array([counts.get(u, 0) for u in annihilator.outcomes], dtype=float)
    if len(inside) and len(cells) > 1:
        chi2, pval = stats.chisquare(obs)
    else:
        chi2, pval = 0.0, 1.0
    return UniformityReport(len(samples), len(cells), float(chi2), len(cells) - 1, float(pval), violations)


@dataclass
class AccessibilityEstimate:
    n: int
    primes: tuple[int, ...]
    trials: int
    per_prime_rate: dict[int, float]
    failure_rate: float
    union_bound: float
    exact_failure: float

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "primes": list(self.primes),
            "trials": self.trials,
            "per_prime_rate": {str(p): r for p, r in self.per_prime_rate.items()},
            "failure_rate": self.failure_rate,
            "union_bound": self.union_bound,
            "exact_failure": self.exact_failure,
        }


def accessibility_failure_probability(n: int, primes: Sequence[int], trials: int, seed: int) -> AccessibilityEstimate:
    """Monte Carlo over uniform (b_2..b_n) mod P with b_1 = p_2 ... p_k fixed."""
    if n < 2:
        raise ValueError("n >= 2 required")
    primes = tuple(primes)
    P = prod(primes)
    b1 = prod(primes[1:])
    rng = np.random.default_rng(seed)
    rest = rng.integers(0, P, size=(trials, n - 1))
    fail_any = np.zeros(trials, dtype=bool)
    per = {}
    for p in primes:
        f = np.all(rest % p == 0, axis=1) & (b1 % p == 0)
        per[p] = float(f.mean())
        fail_any |= f
    bound = sum(p ** -(n - 1) for p in primes[1:])
    exact = 1.0 - prod(1.0 - (p ** -(n - 1) if b1 % p == 0 else 0.0) for p in primes)
    return AccessibilityEstimate(n, primes, trials, per, float(fail_any.mean()), bound, exact)


# --- state structure ---------------------------------------------------------


def schmidt_coefficients(state: SparseState, slots: Sequence[str] = ("Z",)) -> np.ndarray:
    """Singular values of the amplitude matrix across (slots | everything else)."""
    pos = state.layout.positions(slots)
    pset = set(pos)
    rest = [i for i in range(state.layout.width) if i not in pset]
    rows: dict = {}
    cols: dict = {}
    entries = []
    for k, a in state.amps.items():
        r = rows.setdefault(tuple(k[i] for i in rest), len(rows))
        c = cols.setdefault(tuple(k[i] for i in pos), len(cols))
        entries.append((r, c, a))
    M = np.zeros((len(rows), len(cols)), dtype=complex)
    for r, c, a in entries:
        M[r, c] += a
    return np.linalg.svd(M, compute_uv=False)


def schmidt_rank(state: SparseState, slots: Sequence[str] = ("Z",), tol: float = 1e-9) -> int:
    return int(np.sum(schmidt_coefficients(state, slots) > tol))


def align_phase(vec: Sequence[complex], tol: float = 1e-12) -> np.ndarray:
    """Rotate so the first entry with modulus above ``tol`` is real positive."""
    v = np.asarray(vec, dtype=complex)
    for x in v:
        if abs(x) > tol:
            return v * (abs(x) / x)
    return v


def z_factor(state: SparseState, slots: Sequence[str] = ("Z",)) -> dict[tuple[int, ...], complex]:
    """Register factor of a product state: the branch of the first rest label, renormalized."""
    groups, _, _, _ = _branches(state, slots)
    first = min(groups)
    items = sorted(groups[first])
    norm = math.sqrt(math.fsum(abs(a) ** 2 for _, a in items))
    return {z: a / norm for z, a in items}
