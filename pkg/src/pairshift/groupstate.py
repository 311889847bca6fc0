"""
Instances, register layouts and sparse quantum states.

A ``SparseState`` maps basis labels (tuples of ints, one per layout slot,
each balanced modulo its slot modulus) to complex amplitudes. Support and
constraint questions are always answered from the integer labels; the
floats only carry magnitudes and phases.
"""
from __future__ import annotations

import cmath
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from functools import cached_property
from math import gcd, prod
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InstanceError, SupportTooLarge, WindowTooLarge
from .modarith import (
    PrimeSet,
    WIDTH_BITS,
    canonical,
    check_width,
    crt_garner,
    internal_nodes,
    mod_reduce,
    product_tree,
    tree_modulus,
)

DEFAULT_SUPPORT_CAP = 1 << 24
NORM_TOL = 1e-12


@dataclass(frozen=True)
class Instance:
    """All parameters of one pipeline run.

    The window envelope is alpha(j) = exp(2 pi i (a j^2 + b j + c) / M2) for
    j in [j_lo, j_hi], optionally scaled by per-j magnitudes ``weights``.
    """

    n: int
    primes: tuple[int, ...]
    D: int
    b_star: tuple[int, ...]
    v_star: tuple[int, ...]
    a: int = 1
    b: int = 0
    c: int = 0
    j_lo: int = 0
    j_hi: int | None = None
    seed: int | None = None
    chen: bool = False
    weights: tuple[float, ...] | None = None
    window_cap: int = DEFAULT_SUPPORT_CAP

    def __post_init__(self):
        primes = tuple(int(p) for p in self.primes)
        object.__setattr__(self, "primes", primes)
        pset = PrimeSet(primes)
        if self.n < 2:
            raise InstanceError(f"n >= 2 required (got n={self.n})")
        if self.D < 1:
            raise InstanceError(f"D must be positive (got {self.D})")
        if gcd(self.D, pset.product) != 1:
            raise InstanceError(f"gcd(D, P) = 1 violated: D={self.D}, P={pset.product}")
        m2 = self.D * self.D * pset.product
        if m2.bit_length() > WIDTH_BITS:
            check_width(m2)
        for name in ("b_star", "v_star"):
            vec = tuple(int(x) for x in getattr(self, name))
            if len(vec) != self.n:
                raise InstanceError(f"{name} must have n={self.n} entries, got {len(vec)}")
            object.__setattr__(self, name, tuple(mod_reduce(x, m2) for x in vec))
        if self.chen:
            want = prod(primes[1:])
            if (self.b_star[0] - want) % m2:
                raise InstanceError(
                    f"Chen-pipeline flag requires b_star[0] = p_2...p_k = {want}, got {self.b_star[0]}"
                )
        if self.j_hi is None:
            object.__setattr__(self, "j_hi", self.j_lo + pset.product - 1)
        if self.j_hi < self.j_lo:
            raise InstanceError(f"window must be nonempty: [{self.j_lo}, {self.j_hi}]")
        if self.window_size > self.window_cap:
            raise WindowTooLarge(
                f"window size {self.window_size} exceeds cap {self.window_cap}"
            )
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if len(w) != self.window_size or any(x < 0 for x in w) or not any(w):
                raise InstanceError("weights must be one non-negative magnitude per window point")
            object.__setattr__(self, "weights", w)

    @cached_property
    def prime_set(self) -> PrimeSet:
        return PrimeSet(self.primes)

    @property
    def P(self) -> int:
        return self.prime_set.product

    @property
    def kappa(self) -> int:
        return len(self.primes)

    @property
    def M2(self) -> int:
        return self.D * self.D * self.P

    @property
    def window_size(self) -> int:
        return self.j_hi - self.j_lo + 1

    @property
    def window(self) -> range:
        return range(self.j_lo, self.j_hi + 1)

    def envelope(self, j: int) -> complex:
        phase = 2 * math.pi * ((self.a * j * j + self.b * j + self.c) % self.M2) / self.M2
        mag = 1.0 if self.weights is None else self.weights[j - self.j_lo]
        return mag * cmath.exp(1j * phase)

    def replace(self, **changes) -> "Instance":
        d = self.to_dict()
        d.update(changes)
        if "primes" in changes and "j_hi" not in changes and "j_lo" not in changes:
            d["j_hi"] = None
        return Instance.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("window_cap")
        if d["weights"] is None:
            d.pop("weights")
        for k in ("primes", "b_star", "v_star", "weights"):
            if k in d:
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Instance":
        d = dict(d)
        for k in ("primes", "b_star", "v_star", "weights"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


def reference_instance(**changes) -> Instance:
    """n=2, primes (3,5), D=2, M2=60, b*=(5,7), v*=(0,13), a=1, j in [0,14]."""
    inst = Instance(n=2, primes=(3, 5), D=2, b_star=(5, 7), v_star=(0, 13), a=1, b=0, c=0)
    return inst.replace(**changes) if changes else inst


def generate_instance(
    n: int,
    primes: Sequence[int],
    D: int,
    seed: int,
    *,
    chen: bool = False,
    force_accessible: bool = False,
    force_inaccessible: int | None = None,
    max_tries: int = 10_000,
) -> Instance:
    """Seeded random instance (numpy PCG64); constraints applied by rejection.

    ``force_inaccessible=p`` makes every b_i a multiple of p. ``chen`` pins
    b_1 = p_2...p_k.
    """
    primes = tuple(int(p) for p in primes)
    pset = PrimeSet(primes)
    if force_accessible and force_inaccessible is not None:
        raise InstanceError("--force-accessible and --force-inaccessible are contradictory")
    if force_inaccessible is not None:
        if force_inaccessible not in primes:
            raise InstanceError(f"force_inaccessible={force_inaccessible} is not one of the primes {primes}")
        if chen and prod(primes[1:]) % force_inaccessible:
            raise InstanceError(
                f"chen pins b_1 = {prod(primes[1:])}, which is a unit mod {force_inaccessible}"
            )
    if gcd(D, pset.product) != 1:
        raise InstanceError(f"gcd(D, P) = 1 violated: D={D}, P={pset.product}")
    M2 = D * D * pset.product
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        b = [int(x) for x in rng.integers(0, M2, size=n)]
        v = [int(x) for x in rng.integers(0, M2, size=n)]
        if force_inaccessible is not None:
            q = force_inaccessible
            b = [x - x % q for x in b]
        if chen:
            b[0] = prod(primes[1:])
        if force_accessible and not all(any(x % p for x in b) for p in primes):
            continue
        return Instance(n=n, primes=primes, D=D, b_star=tuple(b), v_star=tuple(v), seed=seed, chen=chen)
    raise InstanceError(f"no instance satisfying the constraints after {max_tries} draws")


# (primes, D, n) with M2^n <= 5000: small enough for brute-force Fourier checks
DESK_SHAPES = (
    ((3, 5), 1, 2),
    ((3, 5), 1, 3),
    ((3, 5), 2, 2),
    ((3, 7), 1, 2),
    ((5, 7), 1, 2),
    ((3,), 2, 2),
    ((3,), 2, 3),
    ((5,), 2, 2),
    ((7,), 2, 2),
    ((3,), 4, 2),
    ((5,), 3, 2),
    ((7,), 3, 2),
)


def random_desk_instance(seed: int, accessible: bool = True, **kw) -> Instance:
    """Random desk-scale instance; shape, offsets and envelope all drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    primes, D, n = DESK_SHAPES[int(rng.integers(len(DESK_SHAPES)))]
    inst = generate_instance(n, primes, D, int(rng.integers(2**31)), force_accessible=accessible, **kw)
    a, b, c = (int(x) for x in rng.integers(0, inst.M2, size=3))
    return inst.replace(a=a, b=b, c=c)


# --- instance config text format -------------------------------------------

_INT_KEYS = ("n", "D", "a", "b", "c", "j_lo", "j_hi", "seed")
_VEC_KEYS = ("primes", "b_star", "v_star")


def dumps_instance(inst: Instance) -> str:
    d = inst.to_dict()
    lines = []
    for k in ("n", "primes", "D", "b_star", "v_star", "a", "b", "c", "j_lo", "j_hi", "seed", "chen", "weights"):
        if k not in d:
            continue
        v = d[k]
        if v is None:
            continue
        if isinstance(v, list):
            v = ",".join(repr(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def loads_instance(text: str) -> Instance:
    d: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InstanceError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            if key in _INT_KEYS:
                d[key] = int(val)
            elif key in _VEC_KEYS:
                d[key] = tuple(int(x) for x in val.split(",") if x.strip())
            elif key == "weights":
                d[key] = tuple(float(x) for x in val.split(",") if x.strip())
            elif key == "chen":
                d[key] = val.lower() in ("1", "true", "yes")
            else:
                raise InstanceError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, InstanceError):
                raise
            raise InstanceError(f"line {lineno}: bad value for {key}: {val!r}") from exc
    missing = [k for k in ("n", "primes", "D", "b_star", "v_star") if k not in d]
    if missing:
        raise InstanceError(f"missing required keys: {', '.join(missing)}")
    return Instance(**d)


def load_instance(path) -> Instance:
    with open(path) as fh:
        return loads_instance(fh.read())


def save_instance(inst: Instance, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_instance(inst))


# --- register layout ---------------------------------------------------------

READ_ONLY = ("V", "Delta")


@dataclass(frozen=True)
class RegisterLayout:
    """Named slots with fixed moduli.

    ``slots`` is an ordered tuple of ``(name, moduli)``; a basis label is the
    concatenation of all slot values in that order.
    """

    slots: tuple[tuple[str, tuple[int, ...]], ...]
    scratch: tuple[str, ...] = ()
    meta: Mapping = field(default_factory=dict, compare=False, hash=False)

    @cached_property
    def index(self) -> dict[str, tuple[int, ...]]:
        out, pos = {}, 0
        for name, mods in self.slots:
            out[name] = tuple(range(pos, pos + len(mods)))
            pos += len(mods)
        return out

    @cached_property
    def moduli(self) -> tuple[int, ...]:
        return tuple(m for _, mods in self.slots for m in mods)

    @property
    def width(self) -> int:
        return len(self.moduli)

    def has(self, name: str) -> bool:
        return name in self.index

    def __getitem__(self, name: str) -> tuple[int, ...]:
        return self.index[name]

    def positions(self, names: Iterable[str]) -> tuple[int, ...]:
        return tuple(i for nm in names for i in self.index[nm])

    def zero(self) -> list[int]:
        return [0] * self.width

    def reduce(self, label: Sequence[int]) -> tuple[int, ...]:
        return tuple(mod_reduce(v, m) for v, m in zip(label, self.moduli))

    def slot_names(self) -> tuple[str, ...]:
        return tuple(nm for nm, _ in self.slots)

    def describe(self, label: Sequence[int]) -> dict[str, tuple[int, ...]]:
        return {nm: tuple(label[i] for i in self.index[nm]) for nm in self.slot_names()}

    @classmethod
    def build(
        cls,
        inst: Instance,
        *,
        reeval: bool = False,
        crt_scheme: str = "garner",
        recover_primes: Sequence[int] | None = None,
    ) -> "RegisterLayout":
        """Allocate every register for one route.

        The double-and-add ladder holds ceil(log2 P) doubled copies of Delta
        per coordinate; the CRT trail is one mixed-radix digit per recovered
        prime (Garner) or one slot per internal product-tree node.
        """
        n, M2, P = inst.n, inst.M2, inst.P
        primes = inst.primes
        rec = tuple(primes if recover_primes is None else recover_primes)
        bits = ladder_bits(P)
        slots: list[tuple[str, tuple[int, ...]]] = [("X", (M2,) * n)]
        if reeval:
            slots.append(("J", (P,)))
        slots.append(("T", (P,)))
        if reeval:
            slots.append(("Y", (M2,) * n))
        slots += [
            ("Z", (M2,) * n),
            ("Tp", (P,)),
            ("V", (M2,) * n),
            ("Delta", (M2,) * n),
            ("R", (M2,) * (n * bits)),
            ("FLAG", (2,) * len(primes)),
            ("IDX", (n + 1,) * len(primes)),
            ("INV", primes),
            ("TRES", primes),
        ]
        if crt_scheme == "garner":
            slots.append(("CRT", rec))
            tree = None
        elif crt_scheme == "product_tree":
            tree = product_tree(rec)
            nodes = internal_nodes(tree)
            slots.append(("CRT", tuple(tree_modulus(nd, rec) for nd in nodes)))
        else:
            raise InstanceError(f"unknown CRT scheme {crt_scheme!r}")
        scratch = ("Tp", "R", "FLAG", "IDX", "INV", "TRES", "CRT")
        meta = {
            "n": n,
            "M2": M2,
            "P": P,
            "primes": primes,
            "recover_primes": rec,
            "bits": bits,
            "crt_scheme": crt_scheme,
            "tree": tree,
            "reeval": reeval,
        }
        return cls(tuple(slots), scratch, meta)


def ladder_bits(P: int) -> int:
    """Bit width of the double-and-add ladder for multipliers in [0, P)."""
    return max(1, (P - 1).bit_length())


# --- states ----------------------------------------------------------------


@dataclass(frozen=True)
class SparseState:
    layout: RegisterLayout
    amps: Mapping[tuple[int, ...], complex]

    def __len__(self) -> int:
        return len(self.amps)

    def norm2(self) -> float:
        return math.fsum(abs(a) ** 2 for a in self.amps.values())

    def check_normalized(self, tol: float = NORM_TOL) -> None:
        s = self.norm2()
        if abs(s - 1.0) > tol:
            raise AssertionError(f"state norm^2 = {s!r}, expected 1 within {tol}")

    def slot_values(self, name: str) -> set[tuple[int, ...]]:
        pos = self.layout[name]
        return {tuple(k[i] for i in pos) for k in self.amps}

    def normalized(self) -> "SparseState":
        s = math.sqrt(self.norm2())
        if s == 0:
            raise ValueError("cannot normalize the zero vector")
        return SparseState(self.layout, {k: a / s for k, a in self.amps.items()})


def affine_X(inst: Instance, j: int) -> tuple[int, ...]:
    """Coordinate registers X(j) = 2 D^2 j b* + v* (mod M2), balanced."""
    M2, s = inst.M2, 2 * inst.D * inst.D * j
    return tuple(mod_reduce(s * b + v, M2) for b, v in zip(inst.b_star, inst.v_star))


def harvest(inst: Instance) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Basis-input evaluation at j=0 and j=1: returns ``(V, Delta)``."""
    x0 = affine_X(inst, 0)
    x1 = affine_X(inst, 1)
    delta = tuple(mod_reduce(b - a, inst.M2) for a, b in zip(x0, x1))
    return x0, delta


def prepare_phi8f(inst: Instance, layout: RegisterLayout | None = None) -> SparseState:
    """The windowed affine state sum_j alpha(j) |X(j)>, normalized.

    Harvested (V, Delta) are written to their read-only slots; a J slot, if
    the layout has one, receives j mod P. Window points that land on the
    same label add coherently.
    """
    layout = layout or RegisterLayout.build(inst)
    if inst.window_size > inst.window_cap:
        raise WindowTooLarge(f"window size {inst.window_size} exceeds cap {inst.window_cap}")
    V, delta = harvest(inst)
    xs, vs, ds = layout["X"], layout["V"], layout["Delta"]
    jpos = layout["J"][0] if layout.has("J") else None
    acc: dict[tuple[int, ...], complex] = defaultdict(complex)
    for j in inst.window:
        lab = layout.zero()
        for i, x in zip(xs, affine_X(inst, j)):
            lab[i] = x
        for i, x in zip(vs, V):
            lab[i] = x
        for i, x in zip(ds, delta):
            lab[i] = x
        if jpos is not None:
            lab[jpos] = mod_reduce(j, inst.P)
        acc[tuple(lab)] += inst.envelope(j)
    amps = {k: a for k, a in acc.items() if a != 0}
    if not amps:
        raise InstanceError("window envelope cancels to the zero vector")
    return SparseState(layout, amps).normalized()


def prepare_uniform_T(primes: PrimeSet | Sequence[int]) -> dict[int, float]:
    """Uniform superposition over Z_P built per prime and CRT-wired.

    Returns ``{t: amplitude}`` with t balanced modulo P. The amplitude is
    fixed from the integer support size, so it is bit-identical to 1/sqrt(P).
    """
    ps = primes.primes if isinstance(primes, PrimeSet) else tuple(primes)
    per_prime = [range(p) for p in ps]
    labels: list[int] = []

    def walk(k: int, acc: list[int]):
        if k == len(ps):
            labels.append(crt_garner(acc, ps))
            return
        for t in per_prime[k]:
            walk(k + 1, acc + [t])

    walk(0, [])
    size = prod(len(r) for r in per_prime)
    amp = 1.0 / math.sqrt(size)
    return {t: amp for t in sorted(labels)}


def uniform_T_monolithic(P: int) -> dict[int, float]:
    amp = 1.0 / math.sqrt(P)
    return {mod_reduce(t, P): amp for t in sorted(range(P), key=lambda t: mod_reduce(t, P))}


def initial_state(inst: Instance, layout: RegisterLayout) -> SparseState:
    """phi8f tensored with the uniform T register."""
    phi = prepare_phi8f(inst, layout)
    tfrag = prepare_uniform_T(inst.prime_set)
    tpos = layout["T"][0]
    amps: dict[tuple[int, ...], complex] = {}
    for k, a in phi.amps.items():
        for t, ta in tfrag.items():
            lab = list(k)
            lab[tpos] = t
            amps[tuple(lab)] = a * ta
    if len(amps) > DEFAULT_SUPPORT_CAP:
        raise SupportTooLarge(f"support {len(amps)} exceeds cap {DEFAULT_SUPPORT_CAP}")
    return SparseState(layout, amps)


# --- distributions ---------------------------------------------------------


@dataclass
class Distribution:
    """Outcome probabilities keyed by canonical (non-negative) label tuples."""

    probs: dict[tuple[int, ...], float]
    moduli: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.moduli)

    def total(self) -> float:
        return math.fsum(self.probs.values())

    def support(self) -> set[tuple[int, ...]]:
        return {u for u, p in self.probs.items() if p > 0}

    def __len__(self) -> int:
        return len(self.probs)

    def __getitem__(self, u) -> float:
        return self.probs.get(tuple(u), 0.0)

    def tv_distance(self, other: "Distribution") -> float:
        keys = set(self.probs) | set(other.probs)
        return 0.5 * math.fsum(abs(self[k] - other[k]) for k in keys)

    def max_abs_diff(self, other: "Distribution") -> float:
        keys = set(self.probs) | set(other.probs)
        return max((abs(self[k] - other[k]) for k in keys), default=0.0)

    def sorted_items(self) -> list[tuple[tuple[int, ...], float]]:
        return sorted(self.probs.items())


def marginal_distribution(state: SparseState, slots: str | Sequence[str]) -> Distribution:
    names = (slots,) if isinstance(slots, str) else tuple(slots)
    pos = state.layout.positions(names)
    mods = tuple(state.layout.moduli[i] for i in pos)
    acc: dict[tuple[int, ...], list[float]] = defaultdict(list)
    for k, a in state.amps.items():
        acc[tuple(canonical(k[i], m) for i, m in zip(pos, mods))].append(abs(a) ** 2)
    return Distribution({u: math.fsum(v) for u, v in acc.items()}, mods)
