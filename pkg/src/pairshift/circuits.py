"""
Reversible arithmetic gates acting on sparse states.

Every gate is a sequence of primitive updates ``dst <- dst + f(other slots)``
(mod the slot modulus). Such an update is a bijection on basis labels as long
as ``f`` never reads ``dst``, and its inverse is the same update with the sign
flipped. A gate therefore only relabels basis states; amplitudes are moved,
never recomputed.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from math import prod
from typing import Callable, Iterable, Sequence

from .errors import AccessibilityViolation, DstNotZero, GateError, ScratchNotRestored
from .groupstate import READ_ONLY, RegisterLayout, SparseState
from .modarith import (
    crt_pair,
    garner_next_digit,
    internal_nodes,
    mixed_radix_value,
    mod_inverse,
    mod_reduce,
    tree_modulus,
)

COUNTER_NAMES = (
    "modular_add",
    "modular_double",
    "controlled_add",
    "ext_euclid_call",
    "ext_euclid_cost",
    "crt_step",
    "copy_cnot",
    "priority_scan",
)


@dataclass(frozen=True)
class Op:
    """``label[dst] += sign * fn(label)`` modulo ``modulus``."""

    dst: int
    modulus: int
    fn: Callable[[Sequence[int]], int]
    reads: tuple[int, ...]
    cost: tuple[tuple[str, int], ...]
    sign: int = 1

    def __post_init__(self):
        if self.dst in self.reads:
            raise GateError(f"primitive reads its own destination slot {self.dst}")

    def run(self, lab: list[int]) -> None:
        lab[self.dst] = mod_reduce(lab[self.dst] + self.sign * self.fn(lab), self.modulus)

    def inverted(self) -> "Op":
        return replace(self, sign=-self.sign)


@dataclass
class GateLog:
    """Invocation counts of reversible-arithmetic primitives."""

    route: str = ""
    counters: Counter = field(default_factory=Counter)

    def record(self, gate: "PermutationGate") -> None:
        self.counters.update(gate.cost())

    def __getitem__(self, name: str) -> int:
        return self.counters.get(name, 0)

    @property
    def total(self) -> int:
        return sum(v for k, v in self.counters.items() if k != "ext_euclid_cost")

    def as_dict(self) -> dict[str, int]:
        return {k: int(self.counters.get(k, 0)) for k in COUNTER_NAMES}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class PermutationGate:
    name: str
    ops: tuple[Op, ...]
    layout: RegisterLayout
    zero_pre: tuple[int, ...] = ()
    preserves: tuple[int, ...] = ()
    zero_post: tuple[int, ...] = ()

    def forward(self, label: Sequence[int]) -> tuple[int, ...]:
        lab = list(label)
        for op in self.ops:
            op.run(lab)
        return tuple(lab)

    def inverse(self, label: Sequence[int]) -> tuple[int, ...]:
        lab = list(label)
        for op in reversed(self.ops):
            op.inverted().run(lab)
        return tuple(lab)

    def inverted(self) -> "PermutationGate":
        return PermutationGate(
            self.name + "^-1",
            tuple(op.inverted() for op in reversed(self.ops)),
            self.layout,
            zero_pre=self.zero_post,
            preserves=self.preserves,
            zero_post=self.zero_pre,
        )

    def then(self, other: "PermutationGate", name: str | None = None) -> "PermutationGate":
        return PermutationGate(
            name or f"{self.name};{other.name}",
            self.ops + other.ops,
            self.layout,
            zero_pre=self.zero_pre,
            preserves=tuple(sorted(set(self.preserves) & set(other.preserves))),
            zero_post=other.zero_post,
        )

    def cost(self) -> Counter:
        c: Counter = Counter()
        for op in self.ops:
            for k, v in op.cost:
                c[k] += v
        return c

    def apply(self, state: SparseState, log: GateLog | None = None) -> SparseState:
        """Relabel every basis state; amplitudes are carried untouched."""
        ro = self.layout.positions(n for n in READ_ONLY if self.layout.has(n))
        for k in state.amps:
            for i in self.zero_pre:
                if k[i] != 0:
                    raise DstNotZero(f"{self.name}: destination slot {i} is {k[i]}, expected 0")
        out: dict[tuple[int, ...], complex] = {}
        for k, a in state.amps.items():
            nk = self.forward(k)
            for i in ro:
                if nk[i] != k[i]:
                    raise GateError(f"{self.name}: read-only slot {i} modified")
            for i in self.preserves:
                if nk[i] != k[i]:
                    raise GateError(f"{self.name}: preserved slot {i} modified")
            for i in self.zero_post:
                if nk[i] != 0:
                    raise ScratchNotRestored(f"{self.name}: slot {i} left at {nk[i]}")
            if nk in out:
                raise GateError(f"{self.name}: two basis states collided at {nk}")
            out[nk] = a
        if log is not None:
            log.record(self)
        return SparseState(state.layout, out)


# --- primitive builders ------------------------------------------------------


def _add(dst: int, m: int, fn, reads: Iterable[int], kind: str, count: int = 1, extra=()) -> Op:
    return Op(dst, m, fn, tuple(reads), ((kind, count),) + tuple(extra))


def _ladder_ops(layout: RegisterLayout) -> list[Op]:
    """R[i][0] = Delta_i, R[i][l] = 2 R[i][l-1]: doubled copies of Delta."""
    n, bits, M2 = layout.meta["n"], layout.meta["bits"], layout.meta["M2"]
    R, dl = layout["R"], layout["Delta"]
    ops = []
    for i in range(n):
        r0 = R[i * bits]
        ops.append(_add(r0, M2, (lambda lab, s=dl[i]: lab[s]), (dl[i],), "copy_cnot"))
        for l in range(1, bits):
            src, dst = R[i * bits + l - 1], R[i * bits + l]
            ops.append(_add(dst, M2, (lambda lab, s=src: 2 * lab[s]), (src,), "modular_double"))
    return ops


def _unladder_ops(layout: RegisterLayout) -> list[Op]:
    return [op.inverted() for op in reversed(_ladder_ops(layout))]


def _controlled_mul_ops(
    layout: RegisterLayout, dst: Sequence[int], ctrl: int, ctrl_mod: int, sign: int
) -> list[Op]:
    """dst_i += sign * c * Delta_i where c = canonical(label[ctrl]); uses the ladder."""
    n, bits, M2 = layout.meta["n"], layout.meta["bits"], layout.meta["M2"]
    R = layout["R"]
    ops = []
    for i in range(n):
        for l in range(bits):
            r = R[i * bits + l]

            def fn(lab, r=r, l=l):
                return sign * lab[r] if ((lab[ctrl] % ctrl_mod) >> l) & 1 else 0

            ops.append(_add(dst[i], M2, fn, (r, ctrl), "controlled_add"))
    return ops


# --- gates ------------------------------------------------------------------


def gate_copy(layout: RegisterLayout, src: str = "X", dst: str = "Y") -> PermutationGate:
    M2 = layout.meta["M2"]
    ops = tuple(
        _add(d, M2, (lambda lab, s=s: lab[s]), (s,), "copy_cnot")
        for s, d in zip(layout[src], layout[dst])
    )
    return PermutationGate(f"copy({src}->{dst})", ops, layout, zero_pre=layout[dst])


def gate_mul_data_neg(layout: RegisterLayout, t: str = "T", dst: str = "Z") -> PermutationGate:
    """Z <- -T * Delta (mod M2) by double-and-add with Delta as read-only data."""
    ops = (
        _ladder_ops(layout)
        + _controlled_mul_ops(layout, layout[dst], layout[t][0], layout.meta["P"], -1)
        + _unladder_ops(layout)
    )
    return PermutationGate(
        f"mul_data_neg({t}*Delta->{dst})",
        tuple(ops),
        layout,
        zero_pre=layout[dst] + layout["R"],
        zero_post=layout["R"],
        preserves=layout[t],
    )


def gate_reeval_shift(layout: RegisterLayout) -> PermutationGate:
    """Y = X(j) -> X(j+T) by re-evaluating V + (J+T)*Delta; J is restored."""
    P = layout.meta["P"]
    j, t, y = layout["J"][0], layout["T"][0], layout["Y"]
    ops = (
        _ladder_ops(layout)
        + _controlled_mul_ops(layout, y, j, P, -1)  # Y = X(j) - J*Delta = V
        + [_add(j, P, lambda lab: lab[t], (t,), "modular_add")]  # J <- J+T
        + _controlled_mul_ops(layout, y, j, P, +1)  # Y = V + (J+T)*Delta
        + [_add(j, P, lambda lab: -lab[t], (t,), "modular_add")]  # J restored
        + _unladder_ops(layout)
    )
    return PermutationGate(
        "reeval_shift(Y<-X(J+T))",
        tuple(ops),
        layout,
        zero_pre=layout["R"],
        zero_post=layout["R"],
        preserves=layout["J"] + layout["T"] + layout["X"],
    )


def gate_difference(layout: RegisterLayout, x: str = "X", y: str = "Y", z: str = "Z") -> PermutationGate:
    M2 = layout.meta["M2"]
    ops = []
    for xi, yi, zi in zip(layout[x], layout[y], layout[z]):
        ops.append(_add(zi, M2, (lambda lab, s=xi: lab[s]), (xi,), "modular_add"))
        ops.append(_add(zi, M2, (lambda lab, s=yi: -lab[s]), (yi,), "modular_add"))
    return PermutationGate("difference(Z<-X-Y)", tuple(ops), layout, zero_pre=layout[z])


def priority_table(delta: Sequence[int], primes: Sequence[int]) -> list[int | None]:
    """Lexicographically first 0-based index i with delta_i != 0 mod p, per prime."""
    out: list[int | None] = []
    for p in primes:
        out.append(next((i for i, d in enumerate(delta) if d % p), None))
    return out


def _prime_positions(layout: RegisterLayout, primes: Sequence[int]) -> list[int]:
    allp = layout.meta["primes"]
    return [allp.index(p) for p in primes]


def _encoder_ops(layout: RegisterLayout, primes: Sequence[int]) -> list[Op]:
    n = layout.meta["n"]
    dl = layout["Delta"]
    ops = []
    for e in _prime_positions(layout, primes):
        p = layout.meta["primes"][e]
        flag, idx = layout["FLAG"][e], layout["IDX"][e]
        for i in range(1, n + 1):
            d = dl[i - 1]

            def pick(lab, d=d, i=i, flag=flag, p=p):
                return i if (lab[flag] % 2 == 0 and lab[d] % p) else 0

            ops.append(_add(idx, n + 1, pick, (flag, d), "priority_scan"))
            ops.append(
                _add(flag, 2, (lambda lab, i=i, idx=idx: 1 if lab[idx] % (n + 1) == i else 0), (idx,), "priority_scan", 0)
            )
        # uncompute the scan flag
        ops.append(_add(flag, 2, (lambda lab, idx=idx: -1 if lab[idx] % (n + 1) else 0), (idx,), "priority_scan", 0))
    return ops


def gate_priority_encoder(layout: RegisterLayout, primes: Sequence[int] | None = None) -> PermutationGate:
    """Write i(eta) (1-based, 0 = missing) into IDX for each prime; flags end at zero."""
    primes = tuple(primes or layout.meta["recover_primes"])
    es = _prime_positions(layout, primes)
    idx = tuple(layout["IDX"][e] for e in es)
    flags = tuple(layout["FLAG"][e] for e in es)
    return PermutationGate(
        "priority_encoder",
        tuple(_encoder_ops(layout, primes)),
        layout,
        zero_pre=idx + flags,
        zero_post=flags,
    )


def _selected(lab, idx: int, n: int, dl: Sequence[int], p: int) -> int | None:
    """0-based coordinate chosen by IDX if it is a unit mod p, else None."""
    i = lab[idx] % (n + 1)
    if 1 <= i <= n and lab[dl[i - 1]] % p:
        return i - 1
    return None


def _recover_ops(layout: RegisterLayout, primes: Sequence[int]) -> list[Op]:
    n, P = layout.meta["n"], layout.meta["P"]
    dl, z = layout["Delta"], layout["Z"]
    rec = layout.meta["recover_primes"]
    if tuple(primes) != tuple(rec):
        raise GateError(f"layout CRT trail was built for primes {rec}, not {tuple(primes)}")
    ops = _encoder_ops(layout, primes)
    es = _prime_positions(layout, primes)
    for e in es:
        p = layout.meta["primes"][e]
        idx, inv, tres = layout["IDX"][e], layout["INV"][e], layout["TRES"][e]
        bits = p.bit_length()

        # inversion controlled on [Delta_i(eta) != 0 mod p]; identity otherwise
        def f_inv(lab, idx=idx, p=p):
            i = _selected(lab, idx, n, dl, p)
            return 0 if i is None else mod_inverse(lab[dl[i]], p)

        ops.append(
            _add(inv, p, f_inv, (idx,) + dl, "ext_euclid_call", 1, (("ext_euclid_cost", bits * bits),))
        )

        def f_res(lab, idx=idx, inv=inv, p=p):
            i = _selected(lab, idx, n, dl, p)
            return 0 if i is None else -lab[inv] * lab[z[i]]

        ops.append(_add(tres, p, f_res, (idx, inv) + dl + z, "controlled_add", bits))

    crt = layout["CRT"]
    tp = layout["Tp"][0]
    tres_pos = [layout["TRES"][e] for e in es]
    if layout.meta["crt_scheme"] == "garner":
        for k, p in enumerate(primes):

            def f_dig(lab, k=k, p=p):
                digits = [lab[crt[q]] % primes[q] for q in range(k)]
                return garner_next_digit(lab[tres_pos[k]] % p, digits, primes[:k], p)

            ops.append(_add(crt[k], p, f_dig, (tres_pos[k],) + crt[:k], "crt_step"))

        def f_out(lab):
            return mixed_radix_value([lab[crt[q]] % primes[q] for q in range(len(primes))], primes)

        ops.append(_add(tp, P, f_out, crt[: len(primes)], "crt_step"))
    else:
        tree = layout.meta["tree"]
        nodes = internal_nodes(tree)
        slot_of = {nd: crt[q] for q, nd in enumerate(nodes)}

        def value(lab, node):
            if isinstance(node, int):
                return lab[tres_pos[node]] % primes[node]
            return lab[slot_of[node]] % tree_modulus(node, primes)

        for q, nd in enumerate(nodes):

            def f_node(lab, nd=nd):
                l, r = nd
                return crt_pair(value(lab, l), tree_modulus(l, primes), value(lab, r), tree_modulus(r, primes))

            ops.append(_add(crt[q], tree_modulus(nd, primes), f_node, tuple(tres_pos) + crt[:q], "crt_step"))

        def f_root(lab):
            return value(lab, tree)

        ops.append(_add(tp, P, f_root, tuple(tres_pos) + crt, "crt_step"))
    return ops


def _check_accessible(delta: Sequence[int] | None, primes: Sequence[int]) -> None:
    if delta is None:
        return
    table = priority_table(delta, primes)
    missing = [p for p, i in zip(primes, table) if i is None]
    if missing:
        raise AccessibilityViolation(missing)


def _trail(layout: RegisterLayout, primes: Sequence[int]) -> tuple[int, ...]:
    es = _prime_positions(layout, primes)
    out = []
    for nm in ("FLAG", "IDX", "INV", "TRES"):
        out += [layout[nm][e] for e in es]
    return tuple(out) + layout["CRT"]


def gate_recover_T(
    layout: RegisterLayout, delta: Sequence[int] | None = None, primes: Sequence[int] | None = None
) -> PermutationGate:
    """Tp <- T recovered from Z: per prime -Delta_i^-1 Z_i mod p, then CRT.

    The encoder output, inverses, residues and CRT digits stay in the trail so
    the whole computation can be run backwards exactly.
    """
    primes = tuple(primes or layout.meta["recover_primes"])
    _check_accessible(delta, primes)
    return PermutationGate(
        "recover_T",
        tuple(_recover_ops(layout, primes)),
        layout,
        zero_pre=layout["Tp"] + _trail(layout, primes),
        preserves=layout["Z"],
    )


def _lift(primes: Sequence[int], P: int):
    """Map x in Z_{P'} to the element of Z_P that is x mod P' and 0 mod P/P'."""
    Pp = prod(primes)
    other = P // Pp
    k = other * mod_inverse(other, Pp) if Pp > 1 else 0
    return lambda x: x * k


def _erase_T_op(layout: RegisterLayout, primes: Sequence[int]) -> Op:
    P = layout.meta["P"]
    t, tp = layout["T"][0], layout["Tp"][0]
    lift = _lift(primes, P)
    return _add(t, P, lambda lab: -lift(lab[tp] % P), (tp,), "modular_add")


def gate_cleanup_jfree(
    layout: RegisterLayout, delta: Sequence[int] | None = None, primes: Sequence[int] | None = None
) -> PermutationGate:
    """Compute T' from (Z, Delta), set T <- T - T', erase T'. Z untouched."""
    primes = tuple(primes or layout.meta["recover_primes"])
    rec = gate_recover_T(layout, delta, primes)
    ops = rec.ops + (_erase_T_op(layout, primes),) + rec.inverted().ops
    zero = layout["Tp"] + _trail(layout, primes)
    return PermutationGate(
        "cleanup_jfree",
        ops,
        layout,
        zero_pre=zero,
        preserves=layout["Z"],
        zero_post=zero + (layout["T"] if tuple(primes) == layout.meta["primes"] else ()),
    )


def gate_cleanup_reeval(
    layout: RegisterLayout, delta: Sequence[int] | None = None, primes: Sequence[int] | None = None
) -> PermutationGate:
    """Re-evaluation cleanup: Y <- Y + X(J+T-T') - X(J+T); T <- T-T'; uncopy; erase T'."""
    primes = tuple(primes or layout.meta["recover_primes"])
    rec = gate_recover_T(layout, delta, primes)
    M2 = layout.meta["M2"]
    ystep = _ladder_ops(layout) + _controlled_mul_ops(
        layout, layout["Y"], layout["Tp"][0], layout.meta["P"], -1
    ) + _unladder_ops(layout)
    uncopy = [
        _add(yi, M2, (lambda lab, s=xi: -lab[s]), (xi,), "copy_cnot")
        for xi, yi in zip(layout["X"], layout["Y"])
    ]
    ops = rec.ops + tuple(ystep) + (_erase_T_op(layout, primes),) + tuple(uncopy) + rec.inverted().ops
    zero = layout["Tp"] + _trail(layout, primes) + layout["R"]
    full = tuple(primes) == layout.meta["primes"]
    return PermutationGate(
        "cleanup_reeval",
        ops,
        layout,
        zero_pre=zero,
        preserves=layout["Z"] + layout["X"] + layout["J"],
        zero_post=zero + layout["Y"] + (layout["T"] if full else ()),
    )


def gate_unshift_known_T(layout: RegisterLayout) -> PermutationGate:
    """Y <- Y - T*Delta using the still-present T label (postselection path)."""
    ops = (
        _ladder_ops(layout)
        + _controlled_mul_ops(layout, layout["Y"], layout["T"][0], layout.meta["P"], -1)
        + _unladder_ops(layout)
    )
    return PermutationGate(
        "unshift_known_T", tuple(ops), layout, zero_pre=layout["R"], zero_post=layout["R"]
    )


# --- audits ------------------------------------------------------------------


def audit_scratch(state: SparseState) -> None:
    """Every scratch slot is zero on every support point."""
    pos = state.layout.positions(state.layout.scratch)
    for k in state.amps:
        for i in pos:
            if k[i] != 0:
                raise ScratchNotRestored(f"scratch slot {i} holds {k[i]} on {k}")


def audit_read_only(state: SparseState, V: Sequence[int], delta: Sequence[int]) -> None:
    vp, dp = state.layout["V"], state.layout["Delta"]
    want = tuple(V) + tuple(delta)
    for k in state.amps:
        if tuple(k[i] for i in vp + dp) != want:
            raise GateError(f"read-only harvest slots changed on {k}")
