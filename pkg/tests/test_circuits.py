import dataclasses
from collections import Counter
import random

import numpy as np
import pytest

from pairshift.analysis import schmidt_rank
from pairshift.circuits import (
    GateLog,
    audit_read_only,
    audit_scratch,
    gate_cleanup_jfree,
    gate_cleanup_reeval,
    gate_copy,
    gate_difference,
    gate_mul_data_neg,
    gate_priority_encoder,
    gate_recover_T,
    gate_reeval_shift,
    gate_unshift_known_T,
    priority_table,
)
from pairshift.errors import AccessibilityViolation, DstNotZero, GateError, ScratchNotRestored
from pairshift.groupstate import (
    Instance,
    RegisterLayout,
    SparseState,
    affine_X,
    harvest,
    initial_state,
    prepare_phi8f,
    reference_instance,
)
from pairshift.modarith import mod_reduce
from pairshift.pipeline import RouteConfig, static_gate_log


def label(layout, inst, **slots):
    """Basis label with V/Delta harvested and the given slots filled."""
    V, delta = harvest(inst)
    lab = layout.zero()
    slots = {"V": V, "Delta": delta, **slots}
    for name, vals in slots.items():
        if isinstance(vals, int):
            vals = (vals,)
        for i, v in zip(layout[name], vals):
            lab[i] = mod_reduce(v, layout.moduli[i])
    return tuple(lab)


def read(layout, lab, name):
    return tuple(lab[i] for i in layout[name])


def mod_vec(v, q):
    return tuple(x % q for x in v)


@pytest.fixture(scope="module")
def L(ref):
    return RegisterLayout.build(ref)


@pytest.fixture(scope="module")
def LR(ref):
    return RegisterLayout.build(ref, reeval=True)


def test_copy_basis(ref, LR):
    lab = label(LR, ref, X=(40, 9))
    out = gate_copy(LR).forward(lab)
    assert mod_vec(read(LR, out, "Y"), 60) == (40, 9)
    assert gate_copy(LR).inverse(out) == lab


def test_copy_superposition_is_entangled(ref, LR):
    s = prepare_phi8f(ref, LR)
    c = gate_copy(LR).apply(s)
    for k in c.amps:
        assert read(LR, k, "X") == read(LR, k, "Y")
    assert schmidt_rank(c, ("Y",)) == 15  # not |psi>|psi>


def test_copy_requires_zero_dst(ref, LR):
    s = gate_copy(LR).apply(prepare_phi8f(ref, LR))
    with pytest.raises(DstNotZero):
        gate_copy(LR).apply(s)


@pytest.mark.parametrize("t", [0, 1, 7, 14])
def test_mul_data_neg(ref, L, t):
    out = gate_mul_data_neg(L).forward(label(L, ref, T=t))
    want = tuple((-t * d) % 60 for d in (40, 56))
    assert mod_vec(read(L, out, "Z"), 60) == want
    assert all(out[i] == 0 for i in L["R"])
    if t == 1:
        assert want == (20, 4)


@pytest.mark.parametrize("j,t", [(2, 3), (0, 0), (7, 11), (14, 14)])
def test_reeval_shift(ref, LR, j, t):
    lab = label(LR, ref, X=affine_X(ref, j), Y=affine_X(ref, j), J=j, T=t)
    out = gate_reeval_shift(LR).forward(lab)
    assert read(LR, out, "Y") == affine_X(ref, j + t)
    assert read(LR, out, "J") == read(LR, lab, "J")
    assert read(LR, out, "X") == read(LR, lab, "X")


def test_reeval_shift_offset_free(ref, LR):
    for v in [(0, 13), (0, 0), (17, -3)]:
        inst = ref.replace(v_star=v)
        lab = label(LR, inst, X=affine_X(inst, 4), Y=affine_X(inst, 4), J=4, T=6)
        out = gate_difference(LR).forward(gate_reeval_shift(LR).forward(lab))
        assert mod_vec(read(LR, out, "Z"), 60) == tuple((-6 * d) % 60 for d in (40, 56))


def test_difference(ref, LR):
    lab = label(LR, ref, X=affine_X(ref, 2), Y=affine_X(ref, 5))
    out = gate_difference(LR).forward(lab)
    # -24 * (5, 7) = (-120, -168) = (0, 12) mod 60
    assert mod_vec(read(LR, out, "Z"), 60) == (0, 12)
    same = gate_difference(LR).forward(label(LR, ref, X=(3, 4), Y=(3, 4)))
    assert read(LR, same, "Z") == (0, 0)


def test_difference_independent_of_j(ref, LR):
    zs = set()
    for j in range(15):
        lab = label(LR, ref, X=affine_X(ref, j), Y=affine_X(ref, j + 3))
        zs.add(read(LR, gate_difference(LR).forward(lab), "Z"))
    assert len(zs) == 1


def test_priority_table():
    assert priority_table((40, 56), (3, 5)) == [0, 1]
    assert priority_table((15, 30), (3, 5)) == [None, None]
    assert priority_table((1, 2, 4), (7,)) == [0]
    assert priority_table((-20, -4), (3, 5)) == [0, 1]


def test_priority_encoder_gate(ref, L):
    g = gate_priority_encoder(L)
    out = g.forward(label(L, ref))
    assert mod_vec(read(L, out, "IDX"), 3) == (1, 2)
    assert read(L, out, "FLAG") == (0, 0)  # scan flags uncomputed
    assert g.inverse(out) == label(L, ref)
    bad = reference_instance(b_star=(5, 10))
    assert mod_vec(read(L, g.forward(label(L, bad)), "IDX"), 3) == (1, 0)


def test_recover_T_reference(ref, L):
    rec = gate_recover_T(L, harvest(ref)[1])
    mul = gate_mul_data_neg(L)
    assert read(L, rec.forward(label(L, ref)), "Tp") == (0,)
    for t in range(15):
        z = read(L, mul.forward(label(L, ref, T=t)), "Z")
        out = rec.forward(label(L, ref, Z=z))
        assert read(L, out, "Tp")[0] % 15 == t
        assert read(L, out, "Z") == z


@pytest.mark.parametrize(
    "primes,D,b",
    [((3, 5, 7), 2, (1, 0, 0)), ((11, 13), 1, (0, 7)), ((3, 5, 7, 11), 1, (5, 21)), ((101,), 3, (0, 0, 5))],
)
def test_recover_T_exhaustive(primes, D, b):
    inst = Instance(n=len(b), primes=primes, D=D, b_star=b, v_star=(0,) * len(b))
    for scheme in ("garner", "product_tree"):
        L = RegisterLayout.build(inst, crt_scheme=scheme)
        _, delta = harvest(inst)
        rec = gate_recover_T(L, delta)
        for t in range(inst.P):
            z = tuple(-t * d for d in delta)
            out = rec.forward(label(L, inst, Z=z))
            assert read(L, out, "Tp")[0] % inst.P == t
            assert rec.inverse(out) == label(L, inst, Z=z)


def test_recover_T_inaccessible(L):
    bad = reference_instance(b_star=(5, 10))
    with pytest.raises(AccessibilityViolation) as exc:
        gate_recover_T(L, harvest(bad)[1])
    assert exc.value.missing == (5,)
    assert "5" in str(exc.value)


def test_cleanup_jfree_contract(ref, L):
    s = gate_mul_data_neg(L).apply(initial_state(ref, L))
    c = gate_cleanup_jfree(L, harvest(ref)[1]).apply(s)
    assert c.slot_values("T") == {(0,)}
    assert c.slot_values("Tp") == {(0,)}
    audit_scratch(c)
    audit_read_only(c, *harvest(ref))
    # Z labels and amplitudes survive bit for bit
    zpos = L["Z"]
    before = Counter((tuple(k[i] for i in zpos), a) for k, a in s.amps.items())
    after = Counter((tuple(k[i] for i in zpos), a) for k, a in c.amps.items())
    assert before == after


def test_cleanup_reeval_contract(ref, LR, ref_jfree):
    s = initial_state(ref, LR)
    for g in (gate_copy(LR), gate_reeval_shift(LR), gate_difference(LR)):
        s = g.apply(s)
    c = gate_cleanup_reeval(LR, harvest(ref)[1]).apply(s)
    assert c.slot_values("Y") == {(0, 0)}
    assert c.slot_values("T") == {(0,)}
    audit_scratch(c)


def test_cleanup_reeval_identity_on_T_zero_branch(ref, LR):
    j = 4
    lab = label(LR, ref, X=affine_X(ref, j), Y=affine_X(ref, j), J=j)
    for g in (gate_reeval_shift(LR), gate_difference(LR)):
        lab = g.forward(lab)
    assert read(LR, lab, "Y") == affine_X(ref, j)
    out = gate_cleanup_reeval(LR, harvest(ref)[1]).forward(lab)
    assert read(LR, out, "Y") == (0, 0)  # only the uncopy touched Y


def test_unshift_known_T(ref, LR):
    lab = label(LR, ref, X=affine_X(ref, 3), Y=affine_X(ref, 3), J=3, T=5)
    lab = gate_reeval_shift(LR).forward(lab)
    out = gate_unshift_known_T(LR).forward(lab)
    assert read(LR, out, "Y") == affine_X(ref, 3)


def test_scratch_audit_catches_leftover(ref, L):
    rec = gate_recover_T(L)
    leaky = dataclasses.replace(rec, zero_post=L["Tp"])
    s = gate_mul_data_neg(L).apply(initial_state(ref, L))
    with pytest.raises(ScratchNotRestored):
        leaky.apply(s)
    with pytest.raises(ScratchNotRestored):
        audit_scratch(rec.apply(s))


def test_read_only_audit(ref, L):
    s = initial_state(ref, L)
    with pytest.raises(GateError):
        audit_read_only(s, (0, 0), (0, 0))


def _all_gates(inst):
    L = RegisterLayout.build(inst)
    LR = RegisterLayout.build(inst, reeval=True)
    LP = RegisterLayout.build(inst, crt_scheme="product_tree")
    return [
        (L, gate_mul_data_neg(L)),
        (L, gate_priority_encoder(L)),
        (L, gate_recover_T(L)),
        (L, gate_cleanup_jfree(L)),
        (LP, gate_recover_T(LP)),
        (LP, gate_cleanup_jfree(LP)),
        (LR, gate_copy(LR)),
        (LR, gate_reeval_shift(LR)),
        (LR, gate_difference(LR)),
        (LR, gate_cleanup_reeval(LR)),
        (LR, gate_unshift_known_T(LR)),
    ]


def random_label(layout, rng):
    return tuple(mod_reduce(rng.randrange(q), q) for q in layout.moduli)


@pytest.mark.parametrize("k", range(11))
def test_forward_inverse_identity(ref, k):
    layout, gate = _all_gates(ref)[k]
    rng = random.Random(k)
    for _ in range(1000):
        lab = random_label(layout, rng)
        fwd = gate.forward(lab)
        assert all(-q < 2 * x <= q for x, q in zip(fwd, layout.moduli))
        assert gate.inverse(fwd) == lab
        assert gate.inverted().forward(fwd) == lab


def randomize_phases(state, seed):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=len(state)) + 1j * rng.normal(size=len(state))
    vals /= np.linalg.norm(vals)
    return SparseState(state.layout, {k: complex(v) for k, v in zip(sorted(state.amps), vals)})


@pytest.mark.parametrize("route", ["jfree", "reeval"])
def test_amplitude_multiset_invariant(ref, route):
    reeval = route == "reeval"
    L = RegisterLayout.build(ref, reeval=reeval)
    s = randomize_phases(initial_state(ref, L), 3)
    delta = harvest(ref)[1]
    if reeval:
        gates = [gate_copy(L), gate_reeval_shift(L), gate_difference(L), gate_cleanup_reeval(L, delta)]
    else:
        gates = [gate_mul_data_neg(L), gate_cleanup_jfree(L, delta)]
    for g in gates:
        out = g.apply(s)
        assert sorted(s.amps.values(), key=lambda a: (a.real, a.imag)) == sorted(
            out.amps.values(), key=lambda a: (a.real, a.imag)
        )
        s = out


def test_gate_log_counts(ref):
    log = GateLog("x")
    L = RegisterLayout.build(ref)
    gate_mul_data_neg(L).apply(initial_state(ref, L), log)
    assert log["controlled_add"] > 0 and log["modular_double"] > 0
    assert all(v >= 0 for v in log.as_dict().values())
    assert set(log.as_dict()) >= {"modular_add", "copy_cnot", "crt_step", "priority_scan", "ext_euclid_call"}
    assert '"controlled_add"' in log.to_json()


def test_gate_log_monotone_within_run(ref):
    from pairshift.pipeline import run_reeval

    res = run_reeval(ref)
    static = static_gate_log(ref, RouteConfig(route="reeval"))
    assert res.gate_log.as_dict() == static.as_dict()


def test_gate_counts_scale_polylog():
    # single-prime and multi-prime sweeps; totals should grow sub-quadratically in bits
    sweeps = [
        [(3,), (11,), (101,), (1009,), (10007,), (100003,)],
        [(3,), (3, 5), (3, 5, 7), (3, 5, 7, 11), (3, 5, 7, 11, 13)],
    ]
    for sweep in sweeps:
        bits, totals = [], []
        for ps in sweep:
            inst = Instance(n=2, primes=ps, D=1, b_star=(1, 1), v_star=(0, 0), window_cap=10**9)
            bits.append(inst.M2.bit_length())
            totals.append(static_gate_log(inst).total)
        assert totals == sorted(totals)
        slope = np.polyfit(np.log(bits), np.log(totals), 1)[0]
        assert slope < 2.0
    ns = [static_gate_log(Instance(n=n, primes=(3, 5), D=1, b_star=(1,) * n, v_star=(0,) * n)).total for n in (2, 3, 4, 6)]
    assert ns == sorted(ns)
    assert ns[-1] / ns[0] < 6 / 2 + 1  # roughly linear in n
