"""
Exact modular integer arithmetic.

Values are plain Python ints. Register contents use balanced
representatives in (-q/2, q/2]; ``canonical`` gives the non-negative
form when a hashable/printable label is wanted.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import gcd, prod
from typing import Sequence

from .errors import InstanceError, NotInvertible, WidthOverflow

WIDTH_BITS = 128


def mod_reduce(x: int, q: int) -> int:
    """Reduce ``x`` into the balanced range (-q/2, q/2]."""
    if q < 2:
        raise InstanceError(f"modulus must be >= 2, got {q}")
    r = x % q
    if 2 * r > q:
        r -= q
    return r


def canonical(x: int, q: int) -> int:
    return x % q


def check_width(x: int, bits: int = WIDTH_BITS) -> int:
    if abs(x).bit_length() > bits:
        raise WidthOverflow(f"{x} exceeds the {bits}-bit register width")
    return x


def ext_gcd(a: int, b: int) -> tuple[int, int, int]:
    """Return ``(g, s, t)`` with ``g = gcd(a, b) >= 0`` and ``s*a + t*b = g``."""
    if a == 0 and b == 0:
        raise ValueError("ext_gcd(0, 0) is undefined")
    old_r, r = a, b
    old_s, s = 1, 0
    old_t, t = 0, 1
    while r != 0:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_s, s = s, old_s - q * s
        old_t, t = t, old_t - q * t
    if old_r < 0:
        old_r, old_s, old_t = -old_r, -old_s, -old_t
    return old_r, old_s, old_t


def mod_inverse(a: int, p: int) -> int:
    """Inverse of ``a`` modulo ``p`` in [0, p). Raises NotInvertible."""
    g, s, _ = ext_gcd(a % p, p)
    if g != 1:
        raise NotInvertible(a, p)
    return s % p


@dataclass(frozen=True)
class PrimeSet:
    """Ordered distinct odd primes p_1..p_k and their product."""

    primes: tuple[int, ...]

    def __post_init__(self):
        ps = tuple(int(p) for p in self.primes)
        object.__setattr__(self, "primes", ps)
        if not ps:
            raise InstanceError("prime set must be nonempty")
        if len(set(ps)) != len(ps):
            raise InstanceError(f"primes must be pairwise distinct: {ps}")
        for p in ps:
            if p < 3 or p % 2 == 0 or not _is_prime(p):
                raise InstanceError(f"{p} is not an odd prime")

    @cached_property
    def product(self) -> int:
        return prod(self.primes)

    def __len__(self) -> int:
        return len(self.primes)

    def __iter__(self):
        return iter(self.primes)


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    small = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)
    for p in small:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    # deterministic for n < 3.3e24
    for a in small:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _as_primes(primes: PrimeSet | Sequence[int]) -> tuple[int, ...]:
    if isinstance(primes, PrimeSet):
        return primes.primes
    return tuple(primes)


def garner_digits(residues: Sequence[int], primes: Sequence[int]) -> list[int]:
    """Mixed-radix digits d_k with x = d_0 + d_1 p_0 + d_2 p_0 p_1 + ..."""
    digits: list[int] = []
    for k, (r, p) in enumerate(zip(residues, primes)):
        digits.append(garner_next_digit(r, digits, primes[:k], p))
    return digits


def garner_next_digit(r: int, digits: Sequence[int], prev_primes: Sequence[int], p: int) -> int:
    """Next mixed-radix digit modulo ``p`` given the digits so far."""
    acc, radix = 0, 1
    for d, q in zip(digits, prev_primes):
        acc += d * radix
        radix *= q
    return (r - acc) * mod_inverse(radix, p) % p


def mixed_radix_value(digits: Sequence[int], primes: Sequence[int]) -> int:
    x, radix = 0, 1
    for d, p in zip(digits, primes):
        x += d * radix
        radix *= p
    return x


def crt_garner(residues: Sequence[int], primes: PrimeSet | Sequence[int]) -> int:
    """CRT recombination by Garner's mixed-radix scheme (O(k^2) steps).

    Result is balanced modulo the product of ``primes``.
    """
    ps = _as_primes(primes)
    if len(residues) != len(ps):
        raise ValueError("need exactly one residue per prime")
    digits = garner_digits([r % p for r, p in zip(residues, ps)], ps)
    return mod_reduce(mixed_radix_value(digits, ps), prod(ps))


def crt_pair(a1: int, m1: int, a2: int, m2: int) -> int:
    """The x in [0, m1*m2) with x = a1 (mod m1), x = a2 (mod m2)."""
    t = (a2 - a1) * mod_inverse(m1, m2) % m2
    return (a1 % m1 + m1 * t) % (m1 * m2)


def product_tree(primes: Sequence[int]):
    """Balanced binary tree over prime indices.

    Leaves are ints (prime index); internal nodes are ``(left, right)`` tuples.
    """
    idx = list(range(len(primes)))

    def build(lo: int, hi: int):
        if hi - lo == 1:
            return idx[lo]
        mid = (lo + hi) // 2
        return (build(lo, mid), build(mid, hi))

    return build(0, len(idx))


def tree_modulus(node, primes: Sequence[int]) -> int:
    if isinstance(node, int):
        return primes[node]
    return tree_modulus(node[0], primes) * tree_modulus(node[1], primes)


def internal_nodes(node) -> list:
    """Post-order list of internal nodes (children before parents)."""
    if isinstance(node, int):
        return []
    return internal_nodes(node[0]) + internal_nodes(node[1]) + [node]


def crt_product_tree(residues: Sequence[int], primes: PrimeSet | Sequence[int]) -> int:
    """CRT recombination by a remainder/product tree (O(k log k) merges)."""
    ps = _as_primes(primes)
    if len(residues) != len(ps):
        raise ValueError("need exactly one residue per prime")

    def solve(node) -> tuple[int, int]:
        if isinstance(node, int):
            return residues[node] % ps[node], ps[node]
        a1, m1 = solve(node[0])
        a2, m2 = solve(node[1])
        return crt_pair(a1, m1, a2, m2), m1 * m2

    x, m = solve(product_tree(ps))
    return mod_reduce(x, m)


def coprime(a: int, b: int) -> bool:
    return gcd(a, b) == 1
