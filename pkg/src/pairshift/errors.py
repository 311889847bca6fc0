"""Exception hierarchy shared by every layer of the simulator."""


class PairShiftError(Exception):
    """Base class for all simulator errors."""


class InstanceError(PairShiftError, ValueError):
    """An instance or configuration violates a stated invariant."""


class WidthOverflow(InstanceError):
    """A register value would not fit the 128-bit reference width."""


class WindowTooLarge(InstanceError):
    pass


class SupportTooLarge(PairShiftError):
    pass


class NotInvertible(PairShiftError, ArithmeticError):
    def __init__(self, a, p):
        super().__init__(f"{a} is not invertible modulo {p}")
        self.a = a
        self.p = p


class GateError(PairShiftError):
    """A gate precondition or audit failed (ancilla discipline bug)."""


class DstNotZero(GateError):
    pass


class ScratchNotRestored(GateError):
    pass


class AccessibilityViolation(PairShiftError):
    """Some prime has no coordinate of the data vector that is a unit modulo it."""

    def __init__(self, missing):
        self.missing = tuple(missing)
        super().__init__(
            "residue accessibility fails at prime(s) "
            + ", ".join(str(p) for p in self.missing)
            + ": T cannot be recovered from Z"
        )


class NoAccessiblePrime(AccessibilityViolation):
    pass
