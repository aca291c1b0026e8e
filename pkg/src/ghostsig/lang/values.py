from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

from ..bags import HeapLoc, SignalId


@dataclass(frozen=True, slots=True)
class UnitV:
    def __repr__(self) -> str:
        return "unit"


@dataclass(frozen=True, slots=True)
class BoolV:
    b: bool

    def __repr__(self) -> str:
        return "true" if self.b else "false"


@dataclass(frozen=True, slots=True)
class IntV:
    n: int

    def __repr__(self) -> str:
        return str(self.n)


@dataclass(frozen=True, slots=True)
class ListV:
    items: Tuple["Value", ...]

    def __repr__(self) -> str:
        return "#[" + ", ".join(map(repr, self.items)) + "]"


Value = Union[UnitV, BoolV, IntV, ListV, HeapLoc, SignalId]
VALUE_TYPES = (UnitV, BoolV, IntV, ListV, HeapLoc, SignalId)

UNIT = UnitV()
TRUE = BoolV(True)
FALSE = BoolV(False)
NIL = ListV(())


def as_value(x) -> Value:
    """Convert a Python literal into a language value."""
    if isinstance(x, VALUE_TYPES):
        return x
    if x is None:
        return UNIT
    if isinstance(x, bool):
        return TRUE if x else FALSE
    if isinstance(x, int):
        return IntV(x)
    if isinstance(x, (list, tuple)):
        return ListV(tuple(as_value(y) for y in x))
    raise TypeError(f"no language value for {x!r}")
