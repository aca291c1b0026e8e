"""Finite bags, the Dershowitz-Manna order, and the small ghost-state atoms.

Levels are plain naturals. Fractions are ``fractions.Fraction`` values in
``(0, 1]``. Signal ids and heap locations are tiny frozen wrappers so that
they never compare equal to ordinary integers.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Callable, Dict, Generic, Hashable, Iterable, Iterator, Mapping, Tuple, TypeVar, Union

T = TypeVar("T", bound=Hashable)

Level = int


class Bag(Generic[T]):
    """An immutable finite multiset. Zero multiplicities are never stored."""

    __slots__ = ("_m", "_h")

    def __init__(self, items: Iterable[T] = ()):
        m: Dict[T, int] = {}
        for x in items:
            m[x] = m.get(x, 0) + 1
        self._m = m
        self._h = None

    @classmethod
    def from_counts(cls, counts: Mapping[T, int]) -> "Bag[T]":
        b = cls.__new__(cls)
        m = {}
        for k, n in counts.items():
            if n < 0:
                raise ValueError(f"negative multiplicity for {k!r}")
            if n:
                m[k] = n
        b._m = m
        b._h = None
        return b

    @classmethod
    def of(cls, *items: T) -> "Bag[T]":
        return cls(items)

    def count(self, x: T) -> int:
        return self._m.get(x, 0)

    __getitem__ = count

    def support(self) -> frozenset:
        return frozenset(self._m)

    def counts(self) -> Dict[T, int]:
        return dict(self._m)

    def items(self):
        return self._m.items()

    def elements(self) -> Iterator[T]:
        for k, n in self._m.items():
            for _ in range(n):
                yield k

    __iter__ = elements

    def __len__(self) -> int:
        return sum(self._m.values())

    def __bool__(self) -> bool:
        return bool(self._m)

    def __contains__(self, x) -> bool:
        return x in self._m

    def __eq__(self, other) -> bool:
        return isinstance(other, Bag) and self._m == other._m

    def __hash__(self) -> int:
        if self._h is None:
            self._h = hash(frozenset(self._m.items()))
        return self._h

    def __add__(self, other: "Bag[T]") -> "Bag[T]":
        return bag_union(self, other)

    def __sub__(self, other: "Bag[T]") -> "Bag[T]":
        return bag_subtract(self, other)

    def __le__(self, other: "Bag[T]") -> bool:
        """Sub-bag test."""
        return all(other.count(k) >= n for k, n in self._m.items())

    def __lt__(self, other: "Bag[T]") -> bool:
        """Strict sub-bag in the usual sense: contained and different."""
        return self <= other and self != other

    def scale(self, n: int) -> "Bag[T]":
        return Bag.from_counts({k: v * n for k, v in self._m.items()})

    def refine(self, pred: Callable[[T], bool]) -> "Bag[T]":
        return bag_refine(self, pred)

    def __repr__(self) -> str:
        if not self._m:
            return "Bag()"
        try:
            elems = sorted(self.elements())
        except TypeError:
            elems = list(self.elements())
        return "Bag(" + ", ".join(map(repr, elems)) + ")"


EMPTY: Bag = Bag()


def bag_union(a: Bag[T], b: Bag[T]) -> Bag[T]:
    if not b._m:
        return a
    if not a._m:
        return b
    m = dict(a._m)
    for k, n in b._m.items():
        m[k] = m.get(k, 0) + n
    return Bag.from_counts(m)


def bag_subtract(a: Bag[T], b: Bag[T]) -> Bag[T]:
    if not b._m:
        return a
    return Bag.from_counts({k: max(0, n - b.count(k)) for k, n in a._m.items()})


def bag_refine(b: Bag[T], pred: Callable[[T], bool]) -> Bag[T]:
    return Bag.from_counts({k: n for k, n in b._m.items() if pred(k)})


def _nat_lt(x, y) -> bool:
    return x < y


def dm_less(a: Bag[T], b: Bag[T], elem_lt: Callable[[T, T], bool] = _nat_lt) -> bool:
    """Dershowitz-Manna strict order, decided with the Huet-Oppen characterisation.

    ``a < b`` iff the bags differ and every element that ``a`` has more copies
    of is dominated by some element that ``b`` has more copies of.
    """
    if a == b:
        return False
    surplus = [x for x, n in a._m.items() if n > b.count(x)]
    deficit = [y for y, n in b._m.items() if n > a.count(y)]
    return all(any(elem_lt(x, y) for y in deficit) for x in surplus)


def dm_leq(a: Bag[T], b: Bag[T], elem_lt: Callable[[T, T], bool] = _nat_lt) -> bool:
    return a == b or dm_less(a, b, elem_lt)


def sub_bags(b: Bag[T]) -> Iterator[Bag[T]]:
    keys = list(b._m)
    for ns in product(*(range(b._m[k] + 1) for k in keys)):
        yield Bag.from_counts(dict(zip(keys, ns)))


def dm_less_exhaustive(a: Bag[T], b: Bag[T], elem_lt: Callable[[T, T], bool] = _nat_lt) -> bool:
    """The literal definition: search every non-empty sub-bag C of b.

    Once C is fixed the added part D is forced to be a - (b - C), so the search
    only has to confirm that decomposition and the domination condition.
    """
    for c in sub_bags(b):
        if not c:
            continue
        rest = bag_subtract(b, c)
        if not rest <= a:
            continue
        d = bag_subtract(a, rest)
        if bag_union(rest, d) != a:
            continue
        if all(any(elem_lt(x, y) for y in c.support()) for x in d.support()):
            return True
    return False


def is_fraction(q) -> bool:
    return isinstance(q, Fraction) and 0 < q <= 1


def frac(x: Union[int, str, Fraction]) -> Fraction:
    """Build a fraction in ``(0, 1]`` or raise ``ValueError``."""
    q = Fraction(x)
    if not 0 < q <= 1:
        raise ValueError(f"fraction out of range (0, 1]: {q}")
    return q


@dataclass(frozen=True, order=True)
class SignalId:
    id: int

    def __repr__(self) -> str:
        return f"#s{self.id}"


@dataclass(frozen=True, order=True)
class HeapLoc:
    addr: int

    def __repr__(self) -> str:
        return f"#l{self.addr}"


@dataclass(frozen=True)
class Signal:
    id: SignalId
    level: Level


@dataclass(frozen=True)
class Obligation:
    """A debt to set a signal or to release a mutex, tagged with its level."""

    target: Union[SignalId, HeapLoc]
    level: Level

    def __repr__(self) -> str:
        return f"({self.target!r}, {self.level})"


def level_below_bag(level: Level, obs: Bag[Obligation]) -> bool:
    return all(level < ob.level for ob in obs.support())


def level_below_bag_except(level: Level, obs: Bag[Obligation], exempt: Tuple = ()) -> bool:
    """As :func:`level_below_bag`, ignoring obligations whose target is exempt."""
    return all(level < ob.level for ob in obs.support() if ob.target not in exempt)


class SignalAllocator:
    """Monotone id source; ids are never handed out twice."""

    __slots__ = ("next_id",)

    def __init__(self, start: int = 0):
        self.next_id = start

    def fresh(self) -> SignalId:
        s = SignalId(self.next_id)
        self.next_id += 1
        return s
