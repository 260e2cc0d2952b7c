"""Argmax over n m-bit unsigned integers as a single priority ternary match.

A TCAM-style ternary table matches a key of n segments, m trits each
(0, 1 or the wildcard ``*``), in priority order: the first matching entry
wins and its value names the segment holding the maximum, with ties broken
by a predefined precedence permutation.

Construction
------------
Entries are enumerated from the most significant bit down.  At each bit
position, for the set of segments still in contention ("active"):

  * every nonempty proper subset of active segments may hold a 1 while the
    rest hold 0 -- the zeros lose immediately, their remaining bits become
    wildcards, and the subset recurses on the next bit;
  * the two uniform cases (all 1 / all 0) keep everyone active and recurse.

Optimization 1 merges the two uniform cases into a single case with a
wildcard at the current bit.  The merged case is emitted *after* all the
subset cases of the same bit so the wildcard cannot shadow them.

Optimization 2 replaces the 2^a enumeration of the final bit with a
reverse encoding of a entries: one fully anchored winning pattern per
segment that is not first in precedence, then a catch-all wildcard row for
the precedence leader.

Entry counts follow the recurrences

    base:       F(n,m) = 2 F(n,m-1) + sum_{i=1}^{n-1} C(n,i) F(i,m-1),  F(n,1) = 2^n
    opt1:       F(n,m) =   F(n,m-1) + sum_{i=1}^{n-1} C(n,i) F(i,m-1),  F(n,1) = 2^n
    opt2:       base recurrence with F(n,1) = n
    opt1+opt2:  opt1 recurrence with F(n,1) = n   (closed form n * m^(n-1))

with F(1,m) = 1 in every variant.  ``count_entries`` evaluates these
analytically and always equals ``len(generate_table(...).entries)``.

Large argmax instances that do not fit one table are handled by
``split_argmax``, a tournament of smaller tables that carries each stage
winner's value and original index to the next stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence, TextIO

LEVELS = ("base", "opt1", "opt2", "opt1+opt2")

DEFAULT_ENTRY_CAP = 1 << 20


class TableTooLarge(ValueError):
    """Requested table would exceed the entry cap."""

    def __init__(self, n: int, m: int, level: str, count: int, cap: int):
        super().__init__(
            f"ternary argmax table for n={n}, m={m}, level={level} needs "
            f"{count} entries, above the cap of {cap}"
        )
        self.count = count
        self.cap = cap


@dataclass(frozen=True)
class TernaryEntry:
    """One priority row: per-segment (care, value) bit masks and a winner.

    A segment matches an m-bit input x when ``x & care == value``; wildcard
    trits have their care bit clear.  Lower priority numbers match first.
    """

    priority: int
    care: tuple[int, ...]
    value: tuple[int, ...]
    winner: int

    def matches(self, values: Sequence[int]) -> bool:
        return all(v & c == t for v, c, t in zip(values, self.care, self.value))

    def trit_strings(self, m: int) -> list[str]:
        """Render each segment as m trits over {0,1,*}, MSB first."""
        out = []
        for care, value in zip(self.care, self.value):
            s = []
            for bit in range(m - 1, -1, -1):
                if not (care >> bit) & 1:
                    s.append("*")
                else:
                    s.append("1" if (value >> bit) & 1 else "0")
            out.append("".join(s))
        return out


@dataclass
class TernaryTable:
    """Priority-ordered ternary entries realizing argmax with a tie order."""

    n: int
    m: int
    tie_order: tuple[int, ...]
    level: str
    entries: list[TernaryEntry] = field(default_factory=list)

    def __post_init__(self):
        self.tie_order = tuple(self.tie_order)
        # numpy-backed mirrors for vectorized matching, built lazily
        self._care_mat = None
        self._value_mat = None
        self._winner_vec = None

    def __len__(self) -> int:
        return len(self.entries)

    def _ensure_matrices(self):
        if self._care_mat is None:
            import numpy as np

            self._care_mat = np.array([e.care for e in self.entries], dtype=np.uint64)
            self._value_mat = np.array([e.value for e in self.entries], dtype=np.uint64)
            self._winner_vec = np.array([e.winner for e in self.entries], dtype=np.int64)

    def lookup(self, values: Sequence[int]) -> int:
        """First-match winner index for one n-tuple of m-bit values."""
        if len(values) != self.n:
            raise ValueError(f"expected {self.n} values, got {len(values)}")
        limit = 1 << self.m
        for v in values:
            if not 0 <= v < limit:
                raise ValueError(f"value {v} does not fit in {self.m} bits")
        import numpy as np

        self._ensure_matrices()
        vals = np.array(values, dtype=np.uint64)
        hit = np.all((vals & self._care_mat) == self._value_mat, axis=1)
        idx = int(np.argmax(hit))
        if not hit[idx]:
            # Unreachable for tables built by generate_table (totality).
            raise AssertionError(
                f"ternary table miss for input {tuple(values)} "
                f"(n={self.n}, m={self.m}, level={self.level}); table is corrupt"
            )
        return int(self._winner_vec[idx])

    def lookup_batch(self, values) -> "object":
        """Vectorized lookup: values shaped (k, n) -> winners shaped (k,)."""
        import numpy as np

        self._ensure_matrices()
        vals = np.asarray(values, dtype=np.uint64)
        # Paint winners from lowest priority upward so earlier entries override.
        winners = np.full(vals.shape[0], -1, dtype=np.int64)
        for i in range(len(self.entries) - 1, -1, -1):
            hit = np.all((vals & self._care_mat[i]) == self._value_mat[i], axis=1)
            winners[hit] = self._winner_vec[i]
        if np.any(winners < 0):
            raise AssertionError("ternary table is not total; generation is broken")
        return winners


def _check_args(n: int, m: int, tie_order: Sequence[int] | None, level: str):
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}, got {level!r}")
    if tie_order is None:
        tie_order = tuple(range(n))
    else:
        tie_order = tuple(tie_order)
        if sorted(tie_order) != list(range(n)):
            raise ValueError(f"tie_order must be a permutation of 0..{n - 1}, got {tie_order}")
    return tie_order


@lru_cache(maxsize=None)
def _count(n: int, m: int, opt1: bool, opt2: bool) -> int:
    if n == 1:
        return 1
    if m == 1:
        return n if opt2 else 1 << n
    total = (1 if opt1 else 2) * _count(n, m - 1, opt1, opt2)
    for i in range(1, n):
        total += math.comb(n, i) * _count(i, m - 1, opt1, opt2)
    return total


def count_entries(n: int, m: int, level: str = "opt1+opt2") -> int:
    """Analytic entry count for a level, exact for all n, m >= 1.

    Counts are Python ints, so the base-design blowup (e.g. 4587523 for
    n=3, m=16, and far beyond) cannot overflow.
    """
    _check_args(n, m, None, level)
    opt1 = "opt1" in level
    opt2 = "opt2" in level
    if opt1 and opt2:
        return n * m ** (n - 1)
    return _count(n, m, opt1, opt2)


def generate_table(
    n: int,
    m: int,
    tie_order: Sequence[int] | None = None,
    level: str = "opt1+opt2",
    cap: int = DEFAULT_ENTRY_CAP,
) -> TernaryTable:
    """Build the full priority table; first match = argmax with tie order.

    Emission order follows the construction: subset cases of a bit before
    its merged wildcard case, depth first, so consecutive priorities honor
    the "merged case last" rule by position.
    """
    tie_order = _check_args(n, m, tie_order, level)
    opt1 = "opt1" in level
    opt2 = "opt2" in level
    need = count_entries(n, m, level)
    if need > cap:
        raise TableTooLarge(n, m, level, need, cap)

    rank = {idx: pos for pos, idx in enumerate(tie_order)}
    entries: list[TernaryEntry] = []
    # Working trit state: per segment (care, value) masks under mutation.
    care = [0] * n
    value = [0] * n

    def emit(winner: int):
        entries.append(
            TernaryEntry(len(entries), tuple(care), tuple(value), winner)
        )

    def set_bit(seg: int, bit: int, trit: int | None):
        if trit is None:
            care[seg] &= ~(1 << bit)
            value[seg] &= ~(1 << bit)
        else:
            care[seg] |= 1 << bit
            if trit:
                value[seg] |= 1 << bit
            else:
                value[seg] &= ~(1 << bit)

    def clear_bit(seg: int, bit: int):
        care[seg] &= ~(1 << bit)
        value[seg] &= ~(1 << bit)

    def last_bit(active: list[int]):
        ordered = sorted(active, key=rank.__getitem__)
        if opt2:
            # Reverse encoding: anchored winning row per non-leader, then a
            # catch-all for the precedence leader.
            for j in range(len(ordered) - 1, 0, -1):
                set_bit(ordered[j], 0, 1)
                for i in range(j):
                    set_bit(ordered[i], 0, 0)
                emit(ordered[j])
                clear_bit(ordered[j], 0)
                for i in range(j):
                    clear_bit(ordered[i], 0)
            emit(ordered[0])
        else:
            for combo in range(1 << len(active)):
                for pos, seg in enumerate(active):
                    set_bit(seg, 0, (combo >> pos) & 1)
                best = max((combo >> pos) & 1 for pos in range(len(active)))
                winner = next(
                    s for s in ordered if ((combo >> active.index(s)) & 1) == best
                )
                emit(winner)
                for seg in active:
                    clear_bit(seg, 0)

    def rec(active: list[int], bit: int):
        if len(active) == 1:
            emit(active[0])
            return
        if bit == 0:
            last_bit(active)
            return
        a = len(active)
        # Nonempty proper subsets hold a 1, the rest lose at this bit.
        for mask in range(1, (1 << a) - 1):
            subset = [active[i] for i in range(a) if (mask >> i) & 1]
            for i, seg in enumerate(active):
                set_bit(seg, bit, (mask >> i) & 1)
            rec(subset, bit - 1)
            for seg in active:
                clear_bit(seg, bit)
        if opt1:
            rec(active, bit - 1)  # merged uniform case: bit stays wildcard
        else:
            for uniform in (1, 0):
                for seg in active:
                    set_bit(seg, bit, uniform)
                rec(active, bit - 1)
                for seg in active:
                    clear_bit(seg, bit)

    rec(list(range(n)), m - 1)
    assert len(entries) == need, (
        f"generation produced {len(entries)} entries, recurrence says {need}"
    )
    return TernaryTable(n=n, m=m, tie_order=tie_order, level=level, entries=entries)


def lookup(table: TernaryTable, values: Sequence[int]) -> int:
    return table.lookup(values)


def compare_two_reference(a: int, b: int, m: int) -> int:
    """The conditional-statement baseline, for reference only.

    Hardware compares two numbers as a subtraction followed by a sign
    check; chaining it to n numbers costs n*(n-1)/2 differences and does
    not scale, which is what the ternary construction above replaces.
    Ties go to the first operand.
    """
    if not (0 <= a < (1 << m) and 0 <= b < (1 << m)):
        raise ValueError(f"operands must fit {m} bits")
    diff = a - b
    return 1 if diff < 0 else 0


# ---------------------------------------------------------------------------
# Split (tournament) argmax


@dataclass(frozen=True)
class ArgmaxStage:
    """One tournament round: operand slots compared through one table.

    Operands reference either original inputs ("in", i) or earlier stage
    winners ("win", stage_index).  The stage's table tie order is ascending
    over operand positions; operands are arranged so that position order
    equals global tie precedence.
    """

    operands: tuple[tuple[str, int], ...]
    table: TernaryTable


@dataclass
class ArgmaxChain:
    n: int
    m: int
    tie_order: tuple[int, ...]
    fan: int
    stages: list[ArgmaxStage]

    def lookup(self, values: Sequence[int]) -> int:
        """Run the tournament; returns the original index of the maximum."""
        if len(values) != self.n:
            raise ValueError(f"expected {self.n} values, got {len(values)}")
        # Each stage result is (value, original index).
        results: list[tuple[int, int]] = []
        for stage in self.stages:
            ops = [
                (values[i], i) if kind == "in" else results[i]
                for kind, i in stage.operands
            ]
            pos = stage.table.lookup([v for v, _ in ops])
            results.append(ops[pos])
        return results[-1][1]

    def total_entries(self) -> int:
        return sum(len(s.table) for s in self.stages)


def split_argmax(
    n: int,
    m: int,
    fan: int,
    tie_order: Sequence[int] | None = None,
    level: str = "opt1+opt2",
    cap: int = DEFAULT_ENTRY_CAP,
) -> ArgmaxChain:
    """Tournament of sub-argmax tables, each comparing at most ``fan`` values.

    Groups are consecutive chunks of the tie-order sequence, so an earlier
    group's winner always precedes a later group's winner and cross-group
    ties resolve exactly like the single-table argmax.
    """
    tie_order = _check_args(n, m, tie_order, level)
    if fan < 2:
        raise ValueError(f"fan must be >= 2, got {fan}")

    stages: list[ArgmaxStage] = []
    tables: dict[int, TernaryTable] = {}

    def table_for(size: int) -> TernaryTable:
        if size not in tables:
            tables[size] = generate_table(size, m, None, level, cap)
        return tables[size]

    # Slots owned by pending winners, in global precedence order.
    current: list[tuple[str, int]] = [("in", i) for i in tie_order]
    while len(current) > 1:
        nxt: list[tuple[str, int]] = []
        for start in range(0, len(current), fan):
            group = current[start : start + fan]
            if len(group) == 1:
                nxt.append(group[0])
                continue
            stages.append(ArgmaxStage(tuple(group), table_for(len(group))))
            nxt.append(("win", len(stages) - 1))
        current = nxt
    if not stages:  # n == 1
        stages.append(ArgmaxStage(tuple(current), table_for(1)))
    return ArgmaxChain(n=n, m=m, tie_order=tie_order, fan=fan, stages=stages)


# ---------------------------------------------------------------------------
# Text dump / load
#
# Line format:
#   header:  n m tie_order level        (tie_order comma-separated)
#   entry:   priority seg0 seg1 ... seg{n-1} winner    (segments MSB-first trits)


def dump_table(table: TernaryTable, fp: TextIO):
    fp.write(
        f"{table.n} {table.m} {','.join(map(str, table.tie_order))} {table.level}\n"
    )
    for e in table.entries:
        segs = " ".join(e.trit_strings(table.m))
        fp.write(f"{e.priority} {segs} {e.winner}\n")


def load_table(fp: TextIO) -> TernaryTable:
    header = fp.readline().split()
    if len(header) != 4:
        raise ValueError(f"bad ternary table header: {header!r}")
    n, m = int(header[0]), int(header[1])
    tie_order = tuple(int(t) for t in header[2].split(","))
    level = header[3]
    _check_args(n, m, tie_order, level)
    entries = []
    for line in fp:
        parts = line.split()
        if not parts:
            continue
        if len(parts) != n + 2:
            raise ValueError(f"bad ternary table row: {line!r}")
        priority = int(parts[0])
        winner = int(parts[-1])
        care, value = [], []
        for seg in parts[1:-1]:
            if len(seg) != m:
                raise ValueError(f"segment {seg!r} is not {m} trits")
            c = v = 0
            for bit, trit in zip(range(m - 1, -1, -1), seg):
                if trit == "*":
                    continue
                c |= 1 << bit
                if trit == "1":
                    v |= 1 << bit
                elif trit != "0":
                    raise ValueError(f"bad trit {trit!r} in segment {seg!r}")
            care.append(c)
            value.append(v)
        if not 0 <= winner < n:
            raise ValueError(f"winner {winner} out of range for n={n}")
        entries.append(TernaryEntry(priority, tuple(care), tuple(value), winner))
    return TernaryTable(n=n, m=m, tie_order=tie_order, level=level, entries=entries)
