"""Switching rules shared by the static and dynamic searches.

Switchable components are indexed by sorted id, and an energized set is an
integer bitmask over that order. Black-start units are always on and are
never part of the mask.
"""

from __future__ import annotations

from dataclasses import dataclass

from .network import Branch, Load, PowerNetwork


@dataclass(frozen=True)
class Rules:
    """Adjacency rule options.

    ``allow_loops`` lets a branch close between two buses that are already
    live. ``symmetry`` treats equal loads at one bus as interchangeable and
    only offers the lowest-id unenergized member of each group.
    """

    allow_loops: bool = True
    symmetry: bool = True


RADIAL = Rules(allow_loops=False)


@dataclass(frozen=True)
class Configuration:
    """An energized set of component ids (BSUs included)."""

    energized: frozenset

    @classmethod
    def of(cls, net: PowerNetwork, ids=()) -> "Configuration":
        return cls(frozenset(ids) | {g.id for g in net.bsus})

    def bus_counts(self, net: PowerNetwork) -> dict[int, int]:
        """S_b: number of energized components incident to each bus."""
        counts = {b.id: 0 for b in net.buses}
        for cid in self.energized:
            for b in net.components[cid].buses:
                counts[b] += 1
        return counts

    def live_buses(self, net: PowerNetwork) -> frozenset:
        return frozenset(b for b, n in self.bus_counts(net).items() if n >= 1)


class SwitchModel:
    """Precomputed adjacency data for fast child enumeration."""

    def __init__(self, net: PowerNetwork, rules: Rules = Rules()):
        self.net = net
        self.rules = rules
        self.ids = tuple(sorted(net.switchable()))
        self.index = {cid: i for i, cid in enumerate(self.ids)}
        bidx = net.bus_index
        self.n = len(self.ids)
        self.bus_mask = []
        self.is_branch = []
        self.load_p = [0.0] * self.n
        for i, cid in enumerate(self.ids):
            c = net.components[cid]
            m = 0
            for b in c.buses:
                m |= 1 << bidx[b]
            self.bus_mask.append(m)
            self.is_branch.append(isinstance(c, Branch))
            if isinstance(c, Load):
                self.load_p[i] = c.p_nominal
        # symmetry predecessor: the previous member of an equal-load group
        self.pred = [-1] * self.n
        if rules.symmetry:
            groups: dict[tuple, list[int]] = {}
            for i, cid in enumerate(self.ids):
                c = net.components[cid]
                if isinstance(c, Load):
                    groups.setdefault((c.bus, c.p_nominal), []).append(i)
            for members in groups.values():
                for a, b in zip(members, members[1:]):
                    self.pred[b] = a
        self.load_indices = tuple(i for i in range(self.n) if self.load_p[i] > 0)
        self.root_live = 0
        for g in net.bsus:
            self.root_live |= 1 << bidx[g.bus]

    def children(self, mask: int, live: int) -> list[int]:
        """Indices switchable next, in id order."""
        out = []
        for i in range(self.n):
            if mask >> i & 1:
                continue
            bm = self.bus_mask[i]
            if not bm & live:
                continue
            if self.is_branch[i] and not self.rules.allow_loops and bm & live == bm:
                continue
            p = self.pred[i]
            if p >= 0 and not mask >> p & 1:
                continue
            out.append(i)
        return out

    def apply(self, i: int, mask: int, live: int) -> tuple[int, int]:
        return mask | 1 << i, live | self.bus_mask[i]

    def live_of(self, mask: int) -> int:
        live = self.root_live
        for i in range(self.n):
            if mask >> i & 1:
                live |= self.bus_mask[i]
        return live

    def mask_of(self, ids) -> int:
        m = 0
        for cid in ids:
            if cid in self.index:
                m |= 1 << self.index[cid]
        return m

    def config(self, mask: int) -> Configuration:
        return Configuration.of(self.net, (self.ids[i] for i in range(self.n) if mask >> i & 1))

    def remaining_loads(self, mask: int) -> list[float]:
        return sorted((self.load_p[i] for i in self.load_indices if not mask >> i & 1), reverse=True)


def check_sequence(net: PowerNetwork, ids, rules: Rules = Rules(allow_loops=True, symmetry=False)) -> None:
    """Raise ValueError if ``ids`` violates the switching rules."""
    model = SwitchModel(net, rules)
    mask, live = 0, model.root_live
    for k, cid in enumerate(ids):
        if cid not in model.index:
            raise ValueError(f"slot {k + 1}: {cid!r} is not a switchable component")
        i = model.index[cid]
        if mask >> i & 1:
            raise ValueError(f"slot {k + 1}: {cid!r} switched twice")
        if i not in model.children(mask, live):
            raise ValueError(f"slot {k + 1}: {cid!r} is not adjacent to a live bus")
        mask, live = model.apply(i, mask, live)
