"""Unidirectional ring topologies over machine ids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Topology:
    successor: dict

    @classmethod
    def ring(cls, order) -> "Topology":
        order = list(order)
        if not order:
            raise ValueError("a ring needs at least one machine")
        return cls({m: order[(i + 1) % len(order)] for i, m in enumerate(order)})

    @property
    def machines(self) -> frozenset:
        return frozenset(self.successor)

    def __len__(self):
        return len(self.successor)

    def succ(self, m):
        return self.successor[m]

    def pred(self, m):
        for a, b in self.successor.items():
            if b == m:
                return a
        raise KeyError(m)

    def order(self, start=None) -> list:
        """Machines in ring order starting from ``start`` (default: lowest id)."""
        start = min(self.successor) if start is None else start
        out = [start]
        m = self.successor[start]
        while m != start:
            out.append(m)
            m = self.successor[m]
        return out

    def is_single_cycle(self) -> bool:
        if not self.successor:
            return False
        if set(self.successor.values()) != set(self.successor):
            return False
        return len(self.order()) == len(self.successor)

    def without(self, m) -> "Topology":
        """Splice ``m`` out: its predecessor now sends to its successor."""
        if m not in self.successor:
            return self
        if len(self.successor) == 1:
            raise ValueError("cannot remove the only machine from a ring")
        p, s = self.pred(m), self.successor[m]
        new = {a: b for a, b in self.successor.items() if a != m}
        new[p] = s if s != m else p
        return Topology(new)

    def with_inserted(self, new_machine, after) -> "Topology":
        """Connect ``after -> new_machine -> old successor of after``."""
        if new_machine in self.successor:
            raise ValueError(f"machine {new_machine} already in the ring")
        s = self.successor[after]
        succ = dict(self.successor)
        succ[after] = new_machine
        succ[new_machine] = s
        return Topology(succ)


def reshuffle_topology(topology: Topology, seed) -> Topology:
    """Uniformly random single cycle over the same machines.

    The lowest id is pinned first and the rest permuted, so each of the
    (P-1)! distinct cycles is equally likely.
    """
    ms = sorted(topology.machines)
    if len(ms) <= 2:
        return Topology.ring(ms)
    rng = np.random.default_rng(seed)
    rest = [ms[i] for i in rng.permutation(np.arange(1, len(ms)))]
    return Topology.ring([ms[0]] + rest)
