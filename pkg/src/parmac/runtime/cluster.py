"""Workers, the circulating W step, local Z steps, faults and membership.

Two executors share the same worker code:

* ``lockstep``: single-threaded and tick-synchronous. At each tick every
  live worker (in id order) drains the messages queued for it; everything
  they send is delivered after all workers have finished the tick. This is
  a pure function of the configuration and the scenario.
* ``threaded``: one OS thread per worker, communicating only through queues
  of encoded messages. Each worker keeps a logical clock advanced by the CPU
  time of its own operations, so measured step times do not depend on how
  the host schedules threads.
"""

from __future__ import annotations

import queue
import threading
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..data import Dataset, partition
from ..errors import (DeadWorker, LastMachine, MembershipError, UnrecoverableLoss)
from ..mac import ENUMERATE, CIFAR_SCHEDULE, EvalConfig, MuSchedule, ShardTrainer, z_step
from ..model import BAModel, SgdConfig, e_ba, e_q, encode
from .messages import SubmodelMsg, decode_msg, encode_msg
from .topology import Topology, reshuffle_topology

COUNTER = "counter"
VISIT_LIST = "visit_list"
LOCKSTEP = "lockstep"
THREADED = "threaded"


@dataclass
class ParMACConfig:
    P: int = 4
    L: int = 8
    schedule: MuSchedule = CIFAR_SCHEDULE
    z_mode: str = ENUMERATE
    sgd: SgdConfig = field(default_factory=SgdConfig)
    protocol: str = COUNTER
    consecutive_passes: bool = False
    shuffle_topology: bool = False
    topology_seed: int = 0
    speeds: tuple | None = None
    executor: str = LOCKSTEP
    eval: EvalConfig = field(default_factory=EvalConfig)
    early_stopping: bool = True
    split_seed: int = 0
    pca_subset: int | None = None
    id_capacity: int = 64
    keep_wire: bool = False

    def __post_init__(self):
        if self.P < 1:
            raise ValueError("P must be >= 1")
        if self.protocol not in (COUNTER, VISIT_LIST):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.executor not in (LOCKSTEP, THREADED):
            raise ValueError(f"unknown executor {self.executor!r}")

    @property
    def fault_tolerant(self) -> bool:
        return self.protocol == VISIT_LIST


@dataclass(frozen=True)
class TraceEvent:
    iteration: int
    tick: int
    machine: int
    sid: int
    action: str
    counter: int = 0
    round: int = -1


@dataclass
class CommLog:
    """Message and activity counters, cumulative over the run plus per W step."""

    messages_sent: int = 0
    messages_received: int = 0
    bytes_sent: int = 0
    train_events: int = 0
    z_messages: int = 0
    busy_ticks: dict = field(default_factory=dict)
    idle_ticks: dict = field(default_factory=dict)
    busy_time: dict = field(default_factory=dict)
    idle_time: dict = field(default_factory=dict)
    w_times: list = field(default_factory=list)
    z_times: list = field(default_factory=list)
    steps: list = field(default_factory=list)

    @property
    def total_time(self) -> float:
        return float(sum(self.w_times) + sum(self.z_times))

    def _bump(self, table: dict, m, amount=1):
        table[m] = table.get(m, 0) + amount

    def as_dict(self) -> dict:
        return {
            "messages_sent": self.messages_sent,
            "messages_received": self.messages_received,
            "bytes_sent": self.bytes_sent,
            "train_events": self.train_events,
            "z_messages": self.z_messages,
            "busy_ticks": {str(k): v for k, v in sorted(self.busy_ticks.items())},
            "idle_ticks": {str(k): v for k, v in sorted(self.idle_ticks.items())},
            "steps": self.steps,
        }


@dataclass
class WStepPlan:
    iteration: int
    L: int
    M: int
    rounds: int
    passes: int
    rings: list
    protocol: str
    P: int

    def ring_for(self, msg: SubmodelMsg) -> Topology:
        if msg.in_training:
            return self.rings[self.round_of(msg.visits)]
        return self.rings[-1]

    def round_of(self, visits) -> int:
        return self.rounds - (len(visits) - 1)


def visit_decision(visits: tuple, me: int, live, rounds: int):
    """Visit-list protocol at machine ``me``.

    Returns ``(train, round_idx, store, new_visits, forward)``.
    """
    if len(visits) >= 2:
        round_idx = rounds - (len(visits) - 1)
        cur = visits[0]
        train = me in cur
        cur = cur - {me}
        if cur:
            return train, round_idx, False, (cur,) + visits[1:], True
        rest = visits[1:]
        if len(rest) >= 2:
            return train, round_idx, False, (frozenset(live),) + rest[1:], True
        dist = frozenset(live) - {me}
        return train, round_idx, True, (dist,), bool(dist)
    cur = visits[0]
    return False, -1, me in cur, (cur - {me},), bool(cur - {me})


class Worker:
    """One machine: a read-only shard, its codes, a model replica and a queue."""

    def __init__(self, wid: int, shard: Dataset, codes, cfg: SgdConfig, model: BAModel):
        self.id = wid
        self.shard = shard
        self.X = shard.rows()
        self.trainer = ShardTrainer(shard, codes, cfg, shard_id=wid)
        self.replica = model.copy()
        self.staged: dict[int, np.ndarray] = {}
        self.retained: dict[int, SubmodelMsg] = {}
        self.queue: deque = deque()

    @property
    def codes(self) -> np.ndarray:
        return self.trainer.codes

    def begin_wstep(self, iteration: int) -> None:
        self.trainer.begin_wstep(iteration)
        self.staged.clear()
        self.retained.clear()

    def commit(self, M: int) -> None:
        missing = set(range(M)) - set(self.staged)
        if missing:
            raise RuntimeError(f"machine {self.id} never received final submodels {sorted(missing)}")
        for sid, w in self.staged.items():
            self.replica.set_submodel(sid, w)
        self.staged.clear()

    def handle(self, msg: SubmodelMsg, plan: WStepPlan, live):
        """Process one dequeued submodel. Returns (outgoing, events)."""
        sid = msg.sid(plan.L)
        train, round_idx, store, visits, forward = visit_decision(msg.visits, self.id, live, plan.rounds)
        if plan.protocol == COUNTER:
            c, PR = msg.counter, plan.P * plan.rounds
            by_counter = (c <= PR, c >= PR, c < PR + plan.P - 1)
            if by_counter != (train, store, forward):
                raise RuntimeError(f"counter {c} disagrees with visit list at machine {self.id}")
        events = []
        w = msg.payload
        if train:
            w = self.trainer.train(sid, w, round_idx, plan.passes)
            events.append((sid, "train", msg.counter, round_idx))
        elif msg.in_training:
            events.append((sid, "skip", msg.counter, round_idx))
        if store:
            self.staged[sid] = np.array(w, dtype=np.float64, copy=True)
            events.append((sid, "store", msg.counter, -1))
        out = []
        if forward:
            new = msg.with_(counter=msg.counter + 1, visits=visits, payload=w)
            dest = plan.ring_for(new).succ(self.id)
            self.retained[sid] = new
            out.append((dest, new))
            events.append((sid, "forward", msg.counter, round_idx))
        return out, events

    def z_step(self, mu: float, mode: str) -> int:
        Z = z_step(self.X, self.replica.A, self.replica.F, mu, mode, prev_codes=self.codes)
        changed = int(np.count_nonzero(np.any(Z != self.codes, axis=1)))
        self.trainer.refresh_codes(Z)
        return changed


@dataclass(frozen=True)
class FaultEvent:
    machine: int
    phase: str           # "W" or "Z"
    iteration: int = 0
    tick: int = 1


@dataclass(frozen=True)
class MembershipEvent:
    op: str              # "add" or "remove"
    machine: int
    iteration: int = 0
    tick: int = 1
    after: int | None = None
    points: int = 0


@dataclass
class _Envelope:
    sender: int | None
    blob: bytes


class Cluster:
    """P workers on a ring; also the backend ``run_mac_loop`` drives."""

    def __init__(self, dataset: Dataset, codes, config: ParMACConfig, model: BAModel | None = None,
                 faults=(), membership=(), reserve: Dataset | None = None):
        self.config = config
        self.L = config.L
        self.D = dataset.dim
        self.M = self.L + self.D
        codes = np.asarray(codes, dtype=np.uint8)
        if codes.shape != (dataset.n_points, self.L):
            raise ValueError("codes must be N x L")
        if config.P > config.id_capacity:
            raise ValueError("P exceeds id_capacity")
        model = model if model is not None else BAModel.zeros(self.L, self.D)
        part = partition(dataset.n_points, config.speeds or [1.0] * config.P)
        self.workers: dict[int, Worker] = {}
        for p, idx in enumerate(part.shard_index_sets):
            self.workers[p] = Worker(p, dataset.subset(idx), codes[idx], config.sgd, model)
        self.live: set[int] = set(self.workers)
        self.dead: set[int] = set()
        self.base = Topology.ring(sorted(self.live))
        self.faults = list(faults)
        self.membership = list(membership)
        if (self.faults or self.membership) and not config.fault_tolerant:
            raise DeadWorker("faults and membership changes need the visit_list protocol")
        self.reserve = reserve
        self._reserve_used = 0
        self.log = CommLog()
        self.trace: list[TraceEvent] = []
        self.wire: list[bytes] = []
        self.iteration = 0
        self.z_order = None
        self._plan: WStepPlan | None = None

    # ------------------------------------------------------------ helpers

    @property
    def P(self) -> int:
        return len(self.live)

    def lead(self) -> Worker:
        return self.workers[min(self.live)]

    def _event(self, tick, machine, sid, action, counter=0, round_idx=-1):
        self.trace.append(TraceEvent(self.iteration, tick, machine, sid, action, counter, round_idx))

    def _encode(self, msg: SubmodelMsg) -> bytes:
        blob = encode_msg(msg, self.config.id_capacity)
        if self.config.keep_wire:
            self.wire.append(blob)
        return blob

    def _decode(self, blob: bytes) -> SubmodelMsg:
        return decode_msg(blob, self.config.id_capacity)

    def _make_plan(self, iteration: int) -> WStepPlan:
        e = self.config.sgd.epochs
        rounds, passes = (1, e) if self.config.consecutive_passes else (e, 1)
        if self.config.shuffle_topology:
            rings = [reshuffle_topology(self.base, [self.config.topology_seed, iteration, r])
                     for r in range(rounds)]
        else:
            rings = [self.base] * rounds
        return WStepPlan(iteration, self.L, self.M, rounds, passes, rings, self.config.protocol, self.P)

    def _initial_messages(self, plan: WStepPlan):
        live = frozenset(self.live)
        visits = (live,) * (plan.rounds + 1)
        # Machines without points start no submodels, so an empty newcomer
        # changes neither the visit order nor the result.
        owners = sorted(m for m in self.live if self.workers[m].trainer.n) or sorted(self.live)
        homes = np.array_split(np.arange(self.M), len(owners))
        out = []
        for m, block in zip(owners, homes):
            for sid in block:
                msg = SubmodelMsg.for_submodel(int(sid), self.L, 1, visits,
                                               self.workers[m].replica.get_submodel(int(sid)))
                out.append((m, msg))
        return out

    def _finish_wstep(self, plan: WStepPlan, stats: dict) -> None:
        for m in sorted(self.live):
            self.workers[m].commit(self.M)
        lead = self.lead()
        for m in sorted(self.live):
            if not self.workers[m].replica.same_as(lead.replica):
                raise RuntimeError(f"replica on machine {m} differs after the W step")
        for m in sorted(self.live):
            w = self.workers[m]
            if getattr(w, "fresh", False):
                w.trainer.refresh_codes(encode(w.replica.A, w.X))
                w.fresh = False
        self.log.steps.append(stats)

    # ------------------------------------------------------------ backend API

    def initial_model(self) -> BAModel:
        return self.lead().replica.copy()

    def w_step(self, iteration: int, model: BAModel) -> BAModel:
        self.iteration = iteration
        if not model.same_as(self.lead().replica):
            raise RuntimeError("driver model and worker replicas disagree")
        if self.config.executor == THREADED:
            self._wstep_threaded(iteration)
        else:
            self._wstep_lockstep(iteration)
        return self.lead().replica.copy()

    def z_step(self, model: BAModel, mu: float, mode: str) -> int:
        sent = self.log.messages_sent
        for f in self._due_faults("Z"):
            self._drop(f.machine, tick=0)
        for ev in [e for e in self.membership if e.op == "remove" and e.iteration == self.iteration]:
            self.membership.remove(ev)
            self.remove_machine(ev.machine)
        order = sorted(self.live) if self.z_order is None else [m for m in self.z_order if m in self.live]
        changed = 0
        times = {}
        if self.config.executor == THREADED:
            counts = {}

            def run(w):
                t0 = time.thread_time_ns()
                counts[w.id] = w.z_step(mu, mode)
                times[w.id] = (time.thread_time_ns() - t0) * 1e-9

            threads = [threading.Thread(target=run, args=(self.workers[m],)) for m in order]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            changed = sum(counts[m] for m in sorted(self.live))
        else:
            for m in order:
                changed += self.workers[m].z_step(mu, mode)
        self.log.z_times.append(max(times.values()) if times else 0.0)
        self.log.z_messages += self.log.messages_sent - sent
        return changed

    def penalty(self, model: BAModel, mu: float) -> float:
        total = 0.0
        for m in sorted(self.live):
            w = self.workers[m]
            total += e_q(w.replica.A, w.replica.F, w.codes, mu, w.X)
        return total

    def reconstruction(self, model: BAModel) -> float:
        total = 0.0
        for m in sorted(self.live):
            w = self.workers[m]
            total += e_ba(w.replica.A, w.replica.F, w.X)
        return total

    def codes_match(self, model: BAModel) -> bool:
        return all(np.array_equal(self.workers[m].codes, encode(self.workers[m].replica.A, self.workers[m].X))
                   for m in self.live)

    # ------------------------------------------------------------ lockstep W step

    def _wstep_lockstep(self, iteration: int) -> None:
        plan = self._plan = self._make_plan(iteration)
        for m in self.live:
            self.workers[m].begin_wstep(iteration)
        for m, msg in self._initial_messages(plan):
            self.workers[m].queue.append(_Envelope(None, self._encode(msg)))
        stats = {"iteration": iteration, "ticks": 0, "sent": 0, "trains": 0,
                 "sends_per_submodel": [0] * self.M, "trains_per_submodel": [0] * self.M}
        tick = 0
        while any(self.workers[m].queue for m in self.live):
            tick += 1
            self._apply_w_events(plan, tick, stats)
            batches = {}
            for m in sorted(self.live):
                batches[m] = list(self.workers[m].queue)
                self.workers[m].queue.clear()
            outgoing = []
            for m in sorted(self.live):
                w = self.workers[m]
                for env in batches[m]:
                    msg = self._decode(env.blob).pruned(self.dead)
                    if env.sender is not None:
                        self.log.messages_received += 1
                    out, events = w.handle(msg, plan, self.live)
                    for sid, action, counter, rnd in events:
                        self._event(tick, m, sid, action, counter, rnd)
                        if action == "train":
                            stats["trains"] += 1
                            stats["trains_per_submodel"][sid] += 1
                            self.log.train_events += 1
                    for dest, new in out:
                        outgoing.append((dest, m, new))
                self.log._bump(self.log.busy_ticks if batches[m] else self.log.idle_ticks, m)
            for dest, sender, new in outgoing:
                self._send(dest, sender, new, stats)
        stats["ticks"] = tick
        pending_adds = [e for e in self.membership if e.op == "add" and e.iteration == iteration]
        for ev in pending_adds:
            self._join_at_barrier(ev, stats)
        self._finish_wstep(plan, stats)
        self.log.w_times.append(float(tick))
        for f in self._due_faults("W"):
            self._drop(f.machine, tick=tick + 1)

    def _send(self, dest: int, sender: int, msg: SubmodelMsg, stats: dict) -> None:
        blob = self._encode(msg)
        self.workers[dest].queue.append(_Envelope(sender, blob))
        self.log.messages_sent += 1
        self.log.bytes_sent += len(blob)
        stats["sent"] += 1
        stats["sends_per_submodel"][msg.sid(self.L)] += 1

    def _due_faults(self, phase: str, tick: int | None = None):
        due = [f for f in self.faults if f.phase == phase and f.iteration == self.iteration
               and (tick is None or f.tick <= tick)]
        for f in due:
            self.faults.remove(f)
        return due

    def _apply_w_events(self, plan: WStepPlan, tick: int, stats: dict) -> None:
        for f in self._due_faults("W", tick):
            self._fail_during_wstep(plan, f.machine, tick, stats)
        adds = [e for e in self.membership if e.op == "add" and e.iteration == self.iteration and e.tick <= tick]
        if adds and self._all_distributing():
            for ev in adds:
                self.membership.remove(ev)
                self._join_during_distribution(plan, ev, tick)

    def _all_distributing(self) -> bool:
        for m in self.live:
            for env in self.workers[m].queue:
                if self._decode(env.blob).in_training:
                    return False
        return True

    # ------------------------------------------------------------ faults

    def _check_can_lose(self, machine: int) -> None:
        if machine not in self.live:
            raise DeadWorker(f"machine {machine} is not live")
        if not self.config.fault_tolerant:
            raise DeadWorker(f"machine {machine} failed outside fault-tolerant mode")
        if len(self.live) == 1:
            raise UnrecoverableLoss("the only machine failed")

    def _splice_out(self, machine: int) -> None:
        self.live.discard(machine)
        self.dead.add(machine)
        self.base = self.base.without(machine)
        if self._plan is not None:
            self._plan.rings = [r.without(machine) for r in self._plan.rings]

    def _drop(self, machine: int, tick: int) -> None:
        """Lose a machine outside circulation: reconnect the ring around it."""
        self._check_can_lose(machine)
        self._splice_out(machine)
        self._event(tick, machine, -1, "fault")

    def _fail_during_wstep(self, plan: WStepPlan, machine: int, tick: int, stats: dict) -> None:
        self._check_can_lose(machine)
        lost = list(self.workers[machine].queue)
        self.workers[machine].queue.clear()
        preds = [r.pred(machine) for r in plan.rings]
        self._splice_out(machine)
        self._event(tick, machine, -1, "fault")
        for env in lost:
            msg = self._decode(env.blob)
            sid = msg.sid(self.L)
            if env.sender is None:
                # Never forwarded: any survivor's start-of-step replica is this version.
                sender = preds[plan.round_of(msg.visits)]
                copy = msg.with_(payload=self.workers[sender].replica.get_submodel(sid))
            else:
                sender = env.sender
                if sender in self.dead:
                    raise UnrecoverableLoss(f"submodel {sid} lost with machines {machine} and {sender}")
                copy = self.workers[sender].retained.get(sid)
                if copy is None:
                    raise UnrecoverableLoss(f"machine {sender} kept no copy of submodel {sid}")
            restored = copy.pruned(self.dead)
            dest = plan.ring_for(restored).succ(sender)
            self.workers[sender].retained[sid] = restored
            self._event(tick, sender, sid, "recover", restored.counter)
            self._send(dest, sender, restored, stats)

    # ------------------------------------------------------------ membership

    def _new_worker(self, ev: MembershipEvent) -> Worker:
        if ev.machine in self.workers:
            raise MembershipError(f"machine id {ev.machine} was already used")
        if ev.machine >= self.config.id_capacity:
            raise MembershipError("machine id exceeds id_capacity")
        if ev.points:
            if self.reserve is None or self._reserve_used + ev.points > self.reserve.n_points:
                raise MembershipError("not enough reserve points for the new machine")
            idx = np.arange(self._reserve_used, self._reserve_used + ev.points)
            self._reserve_used += ev.points
            shard = self.reserve.subset(idx)
        else:
            shard = Dataset(np.zeros((0, self.D)))
        w = Worker(ev.machine, shard, np.zeros((shard.n_points, self.L), np.uint8), self.config.sgd,
                   BAModel.zeros(self.L, self.D))
        w.begin_wstep(self.iteration)
        w.fresh = True
        return w

    def _insert(self, ev: MembershipEvent) -> Worker:
        if not self.config.fault_tolerant:
            raise MembershipError("adding machines needs the visit_list protocol")
        w = self._new_worker(ev)
        after = ev.after if ev.after is not None else max(self.live)
        if after not in self.live:
            raise MembershipError(f"machine {after} is not live")
        self.workers[w.id] = w
        self.live.add(w.id)
        self.base = self.base.with_inserted(w.id, after)
        if self._plan is not None:
            self._plan.rings = [r.with_inserted(w.id, after) for r in self._plan.rings]
        return w

    def _join_during_distribution(self, plan: WStepPlan, ev: MembershipEvent, tick: int) -> None:
        w = self._insert(ev)
        add = frozenset([w.id])
        for m in self.live:
            q = self.workers[m].queue
            for i, env in enumerate(q):
                msg = self._decode(env.blob)
                q[i] = _Envelope(env.sender, self._encode(msg.with_(visits=(msg.visits[0] | add,))))
            self.workers[m].retained = {
                sid: (r.with_(visits=(r.visits[0] | add,)) if not r.in_training else r)
                for sid, r in self.workers[m].retained.items()}
        self._event(tick, w.id, -1, "join")

    def _join_at_barrier(self, ev: MembershipEvent, stats: dict) -> None:
        # Circulation already finished: the predecessor hands over its final copies.
        self.membership.remove(ev)
        w = self._insert(ev)
        src = self.workers[self.base.pred(w.id)]
        for sid in range(self.M):
            src_w = src.staged[sid]
            w.staged[sid] = src_w.copy()
            blob = self._encode(SubmodelMsg.for_submodel(sid, self.L, 1, (frozenset([w.id]),), src_w))
            self.log.messages_sent += 1
            self.log.messages_received += 1
            self.log.bytes_sent += len(blob)
            stats["sent"] += 1
            stats["sends_per_submodel"][sid] += 1
        self._event(stats["ticks"], w.id, -1, "join")

    def remove_machine(self, machine: int) -> Topology:
        """Planned departure between W steps; its shard is no longer visited."""
        if machine not in self.live:
            raise MembershipError(f"machine {machine} is not live")
        if len(self.live) == 1:
            raise LastMachine("cannot remove the only machine")
        self._splice_out(machine)
        self._event(0, machine, -1, "leave")
        return self.base

    # ------------------------------------------------------------ threaded W step

    def _wstep_threaded(self, iteration: int) -> None:
        if self.faults or self.membership:
            raise MembershipError("faults and membership changes run only in the lockstep executor")
        plan = self._plan = self._make_plan(iteration)
        live = frozenset(self.live)
        inbox = {m: queue.Queue() for m in live}
        for m in live:
            self.workers[m].begin_wstep(iteration)
        for m, msg in self._initial_messages(plan):
            inbox[m].put((0.0, None, encode_msg(msg, self.config.id_capacity)))
        results: dict[int, dict] = {}
        abort = threading.Event()
        errors = []

        def run(w: Worker):
            r = {"clock": 0.0, "busy": 0.0, "idle": 0.0, "events": [], "sent": [], "received": 0}
            stores = 0
            try:
                while stores < self.M:
                    try:
                        ts, sender, blob = inbox[w.id].get(timeout=0.05)
                    except queue.Empty:
                        if abort.is_set():
                            return
                        continue
                    start = max(r["clock"], ts)
                    r["idle"] += start - r["clock"]
                    c0 = time.thread_time_ns()
                    msg = decode_msg(blob, self.config.id_capacity)
                    out, events = w.handle(msg, plan, live)
                    blobs = [(dest, new, encode_msg(new, self.config.id_capacity)) for dest, new in out]
                    dt = (time.thread_time_ns() - c0) * 1e-9
                    r["clock"] = start + dt
                    r["busy"] += dt
                    if sender is not None:
                        r["received"] += 1
                    for ev in events:
                        r["events"].append(ev)
                        stores += ev[1] == "store"
                    for dest, new, b in blobs:
                        r["sent"].append((new.sid(self.L), len(b), b))
                        inbox[dest].put((r["clock"], w.id, b))
            except BaseException as exc:  # surfaced after join
                errors.append(exc)
                abort.set()
            finally:
                results[w.id] = r

        threads = [threading.Thread(target=run, args=(self.workers[m],)) for m in sorted(live)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            raise errors[0]
        stats = {"iteration": iteration, "ticks": 0, "sent": 0, "trains": 0,
                 "sends_per_submodel": [0] * self.M, "trains_per_submodel": [0] * self.M}
        for m in sorted(live):
            r = results[m]
            self.log.messages_received += r["received"]
            for sid, nbytes, blob in r["sent"]:
                self.log.messages_sent += 1
                self.log.bytes_sent += nbytes
                stats["sent"] += 1
                stats["sends_per_submodel"][sid] += 1
                if self.config.keep_wire:
                    self.wire.append(blob)
            for seq, (sid, action, counter, rnd) in enumerate(r["events"]):
                self._event(seq, m, sid, action, counter, rnd)
                if action == "train":
                    stats["trains"] += 1
                    stats["trains_per_submodel"][sid] += 1
                    self.log.train_events += 1
            self.log._bump(self.log.busy_time, m, r["busy"])
            self.log._bump(self.log.idle_time, m, r["idle"])
        step_time = max(results[m]["clock"] for m in live)
        for m in live:
            # time spent waiting at the barrier after finishing counts as idle
            self.log._bump(self.log.idle_time, m, step_time - results[m]["clock"])
        self.log.w_times.append(step_time)
        self._finish_wstep(plan, stats)
