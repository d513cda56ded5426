"""Entry points: full distributed training runs and scripted lockstep scenarios."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data import Dataset, generate_synthetic, train_validation_split
from ..evaluation import RetrievalEvaluator
from ..mac import ENUMERATE, EvalConfig, MuSchedule, initial_model_from_pca, run_mac_loop
from ..model import BAModel, SgdConfig
from .cluster import (COUNTER, LOCKSTEP, VISIT_LIST, Cluster, CommLog, FaultEvent, MembershipEvent,
                      ParMACConfig, TraceEvent)


@dataclass
class ParMACRun:
    model: BAModel
    record: object
    log: CommLog
    trace: list[TraceEvent]
    cluster: Cluster


def run_parmac_detailed(dataset: Dataset, validation: Dataset | None, config: ParMACConfig,
                        init_codes=None, init_model: BAModel | None = None,
                        faults=(), membership=(), reserve: Dataset | None = None) -> ParMACRun:
    if validation is None:
        dataset, validation = train_validation_split(dataset, 0.1, config.split_seed)
    pca_log = []
    if init_codes is None:
        init_codes, pca_model, res = initial_model_from_pca(dataset, config.L, config.pca_subset,
                                                             config.sgd.seed)
        if init_model is None:
            init_model = pca_model
        pca_log = res.log
    evaluator = RetrievalEvaluator(validation, None, config.eval.K_true, config.eval.k_retrieved)
    cluster = Cluster(dataset, init_codes, config, init_model, faults, membership, reserve)
    model, rec = run_mac_loop(cluster, config.schedule, evaluator, config.z_mode, init_model,
                              config.early_stopping)
    rec.log.extend(pca_log)
    return ParMACRun(model, rec, cluster.log, cluster.trace, cluster)


def run_parmac(dataset: Dataset, validation: Dataset | None = None, config: ParMACConfig | None = None,
               init_codes=None, init_model: BAModel | None = None):
    """Distributed MAC over ``config.P`` simulated machines.

    Uses the same validation split, initialisation and stopping rules as
    ``mac_train``. Returns ``(model, record, comm_log)``.
    """
    run = run_parmac_detailed(dataset, validation, config or ParMACConfig(), init_codes, init_model)
    return run.model, run.record, run.log


# ---------------------------------------------------------------- scenarios


@dataclass
class Scenario:
    P: int = 4
    L: int = 4
    n: int = 400
    d: int = 8
    clusters: int = 5
    epochs: int = 1
    data_seed: int = 0
    sgd_seed: int = 0
    topology_seed: int = 0
    schedule: MuSchedule = field(default_factory=lambda: MuSchedule(0.005, 1.2, 3))
    z_mode: str = ENUMERATE
    protocol: str = COUNTER
    consecutive_passes: bool = False
    shuffle_topology: bool = False
    reserve: int = 0
    faults: list[FaultEvent] = field(default_factory=list)
    membership: list[MembershipEvent] = field(default_factory=list)
    keep_wire: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        seeds = d.get("seeds", {})
        if isinstance(seeds, int):
            seeds = {"data": seeds, "sgd": seeds, "topology": seeds}
        sched = d.get("schedule", {})
        faults = [FaultEvent(int(f["machine"]), str(f["phase"]).upper(), int(f.get("iteration", 0)),
                             int(f.get("tick", 1))) for f in d.get("faults", [])]
        members = [MembershipEvent(str(m["op"]), int(m["machine"]), int(m.get("iteration", 0)),
                                   int(m.get("tick", 1)), m.get("after"), int(m.get("points", 0)))
                   for m in d.get("membership", [])]
        protocol = d.get("protocol", VISIT_LIST if faults or members else COUNTER)
        return cls(
            P=int(d.get("P", 4)), L=int(d.get("L", 4)), n=int(d.get("n", 400)), d=int(d.get("d", 8)),
            clusters=int(d.get("clusters", 5)), epochs=int(d.get("e", 1)),
            data_seed=int(seeds.get("data", 0)), sgd_seed=int(seeds.get("sgd", 0)),
            topology_seed=int(seeds.get("topology", 0)),
            schedule=MuSchedule(float(sched.get("mu0", 0.005)), float(sched.get("factor", 1.2)),
                                int(sched.get("max_iters", 3))),
            z_mode=d.get("z_mode", ENUMERATE), protocol=protocol,
            consecutive_passes=bool(d.get("consecutive_passes", False)),
            shuffle_topology=bool(d.get("shuffle_topology", False)),
            reserve=int(d.get("reserve", 0)), faults=faults, membership=members,
        )

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def config(self) -> ParMACConfig:
        return ParMACConfig(
            P=self.P, L=self.L, schedule=self.schedule, z_mode=self.z_mode,
            sgd=SgdConfig(epochs=self.epochs, seed=self.sgd_seed), protocol=self.protocol,
            consecutive_passes=self.consecutive_passes, shuffle_topology=self.shuffle_topology,
            topology_seed=self.topology_seed, executor=LOCKSTEP,
            eval=EvalConfig(K_true=5, k_retrieved=5), early_stopping=False, keep_wire=self.keep_wire)


def lockstep_simulate(scenario: Scenario | dict) -> ParMACRun:
    """Replay a scripted run on the single-threaded simulator.

    Returns the model, CommLog and the tick-by-tick event trace (plus the
    cluster for inspection). Equal scenarios give bit-identical results.
    """
    if isinstance(scenario, dict):
        scenario = Scenario.from_dict(scenario)
    ds = generate_synthetic(scenario.n + scenario.reserve, scenario.d, scenario.clusters,
                            scenario.data_seed)
    reserve = ds.subset(np.arange(scenario.n, scenario.n + scenario.reserve)) if scenario.reserve else None
    ds = ds.subset(np.arange(scenario.n))
    return run_parmac_detailed(ds, None, scenario.config(), faults=list(scenario.faults),
                               membership=list(scenario.membership), reserve=reserve)


__all__ = ["ParMACRun", "Scenario", "lockstep_simulate", "run_parmac", "run_parmac_detailed"]
