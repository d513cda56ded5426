"""Command-line driver.

Every subcommand accepts ``--config FILE.json``; explicit flags override
values from the file. Exit status: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import speedup as sp
from .data import Dataset, generate_synthetic, read_bvecs, read_fvecs, write_fvecs
from .errors import ParMACError
from .evaluation import (MetricConfig, ground_truth_knn, hamming_distances, hamming_search, precision,
                         recall_at_r)
from .mac import ALTERNATE, ENUMERATE, EvalConfig, MuSchedule, mac_train
from .model import BAModel, SgdConfig, encode, load_checkpoint, save_checkpoint
from .runtime import (COUNTER, LOCKSTEP, THREADED, VISIT_LIST, ParMACConfig, Scenario, lockstep_simulate,
                      run_parmac)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------- config helpers


def _load_config(args) -> dict:
    if not getattr(args, "config", None):
        return {}
    return json.loads(Path(args.config).read_text())


def _pick(args, cfg: dict, name: str, default=None):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)


def _read_dataset(path) -> Dataset:
    path = Path(path)
    if path.suffix == ".bvecs":
        return read_bvecs(path)
    if path.suffix == ".fvecs":
        return read_fvecs(path)
    raise UsageError(f"unknown dataset extension {path.suffix!r} (expected .fvecs or .bvecs)")


def _dataset_from(args, cfg: dict, key: str = "data") -> Dataset | None:
    src = _pick(args, cfg, key)
    if src is None:
        return None
    if isinstance(src, dict):
        return generate_synthetic(int(src["n"]), int(src["d"]), int(src.get("clusters", 10)),
                                  int(src.get("seed", 0)))
    return _read_dataset(src)


def _schedule(cfg: dict) -> MuSchedule:
    s = cfg.get("schedule", {})
    return MuSchedule(float(s.get("mu0", 0.005)), float(s.get("factor", 1.2)), int(s.get("max_iters", 26)))


def _sgd(cfg: dict) -> SgdConfig:
    return SgdConfig(**cfg.get("sgd", {}))


def _write_outputs(out_dir: Path, model: BAModel, record, timings: bool) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "model.bin").write_bytes(save_checkpoint(model))
    (out_dir / "curve.csv").write_text(record.to_csv(include_seconds=timings))
    summary = {"initial_precision": record.initial_precision, "best_iteration": record.best_iteration,
               "stop_reason": record.stop_reason, "iterations": len(record)}
    (out_dir / "record.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- subcommands


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    ds = generate_synthetic(int(_pick(args, cfg, "n", 2000)), int(_pick(args, cfg, "d", 16)),
                            int(_pick(args, cfg, "clusters", 10)), int(_pick(args, cfg, "seed", 0)))
    Path(args.out).write_bytes(write_fvecs(ds))
    return 0


def _train_common(args, cfg):
    data = _dataset_from(args, cfg)
    if data is None:
        raise UsageError("no dataset given (--data or config key 'data')")
    validation = _dataset_from(args, cfg, "validation")
    L = int(_pick(args, cfg, "L", 8))
    z_mode = _pick(args, cfg, "z_mode", ENUMERATE)
    ev = cfg.get("eval", {})
    eval_cfg = EvalConfig(int(ev.get("K_true", 20)), int(ev.get("k_retrieved", 20)))
    return data, validation, L, z_mode, eval_cfg


def cmd_train(args) -> int:
    cfg = _load_config(args)
    data, validation, L, z_mode, eval_cfg = _train_common(args, cfg)
    model, rec = mac_train(data, validation, L, _schedule(cfg), _sgd(cfg), z_mode=z_mode,
                           w_mode=cfg.get("w_mode", "sgd"), eval_config=eval_cfg,
                           early_stopping=cfg.get("early_stopping", True),
                           split_seed=int(cfg.get("split_seed", 0)), pca_subset=cfg.get("pca_subset"))
    _write_outputs(Path(args.out_dir), model, rec, args.timings)
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    data, validation, L, z_mode, eval_cfg = _train_common(args, cfg)
    pcfg = ParMACConfig(
        P=int(_pick(args, cfg, "P", 4)), L=L, schedule=_schedule(cfg), z_mode=z_mode, sgd=_sgd(cfg),
        protocol=_pick(args, cfg, "protocol", COUNTER),
        consecutive_passes=bool(_pick(args, cfg, "consecutive_passes", False)),
        shuffle_topology=bool(_pick(args, cfg, "shuffle_topology", False)),
        topology_seed=int(cfg.get("topology_seed", 0)), speeds=cfg.get("speeds"),
        executor=_pick(args, cfg, "executor", LOCKSTEP), eval=eval_cfg,
        early_stopping=cfg.get("early_stopping", True), split_seed=int(cfg.get("split_seed", 0)),
        pca_subset=cfg.get("pca_subset"))
    model, rec, comm = run_parmac(data, validation, pcfg)
    out = Path(args.out_dir)
    _write_outputs(out, model, rec, args.timings)
    (out / "commlog.json").write_text(json.dumps(comm.as_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_simulate(args) -> int:
    scenario = Scenario.load(args.scenario)
    run = lockstep_simulate(scenario)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "model.bin").write_bytes(save_checkpoint(run.model))
    (out / "commlog.json").write_text(json.dumps(run.log.as_dict(), indent=2, sort_keys=True) + "\n")
    lines = ["iteration,tick,machine,submodel,action,counter,round"]
    lines += [f"{t.iteration},{t.tick},{t.machine},{t.sid},{t.action},{t.counter},{t.round}"
              for t in run.trace]
    (out / "trace.csv").write_text("\n".join(lines) + "\n")
    return 0


def cmd_speedup(args) -> int:
    cfg = _load_config(args)
    base = sp.REFERENCE_PARAMS
    params = sp.SpeedupParams(
        P=1, N=int(_pick(args, cfg, "N", base.N)), M=int(_pick(args, cfg, "M", base.M)),
        e=int(_pick(args, cfg, "e", base.e)), t_w_r=float(_pick(args, cfg, "t_w_r", base.t_w_r)),
        t_w_c=float(_pick(args, cfg, "t_w_c", base.t_w_c)), t_z_r=float(_pick(args, cfg, "t_z_r", base.t_z_r)))
    if args.verify:
        report = sp.theorem2_verifier(draws=int(args.draws), seed=int(args.seed))
        text = json.dumps(report, indent=2) + "\n"
    else:
        text = sp.emit_curve(params, int(_pick(args, cfg, "p_max", 2048)), int(_pick(args, cfg, "stride", 1)))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    base = _dataset_from(args, cfg, "base")
    queries = _dataset_from(args, cfg, "queries")
    if base is None or queries is None or args.model is None:
        raise UsageError("eval needs --base, --queries and --model")
    model = load_checkpoint(Path(args.model).read_bytes())
    mc = MetricConfig(int(_pick(args, cfg, "K_true", 100)), int(_pick(args, cfg, "k_retrieved", 100)),
                      tuple(int(r) for r in (_pick(args, cfg, "R", None) or (1, 10, 100))))
    bc, qc = encode(model.A, base.rows()), encode(model.A, queries.rows())
    gt = ground_truth_knn(base, queries, mc.K_true)
    prec = precision(gt, hamming_search(bc, qc, mc.k_retrieved))
    nn1 = ground_truth_knn(base, queries, 1)[:, 0]
    hd = hamming_distances(bc, qc)
    out = {"precision": prec, "recall": {str(R): recall_at_r(nn1, hd, R) for R in mc.R_list}}
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_fit_times(args) -> int:
    cfg = _load_config(args)
    measured = _pick(args, cfg, "measured")
    if isinstance(measured, str):
        measured = json.loads(Path(measured).read_text())
    if not measured:
        raise UsageError("fit-times needs measurements: a JSON list of [P, speedup] pairs")
    t_w_c, t_z_r = sp.fit_time_params(measured, int(_pick(args, cfg, "N")), int(_pick(args, cfg, "M")),
                                      int(_pick(args, cfg, "e", 1)))
    sys.stdout.write(json.dumps({"t_w_r": 1.0, "t_w_c": t_w_c, "t_z_r": t_z_r}) + "\n")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="parmac", description="Binary autoencoder hashing with distributed MAC.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic Gaussian-mixture dataset as fvecs")
    g.add_argument("--config")
    g.add_argument("--n", type=int)
    g.add_argument("--d", type=int)
    g.add_argument("--clusters", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    for name, func, help_ in (("train", cmd_train, "serial MAC"), ("run", cmd_run, "distributed MAC")):
        t = sub.add_parser(name, help=help_)
        t.add_argument("--config")
        t.add_argument("--data")
        t.add_argument("--validation")
        t.add_argument("--L", type=int)
        t.add_argument("--z-mode", dest="z_mode", choices=[ENUMERATE, ALTERNATE])
        t.add_argument("--out-dir", required=True)
        t.add_argument("--timings", action="store_true", help="write wall-clock seconds into curve.csv")
        if name == "run":
            t.add_argument("--P", type=int)
            t.add_argument("--executor", choices=[LOCKSTEP, THREADED])
            t.add_argument("--protocol", choices=[COUNTER, VISIT_LIST])
            t.add_argument("--consecutive-passes", dest="consecutive_passes", action="store_true",
                           default=None)
            t.add_argument("--shuffle-topology", dest="shuffle_topology", action="store_true", default=None)
        t.set_defaults(func=func)

    s = sub.add_parser("simulate", help="replay a JSON scenario on the lockstep simulator")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("speedup", help="speedup-model curve or interval-structure check")
    c.add_argument("--config")
    for name, typ in (("N", int), ("M", int), ("e", int), ("t_w_r", float), ("t_w_c", float),
                      ("t_z_r", float), ("p_max", int), ("stride", int)):
        c.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ)
    c.add_argument("--verify", action="store_true")
    c.add_argument("--draws", type=int, default=100)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    c.set_defaults(func=cmd_speedup)

    e = sub.add_parser("eval", help="precision and recall of a trained hash")
    e.add_argument("--config")
    e.add_argument("--base")
    e.add_argument("--queries")
    e.add_argument("--model")
    e.add_argument("--K-true", dest="K_true", type=int)
    e.add_argument("--k-retrieved", dest="k_retrieved", type=int)
    e.add_argument("--R", type=int, nargs="+")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("fit-times", help="fit t_w_c and t_z_r to measured speedups")
    f.add_argument("--config")
    f.add_argument("--measured", help="JSON file with [[P, speedup], ...]")
    f.add_argument("--N", type=int)
    f.add_argument("--M", type=int)
    f.add_argument("--e", type=int)
    f.set_defaults(func=cmd_fit_times)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        if "subcommand" in str(exc):
            parser.print_usage(sys.stderr)
        return 1
    except (ParMACError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"parmac: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
