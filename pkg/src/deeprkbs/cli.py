"""Command-line interface: ``deeprkbs <command> [options]``.

Commands
  gen-data        write a seeded teacher dataset (CSV)
  train           proximal training of a discrete deep measure network
  sparsify        layer-wise sparsification, finite export and report
  verify          risk, TV, widths and Lipschitz probes of a model file
  export          convert a deep measure model into a finite network file
  oracle-compare  cross-check the sparse solvers against brute-force oracles

Exit codes: 0 success, 2 failed bound check, 3 infeasible, 1 other errors.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .basis import lipschitz_witness
from .errors import Infeasible, RKBSError
from .network import DeepMeasureNetwork, complexity_upper_bound, discrete_norm_bound, export_finite, \
    forward_finite
from .measure import tv_norm
from .pipeline import run_representer
from .serialization import dumps, load_model, save_model
from .sparse_solver import SolverConfig
from .trainer import (Dataset, LossFunction, TrainConfig, objective, read_dataset_csv, risk, train_prox,
                      teacher_dataset, write_dataset_csv, write_trace_csv)

log = logging.getLogger("deeprkbs")

EXIT_OK, EXIT_ERROR, EXIT_BOUND, EXIT_INFEASIBLE = 0, 1, 2, 3

DEFAULT_CONFIG = {
    "seed": 0,
    "data": {
        "path": "data.csv",
        "generator": {"n": 8, "d": 2, "p": 1, "teacher_widths": [4], "noise": 0.0, "output_scale": 1.0},
    },
    "train": {"init_widths": [32], "lam": 0.001, "steps": 500, "step_size": 0.1, "init_scale": None,
              "activation": {"kind": "relu"}, "window": {"kind": "geometric", "q": 0.9},
              "penalize_bias": True, "loss": "squared"},
    "solver": {"tolerance_gap": 1e-9},
    "objective_lambda": 1.0,
    "paths": {"model": "model.json", "sparse_model": "model.sparse.json", "finite": "finite.json",
              "report": "report.json", "trace": "trace.csv"},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


class RunConfig:
    """Parsed run configuration; relative paths resolve against the config file's folder."""

    def __init__(self, raw: dict, root: Path):
        self.raw = raw
        self.root = root
        seed = raw.get("seed", 0)
        if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
            raise RKBSError("seed must be an unsigned 64-bit integer")
        self.seed = seed

    @classmethod
    def load(cls, path: str | None, seed: int | None = None) -> "RunConfig":
        raw, root = {}, Path.cwd()
        if path is not None:
            p = Path(path)
            raw = json.loads(p.read_text())
            root = p.resolve().parent
        if seed is not None:
            raw["seed"] = seed
        return cls(_merge(DEFAULT_CONFIG, raw), root)

    def path(self, key: str) -> Path:
        value = self.raw["data"]["path"] if key == "data" else self.raw["paths"][key]
        p = Path(value)
        return p if p.is_absolute() else self.root / p

    def train_config(self) -> TrainConfig:
        d = dict(self.raw["train"])
        d["seed"] = self.seed
        return TrainConfig.from_dict(d)

    def loss(self) -> LossFunction:
        return LossFunction(self.raw["train"].get("loss", "squared"))

    def solver_config(self) -> SolverConfig:
        return SolverConfig.from_dict(self.raw["solver"])


def _load_dataset(path) -> Dataset:
    X, Y = read_dataset_csv(path)
    return Dataset(X, Y)


def cmd_gen_data(cfg: RunConfig, args) -> int:
    g = cfg.raw["data"]["generator"]
    X, Y = teacher_dataset(int(g["n"]), int(g["d"]), int(g["p"]), g["teacher_widths"], cfg.seed,
                           float(g.get("noise", 0.0)), float(g.get("output_scale", 1.0)))
    out = Path(args.out) if args.out else cfg.path("data")
    write_dataset_csv(out, X, Y)
    print(f"wrote {len(X)} samples to {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    data = _load_dataset(cfg.path("data"))
    trace = []
    net = train_prox(cfg.train_config(), data, cfg.loss(), trace=trace)
    objs = [row["objective"] for row in trace]
    if any(b > a for a, b in zip(objs, objs[1:])):
        raise RKBSError("training objective increased")
    model_path = cfg.path("model")
    save_model(net, model_path)
    write_trace_csv(args.trace or cfg.path("trace"), trace,
                    ("step", "risk", "tv_total", "objective", "atoms_alive"))
    print(f"final objective {objs[-1]!r}; atoms per layer {[len(l.measure) for l in net.layers]}")
    print(f"wrote {model_path}")
    return EXIT_OK


def cmd_sparsify(cfg: RunConfig, args) -> int:
    model_path = Path(args.model) if args.model else cfg.path("model")
    net = load_model(model_path)
    if not isinstance(net, DeepMeasureNetwork):
        raise RKBSError("sparsify needs a deep_measure model")
    data = _load_dataset(cfg.path("data"))
    finite, report, sparse = run_representer(net, data, cfg.solver_config(),
                                             lam=float(cfg.raw["objective_lambda"]), loss=cfg.loss())
    save_model(finite, cfg.path("finite"))
    save_model(sparse, cfg.path("sparse_model"))
    report_path = Path(args.report) if args.report else cfg.path("report")
    report_path.write_text(dumps(report.to_dict()))
    report_path.with_suffix(".csv").write_text(report.to_csv())
    sys.stdout.write(report.to_text())
    return EXIT_OK if report.ok else EXIT_BOUND


def _lipschitz_probes(net: DeepMeasureNetwork, n: int = 100) -> dict:
    rng = np.random.default_rng(0)
    total = ok = 0
    for layer in net.layers:
        if not len(layer.measure):
            continue
        for _ in range(n):
            x, x2 = rng.normal(size=layer.input_dim), rng.normal(size=layer.input_dim)
            theta = layer.measure.locations[int(rng.integers(len(layer.measure)))]
            total += 1
            ok += lipschitz_witness(layer.basis, x, x2, theta).ok
    return {"probes": total, "ok": ok}


def verify_model(model, data: Dataset, lam: float, loss: LossFunction) -> dict:
    if isinstance(model, DeepMeasureNetwork):
        tvs = [tv_norm(layer.measure) for layer in model.layers]
        return {"kind": "deep_measure", "risk": risk(model, data, loss),
                "objective": objective(model, data, lam, loss), "lambda": lam,
                "tv_per_layer": tvs, "phi_bound": complexity_upper_bound(model),
                "atoms_per_layer": [len(layer.measure) for layer in model.layers],
                "dims": model.dims, "lipschitz": _lipschitz_probes(model)}
    pred = forward_finite(model, data.X)
    out = {"kind": "finite", "risk": float(np.mean(loss.value(pred, data.Y))), "widths": model.widths,
           "dims": model.dims}
    if model.windows is not None:
        out["norm_expression"] = discrete_norm_bound(model)
    return out


def cmd_verify(cfg: RunConfig, args) -> int:
    model = load_model(args.model if args.model else cfg.path("model"))
    data = _load_dataset(args.data if args.data else cfg.path("data"))
    lam = args.lam if args.lam is not None else float(cfg.raw["objective_lambda"])
    res = verify_model(model, data, lam, cfg.loss())
    if args.json:
        print(json.dumps(res))
    else:
        for k, v in res.items():
            print(f"{k:>16}: {v}")
    if "lipschitz" in res and res["lipschitz"]["ok"] != res["lipschitz"]["probes"]:
        return EXIT_BOUND
    return EXIT_OK


def cmd_export(cfg: RunConfig, args) -> int:
    model = load_model(args.model if args.model else cfg.path("sparse_model"))
    if not isinstance(model, DeepMeasureNetwork):
        raise RKBSError("export needs a deep_measure model")
    out = Path(args.out) if args.out else cfg.path("finite")
    save_model(export_finite(model), out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_oracle_compare(cfg: RunConfig, args) -> int:
    from .oracle import cross_check

    cc_cfg = SolverConfig.from_dict(cfg.raw["solver"])
    rows = [cross_check(cfg.seed + i, cc_cfg) for i in range(args.instances)]
    print(f"{'seed':>6} {'obj diff':>10} {'tv rel':>10} {'atoms':>5} {'bound':>5}  result")
    for r in rows:
        print(f"{r.seed:>6} {r.objective_diff:>10.2e} {r.tv_rel_diff:>10.2e} {r.support:>5} "
              f"{r.support_bound:>5}  {'PASS' if r.passed() else 'FAIL'}")
    failed = sum(not r.passed() for r in rows)
    print(f"{len(rows) - failed}/{len(rows)} passed")
    return EXIT_OK if not failed else EXIT_BOUND


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "sparsify": cmd_sparsify,
            "verify": cmd_verify, "export": cmd_export, "oracle-compare": cmd_oracle_compare}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--threads", type=int, help="cap BLAS/OpenMP worker threads")
    common.add_argument("--report", help="report path (sparsify)")
    common.add_argument("--trace", help="objective trace CSV path (train)")
    common.add_argument("--json", action="store_true", help="machine-readable output (verify)")

    parser = argparse.ArgumentParser(prog="deeprkbs", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("gen-data", parents=[common])
    p.add_argument("--out")
    sub.add_parser("train", parents=[common])
    p = sub.add_parser("sparsify", parents=[common])
    p.add_argument("--model")
    p = sub.add_parser("verify", parents=[common])
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--lam", type=float)
    p = sub.add_parser("export", parents=[common])
    p.add_argument("--model")
    p.add_argument("--out")
    p = sub.add_parser("oracle-compare", parents=[common])
    p.add_argument("--instances", type=int, default=20)
    return parser


def _setup_logging():
    level = os.environ.get("RKBS_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_ERROR
    limiter = nullcontext()
    if args.threads is not None:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=args.threads)
    try:
        with limiter:
            cfg = RunConfig.load(args.config, args.seed)
            return COMMANDS[args.command](cfg, args)
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (RKBSError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
