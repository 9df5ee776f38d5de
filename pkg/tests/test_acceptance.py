"""End-to-end acceptance criteria, one test per criterion.

Each test records a ``criterion N: PASS|FAIL ...`` line that is printed in
the terminal summary (and to stdout when run with ``-s``).
"""
import filecmp
import json
import time

import numpy as np
import pytest

from conftest import CRITERIA
from deeprkbs import cli
from deeprkbs.basis import Activation, ContinuousNeural, DiscreteNeural, InputAffine, WindowSequence, \
    lipschitz_witness
from deeprkbs.measure import AtomicVectorMeasure, Decomposition, Extreme, extreme_point_check, tv_norm
from deeprkbs.network import discrete_norm_bound, export_finite, forward, forward_finite
from deeprkbs.oracle import cross_check, finite_difference_gradient
from deeprkbs.pipeline import run_representer
from deeprkbs.sparse_solver import SolverConfig
from deeprkbs.trainer import Dataset, TrainConfig, grad_weights, teacher_dataset, train_prox

from _factories import ACTIVATIONS, WINDOWS, random_discrete_net

SOLVER = SolverConfig(tolerance_gap=1e-9, tolerance_residual=1e-6)
OBJECTIVE_LAMBDA = 1.0


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA[n] = line
    print(line)
    return ok


def teacher_run(seed):
    depth, N = 1 + seed % 2, (4, 6, 8)[seed % 3]
    X, Y = teacher_dataset(N, 2, 1, [4] * depth, seed)
    data = Dataset(X, Y)
    cfg = TrainConfig(init_widths=(32,) * depth, lam=1e-3, steps=500, step_size=0.1, seed=seed,
                      activation=Activation("relu"), window=WindowSequence("geometric", 0.9))
    net = train_prox(cfg, data)
    finite, report, sparse = run_representer(net, data, SOLVER, lam=OBJECTIVE_LAMBDA)
    return {"seed": seed, "N": N, "data": data, "net": net, "finite": finite, "report": report,
            "sparse": sparse}


@pytest.fixture(scope="module")
def teacher_runs():
    t0 = time.perf_counter()
    runs = [teacher_run(seed) for seed in range(20)]
    return runs, time.perf_counter() - t0


def test_criterion_1_width_bound(teacher_runs):
    runs, elapsed = teacher_runs
    bad = []
    for r in runs:
        widths = r["finite"].widths + [r["data"].output_dim]
        if not all(a <= r["N"] * b for a, b in zip(widths, widths[1:])):
            bad.append((r["seed"], widths))
        if not all(lr.width_after <= lr.bound for lr in r["report"].layers):
            bad.append((r["seed"], "layer bound"))
    ok = not bad and elapsed < 60
    record(1, ok, f"{len(runs)} runs, violations {bad}, {elapsed:.1f}s (< 60s)")
    assert ok


def test_criterion_2_objective_non_increase(teacher_runs):
    runs, _ = teacher_runs
    worst = max(r["report"].objective_after - r["report"].objective_before for r in runs)
    ok = worst <= 1e-6
    record(2, ok, f"max objective increase {worst:.3e} (<= 1e-6, lambda = {OBJECTIVE_LAMBDA})")
    assert ok


def test_criterion_3_output_preservation(teacher_runs):
    runs, _ = teacher_runs
    slack = []
    for r in runs:
        dev = float(np.max(np.abs(forward(r["sparse"], r["data"].X) - forward(r["net"], r["data"].X))))
        slack.append((r["report"].certified_output_bound - max(dev, r["report"].output_deviation), dev))
    ok = all(s >= 0 for s, _ in slack)
    worst_dev = max(d for _, d in slack)
    record(3, ok, f"max deviation {worst_dev:.2e}, min certified bound "
                  f"{min(r['report'].certified_output_bound for r in runs):.2e}")
    assert ok


def test_criterion_4_solver_vs_oracle():
    t0 = time.perf_counter()
    checks = [cross_check(seed, SOLVER) for seed in range(200)]
    elapsed = time.perf_counter() - t0
    obj = max(c.objective_diff for c in checks)
    tv = max(c.tv_rel_diff for c in checks)
    support_ok = all(c.support <= c.support_bound for c in checks)
    certified = all(c.certified for c in checks)
    ok = obj <= 1e-6 and tv <= 1e-4 and support_ok and certified and elapsed < 120
    record(4, ok, f"200 instances, max |obj diff| {obj:.2e}, max tv rel diff {tv:.2e}, "
                  f"support bound {'held' if support_ok else 'violated'}, {elapsed:.1f}s (< 120s)")
    assert ok


def test_criterion_5_extreme_points():
    rng = np.random.default_rng(5)
    wrong, worst = 0, 0.0
    for _ in range(1000):
        k, m = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        locs = sorted(rng.choice(20, size=k, replace=False).tolist())
        W = rng.normal(size=(k, m)) * rng.exponential(size=(k, 1))
        mu = AtomicVectorMeasure(locs, W / tv_norm(AtomicVectorMeasure(locs, W, m)), m)
        res = extreme_point_check(mu)
        if (len(mu) == 1) != isinstance(res, Extreme):
            wrong += 1
            continue
        if isinstance(res, Decomposition):
            back = res.reconstruct()
            err = max(float(np.max(np.abs(back.weights - mu.weights))) if back.locations == mu.locations
                      else np.inf, abs(tv_norm(res.mu1) - 1), abs(tv_norm(res.mu2) - 1))
            worst = max(worst, err)
    ok = wrong == 0 and worst <= 1e-12
    record(5, ok, f"1000 measures, misclassified {wrong}, worst decomposition error {worst:.1e} (<= 1e-12)")
    assert ok


def test_criterion_6_export_equivalence():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(50):
        net = random_discrete_net(rng)
        X = rng.normal(size=(100, net.input_dim))
        worst = max(worst, float(np.max(np.abs(forward(net, X) - forward_finite(export_finite(net), X)))))
    ok = worst < 1e-10
    record(6, ok, f"50 networks x 100 inputs, max |difference| {worst:.2e} (< 1e-10)")
    assert ok


def test_criterion_7_gradient_check():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        net = random_discrete_net(rng, activation=Activation("tanh"))
        data = Dataset(rng.normal(size=(8, net.input_dim)), rng.normal(size=(8, net.output_dim)))
        for g, fd in zip(grad_weights(net, data), finite_difference_gradient(net, data, h=1e-5)):
            den = np.maximum(np.abs(g), np.abs(fd))
            rel = np.where(den > 0, np.abs(g - fd) / np.where(den > 0, den, 1.0), 0.0)
            worst = max(worst, float(np.max(rel, initial=0.0)))
    ok = worst < 1e-5
    record(7, ok, f"20 tanh networks, max relative error {worst:.2e} (< 1e-5)")
    assert ok


def basis_variants():
    out = [("input_affine", InputAffine(3), lambda rng: int(rng.integers(0, 4)))]
    for act in ACTIVATIONS:
        for win in WINDOWS:
            out.append((f"discrete/{act.kind}/{win.kind}", DiscreteNeural(act, win),
                        lambda rng: int(rng.integers(0, 6))))
            out.append((f"discrete-offset/{act.kind}/{win.kind}", DiscreteNeural(act, win, offset=0.3),
                        lambda rng: int(rng.integers(0, 6))))
        out.append((f"continuous/{act.kind}", ContinuousNeural(act, 2.0, offset=0.2),
                    lambda rng: tuple(rng.normal(size=3))))
    return out


def test_criterion_8_lipschitz_probes():
    rng = np.random.default_rng(8)
    failed = {}
    variants = basis_variants()
    for name, basis, draw in variants:
        bad = 0
        for _ in range(1000):
            x, x2 = rng.normal(size=3) * 2, rng.normal(size=3) * 2
            bad += not lipschitz_witness(basis, x, x2, draw(rng)).ok
        if bad:
            failed[name] = bad
    ok = not failed
    record(8, ok, f"{len(variants)} basis variants x 1000 probes, failures {failed or 'none'}")
    assert ok


def test_criterion_9_norm_bound(teacher_runs):
    runs, _ = teacher_runs
    exact, worst = True, -np.inf
    for r in runs:
        rep = r["report"]
        exact &= rep.phi_bound == sum(tv_norm(layer.measure) for layer in r["sparse"].layers)
        exact &= rep.phi_bound == pytest.approx(
            sum(float(np.sum(np.linalg.norm(l.measure.weights, axis=1))) for l in r["sparse"].layers if len(l.measure)),
            rel=1e-15, abs=0)
        worst = max(worst, discrete_norm_bound(r["finite"]) - rep.phi_bound)
    ok = bool(exact) and worst <= 1e-9
    record(9, ok, f"phi_bound equals the summed atom norms: {bool(exact)}; "
                  f"max (export expression - phi_bound) {worst:.2e} (<= 1e-9)")
    assert ok


OUTPUTS = ("data.csv", "trace.csv", "model.json", "model.sparse.json", "finite.json", "report.json", "report.csv")


def cli_run(folder, capsys):
    config = {"seed": 7, "data": {"generator": {"n": 6, "d": 2, "p": 1, "teacher_widths": [4, 4]}},
              "train": {"init_widths": [16, 16], "steps": 200}}
    folder.mkdir()
    (folder / "config.json").write_text(json.dumps(config))
    codes = [cli.main([cmd, "--config", str(folder / "config.json"), "--threads", "1"])
             for cmd in ("gen-data", "train", "sparsify")]
    capsys.readouterr()
    return codes


def test_criterion_10_determinism(tmp_path, capsys):
    codes = cli_run(tmp_path / "a", capsys) + cli_run(tmp_path / "b", capsys)
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", OUTPUTS, shallow=False)
    ok = codes == [0] * 6 and not mismatch and not errors
    record(10, ok, f"exit codes {codes}, identical files {len(match)}/{len(OUTPUTS)}, "
                   f"differing {mismatch + errors or 'none'}")
    assert ok
