"""Acceptance suite: one PASS/FAIL line per criterion, repeated in the terminal summary.

The end-to-end criteria (6 to 9) share one set of desk-profile runs over five
seeds; expect roughly 20 to 25 minutes on a desktop machine.
"""
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from gcfair.cli import main as cli_main
from gcfair.config import load_config
from gcfair.experiment import Session, run_experiment
from gcfair.metrics import auroc, delta_dp, delta_eo, estimate_delta_cf, r2_score_clipped
from gcfair.ppr import ppr_scores
from gcfair.synth import (SyntheticParams, calibrated, cf_graph, fit_causal_model, generate_synthetic,
                          true_counterfactual)

from _gradcases import CASES, INSTANCES, REL_TOL, check_case
from _oracles import auroc_brute, edge_model_graph, ppr_oracle, random_graph
from conftest import ACCEPTANCE_LINES


def _record(num, ok, detail):
    line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[num] = line
    print(line)
    assert ok, line


def test_criterion_01_ppr_oracle():
    t = time.time()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        g = random_graph(rng)
        alpha = float(rng.uniform(0.05, 0.95))
        dense = ppr_scores(g, alpha, tol=1e-12).rows.toarray()
        worst = max(worst, float(np.abs(dense - ppr_oracle(g.adjacency.toarray(), alpha)).max()))
    secs = time.time() - t
    _record(1, worst < 1e-8 and secs < 10, f"max-abs error {worst:.2e} (< 1e-8) over 100 graphs in {secs:.1f}s (< 10s)")


def test_criterion_02_gradient_suite():
    t = time.time()
    worst = {name: check_case(name, seed=0, instances=INSTANCES) for name in CASES}
    secs = time.time() - t
    name = max(worst, key=worst.get)
    ok = worst[name] < REL_TOL and secs < 60
    _record(2, ok, f"{len(CASES)} cases x {INSTANCES} instances, worst relative error {worst[name]:.2e} "
                   f"({name}) < {REL_TOL:g}, {secs:.1f}s (< 60s)")


def test_criterion_03_metric_oracles():
    rng = np.random.default_rng(3)
    auroc_ok = True
    for _ in range(200):
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        probs = rng.integers(0, 8, n) / 7 if rng.random() < 0.5 else rng.random(n)
        auroc_ok &= abs(auroc(probs, labels) - auroc_brute(probs, labels)) < 1e-12
    checks = {
        "auroc example": auroc([0.9, 0.8, 0.3, 0.2], [1, 0, 1, 0]) == 0.75,
        "dp": delta_dp([1, 0, 1, 1], [0, 0, 1, 1]) == 0.5,
        "eo zero": delta_eo([1, 0, 1, 0], [1, 1, 1, 1], [0, 0, 1, 1]) == 0.0,
        "eo one": delta_eo([1, 1, 0, 0], [1, 1, 1, 1], [0, 0, 1, 1]) == 1.0,
        "r2 perfect": abs(r2_score_clipped([0.2, 0.4, 0.6], [0, 0.5, 1]) - 1.0) < 1e-12,
        "r2 ols": abs(r2_score_clipped([0.2, 0.6, 0.4], [0, 0.5, 1]) - 0.25) < 1e-12,
        "r2 constant": r2_score_clipped([0.4] * 3, [0, 0.5, 1]) == 0.0,
    }
    p = calibrated(SyntheticParams(n=150, seed=0))
    g, z = generate_synthetic(p)
    const = estimate_delta_cf(lambda cf: np.zeros(cf.n, dtype=int), lambda a: true_counterfactual(p, z, a), g.n, 0)
    checks["delta_cf constant"] = const == 0.0
    failed = [k for k, v in checks.items() if not v] + ([] if auroc_ok else ["auroc brute force"])
    _record(3, not failed, "AUROC vs brute force on 200 vectors (n <= 50), hand examples, constant delta_cf = "
                           f"{const}" + (f"; failed: {failed}" if failed else ""))


def test_criterion_04_null_intervention():
    p = calibrated(SyntheticParams(n=400, seed=5))
    g, z = generate_synthetic(p)
    synthetic_ok = true_counterfactual(p, z, g.sensitive).equals(g)
    eg = edge_model_graph(300, 0.5, -3.0, seed=2)
    fitted = cf_graph(eg, eg.sensitive, fit_causal_model(eg), seed=11)
    fitted_ok = np.array_equal(fitted.features, eg.features) and fitted.equals(eg)
    _record(4, synthetic_ok and fitted_ok,
            f"true counterfactual identical: {synthetic_ok}; fitted-model counterfactual identical: {fitted_ok}")


def test_criterion_05_gamma_recovery():
    est = [fit_causal_model(edge_model_graph(300, 0.5, -3.0, seed)).gamma for seed in range(5)]
    err = float(np.mean(np.abs(np.array(est) - 0.5)))
    _record(5, err < 0.15, f"mean |gamma - 0.5| = {err:.4f} (< 0.15); estimates {np.round(est, 3).tolist()}")


# ---------------------------------------------------------------------------
# end-to-end runs shared by criteria 6 to 9


@pytest.fixture(scope="module")
def desk_runs():
    cfg = load_config(profile="desk")
    session = Session(cfg)
    t = time.time()
    reports = {
        "full": run_experiment(session, "full"),
        "baseline-gcn": run_experiment(session, "baseline-gcn"),
        "ns": run_experiment(session, "ns"),
        "np": run_experiment(session, "np"),
        "lambda=1": run_experiment(session, "full", train_cfg=replace(cfg.train, lam=1.0), label="lambda=1"),
    }
    # lambda=0 switches the fairness term off, which is exactly the plain encoder baseline
    reports["lambda=0"] = reports["baseline-gcn"]
    minutes = (time.time() - t) / 60
    for name, rep in reports.items():
        acc, dcf = rep.metrics["accuracy"], rep.metrics["delta_cf"]
        print(f"{name:<13} accuracy {acc[0]:.3f} +- {acc[1]:.3f}  delta_cf {dcf[0]:.4f} +- {dcf[1]:.4f}")
    return reports, minutes


def _mean(reports, name, metric):
    return reports[name].metrics[metric][0]


@pytest.mark.slow
def test_criterion_06_directional_fairness(desk_runs):
    reports, minutes = desk_runs
    fair, base = _mean(reports, "full", "delta_cf"), _mean(reports, "baseline-gcn", "delta_cf")
    ok = fair < 0.05 and fair < base / 2 and minutes < 30
    _record(6, ok, f"delta_cf fair {fair:.4f} (< 0.05), baseline {base:.4f} (fair < half: {fair < base / 2}); "
                   f"all desk runs {minutes:.1f} min (< 30)")


@pytest.mark.slow
def test_criterion_07_accuracy_retention(desk_runs):
    reports, _ = desk_runs
    fair, base = _mean(reports, "full", "accuracy"), _mean(reports, "baseline-gcn", "accuracy")
    ok = fair >= base - 0.05 and 0.60 <= fair <= 0.80
    _record(7, ok, f"accuracy fair {fair:.4f}, baseline {base:.4f} (fair >= baseline - 0.05, within [0.60, 0.80])")


@pytest.mark.slow
def test_criterion_08_ablation_ordering(desk_runs):
    reports, _ = desk_runs
    full, ns, np_ = (_mean(reports, k, "delta_cf") for k in ("full", "ns", "np"))
    ok = full <= ns + 0.01 and ns <= np_ + 0.01
    _record(8, ok, f"delta_cf full {full:.4f} <= ns {ns:.4f} <= np {np_:.4f} (0.01 slack each)")


@pytest.mark.slow
def test_criterion_09_lambda_monotonicity(desk_runs):
    reports, _ = desk_runs
    one, zero = _mean(reports, "lambda=1", "delta_cf"), _mean(reports, "lambda=0", "delta_cf")
    _record(9, one <= zero, f"delta_cf at lambda=1 {one:.4f} <= at lambda=0 {zero:.4f}")


TINY = """\
data.n = 120
data.d_z = 8
data.d = 6
data.target_avg_degree = 4.0
aug.epochs = 3
aug.latent_dim = 4
aug.hidden_dim = 8
train.epochs = 3
train.repr_dim = 8
train.k = 6
train.batch_size = 32
run.repeats = 2
"""


def test_criterion_10_run_determinism(tmp_path, capsys):
    cfg = tmp_path / "small.cfg"
    cfg.write_text(TINY)
    outs = [str(tmp_path / "first"), str(tmp_path / "second")]
    codes = [cli_main(["run", "--config", str(cfg), "--seed", "11", "--out", o, "--variant", "full",
                       "--variant", "baseline-gcn"]) for o in outs]
    capsys.readouterr()
    same = []
    for name in ("full.csv", "baseline-gcn.csv"):
        with open(os.path.join(outs[0], name), "rb") as a, open(os.path.join(outs[1], name), "rb") as b:
            same.append(a.read() == b.read())
    ok = codes == [0, 0] and all(same)
    _record(10, ok, f"two 'run' executions with master seed 11: exit codes {codes}, aggregate CSVs identical {same}")
