"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The trend criteria run reduced Monte-Carlo grids (m=20, d=210, 50
repetitions) whose thresholds were calibrated once at 200 repetitions and
frozen here. Expect the full module to take tens of minutes on a couple of
cores; everything is deterministic given the seeds baked in below.
"""

import math
import os
import time

import numpy as np
import pytest

from conftest import make_instance
from wdre.datagen import LabeledDataset
from wdre.diagnostics import ThetaBox, _incoherence_from_info, leverage_stats
from wdre.experiments import ExperimentConfig, results_csv_text, run_grid
from wdre.features import FeatureMap, feature_eval
from wdre.model import ObjectiveSpec, gradient, hessian, objective, precompute
from wdre.optim import KKT_TOL, SolverConfig, fit, kkt_residuals
from wdre.weights import WeightConfig, WeightFn, log_weight_eval

THREADS = os.cpu_count() or 1


def report(capsys, criterion, ok, detail):
    with capsys.disabled():
        print(f"[acceptance {criterion}] {'PASS' if ok else 'FAIL'} - {detail}", flush=True)
    assert ok, f"{criterion}: {detail}"


def instance_suite():
    """The shared 50 random instances: small dims, both methods, both weight kinds."""
    combos = [
        ("conventional-dre", "constant"),
        ("weighted-dre", "constant"),
        ("weighted-dre", "quartic-decay"),
    ]
    out = []
    rng = np.random.default_rng(20250808)
    for i in range(50):
        method, kind = combos[i % len(combos)]
        m = int(rng.integers(2, 6))
        n_p = int(rng.integers(10, 51))
        n_q = int(rng.integers(10, 51))
        out.append(make_instance(1000 + i, m=m, n_p=n_p, n_q=n_q, method=method, weight_kind=kind))
    return out


def test_criterion_1_gradient_matches_finite_differences(capsys):
    start = time.perf_counter()
    step = 1e-5
    worst = 0.0
    for spec, _, _, feats, theta in instance_suite():
        g = gradient(spec, feats, theta)
        for t in range(feats.d):
            hi, lo = theta.copy(), theta.copy()
            hi[t] += step
            lo[t] -= step
            fd = (objective(spec, feats, hi) - objective(spec, feats, lo)) / (2 * step)
            worst = max(worst, abs(g[t] - fd))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 10.0
    report(capsys, "1 gradient", ok, f"max |analytic - fd| = {worst:.2e}, {elapsed:.1f}s")


def test_criterion_2_hessian_matches_and_is_psd(capsys):
    start = time.perf_counter()
    step = 1e-5
    worst = 0.0
    min_eig = math.inf
    for spec, _, _, feats, theta in instance_suite():
        H = hessian(spec, feats, theta)
        min_eig = min(min_eig, float(np.linalg.eigvalsh(H)[0]))
        for t in range(feats.d):
            hi, lo = theta.copy(), theta.copy()
            hi[t] += step
            lo[t] -= step
            fd_col = (gradient(spec, feats, hi) - gradient(spec, feats, lo)) / (2 * step)
            worst = max(worst, float(np.abs(H[:, t] - fd_col).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-5 and min_eig >= -1e-8 and elapsed < 30.0
    report(
        capsys, "2 hessian", ok,
        f"max |H - fd| = {worst:.2e}, min eig = {min_eig:.2e}, {elapsed:.1f}s",
    )


def test_criterion_3_solver_beats_grid_oracle(capsys):
    start = time.perf_counter()
    lam = 0.05
    vals = np.round(np.arange(-1.0, 1.0 + 0.025, 0.05), 10)
    worst_gap = -math.inf
    worst_kkt = 0.0
    for i in range(20):
        rng = np.random.default_rng(3000 + i)
        fmap = FeatureMap(2)
        if i % 2:
            spec = ObjectiveSpec.weighted(fmap, WeightFn.quartic_for_dim(2))
        else:
            spec = ObjectiveSpec.conventional(fmap)
        x_p = rng.normal(size=(200, 2))
        x_q = rng.normal(scale=rng.uniform(0.8, 1.3), size=(200, 2))
        feats = precompute(spec, x_p, x_q)
        res = fit(spec, x_p, x_q, SolverConfig(lam=lam))
        theta = res.theta_hat.theta
        ours = objective(spec, feats, theta) + lam * float(np.abs(theta).sum())
        # exhaustive sweep of the cube, one outer coordinate at a time
        best = math.inf
        grid2 = np.array([[a, b] for a in vals for b in vals])
        for c in vals:
            thetas = np.column_stack([grid2, np.full(len(grid2), c)])
            scores = feats.Hq @ thetas.T + feats.logw_q[:, None]
            smax = scores.max(axis=0)
            lme = smax + np.log(np.exp(scores - smax).sum(axis=0)) - math.log(feats.n_q)
            objs = -(thetas @ feats.hw_p_mean) + feats.kappa_hat * lme
            objs += lam * np.abs(thetas).sum(axis=1)
            best = min(best, float(objs.min()))
        worst_gap = max(worst_gap, ours - best)
        r_act, r_inact = kkt_residuals(gradient(spec, feats, theta), theta, lam)
        worst_kkt = max(worst_kkt, r_act, r_inact)
    elapsed = time.perf_counter() - start
    ok = worst_gap <= 1e-6 and worst_kkt <= KKT_TOL and elapsed < 60.0
    report(
        capsys, "3 solver oracle", ok,
        f"max objective gap = {worst_gap:.2e}, max kkt residual = {worst_kkt:.2e}, {elapsed:.1f}s",
    )


# ------------------------------------------------------------- trend grids


def rate(cells, method, eps, n_star, scenario=None):
    for c in cells:
        if (
            c.key.method == method
            and c.key.eps == pytest.approx(eps)
            and c.key.n_star == n_star
            and (scenario is None or c.key.scenario == scenario)
        ):
            return c.success_rate
    raise KeyError((method, eps, n_star, scenario))


def spearman(xs, ys):
    def ranks(v):
        order = np.argsort(v)
        r = np.empty(len(v))
        r[order] = np.arange(1, len(v) + 1)
        # average ties
        for val in set(v):
            mask = np.asarray(v) == val
            r[mask] = r[mask].mean()
        return r

    rx, ry = ranks(list(xs)), ranks(list(ys))
    if np.std(rx) == 0 or np.std(ry) == 0:
        return 0.0
    return float(np.corrcoef(rx, ry)[0, 1])


N_GRID = (1000, 2000, 4000, 8000)


@pytest.fixture(scope="module")
def robustness_cells():
    cfg = ExperimentConfig(
        scenario="robustness", methods=("dre", "wdre"), dims=(20,), n_grid=N_GRID,
        k=4, magnitude=0.4, lambda0=5.0, repetitions=50, master_seed=20250801,
        eps_p=(0.0, 0.2), eps_q=(0.0, 0.2), weight=WeightConfig(),
    )
    grid = run_grid(cfg, threads=THREADS)
    assert grid.complete
    return grid.cells


def test_criterion_4_robustness_trend(capsys, robustness_cells):
    cells = robustness_cells
    checks = []
    # (a) contaminated conventional fitting recovers nothing
    dre_cont = [rate(cells, "dre", 0.2, n) for n in N_GRID]
    checks.append((all(s <= 0.05 for s in dre_cont), f"dre eps=.2 rates {dre_cont}"))
    # (b) contaminated weighted fitting climbs to a high success rate
    w1, w8 = rate(cells, "wdre", 0.2, 1000), rate(cells, "wdre", 0.2, 8000)
    checks.append((w8 - w1 >= 0.3 and w8 >= 0.7, f"wdre eps=.2 {w1:.2f}->{w8:.2f}"))
    # (c) ordering with binomial slack at every matched size
    order_ok = all(
        rate(cells, "dre", 0.0, n) >= rate(cells, "wdre", 0.0, n) - 0.1
        and rate(cells, "wdre", 0.0, n) >= rate(cells, "wdre", 0.2, n) - 0.1
        for n in N_GRID
    )
    checks.append((order_ok, "ordering dre/clean >= wdre/clean >= wdre/contaminated"))
    # clean-vs-contaminated monotonicity for the conventional method
    mono_ok = all(
        rate(cells, "dre", 0.0, n) >= rate(cells, "dre", 0.2, n) - 0.1 for n in N_GRID
    )
    checks.append((mono_ok, "dre clean >= dre contaminated"))
    # weighted success is non-decreasing in n in both settings
    for eps in (0.0, 0.2):
        curve = [rate(cells, "wdre", eps, n) for n in N_GRID]
        checks.append(
            (spearman(N_GRID, curve) >= 0.0, f"wdre eps={eps} trend {curve}")
        )
    ok = all(c[0] for c in checks)
    detail = "; ".join(("ok: " if c0 else "FAILED: ") + c1 for c0, c1 in checks)
    report(capsys, "4 robustness trend", ok, detail)


def test_criterion_5_unboundedness_trend(capsys):
    # amplitude 0.5 is the unbounded-design weight; at fixed lambda0 it doubles
    # the effective penalty, which is what keeps single-coordinate false
    # positives out of the recovered support (calibrated at 200 repetitions)
    cfg = ExperimentConfig(
        scenario="unboundedness", methods=("dre", "wdre"), dims=(20,), n_grid=N_GRID,
        k=4, magnitude=0.4, lambda0=4.0, repetitions=50, master_seed=20250801,
        eps_p=(0.0,), eps_q=(0.0,), weight=WeightConfig(amplitude=0.5),
    )
    grid = run_grid(cfg, threads=THREADS)
    assert grid.complete
    cells = grid.cells
    dre_unb = rate(cells, "dre", 0.0, 8000, "unboundedness-unbounded")
    wdre_unb = rate(cells, "wdre", 0.0, 8000, "unboundedness-unbounded")
    wdre_bnd = rate(cells, "wdre", 0.0, 8000, "unboundedness-bounded")
    gap_ok = wdre_unb - dre_unb >= 0.3
    close_ok = abs(wdre_bnd - wdre_unb) <= 0.15
    ok = gap_ok and close_ok
    report(
        capsys, "5 unboundedness trend", ok,
        f"dre/unbounded={dre_unb:.2f} wdre/unbounded={wdre_unb:.2f} wdre/bounded={wdre_bnd:.2f}",
    )


def test_criterion_6_error_rate_scaling(capsys):
    cfg = ExperimentConfig(
        scenario="robustness", methods=("wdre",), dims=(20,), n_grid=N_GRID,
        k=4, magnitude=0.4, lambda0=5.0, repetitions=30, master_seed=20250801,
        eps_p=(0.0,), eps_q=(0.0,), weight=WeightConfig(),
    )
    grid = run_grid(cfg, threads=THREADS)
    assert grid.complete
    med = {c.key.n_star: c.median_l2 for c in grid.cells}
    errors = [med[n] for n in N_GRID]
    mono = all(errors[i + 1] <= errors[i] for i in range(len(errors) - 1))
    ratios = [med[1000] / med[4000], med[2000] / med[8000]]
    in_band = all(1.5 <= r <= 2.7 for r in ratios)
    ok = mono and in_band
    report(
        capsys, "6 error scaling", ok,
        f"median l2 {['%.3f' % e for e in errors]}, quadrupling ratios {['%.2f' % r for r in ratios]}",
    )


def test_criterion_7_determinism_across_worker_counts(capsys):
    cfg = ExperimentConfig(
        scenario="robustness", methods=("dre", "wdre"), dims=(4,), n_grid=(40, 80),
        k=1, magnitude=0.4, lambda0=5.0, repetitions=4, master_seed=11,
        eps_p=(0.0, 0.2), eps_q=(0.0, 0.2), weight=WeightConfig(),
        solver=SolverConfig(lam=0.0, max_iter=400),
    )
    texts = []
    for threads in (1, 4, 8):
        grid = run_grid(cfg, threads=threads)
        assert grid.complete
        texts.append(results_csv_text(list(grid.cells)).encode())
    ok = texts[0] == texts[1] == texts[2]
    report(
        capsys, "7 determinism", ok,
        f"csv bytes identical across 1/4/8 workers ({len(texts[0])} bytes)",
    )


def test_criterion_8_diagnostics_match_naive_oracles(capsys):
    rng = np.random.default_rng(808)
    worst = 0.0
    # leverage against a triple-loop oracle on moderate outliers
    for trial in range(3):
        m = 2 + trial
        fmap = FeatureMap(m)
        weight = WeightFn.quartic_for_dim(m)
        box = ThetaBox.symmetric(fmap.d, 0.4)
        support = sorted(rng.choice(fmap.d, size=min(3, fmap.d), replace=False).tolist())
        out_p = rng.uniform(1.0, 2.0, size=(4, m))
        out_q = rng.uniform(1.0, 2.0, size=(5, m))
        ref = LabeledDataset(
            np.vstack([rng.normal(size=(40, m)), out_p]),
            np.array(["inlier"] * 40 + ["outlier"] * 4),
        )
        tgt = LabeledDataset(
            np.vstack([rng.normal(size=(40, m)), out_q]),
            np.array(["inlier"] * 40 + ["outlier"] * 5),
        )
        got = leverage_stats(ref, tgt, weight, fmap, box, support).nu_values()

        def w(x):
            return math.exp(log_weight_eval(weight, x))

        def box_exp(x):
            h = feature_eval(fmap, x)
            return math.exp(sum(max(box.lo[t] * h[t], box.hi[t] * h[t]) for t in range(fmap.d)))

        want = dict.fromkeys(got, 0.0)
        for x in out_p:
            h = feature_eval(fmap, x)
            want["nu1"] = max(want["nu1"], w(x))
            want["nu3"] = max(want["nu3"], max(w(x) * abs(h[t]) for t in range(fmap.d)))
        for x in out_q:
            h = feature_eval(fmap, x)
            core = box_exp(x) * w(x)
            want["nu2"] = max(want["nu2"], core)
            want["nu4"] = max(want["nu4"], max(core * abs(h[t]) for t in range(fmap.d)))
            want["nu5"] = max(
                want["nu5"],
                max(core * abs(h[t] * h[u]) for t in range(fmap.d) for u in range(fmap.d)),
            )
            want["nu6"] = max(
                want["nu6"],
                max(
                    core * abs(h[t] * h[u] * h[v])
                    for t in range(fmap.d)
                    for u in support
                    for v in support
                ),
            )
        for name in got:
            rel = abs(got[name] - want[name]) / max(1e-300, abs(want[name]))
            worst = max(worst, rel)

    # incoherence against an explicit inverse-then-multiply oracle
    for k in (2, 5):
        d = k + 7
        M = rng.normal(size=(d, d))
        info = M @ M.T + 0.3 * np.eye(d)
        support = np.sort(rng.choice(d, size=k, replace=False))
        inactive = np.setdiff1d(np.arange(d), support)
        _, incoherence, _ = _incoherence_from_info(info, support)
        explicit = info[np.ix_(inactive, support)] @ np.linalg.inv(info[np.ix_(support, support)])
        want = float(np.abs(explicit).sum(axis=1).max())
        worst = max(worst, abs(incoherence - want) / want)

    ok = worst <= 1e-8
    report(capsys, "8 diagnostics oracle", ok, f"max relative deviation = {worst:.2e}")
