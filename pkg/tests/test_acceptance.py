"""Gating acceptance checks 1-8.

Each test records one ``criterion N: PASS|FAIL`` line; the lines are printed
in the terminal summary (and immediately with ``-s``).  Run directly with
``python3 tests/test_acceptance.py`` for the same lines without pytest output.
"""
import time

import numpy as np
import pytest

from fabl.cli import random_model
from fabl.data_io import build_label_matrix
from fabl.evaluation import (
    SplitSpec,
    SyntheticSpec,
    benchmark_throughput,
    generate_synthetic,
    run_ablation,
    sparsity_ratio,
    split,
    train_on,
)
from fabl.features import (
    HistogramConfig,
    PartitionLayout,
    extract_features,
    fit_ranges,
    layout_for,
    spatial_displacement,
)
from fabl.importance import importance_report
from fabl.skeleton import SkeletonSequence
from fabl.solver import Hyperparams, TrainingSet, fabl_train, reweighting_gap

from oracles import fabl_objective, group_ids, standardize_rows, subgradient_oracle


def _random_layout(rng, d_lo, d_hi):
    """Random (modality x joint) block table with total size in [d_lo, d_hi]."""
    while True:
        m = int(rng.integers(1, 5))
        s = int(rng.integers(1, 11))
        dims = rng.integers(1, 8, size=(m, s))
        if d_lo <= dims.sum() <= d_hi:
            return PartitionLayout(tuple(map(tuple, dims.tolist())))


def _random_problem(rng, layout, n, c):
    X = rng.standard_normal((layout.d, n))
    labels = np.concatenate([np.arange(c), rng.integers(0, c, n - c)])
    rng.shuffle(labels)
    return TrainingSet.from_labels(X, labels, layout, c=c)


# -- 1 ------------------------------------------------------------------------

def test_criterion1_monotone_descent(acceptance):
    rng = np.random.default_rng(1)
    hp = Hyperparams(gamma1=0.1, gamma2=0.1)
    t0 = time.perf_counter()
    bad = []
    for trial in range(100):
        d = int(rng.integers(20, 201))
        n = int(rng.integers(30, 301))
        c = int(rng.integers(2, 11))
        layout = _random_layout(rng, d, d)
        _, trace = fabl_train(_random_problem(rng, layout, n, c), hp)
        if not trace.is_monotone(rel_slack=1e-9):
            bad.append(trial)
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 120
    acceptance(1, ok, f"{100 - len(bad)}/100 traces non-increasing, {elapsed:.1f} s")
    assert not bad, f"non-monotone traces: {bad}"
    assert elapsed < 120


# -- 2 ------------------------------------------------------------------------

def test_criterion2_reweighting_inequality(acceptance):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        dims = rng.integers(1, 20, size=1000)
        scales = 10.0 ** rng.uniform(-6, 3, size=(1000, 2))
        for j, (dim, (sa, sb)) in enumerate(zip(dims, scales)):
            b = sb * rng.standard_normal(dim)
            if j % 4 == 0:
                # near-equality pairs, where the bound is tight
                a = b * (1 + 1e-6 * rng.standard_normal(dim))
            else:
                a = sa * rng.standard_normal(dim)
            na, nb = np.sqrt(np.sum(a * a)), np.sqrt(np.sum(b * b))
            if nb <= 1e-12:
                continue
            # ||a|| - ||a||^2 / (2||b||) <= ||b|| - ||b||^2 / (2||b||)
            violation = (na - na * na / (2 * nb)) - nb / 2
            worst = max(worst, violation, -reweighting_gap(a, b))
    ok = worst <= 1e-12
    acceptance(2, ok, f"10^5 pairs, worst violation {worst:.3g}")
    assert ok


# -- 3 ------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion3_oracle_optimality(acceptance):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(20):
        layout = _random_layout(rng, 2, 12)
        c = int(rng.integers(2, 4))
        n = int(rng.integers(layout.d + 4, 25))
        train = _random_problem(rng, layout, n, c)
        g1, g2 = 10.0 ** rng.uniform(-1, 1, size=2)
        hp = Hyperparams(gamma1=g1, gamma2=g2, tol=1e-12, max_iter=5000)
        model, _ = fabl_train(train, hp)
        Xs = standardize_rows(train.X)
        mod_ids, joint_ids = group_ids(layout.dims)
        b = train.Y.mean(axis=0)
        ours = fabl_objective(Xs, train.Y, model.W, b, g1, g2, mod_ids, joint_ids)
        ref, _ = subgradient_oracle(Xs, train.Y, b, g1, g2, mod_ids, joint_ids, seed=trial)
        worst = max(worst, abs(ours - ref) / ref)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 600
    acceptance(3, ok, f"20 instances, worst relative gap to oracle {worst:.3g}, {elapsed:.0f} s")
    assert worst <= 1e-4
    assert elapsed < 600


# -- 4 ------------------------------------------------------------------------

def _ridge_lstsq(X, Y, lam):
    """Ridge by least squares on the stacked system [X^T; sqrt(lam) I] W = [Y - 1 b^T; 0]."""
    Xs = standardize_rows(X)
    d, n = Xs.shape
    b = Y.mean(axis=0)
    A = np.vstack([Xs.T, np.sqrt(lam) * np.eye(d)])
    B = np.vstack([Y - b[None, :], np.zeros((d, Y.shape[1]))])
    return np.linalg.lstsq(A, B, rcond=None)[0]


def test_criterion4_ridge_equivalence(acceptance):
    rng = np.random.default_rng(4)
    worst = 0.0
    for trial in range(20):
        layout = _random_layout(rng, 5, 60)
        c = int(rng.integers(2, 6))
        # half the instances have more features than samples
        n = int(rng.integers(layout.d + 5, 150)) if trial % 2 == 0 else int(rng.integers(c + 2, max(c + 3, layout.d)))
        lam = 1e-8 if n > layout.d else 1e-2
        train = _random_problem(rng, layout, n, c)
        model, trace = fabl_train(train, Hyperparams(gamma1=0, gamma2=0, init_ridge=lam))
        ref = _ridge_lstsq(train.X, train.Y, lam)
        worst = max(worst, float(np.max(np.abs(model.W - ref))))
        assert trace.iterations == 1 and trace.converged
    ok = worst <= 1e-8
    acceptance(4, ok, f"20 instances, max |W - W_ridge| = {worst:.3g}")
    assert ok


# -- 5 ------------------------------------------------------------------------

SPARSITY_SPEC = dict(n=60, block_dim=6, m=4, s=10, c=3, noise_sigma=0.5, signal=1.0, inactive_sigma=1.0)


def test_criterion5_sparsity_recovery(acceptance):
    hp = Hyperparams(gamma1=0.01, gamma2=1.0)
    ratios, ranked_first = [], 0
    for seed in range(10):
        fm, active = generate_synthetic(SyntheticSpec(active_joints=(0,), seed=seed, **SPARSITY_SPEC))
        model, _ = train_on(fm, hp)
        ratios.append(sparsity_ratio(model, active))
        report = importance_report(model)
        if all(cls["joints"][0]["index"] == 0 for cls in report["classes"]):
            ranked_first += 1
    sparse = sum(r <= 0.10 for r in ratios)
    ok = sparse >= 8 and ranked_first >= 9
    acceptance(5, ok, f"ratio <= 10% in {sparse}/10 seeds (median {np.median(ratios):.3f}), "
                      f"active joint ranked first for every class in {ranked_first}/10")
    assert sparse >= 8
    assert ranked_first >= 9


# -- 6 ------------------------------------------------------------------------

def test_criterion6_ablation_ordering(acceptance):
    per_config = {}
    for seed in range(10):
        fm, _ = generate_synthetic(SyntheticSpec(n=120, block_dim=4, seed=seed))
        folds = split(fm, SplitSpec("fixed", train_ids=tuple(range(60)), test_ids=tuple(range(60, 120))))
        report = run_ablation(fm, folds, Hyperparams())
        assert set(report.cells) == {"fabl", "feature_only", "part_only", "unregularized"}
        for name in report.cells:
            assert not report.failed(name)
            per_config.setdefault(name, []).append(report.mean_accuracy(name))
    med = {k: float(np.median(v)) for k, v in per_config.items()}
    ok = med["fabl"] >= med["unregularized"]
    acceptance(6, ok, "median accuracy " + ", ".join(f"{k} {v:.3f}" for k, v in med.items()))
    assert ok


# -- 7 ------------------------------------------------------------------------

def test_criterion7_throughput(acceptance):
    layout = layout_for(15, HistogramConfig(bins=16))
    assert layout.d == 2400
    model = random_model(layout.d, 20, seed=7)
    t0 = time.perf_counter()
    res = benchmark_throughput(model, n_instances=100_000, repeats=3, seed=7)
    elapsed = time.perf_counter() - t0
    ok = res.predictions_per_second >= 1e3 and elapsed < 60
    acceptance(7, ok, f"{res.predictions_per_second:.3g} predictions/s "
                      f"({res.seconds_per_observation:.3g} s/obs, {res.backend}), {elapsed:.1f} s")
    assert res.predictions_per_second >= 1e3
    assert elapsed < 60


# -- 8 ------------------------------------------------------------------------

def _dyadic(rng, shape, scale):
    # multiples of 2^-10: sums and differences are exact in float64
    return np.round(rng.uniform(-scale, scale, size=shape) * 1024) / 1024


def test_criterion8_feature_correctness(acceptance):
    rng = np.random.default_rng(8)
    cfg = HistogramConfig(bins=12)
    identical = zero_torso = 0
    worst_norm = 0.0
    for _ in range(100):
        T = int(rng.integers(2, 40))
        s = int(rng.integers(2, 21))
        torso = int(rng.integers(0, s))
        seq = SkeletonSequence(_dyadic(rng, (T, s, 3), 2.0), torso)
        moved = seq.with_coords(seq.coords + _dyadic(rng, (1, 1, 3), 100.0))
        ranges = fit_ranges([seq], cfg)
        a = extract_features(seq, cfg, ranges).values
        b = extract_features(moved, cfg, ranges).values
        identical += a.tobytes() == b.tobytes()
        zero_torso += all(np.all(spatial_displacement(seq.frame(t))[torso] == 0.0) for t in range(T))
        layout = layout_for(s, cfg)
        for q in range(layout.m):
            block = a[layout.modality_slice(q)].reshape(s, -1, cfg.bins)
            worst_norm = max(worst_norm, float(np.max(np.abs(block.sum(axis=2) - 1.0))))
    ok = identical == 100 and zero_torso == 100 and worst_norm <= 1e-12
    acceptance(8, ok, f"translation bit-identical {identical}/100, torso displacement zero {zero_torso}/100, "
                      f"worst histogram sum error {worst_norm:.2g}")
    assert identical == 100
    assert zero_torso == 100
    assert worst_norm <= 1e-12


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
