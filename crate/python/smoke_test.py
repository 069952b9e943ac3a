#!/usr/bin/env python3
"""Smoke test for the smp_snn_py bindings.

Builds the extension with cargo (unless --no-build), copies the cdylib next
to this script under the importable module name, and exercises the main
surface: dataset generation, gradient check, a short training run, forward
simulation, cost evaluation, confidence bands, and parameter estimation.

Usage:  python3 python/smoke_test.py [--no-build] [--release]
"""

import argparse
import math
import shutil
import subprocess
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_and_import(no_build: bool, release: bool):
    profile = "release" if release else "debug"
    if not no_build:
        cmd = ["cargo", "build", "-p", "smp-snn-py"]
        if release:
            cmd.append("--release")
        subprocess.run(cmd, cwd=REPO, check=True)
    built = REPO / "target" / profile / "libsmp_snn_py.so"
    if not built.exists():
        sys.exit(f"missing {built}; run without --no-build first")
    dest = Path(__file__).resolve().parent / "smp_snn_py.so"
    shutil.copyfile(built, dest)
    sys.path.insert(0, str(dest.parent))
    import smp_snn_py

    return smp_snn_py


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--no-build", action="store_true")
    parser.add_argument("--release", action="store_true")
    args = parser.parse_args()
    m = build_and_import(args.no_build, args.release)

    # Dataset generation is seeded and reproducible.
    spec = '{"task": "circle-classification", "count": 50, "seed": 12}'
    data = m.Dataset.generate(spec)
    again = m.Dataset.generate(spec)
    assert len(data) == 50
    assert data.inputs() == again.inputs() and data.labels() == again.labels()
    assert data.input_dim == 2 and data.label_dim == 1
    print(f"dataset: {data!r}")

    # Gradient check on a small instance.
    small = m.NetConfig(width=2, depth=3, step_size=0.5, input_dim=2, label_dim=1)
    check = m.gradient_check(small, data, seed=7, m_paths=2000)
    assert check["pass"], check
    print(
        "gradient check: pathwise max err "
        f"{check['pathwise']['max_scaled_err']:.2e}, "
        f"monte carlo max err {check['monte_carlo']['max_scaled_err']:.2e}"
    )

    # Exact pathwise gradient under frozen noise matches finite differences
    # of a hand-rolled forward pass closely enough to smoke-test the wiring.
    noises = [[0.3, -0.7], [0.1, 0.4], [-0.2, 0.6]]
    controls0 = m.Controls.init(small, seed=7)
    grad = m.pathwise_gradient(
        controls0, small, [0.2, -0.4], [1.0], noises, scheme="left-point"
    )
    assert len(grad) == small.depth
    assert all(len(g["b"]) == small.width for g in grad)
    print(f"pathwise gradient: {small.depth} layers, |g_b0| = {abs(grad[0]['b'][0]):.3e}")

    # Short training run decreases the cost.
    net = m.NetConfig(width=2, depth=4, step_size=1.0, input_dim=2, label_dim=1)
    init = m.Controls.init(net, seed=3)
    cost0 = m.evaluate_cost(init, data, net, m_paths=200, seed=5)
    trained, log = m.train(
        data, net, init, iterations=2000, seed=3, lr_scale=1.0,
        freeze_sigma=True, log_every=500,
    )
    cost1 = m.evaluate_cost(trained, data, net, m_paths=200, seed=5)
    assert cost1 < cost0, (cost0, cost1)
    assert log[0]["iteration"] == 1 and log[-1]["iteration"] == 2000
    assert math.isclose(log[-1]["learning_rate"], 1.0 / math.sqrt(2000))
    print(f"training: cost {cost0:.4f} -> {cost1:.4f} over {log[-1]['iteration']} iterations")

    # Controls round-trip through JSON exactly.
    clone = m.Controls.from_json(trained.to_json())
    assert clone.weights(0) == trained.weights(0)
    assert clone.sigma(net.depth - 1) == trained.sigma(net.depth - 1)

    # Forward simulation is seeded and returns the whole state path.
    path = m.simulate(trained, net, [0.1, 0.2], seed=11)
    assert len(path) == net.depth + 1 and len(path[0]) == net.width
    assert path == m.simulate(trained, net, [0.1, 0.2], seed=11)
    print(f"simulate: X_0 = {path[0]}, X_N = [{path[-1][0]:.4f}, {path[-1][1]:.4f}]")

    # Confidence band on an interval (1-d input nets).
    net1 = m.NetConfig(width=2, depth=4, step_size=1.0, input_dim=1, label_dim=1)
    band = m.band_on_interval(
        m.Controls.init(net1, seed=1), net1, 0.0, 1.0,
        grid_points=11, samples=100, level=0.95, seed=2,
    )
    assert len(band["grid"]) == 11
    assert all(lo <= mu <= hi for lo, mu, hi in zip(band["lower"], band["mean"], band["upper"]))
    print(f"band: level {band['level']}, mean half-width "
          f"{sum(u - l for u, l in zip(band['upper'], band['lower'])) / 22:.4f}")

    # Classification metrics on a held-out set.
    metrics = m.classification_metrics(trained, net, data, seed=9)
    assert 0.0 <= metrics["accuracy"] <= 1.0 and metrics["test_points"] == 50
    print(f"classification: accuracy {metrics['accuracy']:.3f} "
          f"(outside band {metrics['accuracy_outside_band']:.3f})")

    # Parameter estimation pools readout samples over observations.
    net2 = m.NetConfig(width=3, depth=4, step_size=1.0, input_dim=2, label_dim=1)
    est = m.param_estimate(
        m.Controls.init(net2, seed=4), net2,
        observations=[(0.5, 1.6), (0.48, 1.7), (0.52, 1.65)],
        samples_per_obs=50, seed=6,
    )
    assert len(est["pooled_samples"]) == 150
    assert math.isclose(
        est["point_estimate"], sum(est["pooled_samples"]) / 150, rel_tol=1e-12
    )
    print(f"param estimate: {est['point_estimate']:.4f} from 150 pooled samples")

    print("smoke test passed")


if __name__ == "__main__":
    main()
