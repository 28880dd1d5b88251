"""Smoke test for the gridsde_py extension.

Build and install first:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/gridsde_py-*.whl
"""

import json
import math

import gridsde_py as g


def main():
    rbf = g.Kernel.rbf(1.0)
    assert rbf([0.0], [0.0]) == 1.0
    assert abs(rbf([0.0], [1.0]) - math.exp(-0.5)) < 1e-15
    ens = g.Kernel.rbf_plus_periodic(1.0, 0.5, 2.0)
    assert ens.diagonal == 2.0
    assert g.Kernel.from_json(ens.to_json()) == ens
    k = rbf.gram([0.0, 1.0])
    assert k[0][0] == 1.0 and k[0][1] == k[1][0]

    x = [2 * math.pi * i / 19 for i in range(20)]
    y = [math.sin(v) for v in x]
    cv = g.cross_validate([g.Kernel.rbf(l) for l in (0.1, 1.0, 10.0)], x, y, folds=5, seed=0)
    gp = g.GaussianProcess(cv["kernel"], x, y, noise=1e-10)
    probe = [0.5, 1.5, 3.0]
    mean = gp.predict_mean(probe)
    assert max(abs(m - math.sin(p)) for m, p in zip(mean, probe)) < 1e-3
    assert all(v >= 0.0 for v in gp.predict_var(probe))

    m = g.evaluate([1.0, 2.0, 3.0], [1.0, 2.0, 4.0])
    assert m == {"mse": 1 / 3, "mae": 1 / 3, "r2": 0.5}

    t, xs = g.ou_path(1.0, 0.5, 2.0, 0.01, 100, seed=3)
    assert len(t) == len(xs) == 101 and xs[0] == 2.0
    assert g.ou_path(1.0, 0.5, 2.0, 0.01, 100, seed=3)[1] == xs

    traj = g.simulate(seed=1)
    assert set(traj) >= {"times", "delta", "omega"}

    table = g.estimate(json.dumps({"kernels": ["rbf"]}), seed=0)
    assert len(table) == 1 and table[0]["r2_delta"] > 0.99

    summary = g.recover(json.dumps({"recovery": {"self_test": True}}), seed=1)
    assert summary["self_test"]["f_relative_l2"] <= 0.2

    try:
        g.Kernel.rbf(-1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative length scale accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
