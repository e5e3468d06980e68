"""Smoke test for the soiltdm_py extension module.

Run after `maturin develop --release` (or with the built shared library on
PYTHONPATH as soiltdm_py.so).
"""

import math
import os
import sys
import tempfile

import soiltdm_py as st


def check(cond, what):
    if not cond:
        print(f"FAIL {what}")
        sys.exit(1)
    print(f"ok   {what}")


def main():
    check(st.relative_return(-2.5, -2.5) == 1.0, "expert against itself is 1")
    lo, hi = st.bootstrap_ci([0.8, 0.95, 1.1])
    check(abs(lo - 0.8) < 1e-12 and abs(hi - 1.1) < 1e-12, "bootstrap interval of three seeds")
    check(abs(st.spearman([1, 2, 3], [3, 2, 1]) + 1.0) < 1e-12, "spearman of reversed order")
    raw = [5.0, 4.0, 3.0, 2.5, 2.6, 2.4]
    check(st.windowed(raw, window=2)[1] == 4.5, "trailing window mean")
    check(st.select_checkpoint(raw, window=1) == 5, "lowest criterion selected")

    rows = st.oracle_suite(instances=10, seed=1)
    check(len(rows) == 4 and all(r[4] for r in rows), "oracle identities hold")

    cfg = st.default_config("lingauss", "soiltdm")
    check("run.epochs = 30" in cfg, "desk configuration text")

    flow = st.Flow(1, seed=3)
    xs = [[2.0 + 0.5 * math.sin(i)] for i in range(500)]
    flow.fit(xs, steps=300)
    lp = flow.log_prob([[2.0], [40.0]])
    check(lp[0] > lp[1], "trained flow prefers data region")
    check(len(flow.sample(7)) == 7, "flow sampling")

    try:
        st.Flow(2, cond_dim=1).log_prob([[0.0, 0.0]])
        check(False, "missing condition rejected")
    except ValueError:
        check(True, "missing condition rejected")

    small = cfg
    for key, value in [
        ("expert.kind", "lqr"),
        ("run.epochs", "2"),
        ("run.steps_per_epoch", "50"),
        ("run.updates_per_epoch", "10"),
        ("run.model_updates_per_epoch", "10"),
        ("run.eval_episodes", "2"),
        ("expert_model.steps", "50"),
    ]:
        small = "\n".join(
            f"{key} = {value}" if line.split("=")[0].strip() == key else line for line in small.splitlines()
        )
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "run")
        rows = st.train(small, 1, out)
        check({r["selected_by"] for r in rows} == {"kld", "true_reward"}, "tiny training run")
        check(st.emit_metrics(out) == rows, "metrics recomputed from run directory")
        summary = os.path.join(out, "summary.csv")
        check(st.aggregate([summary])[0]["n_seeds"] == 1, "aggregate over one seed")
        check(st.plot_svg([summary]).startswith("<svg"), "plot rendering")
    print("smoke test passed")


if __name__ == "__main__":
    main()
