"""Smoke test for the installed `ellfit` extension module.

Run after `maturin develop` (or `pip install` of a built wheel):

    python crates/python/python/smoke_test.py
"""

import json
import math
import pathlib
import sys

import ellfit

SCHEMA = pathlib.Path(__file__).resolve().parents[3] / "schema" / "fit_output.schema.json"


def check(cond, message):
    if not cond:
        sys.exit(f"smoke test failed: {message}")


def main():
    points, truth = ellfit.synthesize([3.0, 2.0, 1.0], 300, seed=7, noise=0.02, outliers=0.2)
    check(len(points) == 375, f"expected 375 points, got {len(points)}")
    check(truth.axes == [3.0, 2.0, 1.0], f"truth axes {truth.axes}")

    for method in ["em", "algebraic", "irls-tukey", "irls-huber"]:
        result = ellfit.fit(points, method=method)
        doc = json.loads(result.to_json())
        check(doc["method"] == method, doc["method"])
        check(doc["n_points"] == len(points), "n_points")
        check(len(result.quadric) == 10, "quadric length")
        if SCHEMA.exists():
            import jsonschema

            jsonschema.validate(doc, json.loads(SCHEMA.read_text()))
        print(f"{method:>11}: iterations {result.iterations}, converged {result.converged}")

    em = ellfit.fit(points, seed=1)
    e_c, e_a = em.ellipsoid.errors(truth)
    print(f"EM errors against truth: E_c {e_c:.4f}, E_a {e_a:.4f}")
    check(e_c < 0.2 and e_a < 0.2, "EM fit is far from the truth")
    check(em.nll_trace[-1] == em.final_nll, "trace ends at the final NLL")

    scores = ellfit.rdos_scores(points, k=15)
    check(len(scores) == len(points) and all(s > 0 for s in scores), "RDOS scores")
    outliers = sum(s > 2 for s in scores[300:])
    print(f"RDOS flags {outliers} of 75 planted outliers")

    unit = ellfit.Ellipsoid([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
    check(math.isclose(unit.distance([2.0, 0.0, 0.0]), 1.0), "distance to unit sphere")

    try:
        ellfit.fit([[0.0, 0.0, 0.0]] * 3)
    except ValueError as err:
        print(f"rejects a tiny cloud: {err}")
    else:
        sys.exit("smoke test failed: tiny cloud accepted")
    print("ok")


if __name__ == "__main__":
    main()
