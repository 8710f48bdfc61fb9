#!/usr/bin/env python3
"""Smoke test for the mchar_py extension module.

Build the extension and run this script from the repository root:

    cargo build -p mchar-py --release
    cp target/release/libmchar_py.so python/mchar_py.so
    python3 python/smoke_test.py
"""
import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import mchar_py as mc


def approx(a, b, tol=1e-10):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    # functional evaluation on a three-point law
    u123 = mc.Distribution([1.0, 2.0, 3.0], [1.0, 1.0, 1.0])
    approx(u123.mean(), 2.0)
    approx(u123.lower_quantile(0.5), 2.0)
    approx(u123.expected_shortfall(0.5), 4.0 / 3.0)
    approx(u123.expectile(0.5), u123.mean(), 1e-9)
    var_es = u123.functional("vares:alpha=0.5")
    approx(var_es[0], 2.0)
    approx(var_es[1], 4.0 / 3.0)

    # loss formulas
    approx(mc.loss_eval("bregman:square", 3.0, [1.0]), 4.0)
    approx(mc.loss_eval("gpl:identity:alpha=0.9", 5.0, [0.0]), 4.5)
    approx(mc.loss_eval("expectile:tau=0.9", 2.0, [0.0]), 3.6)
    approx(mc.loss_subgradient("bregman:square", 3.0, [1.0])[0], -4.0)
    try:
        mc.loss_eval("bregman:cube", 0.0, [0.0])
    except ValueError:
        pass
    else:
        raise AssertionError("unknown loss key must raise")

    # consistency certification: the squared loss elicits the mean, the
    # pinball prefers the median of a skewed law
    family = [
        mc.Distribution([0.0, 1.0], [0.5, 0.5]),
        mc.Distribution([-1.0, 0.5, 2.0], [0.2, 0.5, 0.3]),
    ]
    status, witness = mc.certify_consistency("bregman:square", "mean", family)
    assert status == "strictly-consistent", status
    assert witness is None

    skewed = [mc.Distribution([0.0, 1.0, 5.0], [1.0, 1.0, 1.0])]
    status, witness = mc.certify_consistency(
        "gpl:identity:alpha=0.5", "mean", skewed, xi_lo=-1.0, xi_hi=6.0, points=701
    )
    assert status == "inconsistent", status
    member, point, gap = witness
    assert member == 0
    assert abs(point[0] - 1.0) < 2e-2, point
    assert gap > 0.1

    # estimation on noiseless linear data recovers the coefficients, and the
    # M- and Z-routes agree
    theta = [1.5, -0.5]
    xs = [[1.0, x * 0.1] for x in range(-10, 10)]
    ys = [theta[0] * x[0] + theta[1] * x[1] for x in xs]
    theta_m, obj_m = mc.m_estimate_linear(
        "bregman:square", ys, xs, [-4.0, -4.0], [4.0, 4.0]
    )
    theta_z, obj_z = mc.z_estimate_linear(ys, xs, [-4.0, -4.0], [4.0, 4.0])
    for i in range(2):
        approx(theta_m[i], theta[i], 1e-5)
        approx(theta_z[i], theta[i], 1e-5)
    assert obj_m < 1e-10 and obj_z < 1e-10

    print("smoke test: all assertions passed")


if __name__ == "__main__":
    main()
