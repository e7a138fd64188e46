#!/usr/bin/env python3
"""Smoke test for the cfiot_py extension module.

Builds (or reuses) the cdylib, imports it, and exercises the bound surface:
configuration, path loss, the interference fixed point, and a short
scheduler run with its runtime invariants.

Usage: python3 python/smoke_test.py [--profile release|debug]
"""

import argparse
import math
import shutil
import subprocess
import sys
import sysconfig
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_and_import(profile: str):
    subprocess.run(
        ["cargo", "build", f"--{profile}" if profile == "release" else "--profile=dev",
         "-p", "cfiot-py"],
        cwd=REPO,
        check=True,
    )
    target = REPO / "target" / ("release" if profile == "release" else "debug")
    lib = target / "libcfiot_py.so"
    if not lib.exists():  # macOS fallback
        lib = target / "libcfiot_py.dylib"
    if not lib.exists():
        sys.exit(f"built library not found under {target}")
    stage = Path(tempfile.mkdtemp(prefix="cfiot_py_"))
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    shutil.copy2(lib, stage / f"cfiot_py{suffix}")
    sys.path.insert(0, str(stage))
    import cfiot_py  # noqa: E402

    return cfiot_py


def approx(a, b, rel=1e-9):
    return abs(a - b) <= rel * max(abs(a), abs(b), 1e-300)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--profile", default="release", choices=["release", "debug"])
    args = parser.parse_args()
    m = build_and_import(args.profile)

    # configuration surface
    cfg = m.Config()
    assert "k_a=8" in repr(cfg).replace(" ", ""), repr(cfg)
    assert approx(m.Config.table1().alpha(), 0.3)
    assert abs(cfg.noise_power() - 6.3624e-13) / 6.3624e-13 < 1e-3
    cfg.set("seed", "3")
    assert "seed = 3" in cfg.to_text()
    try:
        cfg.set("bogus", "1")
    except ValueError:
        pass
    else:
        sys.exit("unknown config key must raise")

    # path loss: flat below d0, monotone beyond
    flat = m.path_loss_db(5.0, cfg)
    assert approx(flat, m.path_loss_db(9.0, cfg), rel=1e-12)
    assert m.path_loss_db(40.0, cfg) < m.path_loss_db(15.0, cfg)
    assert abs(m.reference_loss_db(cfg) - 145.2894) < 1e-3

    # fixed point: single interferer with E_p beta = 10, tau = 10 solves
    # varsigma^2 - 8 varsigma - 10 = 0
    varsigma, z = m.fixed_point([10.0], 1.0, 10)
    assert approx(varsigma[0], (8.0 + math.sqrt(104.0)) / 2.0, rel=1e-8)
    assert approx(z, varsigma[0] / 10.0, rel=1e-8)
    z_cal, z_tilde = m.trace_functionals([10.0, 10.0], 1.0, 10)
    assert 0.0 < z_tilde <= z_cal <= 1.0
    assert approx(m.bar_gamma(1.0, 1.0, 1.0), 0.5)

    # short scheduler run plus benchmark on a tiny profile
    tiny = m.Config.parse(
        "l = 4\nn = 2\nk = 6\nk_a = 2\ntau = 8\nt_max = 60\nseed = 5\n"
    )
    for run in (m.simulate, m.baseline):
        out = run(tiny)
        assert out["t_max"] == 60
        assert out["harvest_slots"] + out["transmit_slots"] == 60
        assert out["min_battery"] >= 0.0
        assert out["max_drift_violation"] <= 1e-12
        assert len(out["min_avg_rate"]) == 60

    # validation tables on the tiny profile
    val = m.validate(tiny, 120)
    assert val["n_trials"] == 120
    assert len(val["gamma"]) == 2
    for _, closed, mc_mean, _ in val["gamma"]:
        assert abs(mc_mean - closed) / closed < 0.10
    for ka, _, _ in [(r[0], r[1], r[2]) for r in val["ka_sweep"]]:
        assert ka >= 1

    print("smoke test passed")


if __name__ == "__main__":
    main()
