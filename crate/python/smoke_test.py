#!/usr/bin/env python3
"""Smoke test for the kpp_spectra_py extension module.

Builds nothing itself: it expects `cargo build -p kpp-spectra-py` to have
produced the cdylib already, copies it next to a temp directory under the
importable name, and checks the worked scalar-advection example
(d = 1, q = 1, r = 1/8):

    lambda1' = -1/8,   lambda1 = 1/8 at z_max = 1/2,   dispersion
    lambda(z) = z - z^2 - 1/8,   c* = q + 2 sqrt(d r) = 1 + sqrt(1/2) ... for
    the zero-advection variant c* = 2 with mu* = 1.

Run from the repository root:

    cargo build -p kpp-spectra-py
    python3 python/smoke_test.py
"""

import math
import pathlib
import shutil
import sys
import sysconfig
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def locate_cdylib() -> pathlib.Path:
    """Find the built extension under target/, preferring debug."""
    stem = "kpp_spectra_py"
    candidates = []
    for profile in ("debug", "release"):
        d = ROOT / "target" / profile
        candidates += [d / f"lib{stem}.so", d / f"lib{stem}.dylib", d / f"{stem}.dll"]
    for c in candidates:
        if c.is_file():
            return c
    sys.exit(
        "extension not built; run `cargo build -p kpp-spectra-py` first "
        f"(looked for {stem} under {ROOT / 'target'})"
    )


def import_module():
    lib = locate_cdylib()
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    tmp = pathlib.Path(tempfile.mkdtemp(prefix="kpp_py_"))
    # abi3 module: the plain .so name is importable on any CPython >= 3.10.
    shutil.copy2(lib, tmp / "kpp_spectra_py.so")
    shutil.copy2(lib, tmp / ("kpp_spectra_py" + suffix))
    sys.path.insert(0, str(tmp))
    import kpp_spectra_py

    return kpp_spectra_py


def check(label: str, got: float, want: float, tol: float) -> None:
    ok = abs(got - want) <= tol
    print(f"  {label:<28} got {got:+.8f}  want {want:+.8f}  {'ok' if ok else 'FAIL'}")
    if not ok:
        sys.exit(f"smoke test failed: {label}")


def main() -> None:
    kpp = import_module()
    print(f"kpp_spectra_py {kpp.__version__} loaded")

    adv = kpp.Model(str(ROOT / "models" / "scalar-advection.json"))
    print(f"{adv!r}: dim={adv.dim}, T={adv.period_t}, L={adv.periods_l}")
    adv.validate()

    print("scalar-advection (d=1, q=1, r=1/8):")
    check("lambda_prime", adv.lambda_prime(), -0.125, 1e-3)
    l1, z_max = adv.lambda_max()
    check("lambda_max", l1, 0.125, 1e-3)
    check("z_max[0]", z_max[0], 0.5, 1e-3)
    # dispersion relation lambda(z) = q z - d z^2 - r at a few shifts
    for z in (-0.5, 0.25, 1.0):
        check(f"eig(z={z})", adv.eig([z]), z - z * z - 0.125, 1e-3)
    assert adv.classify() == "Conditional", "expected a conditional regime"

    hom = kpp.Model(str(ROOT / "models" / "scalar-homogeneous.json"))
    print("scalar-homogeneous (d=1, q=0, r=1):")
    c, mu = hom.critical_speed([1.0])
    check("c*", c, 2.0, 0.02)
    check("mu*", mu, 1.0, 0.05)
    check("fg_speed", hom.fg_speed([1.0]), 2.0, 0.02)
    check("speed_at_decay(mu=2)", hom.speed_at_decay([1.0], 2.0), 2.5, 0.02)
    assert hom.classify() == "Persistence", "expected persistence"

    bad = kpp.Model(str(ROOT / "models" / "reducible.json"))
    try:
        bad.validate()
    except ValueError as e:
        assert "irreducibility" in str(e), f"unexpected message: {e}"
        print(f"reducible model rejected as expected: {e}")
    else:
        sys.exit("smoke test failed: reducible model passed validation")

    try:
        adv.eig([0.1, 0.2])
    except ValueError:
        print("dimension mismatch rejected as expected")
    else:
        sys.exit("smoke test failed: wrong-dimension shift accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
