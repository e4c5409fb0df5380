"""Smoke test for the Python extension.

Build and stage the module first:

    cargo build --release -p cns-floquet-py --features extension-module
    cp target/release/libcns_floquet_py.so python/cns_floquet.so
"""

import cmath
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import cns_floquet as cf  # noqa: E402


def main():
    print("cns_floquet", cf.__version__)

    mean, grad, k0 = cf.stokes_constant(10.0, 10.0, 40.0)
    assert abs(k0 - 1.0 / 12.0) < 1e-10, k0
    assert abs(mean - grad) < 1e-8 * mean
    print(f"stokes constant {mean:.6f} (kappa0 = {k0:.6f})")

    ev = cf.rest_exponents(0.0)
    assert abs(ev[0]) < 1e-9
    # slowest nonzero rest mode is the diffusive density mode at |k| = alpha
    assert abs(ev[1].real - 0.2**2 * mean) < 0.01 * ev[1].real
    print(f"slowest rest exponents {ev[0]:.3e}, {ev[1]:.6f}")

    cfg = cf.Config.desk(0.0)
    assert cf.Config.from_toml(cfg.to_toml()).config_hash() == cfg.config_hash()
    with tempfile.TemporaryDirectory() as out:
        study = cf.Study(cfg, out)
        st = study.state()
        assert st["min_rho"] == 1.0
        mus = study.multipliers([[0.0]])[0]
        assert abs(mus[0] - 1.0) < 1e-9
        assert abs(mus[1]) < math.exp(-0.5)
        print(f"leading multipliers {mus[0]:.12f}, |mu2| = {abs(mus[1]):.6f}")
        c = study.coeffs()
        assert abs(c["a_matrix"][0][0] - mean) < 1e-8 * mean
        print(f"A = {c['a_matrix'][0][0]:.6f} ({c['convention']} convention)")
        print("log of leading multiplier", cmath.log(mus[0]))
    print("ok")


if __name__ == "__main__":
    main()
