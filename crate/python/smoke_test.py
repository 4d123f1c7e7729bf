"""Smoke test for the Python bindings.

Build the extension first:

    cargo build --release -p phimaps-py --features extension-module
    cp target/release/libphimaps_py.so python/phimaps.so
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import phimaps  # noqa: E402


def close(a, b, rel):
    return abs(a - b) <= rel * max(abs(b), 1e-300)


def main():
    s2 = phimaps.Grid(model="round_sphere", dim=2, nodes=32)
    target = phimaps.Target(kind="sphere", dim=2)
    identity = phimaps.Map(s2, target, kind="identity")
    e = identity.energy()
    assert close(e, 4.0 * math.pi / 3.0, 1e-3), e
    print(f"S2 identity energy {e:.6f}")

    torus = phimaps.Grid(model="flat_torus", dim=2, nodes=24)
    wave = phimaps.Map(torus, target, seed=7, kind="wave", base=[0.0, 0.0, 1.0], modes=3, max_freq=2)
    weak = wave.first_variation(2)
    fd, fd_err = wave.first_variation_fd(2)
    assert close(weak, fd, 1e-3), (weak, fd, fd_err)
    sym = abs(wave.second_variation(0, 1) - wave.second_variation(1, 0))
    assert sym <= 1e-8 * max(1.0, abs(wave.second_variation(0, 1))), sym
    print(f"first variation {weak:.6e} vs finite difference {fd:.6e}")

    _, trace = wave.gradient_flow(max_steps=20)
    assert trace["energies"][-1] < trace["energies"][0]
    print(f"gradient flow {trace['energies'][0]:.4f} -> {trace['energies'][-1]:.4f}")

    assert phimaps.sphere_is_ssu(7) and not phimaps.sphere_is_ssu(6)
    assert phimaps.hypersurface_is_ssu([1.0] * 7)
    assert phimaps.lambda_constant(7, profile="flat") == 1.0

    great = phimaps.Map(phimaps.Grid(model="round_sphere", dim=2, nodes=24),
                        phimaps.Target(kind="sphere", dim=7), kind="identity")
    report = great.average_variation_into_ssu()
    assert report["total"] < 0 and report["within_bound"], report
    print(f"average variation of great S2 in S7: {report['total']:.4f}")

    _, shrink = great.homotopy_shrink(iterations=3)
    assert all(r < 1.0 for r in shrink["ratios"]), shrink["ratios"]

    suite = phimaps.verify_suite("quick")
    assert suite["pass"], [c["name"] for c in suite["checks"] if not c["pass"]]
    mutated = phimaps.verify_suite("quick", "flip_tension")
    assert not mutated["pass"]
    print(f"quick suite: {len(suite['checks'])} checks pass")
    print("smoke test passed")


if __name__ == "__main__":
    main()
