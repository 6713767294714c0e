"""Smoke test for the `dnas` extension module.

Build the shared library first, then run this script:

    cargo build -p dnas-py
    python3 python/smoke_test.py
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def import_dnas():
    outdir = ROOT / "target" / "debug"
    built = next(outdir.glob("libdnas.so"), None) or next(outdir.glob("libdnas.dylib"), None)
    if built is None:
        sys.exit("build the extension first: cargo build -p dnas-py")
    staged = Path(tempfile.mkdtemp()) / "dnas.so"
    shutil.copy(built, staged)
    sys.path.insert(0, str(staged.parent))
    import dnas

    return dnas


def main():
    dnas = import_dnas()

    # metrics
    a = [0.5] * 48
    b = [0.6] * 48
    p = dnas.psnr(a, b, 1.0)
    assert abs(p - 20.0) < 1e-9, p
    assert dnas.psnr(a, a) == math.inf
    s = dnas.ssim([i / 255 for i in range(256)], [i / 255 for i in range(256)], 1, 16, 16)
    assert s == 1.0, s

    # noise is deterministic per seed and has roughly the right scale
    clean = [0.5] * 4096
    noisy = dnas.add_gaussian_noise(clean, 25.0, 7)
    assert noisy == dnas.add_gaussian_noise(clean, 25.0, 7)
    std = (sum((x - 0.5) ** 2 for x in noisy) / len(noisy)) ** 0.5
    assert abs(std - 25 / 255) < 0.01, std

    # cost model: the cheap conv alternative undercuts the full block
    alt3_macs, alt3_params = dnas.block_cost("1xalt3", 32, 64, 64)
    alt0_macs, alt0_params = dnas.block_cost("1xalt0", 32, 64, 64)
    assert alt3_macs < alt0_macs and alt3_params < alt0_params
    m2, _ = dnas.block_cost("2xalt3", 32, 64, 64)
    assert m2 == 2 * alt3_macs

    # pareto front drops dominated points, keeps the frontier
    front = dnas.pareto(
        [("a", 40.0, 140.0), ("b", 43.4, 65.0), ("c", 43.1, 42.0), ("d", 39.0, 90.0)]
    )
    assert sorted(x[0] for x in front) == ["b", "c"], front

    # geometric schedule endpoints
    assert abs(dnas.lambda_schedule(0.01, 1.0, 0, 5) - 0.01) < 1e-12
    assert abs(dnas.lambda_schedule(0.01, 1.0, 4, 5) - 1.0) < 1e-12

    # a small network at identity init returns its input
    net = dnas.Network(4, 1, {"enc4": "1xalt3", "mid": "1xalt0"}, seed=3)
    assert net.stages()["enc4"] == "1xalt3"
    assert net.gmacs(64, 64) > 0 and net.param_count() > 0
    img = [(i % 7) / 10 for i in range(32 * 32)]
    out = net.denoise(img, 32, 32)
    assert len(out) == len(img)
    assert max(abs(x - y) for x, y in zip(out, img)) < 1e-9

    # parameter round-trip
    with tempfile.TemporaryDirectory() as d:
        path = str(Path(d) / "net.params")
        net.save_params(path)
        net2 = dnas.Network(4, 1, {"enc4": "1xalt3", "mid": "1xalt0"}, seed=99)
        net2.load_params(path)
        assert net2.denoise(img, 32, 32) == out

    print("smoke test passed")


if __name__ == "__main__":
    main()
