"""Per-pass mean temporal error of the multi-pass algorithm on a panning sequence."""
import argparse
import time

from vidstyle.multipass import MultiPassConfig, run_multipass
from vidstyle.synthdata import generate_sequence, make_texture


def build(seed=0, frames=5, size=(64, 64)):
    src = make_texture(128, 160, seed=seed + 20)
    return generate_sequence(src, frames=frames, size=size, max_zoom=0,
                             shifts=[(3, 0)] * (frames - 1))


def run(seed=0, workers=1, passes=10, iterations=100):
    seq = build(seed)
    style = make_texture(64, 64, seed=99, min_wavelength=6, max_wavelength=16)
    cfg = MultiPassConfig(passes=passes, iterations_per_pass=iterations, seed=seed)
    return run_multipass(seq, style, cfg, workers=workers)


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    a = ap.parse_args()
    t = time.time()
    res = run(a.seed, a.workers)
    for j, (d, e) in enumerate(zip(res.directions, res.pass_errors), 1):
        print(f"pass {j:2d} {d:11s} {e:.6f}")
    print(f"{time.time() - t:.0f}s")
