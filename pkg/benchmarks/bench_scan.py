"""Compare the compiled and pure-Python delimiter scanners, and time full analysis.

    python3 benchmarks/bench_scan.py [--repeat N]
"""
from __future__ import annotations

import argparse
import random
import timeit
from importlib import resources

from mechforge import _scan_py, scanner
from mechforge.validator import analyze

try:
    from mechforge import _scan
except ImportError:  # extension not built
    _scan = None


def synthetic_script(n_funcs: int, seed: int = 0) -> str:
    rng = random.Random(seed)
    parts = []
    for i in range(n_funcs):
        s = rng.choice(["'}'", '"({["', "`a ${i} b`", "/[)]/g", "'x'"])
        parts.append(
            f"function f{i}(a, b) {{ // }} ) ]\n  const s = {s}; let q = [a, b];\n"
            f"  /* {{ ( */ if (a > b) {{ q.push(a / 2); }}\n  return q.length + {i};\n}}\n"
        )
    return "".join(parts)


def bench(label: str, fn, text: str, repeat: int) -> float:
    best = min(timeit.repeat(lambda: fn(text), number=1, repeat=repeat))
    print(f"  {label:<10} {best * 1e3:9.3f} ms   {len(text) / best / 1e6:8.2f} Mchar/s")
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"default backend: {scanner.BACKEND}")
    for n in (50, 500, 5000):
        text = synthetic_script(n)
        print(f"script of {len(text)} chars")
        py = bench("python", _scan_py.scan, text, args.repeat)
        if _scan is not None:
            assert _scan.scan(text) == _scan_py.scan(text)
            cy = bench("cython", _scan.scan, text, args.repeat)
            print(f"  speedup    {py / cy:9.1f}x")
    demo = resources.files("mechforge").joinpath("data/demo_game.html").read_text(encoding="utf-8")
    t = min(timeit.repeat(lambda: analyze(demo), number=20, repeat=args.repeat)) / 20
    print(f"analyze(demo game, {len(demo)} chars): {t * 1e3:.3f} ms")


if __name__ == "__main__":
    main()
