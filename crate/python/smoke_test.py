#!/usr/bin/env python3
"""Build the extension module with cargo and exercise it from Python."""

import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"


def build(dest):
    subprocess.run(["cargo", "build", "-p", "benfordkit-python"], cwd=ROOT, check=True)
    suffix = {"darwin": "dylib", "win32": "dll"}.get(sys.platform, "so")
    prefix = "" if sys.platform == "win32" else "lib"
    built = ROOT / "target" / "debug" / f"{prefix}benfordkit_py.{suffix}"
    target = dest / ("benfordkit_py.pyd" if sys.platform == "win32" else "benfordkit_py.so")
    shutil.copy(built, target)
    sys.path.insert(0, str(dest))


def main():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        build(tmp)
        import benfordkit_py as bk

        table = [round(100 * bk.benford_first(k), 1) for k in range(1, 10)]
        assert table == [30.1, 17.6, 12.5, 9.7, 7.9, 6.7, 5.8, 5.1, 4.6], table

        counts = bk.tally_digits([2 ** t for t in range(500)], "first")
        assert counts.n == 500
        test = bk.mc_gof_test(counts.counts, "first", 999, 1)
        assert test.p_raw > 0.05, test

        intervals = bk.sison_glaz_intervals(counts.counts, 0.95)
        assert all(lo <= p <= hi for lo, p, hi in zip(intervals.lower, counts.proportions(), intervals.upper))

        report = json.loads(bk.run_study(
            str(FIXTURES / "study.toml"),
            [str(FIXTURES / f"{g}.csv") for g in ("china", "canada", "usa", "france")],
            replications=199,
            out_dir=str(tmp / "bundle"),
            format="csv-bundle",
        ))
        assert len(report["gof_results"]["tests"]) == 32
        assert len(list((tmp / "bundle").glob("*.csv"))) == 7

        try:
            bk.bonferroni_level(0.05, 0)
        except ValueError:
            pass
        else:
            raise AssertionError("bonferroni_level accepted zero families")

        smallest = min(t["p_raw"] for t in report["gof_results"]["tests"])
        print(f"smoke test passed: 32 GOF tests, smallest p_raw {smallest:.4f}")


if __name__ == "__main__":
    main()
