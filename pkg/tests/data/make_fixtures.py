"""
Regenerate the CSV fixtures and the golden report in this directory.

    python3 tests/data/make_fixtures.py

The golden report must only be refreshed after the planted-window checks in
tests/test_multiscan.py pass against the permutation oracle.
"""

import csv
from pathlib import Path

from multicmh.cli import main
from multicmh.simbench import gen_planted_window, make_rng

HERE = Path(__file__).parent
PLANTED_SEED = 11


def write_dataset(path, data):
    names = ["x", "y"] + [f"z{j + 1}" for j in range(data.d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(names)
        for i in range(data.n):
            row = [data.x[i], data.y[i], *data.z[i]]
            wr.writerow([format(float(v), ".17g") for v in row])


def write_cmh_fixture(path):
    # two strata along z, each holding cells (3, 0, 0, 3)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["x", "y", "z"])
        for s in range(2):
            for k in range(6):
                xy = 0 if k < 3 else 1
                wr.writerow([xy, xy, s * 6 + k + 1])


if __name__ == "__main__":
    data = gen_planted_window(200, 3, make_rng(PLANTED_SEED))
    write_dataset(HERE / "planted_window.csv", data)
    write_cmh_fixture(HERE / "two_strata.csv")
    main(["test", "--input", str(HERE / "planted_window.csv"), "--x", "x",
          "--y", "y", "--z", "z1,z2,z3",
          "--out", str(HERE / "planted_window_report.json")])
