#!/usr/bin/env python3
# Copyright 2026 The GCDM-CPP Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Converts a directory of single-molecule XYZ files into the internal
molecule text format (see docs/formats.md).

Molecules containing elements outside H, C, N, O, F are skipped and counted.
Charges are written as atomic numbers.

    tools/import_xyz_corpus.py --prefix qm7_ path/to/qm7 data/qm7_hcno.mol
"""

import argparse
import pathlib
import sys

ATOMIC_NUMBER = {"H": 1, "C": 6, "N": 7, "O": 8, "F": 9}


def read_xyz(path):
    lines = path.read_text().splitlines()
    count = int(lines[0].split()[0])
    atoms = []
    for line in lines[2:2 + count]:
        parts = line.split()
        atoms.append((parts[0], [float(v) for v in parts[1:4]]))
    return atoms


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("xyz_dir", type=pathlib.Path)
    parser.add_argument("output", type=pathlib.Path)
    parser.add_argument("--prefix", default="")
    args = parser.parse_args()

    written = skipped = 0
    with args.output.open("w") as out:
        for path in sorted(args.xyz_dir.glob("*.xyz")):
            atoms = read_xyz(path)
            if any(element not in ATOMIC_NUMBER for element, _ in atoms):
                skipped += 1
                continue
            if written:
                out.write("\n")
            out.write(f"# {args.prefix}{path.stem}\n")
            for element, (x, y, z) in atoms:
                out.write(f"{element} {x:.6f} {y:.6f} {z:.6f} "
                          f"{ATOMIC_NUMBER[element]}\n")
            written += 1
    print(f"wrote {written} molecules, skipped {skipped}", file=sys.stderr)


if __name__ == "__main__":
    main()
