"""Convert the classic Cora citation dataset into the package's file formats.

The raw ``cora.content`` / ``cora.cites`` pair ships inside the ``pgl`` wheel on
PyPI, which is the only source reachable from an offline-ish build box.  Usage::

    pip download --no-deps -d /tmp/pgl pgl==2.2.6
    python scripts/prepare_cora.py /tmp/pgl/pgl-2.2.6-*.whl data/cora

Writes ``edges.tsv`` (0-based, one citation per line, raw order), ``features.csv.gz``
(binary bag-of-words rows) and ``labels.csv`` (``node_id,label``).
"""

import argparse
import gzip
import zipfile
from pathlib import Path


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("wheel", type=Path)
    parser.add_argument("out", type=Path)
    args = parser.parse_args()

    with zipfile.ZipFile(args.wheel) as zf:
        content = zf.read("pgl/data/cora/cora.content").decode().splitlines()
        cites = zf.read("pgl/data/cora/cora.cites").decode().splitlines()

    ids: dict[str, int] = {}
    rows, names = [], []
    for line in content:
        parts = line.split()
        ids[parts[0]] = len(ids)
        rows.append(parts[1:-1])
        names.append(parts[-1])
    classes = sorted(set(names))

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "edges.tsv", "w") as fh:
        fh.write("# Cora citation graph: cited<TAB>citing, ids remapped to 0-based\n")
        for line in cites:
            a, b = line.split()
            fh.write(f"{ids[a]}\t{ids[b]}\n")
    with gzip.open(args.out / "features.csv.gz", "wt") as fh:
        for row in rows:
            fh.write(",".join(row) + "\n")
    with open(args.out / "labels.csv", "w") as fh:
        for i, name in enumerate(names):
            fh.write(f"{i},{classes.index(name)}\n")
    with open(args.out / "classes.txt", "w") as fh:
        fh.write("\n".join(classes) + "\n")


if __name__ == "__main__":
    main()
