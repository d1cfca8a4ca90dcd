"""Regenerate tests/data/oracle_values.json from the brute-force references.

Run from the repository root: ``python tests/freeze_oracles.py``. The file is
committed; tests compare the package against these frozen numbers.
"""

import json
import logging
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))
from helpers import random_db, ref_entropy_gain, ref_fk_edge_count, ref_knn, ref_mi, ref_path_counts  # noqa: E402

ATTRS = [("parent", 2), ("parent", 3), ("child", 3), ("child", 4)]


def main():
    logging.disable(logging.WARNING)
    out = {"mi": [], "entropy": [], "path": [], "edges": [], "knn": []}
    for seed in range(12):
        db = random_db(np.random.default_rng(1000 + seed), max_rows=25)
        out["edges"].append({"seed": 1000 + seed, "fk_edges": ref_fk_edge_count(db)})
        for rel, pos in ATTRS:
            row = {"seed": 1000 + seed, "relation": rel, "position": pos}
            out["mi"].append({**row, "value": ref_mi(db, rel, pos)})
            out["path"].append({**row, "counts": list(ref_path_counts(db, rel, pos))})
            for d in (1, 2):
                out["entropy"].append({**row, "d": d, "value": ref_entropy_gain(db, rel, pos, d)})
    for seed in range(4):
        x = np.random.default_rng(2000 + seed).integers(0, 3, size=(30, 3)).astype(float)
        out["knn"].append({"seed": 2000 + seed, "k": 3, "edges": sorted(list(e) for e in ref_knn(x, 3))})
    path = Path(__file__).parent / "data" / "oracle_values.json"
    path.write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
