"""Writes a sidecar-style embedding directory: float32 unit vectors of
dimension 512 serialized at single-precision round-trip, with a duplicated
image under two ids. Deterministic (fixed seed)."""
import json
import pathlib

import numpy as np

OUT = pathlib.Path(__file__).parent / "sidecar"
LABELS = ["healthy", "black-rot", "rust", "scab"]


def main():
    rng = np.random.default_rng(512)
    OUT.mkdir(exist_ok=True)
    rows = []
    for i in range(11):
        v = rng.standard_normal(512).astype(np.float32)
        v /= np.linalg.norm(v).astype(np.float32)
        rows.append((f"train-{i:03d}", LABELS[i % 4], v))
    # same image file embedded under a second id
    rows.append(("train-011", rows[0][1], rows[0][2].copy()))
    with open(OUT / "embeddings.jsonl", "w", newline="\n") as f:
        for rid, label, v in rows:
            rec = {
                "id": rid,
                "label": label,
                "vector": [float(str(np.float32(x))) for x in v],
                "meta": {"source": f"images/{label}/{rid}.jpg"},
            }
            f.write(json.dumps(rec) + "\n")
    manifest = {
        "dim": 512,
        "count": len(rows),
        "normalized": True,
        "format_version": 1,
        "model": "clip-vit-b-32",
    }
    (OUT / "embeddings.manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


if __name__ == "__main__":
    main()
