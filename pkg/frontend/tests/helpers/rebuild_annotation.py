"""Rebuild an annotation NIfTI volume from a session's stored RLE documents.

Usage: rebuild_annotation.py STORE_DIR SESSION_ID MASK_PATH OUT_PATH

Lets the integration test hand the exact server-side annotation state to
the batch CLI for a digit-for-digit score comparison.
"""

import json
import sys
from pathlib import Path

import numpy as np

from apl.annotation import ANNOTATION_PALETTE, from_wire, merge_category_masks
from apl.nifti import LabelVolume, read_labels, write_volume


def main() -> int:
    store, session_id, mask_path, out_path = sys.argv[1:5]
    session_dir = Path(store) / "sessions" / session_id
    session = json.loads((session_dir / "session.json").read_text())
    nx, ny, nz = session["dims"]
    mask = read_labels(mask_path)
    ann = np.zeros((nx, ny, nz), dtype=np.uint8)
    for z in session["plan"]["slices"]:
        doc_path = session_dir / f"annotation_z{z:04d}.json"
        if not doc_path.exists():
            continue
        doc = json.loads(doc_path.read_text())
        per_cat = {m.category: m for m in map(from_wire, doc["rles"])}
        ann[:, :, z] = merge_category_masks(per_cat, dims=(nx, ny))
    write_volume(LabelVolume(mask.geometry, ann, palette=dict(ANNOTATION_PALETTE)), out_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
