"""Explanation reports: canonical JSON that round-trips byte-for-byte.

Keys are sorted and floats use Python's shortest round-trip repr, so
``write(read(write(x)))`` is the identity on bytes and two runs with the same
inputs produce identical files.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .csearch import NotFound
from .pn import PNResult
from .pp import PPResult


def _plain(obj):
    """Recursively convert numpy scalars/arrays so json can serialize them."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)) and not isinstance(obj, bool):
        return int(obj)
    return obj


def canonical_dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=1, ensure_ascii=True) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(canonical_dumps(obj), encoding="ascii")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="ascii"))


def bundle_sha256(bundle_dir) -> str:
    """Digest over the bundle's files (sorted by name): identity of the model."""
    bundle_dir = Path(bundle_dir)
    h = hashlib.sha256()
    for p in sorted(f for f in bundle_dir.iterdir() if f.is_file()):
        h.update(p.name.encode("utf-8"))
        h.update(b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()


def pn_entry(result: PNResult | NotFound, attr_delta=lambda d: d) -> dict:
    """Serializable per-image record for a latent-side explanation."""
    if isinstance(result, NotFound):
        return {
            "status": "not_found",
            "reason": result.reason,
            "c_schedule": list(result.c_schedule),
            "diverged_rounds": list(result.diverged_rounds),
        }
    return {
        "status": "found",
        "predicted_class": result.predicted_class,
        "margin": result.margin,
        "z": result.z,
        "z_original": result.z_original,
        "added_attributes": [
            {"name": d.name, "before": d.before, "after": d.after} for d in result.added_attributes
        ],
        "violated_attributes": [
            {"name": d.name, "before": d.before, "after": d.after}
            for d in result.violated_attributes
        ],
        "objective_terms": list(result.objective_terms),
        "objective_total": result.objective_total,
        "iterate_index": result.iterate_index,
        "round_index": result.round_index,
        "c_at_success": result.c_at_success,
        "c_schedule": list(result.c_schedule),
        "objective_trace": result.objective_trace,
        "t0": result.t0,
        "diverged_rounds": list(result.diverged_rounds),
    }


def pp_entry(result: PPResult | NotFound) -> dict:
    """Serializable per-image record for a superpixel-side explanation."""
    if isinstance(result, NotFound):
        return {
            "status": "not_found",
            "reason": result.reason,
            "c_schedule": list(result.c_schedule),
        }
    return {
        "status": "found",
        "predicted_class": result.predicted_class,
        "margin": result.margin,
        "selected": list(result.selected),
        "n_selected": len(result.selected),
        "mask": result.mask,
        "relaxed_mask": result.relaxed_mask,
        "score_trace": result.score_trace,
        "c_at_success": result.c_at_success,
        "ista_margin_reached": result.ista_margin_reached,
        "objective_terms": list(result.objective_terms),
        "objective_total": result.objective_total,
        "t0": result.t0,
        "c_schedule": list(result.c_schedule),
    }
