"""Run artifact writing: CSV snapshots, diagnostics, event logs, manifest.

Every artifact except the manifest is byte-deterministic for a given
config and seed: floats are serialized with shortest round-trip repr and
JSON keys are sorted. The manifest carries the only timestamp and is
written atomically (temp file + rename) so a crashed run never leaves a
half manifest behind.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from pathlib import Path

from .diagnostics import Trajectory

_VERSION = "0.1.0"


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _csv_text(header: list, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def snapshot_csv(state, forward: bool) -> str:
    """One sampled time as CSV: node, potential, density/load, mortality.

    Finite-scale columns are (x, phi, density, mortality); limit-model
    snapshots carry the competitive load where the density would be, since
    the limit density is a singular measure (written separately).
    """
    g = state.grid
    header = ["x", "phi", "density" if forward else "load", "mortality"]
    mid = state.u if forward else state.comp_load
    rows = [[float(g.x[i]), float(state.phi[i]), float(mid[i]),
             float(state.mortality[i])] for i in range(g.n)]
    return _csv_text(header, rows)


def measures_csv(traj: Trajectory) -> str:
    """Atom rows (t, x, weight) of the sampled singular measures."""
    rows = []
    for _, rec in traj.samples:
        for x, w in zip(rec.atoms.xs, rec.atoms.weights):
            rows.append([float(rec.t), float(x), float(w)])
    return _csv_text(["t", "x", "weight"], rows)


def diagnostics_csv(traj: Trajectory) -> str:
    header = ["t", "mass", "max_phi", "lipschitz", "min_second_diff",
              "min_jump_functional", "dissipation_cum", "level_lo",
              "level_hi", "component_count", "n_atoms", "reanchor", "flags"]
    rows = []
    for _, rec in traj.samples:
        idx = rec.level_mask.indices
        g = rec.level_mask.grid
        lo = float(g.x[idx[0]]) if idx.size else float("nan")
        hi = float(g.x[idx[-1]]) if idx.size else float("nan")
        rows.append([float(rec.t), rec.mass, rec.max_phi, rec.lipschitz,
                     rec.min_second_diff, rec.min_jump_functional,
                     rec.dissipation_cum, lo, hi, rec.component_count,
                     rec.atoms.n_atoms, rec.reanchor, "|".join(rec.flags)])
    return _csv_text(header, rows)


def events_jsonl(events: list) -> str:
    return "".join(json.dumps(ev, sort_keys=True) + "\n" for ev in events)


def write_trajectory(outdir: Path, traj: Trajectory) -> dict:
    """Write the standard artifact set for one run; returns name -> sha256.

    Layout: snapshots/sample_NNNN.csv (one per sampled time, in sample
    order; row NNNN of diagnostics.csv gives its time), diagnostics.csv,
    events.jsonl, and measures.csv for limit runs.
    """
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "snapshots").mkdir(exist_ok=True)
    forward = traj.kind == "forward"
    files = {
        "diagnostics.csv": diagnostics_csv(traj),
        "events.jsonl": events_jsonl(traj.events),
    }
    for k, (state, _) in enumerate(traj.samples):
        files[f"snapshots/sample_{k:04d}.csv"] = snapshot_csv(state, forward)
    if traj.kind == "limit":
        files["measures.csv"] = measures_csv(traj)
    digests = {}
    for name, text in files.items():
        write_text(outdir / name, text)
        digests[name] = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return digests


def write_json(outdir: Path, name: str, obj) -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    text = json_text(obj)
    write_text(outdir / name, text)
    return {name: hashlib.sha256(text.encode("utf-8")).hexdigest()}


def write_csv(outdir: Path, name: str, header: list, rows) -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    text = _csv_text(header, rows)
    write_text(outdir / name, text)
    return {name: hashlib.sha256(text.encode("utf-8")).hexdigest()}


def write_manifest(outdir: Path, command: str, source: str, digest: str,
                   seed: int, files: dict, failure: str | None = None) -> None:
    manifest = {
        "command": command,
        "config_source": source,
        "config_sha256": digest,
        "seed": seed,
        "version": _VERSION,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "files": dict(sorted(files.items())),
    }
    if failure is not None:
        manifest["failure"] = failure
    write_text(Path(outdir) / "manifest.json", json_text(manifest))
