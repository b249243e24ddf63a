"""Results CSVs, run manifests and consolidation across run directories.

A run directory holds ``manifest.json`` and ``results.csv`` (plus whatever the
command produced, e.g. checkpoints). Every file is written to a temporary
name and renamed into place, so readers never see partial outputs.
"""
import csv
import hashlib
import io
import json
import os
from pathlib import Path

from semiproto import __version__
from semiproto.train import aggregate

COLUMNS = ("run_id", "variant", "mode", "N", "K", "M_train", "M_test", "H", "split_seed", "accuracy", "stderr")
MANIFEST = "manifest.json"
RESULTS = "results.csv"
# Manifest fields that legitimately differ between reruns.
VOLATILE = ("wall_time", "status")


def atomic_write(path, data):
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    if isinstance(data, str):
        data = data.encode()
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return path


def format_value(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def results_csv_text(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow([format_value(row[c]) for c in COLUMNS])
    return buf.getvalue()


def write_results(path, rows):
    return atomic_write(path, results_csv_text(rows))


def read_results(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ValueError(f"{path}: columns {reader.fieldnames} do not match the results schema")
        return [_typed(row) for row in reader]


def _typed(row):
    out = dict(row)
    for key in ("N", "K", "M_train", "M_test", "H"):
        out[key] = int(out[key])
    out["split_seed"] = out["split_seed"] if out["split_seed"] == "all" else int(out["split_seed"])
    out["accuracy"] = float(out["accuracy"])
    out["stderr"] = float(out["stderr"])
    return out


def run_id_for(command, config_hash, extra=""):
    """Deterministic run id from the command, the config hash and command arguments."""
    digest = hashlib.sha256(f"{command}|{config_hash}|{extra}".encode()).hexdigest()
    return f"{command}-{digest[:12]}"


def manifest_doc(run_id, command, config, status, wall_time=None, **extra):
    doc = {
        "run_id": run_id,
        "command": command,
        "version": f"semiproto {__version__}",
        "rng": "numpy PCG64, seeded from integer tuples",
        "config_hash": config.config_hash(),
        "config": config.to_dict(),
        "status": status,
        "wall_time": wall_time,
    }
    doc.update(extra)
    return doc


def write_manifest(run_dir, doc):
    return atomic_write(Path(run_dir) / MANIFEST, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(run_dir):
    return json.loads((Path(run_dir) / MANIFEST).read_text())


def stable_manifest(doc):
    """The manifest without fields allowed to differ between identical reruns."""
    return {k: v for k, v in doc.items() if k not in VOLATILE}


class ExportConflict(ValueError):
    def __init__(self, message, run_ids):
        super().__init__(message)
        self.run_ids = run_ids


def _group_key(row):
    return tuple(row[c] for c in ("run_id", "variant", "mode", "N", "K", "M_train", "M_test", "H"))


def reaggregate(rows):
    """Per-split rows plus aggregate rows recomputed from them, in stable order."""
    groups = {}
    for row in rows:
        if row["split_seed"] == "all":
            continue
        groups.setdefault(_group_key(row), []).append(row)
    out = []
    for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
        members = sorted(groups[key], key=lambda r: r["split_seed"])
        out.extend(members)
        mean, stderr = aggregate([r["accuracy"] for r in members])
        out.append({**members[0], "split_seed": "all", "accuracy": mean, "stderr": stderr})
    return out


def collect_runs(root):
    """Find run directories below ``root`` (including ``root`` itself)."""
    root = Path(root)
    return sorted({p.parent for p in root.rglob(MANIFEST)})


def export(root):
    """Consolidated rows over every run under ``root``.

    Runs sharing a run id must have identical stable manifests, otherwise
    ``ExportConflict`` lists the offending ids.
    """
    seen, rows, conflicts = {}, [], set()
    for run_dir in collect_runs(root):
        doc = read_manifest(run_dir)
        rid = doc.get("run_id", run_dir.name)
        stable = stable_manifest(doc)
        if rid in seen:
            if seen[rid] != stable:
                conflicts.add(rid)
            continue
        seen[rid] = stable
        if (run_dir / RESULTS).exists():
            rows.extend(read_results(run_dir / RESULTS))
    if conflicts:
        ids = sorted(conflicts)
        raise ExportConflict(f"conflicting manifests for run ids: {', '.join(ids)}", ids)
    return reaggregate(rows)
