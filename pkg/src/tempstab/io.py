"""On-disk formats.

Arrays are stored as raw little-endian float64 blobs next to a JSON
manifest that records each array's blob file, byte offset and shape.
Sequences, model checkpoints and stabilizer checkpoints all use this
scheme; reports are CSV or JSON.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .models import Module, build_model, parameter_hash
from .signals import VideoSequence

FORMAT_VERSION = 1
DTYPE = "<f8"


def _stem(path):
    path = Path(path)
    return path.with_suffix("") if path.suffix == ".json" else path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _clean(o):
    """Replace non-finite floats by strings so the JSON stays standard."""
    if isinstance(o, float) and not math.isfinite(o):
        return "inf" if o > 0 else ("-inf" if o < 0 else "nan")
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def write_json(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_clean(json.loads(json.dumps(obj, default=_json_default))), indent=2)
    path.write_text(text + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def write_csv(rows, path, columns=None):
    """Rows of dicts to CSV; columns default to the union in first-seen order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = []
        for r in rows:
            columns += [k for k in r if k not in columns]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in columns})
    return path


def read_csv(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_matrix_csv(matrix, path, row_labels=None, col_labels=None):
    """A 2-D array as CSV, with an optional header row and label column."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        if col_labels is not None:
            w.writerow([""] + [repr(float(c)) for c in col_labels])
        for i, row in enumerate(np.asarray(matrix)):
            vals = [repr(float(v)) for v in row]
            w.writerow(([repr(float(row_labels[i]))] if row_labels is not None else []) + vals)
    return path


# -- array bundles -----------------------------------------------------------------

def save_arrays(path, arrays, kind, **fields):
    """Write ``arrays`` (name -> ndarray) into ``<stem>.bin`` plus ``<stem>.json``.

    Returns the manifest path.
    """
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    blob = stem.with_suffix(".bin")
    entries = {}
    offset = 0
    with blob.open("wb") as fh:
        for name, arr in arrays.items():
            data = np.ascontiguousarray(np.asarray(arr, dtype=np.float64)).astype(DTYPE, copy=False)
            fh.write(data.tobytes())
            entries[name] = {"offset": offset, "shape": list(data.shape)}
            offset += data.nbytes
    manifest = {"format": f"tempstab-{kind}", "version": FORMAT_VERSION, "dtype": DTYPE,
                "blob": blob.name, "arrays": entries}
    manifest.update(fields)
    return write_json(manifest, stem.with_suffix(".json"))


def load_arrays(path, kind=None):
    """Read a manifest and its blob; returns ``(manifest, arrays)``."""
    mpath = _stem(path).with_suffix(".json")
    manifest = read_json(mpath)
    fmt = manifest.get("format", "")
    if kind is not None and fmt != f"tempstab-{kind}":
        raise ValueError(f"{mpath}: expected a {kind} manifest, found {fmt!r}")
    if manifest.get("version") != FORMAT_VERSION:
        raise ValueError(f"{mpath}: unsupported format version {manifest.get('version')}")
    raw = (mpath.parent / manifest["blob"]).read_bytes()
    arrays = {}
    for name, e in manifest["arrays"].items():
        n = int(np.prod(e["shape"], dtype=np.int64))
        end = e["offset"] + 8 * n
        if end > len(raw):
            raise ValueError(f"{mpath}: blob too short for array {name!r}")
        arrays[name] = np.frombuffer(raw, dtype=DTYPE, count=n, offset=e["offset"]) \
            .reshape(e["shape"]).astype(np.float64)
    return manifest, arrays


def save_array(path, arr, **fields):
    return save_arrays(path, {"data": arr}, "array", **fields)


def load_array(path):
    """A single array from our manifest format or from a ``.npy`` file."""
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path).astype(np.float64)
    return load_arrays(path, "array")[1]["data"]


# -- sequences --------------------------------------------------------------------

def save_sequence(seq, path):
    return save_arrays(path, {"frames": seq.frames, "targets": seq.targets}, "sequence",
                       fps_hint=seq.fps_hint, meta=seq.meta)


def load_sequence(path):
    manifest, arrays = load_arrays(path, "sequence")
    return VideoSequence(arrays["frames"], arrays["targets"], manifest.get("fps_hint", 30.0),
                         manifest.get("meta", {}))


# -- checkpoints -------------------------------------------------------------------

def save_model(model, path, **fields):
    return save_arrays(path, {k: p.data for k, p in model.params.items()}, "model",
                       config=model.config(), param_hash=parameter_hash(model), **fields)


def load_model(path):
    manifest, arrays = load_arrays(path, "model")
    model = build_model(manifest["config"])
    _assign(model.params, arrays, path)
    return model


def save_stabilizer(stabilized, path, base_checkpoint=None, **fields):
    """Stabilizer parameters plus the attach spec; the base is referenced by
    its parameter hash (and optionally its checkpoint path)."""
    params = stabilized.parameters()
    return save_arrays(path, {k: p.data for k, p in params.items()}, "stabilizer",
                       spec=stabilized.spec, base_config=stabilized.base.config(),
                       base_hash=parameter_hash(stabilized.base),
                       base_checkpoint=None if base_checkpoint is None else str(base_checkpoint),
                       **fields)


def load_stabilizer(path, base=None):
    """Rebuild a stabilized model. ``base`` defaults to the checkpoint the
    manifest references; its parameter hash must match the recorded one."""
    from .stabilizers import attach
    manifest, arrays = load_arrays(path, "stabilizer")
    if base is None:
        ref = manifest.get("base_checkpoint")
        if not ref:
            raise ValueError(f"{path}: no base model given and none referenced")
        ref = Path(ref)
        if not ref.is_absolute():
            ref = _stem(path).parent / ref
        base = load_model(ref)
    if isinstance(base, (str, Path)):
        base = load_model(base)
    if not isinstance(base, Module):
        raise TypeError("base must be a model or a checkpoint path")
    if parameter_hash(base) != manifest["base_hash"]:
        raise ValueError(f"{path}: base model parameters differ from the ones it was trained on")
    spec = dict(manifest["spec"])
    kind, layers = spec.pop("kind"), spec.pop("layers")
    stab = attach(base, layers, kind, **spec)
    _assign(stab.parameters(), arrays, path)
    return stab


def _assign(params, arrays, path):
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise ValueError(f"{path}: parameter mismatch (missing {sorted(missing)}, "
                         f"unexpected {sorted(extra)})")
    for k, p in params.items():
        if arrays[k].shape != p.data.shape:
            raise ValueError(f"{path}: {k} has shape {arrays[k].shape}, expected {p.data.shape}")
        p.data = arrays[k].copy()
