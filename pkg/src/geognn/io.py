"""File formats: the GEMB binary matrix container, TSV graphs and labels,
JSON configs and reports, and model checkpoints.

Dense matrices are stored as float32 ("GEMB" magic, version 1); everything
meant for human eyes is TSV or JSON. Report writes go through a
temp-file-plus-rename so readers never observe a half-written file.
"""

import contextlib
import dataclasses
import json
import logging
import os
import struct
import tempfile

import numpy as np

from .drift import DriftConfig
from .errors import (
    ConfigError,
    CorruptionError,
    FormatError,
    ValidationError,
)
from .model import GeoGNN, ModelConfig
from .training import TrainConfig

logger = logging.getLogger("geognn")

GEMB_MAGIC = b"GEMB"
GEMB_VERSION = 1
_GEMB_HEADER = struct.Struct("<4sIQQ")

CHECKPOINT_FORMAT = "geognn-checkpoint"
CHECKPOINT_VERSION = 1


def _atomic_write_bytes(path, data):
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.remove(tmp)
        raise


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except FileNotFoundError:
        raise ValidationError(f"no such file: {path}")


# ---------------------------------------------------------------------------
# GEMB embedding binary


def write_embeddings(matrix, path):
    """Store a 2-D matrix as float32; computation upstream may be float64."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise ValidationError(
            f"embeddings must be a non-empty 2-D matrix, got shape {matrix.shape}"
        )
    stored = np.ascontiguousarray(matrix, dtype="<f4")
    bad = ~np.isfinite(stored)
    if bad.any():
        row = int(np.nonzero(bad.any(axis=1))[0][0])
        raise ValidationError(f"non-finite embedding value at row {row}")
    n, d = stored.shape
    header = _GEMB_HEADER.pack(GEMB_MAGIC, GEMB_VERSION, n, d)
    _atomic_write_bytes(path, header + stored.tobytes())


def read_embeddings(path):
    """Returns float64 copies of the stored float32 rows."""
    blob = _read_bytes(path)
    if len(blob) < _GEMB_HEADER.size:
        raise CorruptionError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, n, d = _GEMB_HEADER.unpack_from(blob)
    if magic != GEMB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != GEMB_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if n < 1 or d < 1:
        raise ValidationError(f"{path}: declared shape {n}x{d} is empty")
    expected = n * d * 4
    payload = blob[_GEMB_HEADER.size:]
    if len(payload) != expected:
        raise CorruptionError(
            f"{path}: payload is {len(payload)} bytes, header declares {expected}"
        )
    matrix = np.frombuffer(payload, dtype="<f4").reshape(n, d)
    bad = ~np.isfinite(matrix)
    if bad.any():
        row = int(np.nonzero(bad.any(axis=1))[0][0])
        raise ValidationError(f"{path}: non-finite value at row {row}")
    return matrix.astype(np.float64)


# ---------------------------------------------------------------------------
# TSV edges / labels / id lists


def _tsv_rows(path):
    text = _read_bytes(path).decode("utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        yield lineno, stripped.split("\t")


def write_edges_tsv(edges, path):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    lines = ["# u\tv"]
    lines.extend(f"{u}\t{v}" for u, v in edges)
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_edges_tsv(path, n=None):
    pairs = []
    for lineno, fields in _tsv_rows(path):
        if len(fields) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'u<TAB>v'")
        try:
            u, v = int(fields[0]), int(fields[1])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-integer node id")
        if u < 0 or v < 0 or (n is not None and (u >= n or v >= n)):
            raise ValidationError(f"{path}:{lineno}: node id out of range")
        pairs.append((u, v))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def write_labels_tsv(labels, path):
    labels = np.asarray(labels, dtype=np.int64)
    lines = ["# node_id\tclass_id"]
    lines.extend(f"{i}\t{c}" for i, c in enumerate(labels))
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_labels_tsv(path, n=None):
    seen = {}
    for lineno, fields in _tsv_rows(path):
        if len(fields) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'node_id<TAB>class_id'")
        try:
            node, label = int(fields[0]), int(fields[1])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-integer field")
        if node in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate node id {node}")
        if node < 0 or label < 0:
            raise ValidationError(f"{path}:{lineno}: negative id")
        seen[node] = label
    total = n if n is not None else (max(seen) + 1 if seen else 0)
    if total < 1:
        raise ValidationError(f"{path}: no labels")
    labels = np.full(total, -1, dtype=np.int64)
    for node, label in seen.items():
        if node >= total:
            raise ValidationError(f"{path}: node id {node} out of range for n={total}")
        labels[node] = label
    missing = np.nonzero(labels < 0)[0]
    if missing.size:
        raise ValidationError(f"{path}: missing label for node {int(missing[0])}")
    return labels


def write_split_ids(ids, path):
    ids = np.asarray(ids, dtype=np.int64)
    _atomic_write_bytes(path, ("\n".join(str(i) for i in ids) + "\n").encode("utf-8"))


def read_split_ids(path):
    ids = []
    for lineno, fields in _tsv_rows(path):
        if len(fields) != 1:
            raise FormatError(f"{path}:{lineno}: expected one node id per line")
        try:
            ids.append(int(fields[0]))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-integer node id")
    return np.asarray(ids, dtype=np.int64)


# ---------------------------------------------------------------------------
# JSON


def write_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"
    _atomic_write_bytes(path, text.encode("utf-8"))


def read_json(path):
    try:
        return json.loads(_read_bytes(path).decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})")


def write_csv_rows(rows, fieldnames, path):
    import csv
    import io as _io

    buf = _io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    _atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


# ---------------------------------------------------------------------------
# Run configuration


DATA_KEYS = ("features", "edges", "labels")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    drift: DriftConfig
    data: dict


def _build_section(cls, payload, section):
    """Strict: unknown keys fail; missing keys take the dataclass default,
    and every defaulted key is logged."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in payload.items():
        if key not in fields:
            raise ConfigError(f"unknown config key: {section}.{key}")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        built = cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad {section} section: {exc}")
    for name in fields:
        if name not in kwargs:
            logger.info("config: %s.%s defaulted to %r", section, name,
                        getattr(built, name))
    return built


def load_run_config(path):
    """Parse the {model, train, drift, data} run config. Data paths are
    resolved relative to the config file's directory."""
    payload = read_json(path)
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    known = {"model", "train", "drift", "data"}
    for key in payload:
        if key not in known:
            raise ConfigError(f"unknown config key: {key}")
    for key in known:
        if key not in payload:
            logger.info("config: section %r defaulted", key)
    model = _build_section(ModelConfig, payload.get("model", {}), "model")
    train = _build_section(TrainConfig, payload.get("train", {}), "train")
    drift = _build_section(DriftConfig, payload.get("drift", {}), "drift")
    data_raw = payload.get("data", {})
    if not isinstance(data_raw, dict):
        raise ConfigError("data section must be an object of paths")
    base = os.path.dirname(os.path.abspath(os.fspath(path)))
    data = {}
    for key, value in data_raw.items():
        if key not in DATA_KEYS:
            raise ConfigError(f"unknown config key: data.{key}")
        if not isinstance(value, str):
            raise ConfigError(f"data.{key} must be a path string")
        data[key] = value if os.path.isabs(value) else os.path.join(base, value)
    return RunConfig(model=model, train=train, drift=drift, data=data)


# ---------------------------------------------------------------------------
# Model checkpoints: one-line JSON header, then float64 LE parameter blocks
# in declaration order.


def save_checkpoint(model, path):
    params = model.parameters()
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(model.config),
        "d_in": model.d_in,
        "n_classes": model.n_classes,
        "parameters": [
            {"name": p.name, "shape": list(p.value.shape)} for p in params
        ],
    }
    blob = bytearray(json.dumps(header, sort_keys=True).encode("utf-8"))
    blob += b"\n"
    for p in params:
        blob += np.ascontiguousarray(p.value, dtype="<f8").tobytes()
    _atomic_write_bytes(path, bytes(blob))


def load_checkpoint(path):
    blob = _read_bytes(path)
    newline = blob.find(b"\n")
    if newline < 0:
        raise FormatError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(blob[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError(f"{path}: unreadable checkpoint header")
    if header.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not a model checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version")
    config = _build_section(ModelConfig, header["config"], "checkpoint.config")
    model = GeoGNN(config, int(header["d_in"]),
                   n_classes=header["n_classes"])
    params = model.parameters()
    declared = header["parameters"]
    if len(declared) != len(params):
        raise CorruptionError(f"{path}: parameter count mismatch")
    offset = newline + 1
    for meta, param in zip(declared, params):
        if meta["name"] != param.name or tuple(meta["shape"]) != param.value.shape:
            raise CorruptionError(
                f"{path}: parameter {meta['name']!r} does not match the "
                f"declared architecture"
            )
        size = int(np.prod(meta["shape"])) * 8
        block = blob[offset:offset + size]
        if len(block) != size:
            raise CorruptionError(f"{path}: truncated block for {param.name!r}")
        value = np.frombuffer(block, dtype="<f8").reshape(param.value.shape)
        if not np.isfinite(value).all():
            raise ValidationError(f"{path}: non-finite weight in {param.name!r}")
        param.value = value.copy()
        offset += size
    if offset != len(blob):
        raise CorruptionError(f"{path}: {len(blob) - offset} trailing bytes")
    return model
