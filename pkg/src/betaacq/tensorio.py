"""File formats: binary sample tensors, run configs, model snapshots, CSV.

Tensor files carry magic "BEAQ1", a uint16 version, uint32 dims (N, M, C)
and a row-major little-endian float64 payload, so replays are bit-exact.
All writes are atomic (temp file + rename).
"""

from __future__ import annotations

import csv
import os
import struct
import tempfile

import numpy as np

from .betamodel import SampleTensor

__all__ = [
    "TensorFormatError",
    "ConfigError",
    "write_tensor",
    "read_tensor",
    "read_tensor_csv",
    "write_scores_csv",
    "read_scores_csv",
    "save_model",
    "load_model",
    "parse_run_config",
    "atomic_write_bytes",
    "atomic_writer",
]

MAGIC = b"BEAQ1"
VERSION = 1
_HEADER = struct.Struct("<5sHIII")


class TensorFormatError(ValueError):
    """Malformed tensor file; carries the byte offset of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ConfigError(ValueError):
    """Invalid run-configuration document."""


def atomic_write_bytes(path, payload):
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class atomic_writer:
    """Context manager writing text atomically via a temp file."""

    def __init__(self, path):
        self.path = path
        d = os.path.dirname(os.path.abspath(path)) or "."
        fd, self._tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
        self._fh = os.fdopen(fd, "w", newline="")

    def __enter__(self):
        return self._fh

    def __exit__(self, exc_type, exc, tb):
        self._fh.close()
        if exc_type is None:
            os.replace(self._tmp, self.path)
        else:
            os.unlink(self._tmp)
        return False


def write_tensor(path, samples):
    if not isinstance(samples, SampleTensor):
        samples = SampleTensor(samples)
    n, m, c = samples.values.shape
    header = _HEADER.pack(MAGIC, VERSION, n, m, c)
    payload = samples.values.astype("<f8", copy=False).tobytes(order="C")
    atomic_write_bytes(path, header + payload)


def read_tensor(path, validate=True):
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise TensorFormatError(
                f"truncated header: got {len(header)} bytes, "
                f"need {_HEADER.size}",
                len(header),
            )
        magic, version, n, m, c = _HEADER.unpack(header)
        if magic != MAGIC:
            raise TensorFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
        if version != VERSION:
            raise TensorFormatError(f"unsupported version {version}", 5)
        expected = 8 * n * m * c
        payload = fh.read(expected + 1)
        if len(payload) != expected:
            raise TensorFormatError(
                f"payload length mismatch: expected {expected} bytes for dims "
                f"({n}, {m}, {c}), got {len(payload)}",
                _HEADER.size + min(len(payload), expected),
            )
    values = np.frombuffer(payload, dtype="<f8").reshape(n, m, c).astype(
        np.float64, copy=True
    )
    return SampleTensor(values, validate=validate)


def read_tensor_csv(path):
    """Importer for hand-made fixtures: rows of point,draw,class,probability."""
    entries = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for ln, row in enumerate(reader, start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            if ln == 1 and not row[0].strip().lstrip("-").isdigit():
                continue  # header
            if len(row) != 4:
                raise ConfigError(f"line {ln}: expected 4 columns, got {len(row)}")
            entries.append(
                (int(row[0]), int(row[1]), int(row[2]), float(row[3]))
            )
    if not entries:
        raise ConfigError("empty tensor CSV")
    n = max(e[0] for e in entries) + 1
    m = max(e[1] for e in entries) + 1
    c = max(e[2] for e in entries) + 1
    values = np.zeros((n, m, c), dtype=np.float64)
    for p, d, k, v in entries:
        values[p, d, k] = v
    return SampleTensor(values)


def write_scores_csv(path, scores):
    with atomic_writer(path) as fh:
        fh.write("index,score\n")
        for i, s in enumerate(np.asarray(scores, dtype=np.float64)):
            fh.write(f"{i},{s:.17g}\n")


def read_scores_csv(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["index", "score"]:
            raise ConfigError(f"unexpected scores header {header!r}")
        for row in reader:
            out.append(float(row[1]))
    return np.asarray(out, dtype=np.float64)


def save_model(path, model):
    """Snapshot an MLP's exact float64 parameters."""
    arrays = {"dropout_rate": np.float64(model.dropout_rate)}
    for i, w in enumerate(model.weights):
        arrays[f"w{i}"] = w
    for i, b in enumerate(model.biases):
        if b is not None:
            arrays[f"b{i}"] = b
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".npz")
    os.close(fd)
    try:
        with open(tmp, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path):
    from .moons import LAYER_SIZES, MlpModel

    with np.load(path) as data:
        n_layers = len(LAYER_SIZES) - 1
        weights = [data[f"w{i}"].astype(np.float64) for i in range(n_layers)]
        biases = [
            data[f"b{i}"].astype(np.float64) if f"b{i}" in data else None
            for i in range(n_layers)
        ]
        rate = float(data["dropout_rate"])
    return MlpModel(weights, biases, rate)


RUN_CONFIG_KEYS = {
    "mode": str,
    "measure": str,
    "measures": str,
    "priority": str,
    "precision_case": int,
    "k_per_iter": int,
    "k_total": int,
    "seed": int,
    "m_draws": int,
    "n_initial": int,
    "repeats": int,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "n_per_class": int,
    "n_test_per_class": int,
    "noise_sd": float,
    "grid_resolution": int,
    "grid_bounds": str,
    "mean_eps": float,
    "var_eps": float,
    "var_rel_margin": float,
    "alpha_min": float,
    "alpha_max": float,
    "power_estimator": str,
}

RUN_CONFIG_DEFAULTS = {
    "mode": "curve",
    "measures": "balentacq,random",
    "priority": "P2",
    "precision_case": 1,
    "k_per_iter": 5,
    "k_total": 115,
    "seed": 0,
    "m_draws": 100,
    "n_initial": 15,
    "repeats": 3,
    "epochs": 150,
    "batch_size": 128,
    "learning_rate": 0.01,
    "n_per_class": 500,
    "n_test_per_class": 200,
    "noise_sd": 0.1,
    "grid_resolution": 300,
    "grid_bounds": "-1.5:2.5,-2.0:1.6",
    "mean_eps": 1e-6,
    "var_eps": 1e-12,
    "var_rel_margin": 1e-6,
    "alpha_min": 1e-4,
    "alpha_max": 1e6,
    "power_estimator": "mc",
}


def parse_run_config(path):
    """Parse a key=value run config; unknown keys are rejected."""
    resolved = dict(RUN_CONFIG_DEFAULTS)
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {ln}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in RUN_CONFIG_KEYS:
                raise ConfigError(f"line {ln}: unknown key {key!r}")
            caster = RUN_CONFIG_KEYS[key]
            try:
                resolved[key] = caster(value)
            except ValueError as exc:
                raise ConfigError(f"line {ln}: bad value for {key}: {exc}") from exc
            if key == "measure":
                resolved["measures"] = value
    return resolved


def parse_grid_bounds(text):
    try:
        xs, ys = text.split(",")
        x0, x1 = (float(v) for v in xs.split(":"))
        y0, y1 = (float(v) for v in ys.split(":"))
    except ValueError as exc:
        raise ConfigError(f"bad grid_bounds {text!r}: expected x0:x1,y0:y1") from exc
    return (x0, x1), (y0, y1)
