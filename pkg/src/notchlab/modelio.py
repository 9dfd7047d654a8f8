"""Binary model container.

Layout (all integers little-endian)::

    magic    13 bytes  b"NOTCHLAB-MDL\\n"
    version  uint32
    hlen     uint32    length of the JSON header
    header   hlen bytes, UTF-8 JSON with sorted keys
    payload  raw array bytes, concatenated in header order

The header records the model kind, schema fingerprint, predictor columns,
config, encoder state and, for every array, its name, dtype, shape and
byte offset into the payload. Writing the same model twice yields the
same bytes.
"""

from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np

from . import boosting, cart, forest, mnl
from . import neuralnet as nn
from .data import DataError
from .models import FingerprintError, Fitted

MAGIC = b"NOTCHLAB-MDL\n"
VERSION = 1


class ModelFileError(DataError):
    pass


def _config_dict(cfg):
    return None if cfg is None else dataclasses.asdict(cfg)


def _arrays(fitted: Fitted) -> tuple[dict, dict]:
    m = fitted.model
    if fitted.kind == "forest":
        arrays = {f"trees.{k}": v for k, v in m.trees.to_arrays().items()}
        arrays["importance"] = m.importance
        return arrays, {"config": _config_dict(m.config)}
    if fitted.kind == "boosting":
        arrays = {f"trees.{k}": v for k, v in m.trees.to_arrays().items()}
        arrays["base_scores"] = m.base_scores
        arrays["loss_trace"] = m.loss_trace
        return arrays, {"config": _config_dict(m.config), "shrinkage": m.shrinkage}
    if fitted.kind == "mnl":
        arrays = {"coef": m.coef, "intercept": m.intercept, "trace": m.trace}
        return arrays, {"lam": m.lam, "converged": bool(m.converged), "n_iter": int(m.n_iter),
                        "reference_rating": int(m.reference_rating)}
    if fitted.kind == "nn":
        arrays = {}
        for j, (W, b) in enumerate(zip(m.weights, m.biases)):
            arrays[f"W{j}"] = W
            arrays[f"b{j}"] = b
        arrays["loss_trace"] = m.loss_trace
        return arrays, {"n_layers": len(m.weights)}
    raise ModelFileError(f"cannot serialize model kind {fitted.kind!r}")


def dumps(fitted: Fitted) -> bytes:
    arrays, model_meta = _arrays(fitted)
    index, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        index.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "kind": fitted.kind,
        "fingerprint": fitted.fingerprint,
        "columns": list(fitted.columns),
        "encoder": fitted.encoder,
        "meta": fitted.meta,
        "model": model_meta,
        "arrays": index,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + b"".join(blobs)


def loads(buf: bytes, expected_fingerprint: str | None = None) -> Fitted:
    if not buf.startswith(MAGIC):
        raise ModelFileError("not a model file (bad magic header)")
    pos = len(MAGIC)
    if len(buf) < pos + 8:
        raise ModelFileError("truncated model file")
    version, hlen = struct.unpack_from("<II", buf, pos)
    if version != VERSION:
        raise ModelFileError(f"unsupported model file version {version} (this build reads {VERSION})")
    pos += 8
    try:
        header = json.loads(buf[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"corrupt model header: {exc}") from None
    if expected_fingerprint is not None and header["fingerprint"] != expected_fingerprint:
        raise FingerprintError("model was trained on a different schema (fingerprint mismatch)")
    body = pos + hlen
    arrays = {}
    for e in header["arrays"]:
        start = body + e["offset"]
        if start + e["nbytes"] > len(buf):
            raise ModelFileError("truncated model payload")
        a = np.frombuffer(buf, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)),
                          offset=start).reshape(e["shape"])
        arrays[e["name"]] = a.copy()
    return Fitted(header["kind"], header["columns"], header["fingerprint"],
                  _rebuild(header, arrays), header["encoder"], header["meta"])


def _rebuild(header, arrays):
    kind, meta = header["kind"], header["model"]
    trees = {k[6:]: v for k, v in arrays.items() if k.startswith("trees.")}
    if kind == "forest":
        cfg = forest.ForestConfig(**meta["config"])
        return forest.ForestModel(header["columns"], cart.PackedTrees.from_arrays(trees),
                                  arrays["importance"], header["fingerprint"], cfg)
    if kind == "boosting":
        cfg = boosting.BoostConfig(**meta["config"])
        return boosting.BoostModel(header["columns"], arrays["base_scores"],
                                   cart.PackedTrees.from_arrays(trees), meta["shrinkage"],
                                   arrays["loss_trace"], header["fingerprint"], cfg)
    if kind == "mnl":
        return mnl.MnlModel(arrays["coef"], arrays["intercept"], meta["lam"], meta["converged"],
                            meta["n_iter"], arrays["trace"], meta["reference_rating"])
    if kind == "nn":
        k = meta["n_layers"]
        return nn.Network([arrays[f"W{j}"] for j in range(k)], [arrays[f"b{j}"] for j in range(k)],
                          arrays["loss_trace"])
    raise ModelFileError(f"unknown model kind {kind!r}")


def save(fitted: Fitted, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(fitted))


def load(path, expected_fingerprint: str | None = None) -> Fitted:
    with open(path, "rb") as fh:
        return loads(fh.read(), expected_fingerprint)
