"""Binary checkpoint container.

Layout::

    b"CSWPCKPT" | u32 format version | u64 header length | JSON header | payloads

The header carries the task, dims record, per-slot component kind/name/dims,
free-form metadata (vocab fingerprints, normalizer stats), optional
optimizer scalars and an entry table ``{name, shape, offset, nbytes}``.
Payloads are raw little-endian float64, row-major, in entry-table order.
Headers are serialized with sorted keys so save -> load -> save is byte-identical.
"""
import json
import math
import struct

import numpy as np

from .errors import CorruptCheckpointError, FormatVersionError
from .layers import COMPONENT_TYPES
from .models import ModelAssembly
from .optim import OptimizerState

MAGIC = b"CSWPCKPT"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<8sIQ")


def _entries(m, opt):
    out = [("param/" + k, t.data) for k, t in m.named_params()]
    if opt is not None:
        for k in sorted(opt.m):
            out.append(("opt.m/" + k, opt.m[k]))
            out.append(("opt.v/" + k, opt.v[k]))
    return out


def checkpoint_bytes(m, opt=None, meta=None):
    entries = _entries(m, opt)
    table = []
    offset = 0
    payloads = []
    for name, arr in entries:
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        payloads.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "task": m.task.value,
        "aux_weight": m.aux_weight,
        "dims": m.dims(),
        "parts": [{"slot": slot, "kind": c.kind, "name": c.name, "meta": c.meta()}
                  for slot, c in m.parts.items()],
        "meta": {**m.meta, **(meta or {})},
        "optimizer": None if opt is None else {
            "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "step": opt.step,
            "best_dev": None if math.isinf(opt.best_dev) else opt.best_dev},
        "entries": table,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    return _PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(hbytes)) + hbytes + b"".join(payloads)


def save_checkpoint(m, path, opt=None, meta=None):
    blob = checkpoint_bytes(m, opt, meta)
    with open(path, "wb") as fh:
        fh.write(blob)
    return path


def read_header(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    return _parse(blob, path)[0]


def _parse(blob, path):
    if len(blob) < _PREAMBLE.size:
        raise CorruptCheckpointError(f"{path}: file too short for a checkpoint preamble")
    magic, version, hlen = _PREAMBLE.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    start = _PREAMBLE.size
    if len(blob) < start + hlen:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as e:
        raise CorruptCheckpointError(f"{path}: unreadable header ({e})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatVersionError(f"{path}: header format version {header.get('format_version')}")
    body = blob[start + hlen:]
    arrays = {}
    expected = 0
    for e in header["entries"]:
        n = int(np.prod(e["shape"], dtype=np.int64)) * 8
        if e["nbytes"] != n:
            raise CorruptCheckpointError(f"{path}: entry {e['name']} declares {e['nbytes']} bytes, "
                                         f"shape {e['shape']} needs {n}")
        if e["offset"] + n > len(body):
            raise CorruptCheckpointError(f"{path}: payload of {e['name']} is truncated")
        arrays[e["name"]] = np.frombuffer(body, dtype="<f8", count=n // 8,
                                          offset=e["offset"]).reshape(e["shape"]).astype(np.float64)
        expected = max(expected, e["offset"] + n)
    if expected != len(body):
        raise CorruptCheckpointError(f"{path}: {len(body) - expected} trailing bytes after payloads")
    return header, arrays


def load_checkpoint(path, with_optimizer=False):
    """Rebuild the assembly (and optionally the optimizer state) from ``path``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header, arrays = _parse(blob, path)
    parts = {}
    for p in header["parts"]:
        cls = COMPONENT_TYPES[p["kind"]]
        prefix = f"param/{p['slot']}/"
        comp_arrays = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
        try:
            parts[p["slot"]] = cls.from_params(p["meta"], comp_arrays, p["name"])
        except ValueError as e:
            raise CorruptCheckpointError(f"{path}: slot {p['slot']}: {e}") from None
    m = ModelAssembly(header["task"], parts, header["aux_weight"], header["meta"])
    if not with_optimizer:
        return m
    opt = None
    if header["optimizer"] is not None:
        o = header["optimizer"]
        opt = OptimizerState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], step=o["step"],
                             best_dev=float("inf") if o["best_dev"] is None else o["best_dev"])
        for k, v in arrays.items():
            if k.startswith("opt.m/"):
                opt.m[k[6:]] = v
            elif k.startswith("opt.v/"):
                opt.v[k[6:]] = v
    return m, opt
