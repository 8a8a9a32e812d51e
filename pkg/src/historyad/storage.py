"""Binary persistence for checkpoint stores and detectors.

Layout (all integers and floats little-endian)::

    magic       4 bytes   b"HADC" (store) or b"HADT" (detector)
    version     u16
    header      u32 length + UTF-8 JSON (sorted keys): configs and specs
    body        store:    u32 count, then per checkpoint
                          f64 t, u32 index, network(G), network(D)
                detector: u32 trace length, f64 * length, network(D)
    network     u16 n_dims, u32 * n_dims, then W0, b0, W1, b1, ... as f64
                (weights row-major, shape (fan_in, fan_out))

JSON floats are written with ``repr`` and so round-trip exactly; files are
byte-identical across write -> read -> write.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .detector import Detector, DetectorConfig
from .errors import FormatError
from .gan import Checkpoint, CheckpointStore, GanConfig
from .nn import MlpSpec, NetworkWeights

STORE_MAGIC = b"HADC"
DETECTOR_MAGIC = b"HADT"
FORMAT_VERSION = 1


def _spec_dict(spec: MlpSpec) -> dict:
    return {"layer_dims": list(spec.layer_dims), "slope": spec.slope}


def _spec_from(d: dict) -> MlpSpec:
    return MlpSpec(tuple(d["layer_dims"]), d["slope"])


def _pack_network(w: NetworkWeights) -> bytes:
    dims = w.layer_dims
    parts = [struct.pack("<H", len(dims)), struct.pack(f"<{len(dims)}I", *dims)]
    parts += [np.ascontiguousarray(p, dtype="<f8").tobytes() for p in w.params()]
    return b"".join(parts)


def _pack_header(magic: bytes, header: dict) -> bytes:
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return magic + struct.pack("<HI", FORMAT_VERSION, len(blob)) + blob


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated file: wanted {n} bytes", offset=self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def header(self, magic: bytes) -> dict:
        got = self.take(4)
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}", offset=0)
        (version,) = self.unpack("<H")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}", offset=4)
        (length,) = self.unpack("<I")
        start = self.pos
        try:
            return json.loads(self.take(length).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"corrupt header: {exc}", offset=start) from exc

    def network(self, expect: MlpSpec) -> NetworkWeights:
        at = self.pos
        (n_dims,) = self.unpack("<H")
        dims = self.unpack(f"<{n_dims}I")
        if tuple(dims) != expect.layer_dims:
            raise FormatError(f"network dims {dims} disagree with header {expect.layer_dims}", offset=at)
        params = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = np.frombuffer(self.take(8 * fan_in * fan_out), dtype="<f8").reshape(fan_in, fan_out)
            b = np.frombuffer(self.take(8 * fan_out), dtype="<f8")
            params += [w.astype(np.float64), b.astype(np.float64)]
        return NetworkWeights.from_params(params)

    def done(self):
        if self.pos != len(self.data):
            raise FormatError("trailing bytes after payload", offset=self.pos)


def store_to_bytes(store: CheckpointStore) -> bytes:
    header = {
        "gan_config": store.config.to_dict(),
        "generator_spec": _spec_dict(store.generator_spec),
        "critic_spec": _spec_dict(store.critic_spec),
    }
    parts = [_pack_header(STORE_MAGIC, header), struct.pack("<I", len(store.checkpoints))]
    for c in store.checkpoints:
        parts.append(struct.pack("<dI", c.t, c.index))
        parts.append(_pack_network(c.generator))
        parts.append(_pack_network(c.discriminator))
    return b"".join(parts)


def store_from_bytes(data: bytes) -> CheckpointStore:
    r = _Reader(data)
    h = r.header(STORE_MAGIC)
    try:
        cfg = GanConfig.from_dict(h["gan_config"])
        g_spec, d_spec = _spec_from(h["generator_spec"]), _spec_from(h["critic_spec"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid store header: {exc}", offset=10) from exc
    (count,) = r.unpack("<I")
    store = CheckpointStore(cfg, g_spec, d_spec)
    for _ in range(count):
        t, index = r.unpack("<dI")
        g = r.network(g_spec)
        d = r.network(d_spec)
        store.checkpoints.append(Checkpoint(t, g, d, index))
    r.done()
    return store


def detector_to_bytes(det: Detector) -> bytes:
    header = {"spec": _spec_dict(det.spec), "config": det.config.to_dict()}
    parts = [
        _pack_header(DETECTOR_MAGIC, header),
        struct.pack("<I", len(det.trace)),
        np.asarray(det.trace, dtype="<f8").tobytes(),
        _pack_network(det.weights),
    ]
    return b"".join(parts)


def detector_from_bytes(data: bytes) -> Detector:
    r = _Reader(data)
    h = r.header(DETECTOR_MAGIC)
    try:
        spec = _spec_from(h["spec"])
        cfg = DetectorConfig(**h["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid detector header: {exc}", offset=10) from exc
    (n,) = r.unpack("<I")
    trace = np.frombuffer(r.take(8 * n), dtype="<f8").tolist()
    weights = r.network(spec)
    r.done()
    return Detector(spec, weights, cfg, trace)


def _write_atomic(path, data: bytes):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def save_store(store: CheckpointStore, path) -> None:
    _write_atomic(path, store_to_bytes(store))


def load_store(path) -> CheckpointStore:
    with open(path, "rb") as f:
        return store_from_bytes(f.read())


def save_detector(det: Detector, path) -> None:
    _write_atomic(path, detector_to_bytes(det))


def load_detector(path) -> Detector:
    with open(path, "rb") as f:
        return detector_from_bytes(f.read())
