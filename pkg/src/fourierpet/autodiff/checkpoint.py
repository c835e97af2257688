"""FPTC checkpoint files.

Layout (little-endian)::

    b"FPTC"  u16 version  u32 config_len  config (UTF-8 JSON)
    u32 n_params
    per parameter: u16 name_len  name  u8 ndim  u32 dims[ndim]  f32 values
    u8 has_optimizer
    if set: u64 step  f64 beta1  f64 beta2, then f32 first and second
            moments for every parameter in table order

Writes go through a temporary file and an atomic rename.
"""

import json
import os
import struct

import numpy as np

MAGIC = b"FPTC"
VERSION = 1


def _arr(v):
    return np.asarray(getattr(v, "data", v))


def save_checkpoint(path, params, config=None, optimizer=None):
    """Write ``params`` (name -> Tensor or array) with an optional AdamW state."""
    names = list(params)
    blob = [MAGIC, struct.pack("<H", VERSION)]
    cfg = json.dumps(config or {}, sort_keys=True).encode()
    blob += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(names))]
    for name in names:
        a = _arr(params[name])
        key = name.encode()
        blob += [struct.pack("<H", len(key)), key, struct.pack("<B", a.ndim)]
        blob += [struct.pack(f"<{a.ndim}I", *a.shape), a.astype("<f4").tobytes()]
    if optimizer is None:
        blob.append(struct.pack("<B", 0))
    else:
        st = optimizer.state_dict()
        if set(st["m"]) != set(names):
            raise ValueError("optimizer state does not cover the saved parameters")
        blob += [struct.pack("<B", 1), struct.pack("<Qdd", st["step"], st["beta1"], st["beta2"])]
        for name in names:
            blob += [st["m"][name].astype("<f4").tobytes(), st["v"][name].astype("<f4").tobytes()]
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(blob))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise ValueError(f"{self.path}: truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    """Read a checkpoint.

    Returns
    -------
    params : dict of str -> float32 ndarray
    config : dict
    optimizer : dict or None
        ``step``, ``beta1``, ``beta2``, ``m`` and ``v`` (moment dicts).
    """
    with open(path, "rb") as fh:
        rd = _Reader(fh.read(), path)
    if rd.take(4) != MAGIC:
        raise ValueError(f"{path}: not an FPTC checkpoint")
    (version,) = rd.unpack("<H")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (clen,) = rd.unpack("<I")
    config = json.loads(rd.take(clen).decode())
    (n,) = rd.unpack("<I")
    params = {}
    for _ in range(n):
        (klen,) = rd.unpack("<H")
        name = rd.take(klen).decode()
        (ndim,) = rd.unpack("<B")
        shape = rd.unpack(f"<{ndim}I")
        count = int(np.prod(shape))
        params[name] = np.frombuffer(rd.take(4 * count), dtype="<f4").reshape(shape).copy()
    (has_opt,) = rd.unpack("<B")
    opt = None
    if has_opt:
        step, b1, b2 = rd.unpack("<Qdd")
        m, v = {}, {}
        for name, p in params.items():
            m[name] = np.frombuffer(rd.take(4 * p.size), dtype="<f4").reshape(p.shape).copy()
            v[name] = np.frombuffer(rd.take(4 * p.size), dtype="<f4").reshape(p.shape).copy()
        opt = dict(step=step, beta1=b1, beta2=b2, m=m, v=v)
    return params, config, opt
