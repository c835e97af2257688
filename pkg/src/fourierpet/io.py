"""Grid files, PGM previews, ``key = value`` manifests and run configuration.

FPGD grid layout (little-endian)::

    b"FPGD"  u16 version  u8 dtype tag (1 = f32, 2 = f64)  u32 W  u32 H  payload

The payload is the row-major ``H x W`` array. Sinograms use the same format
with ``H = n_angles`` and ``W = n_bins``. All writers go through a temporary
file and ``os.replace`` so a crash never leaves a half-written output.
"""

import os
import struct
from dataclasses import dataclass, fields

import numpy as np

GRID_MAGIC = b"FPGD"
GRID_VERSION = 1
_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAG_OF = {"float32": 1, "float64": 2}


def atomic_write_bytes(path, data):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode())


def write_grid(path, arr, dtype=None):
    """Write a 2D array; ``dtype`` defaults to the array's own (f32 or f64)."""
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError(f"grid must be 2D, got shape {arr.shape}")
    dt = np.dtype(dtype or (arr.dtype if arr.dtype in (np.float32, np.float64) else np.float64))
    if dt.name not in _TAG_OF:
        raise ValueError(f"unsupported grid dtype {dt}")
    h, w = arr.shape
    head = GRID_MAGIC + struct.pack("<HBII", GRID_VERSION, _TAG_OF[dt.name], w, h)
    atomic_write_bytes(path, head + arr.astype(_TAGS[_TAG_OF[dt.name]]).tobytes())


def read_grid(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != GRID_MAGIC:
        raise ValueError(f"{path}: not an FPGD grid file")
    if len(buf) < 15:
        raise ValueError(f"{path}: truncated header")
    version, tag, w, h = struct.unpack("<HBII", buf[4:15])
    if version != GRID_VERSION:
        raise ValueError(f"{path}: unsupported grid version {version}")
    if tag not in _TAGS:
        raise ValueError(f"{path}: unknown dtype tag {tag}")
    dt = _TAGS[tag]
    payload = buf[15:]
    if len(payload) != w * h * dt.itemsize:
        raise ValueError(f"{path}: payload has {len(payload)} bytes, expected {w * h * dt.itemsize}")
    return np.frombuffer(payload, dtype=dt).reshape(h, w).astype(dt.newbyteorder("="))


def write_pgm(path, img):
    """8-bit binary PGM, scaled so the image maximum maps to 255 (negatives clip to 0)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM export needs a 2D image, got shape {img.shape}")
    peak = img.max()
    scaled = np.clip(img / peak, 0, 1) if peak > 0 else np.zeros_like(img)
    data = np.round(scaled * 255).astype(np.uint8)
    h, w = img.shape
    atomic_write_bytes(path, f"P5\n{w} {h}\n255\n".encode() + data.tobytes())


# ---------------------------------------------------------------- key = value text
def parse_kv(text, source="<text>"):
    """Parse ``key = value`` lines; ``#`` starts a comment. Duplicate keys are errors."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = val
    return out


def format_kv(items, header=None):
    lines = [f"# {header}"] if header else []
    lines += [f"{k} = {_fmt(v)}" for k, v in items.items()]
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if v is None:
        return "auto"
    return str(v)


def _parse_bool(s):
    s = s.lower()
    if s in ("true", "yes", "1", "on"):
        return True
    if s in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# ---------------------------------------------------------------- run configuration
@dataclass
class RunConfig:
    """Every tunable default of the pipeline in one flat namespace.

    ``n_angles`` and ``n_bins`` may be ``None`` ("auto"), meaning image
    height and width respectively.
    """

    # geometry
    image_height: int = 32
    image_width: int = 32
    n_angles: int = None
    n_bins: int = None
    pixel_size: float = 1.0
    # simulation
    phantom_kind: str = "mixed"
    n_pairs: int = 64
    seed: int = 0
    dose_fraction: float = 0.1
    ac_bias_strength: float = 0.3
    ac_bias_scale: float = 8.0
    full_count_mean: float = 50.0
    # network
    K: int = 3
    N: int = 2
    rho: float = 0.1
    lambda_a: float = 1.0
    lambda_p: float = 1.0
    apcm_mode: str = "targeted"
    loss_weights: tuple = (0.5, 0.3, 0.01)
    smooth_l1_delta: float = 1.0
    channels: int = 16
    shared_mu: bool = False
    # training
    epochs: int = 60
    batch_size: int = 4
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    train_seed: int = 0
    dtype: str = "float64"
    # baselines and analysis
    mlem_iters: int = 50
    osem_iters: int = 4
    osem_subsets: int = 8
    n_radial_bands: int = 8

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_text(cls, text, source="<config>"):
        return cls().updated(parse_kv(text, source), source)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read(), path)

    def updated(self, values, source="<overrides>"):
        """Copy with string or typed ``values`` applied; unknown keys are rejected."""
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        for key, raw in values.items():
            if key not in kw:
                raise ValueError(f"{source}: unknown config key {key!r}")
            kw[key] = self._coerce(key, raw) if isinstance(raw, str) else raw
        out = RunConfig(**kw)
        out.validate()
        return out

    @staticmethod
    def _coerce(key, raw):
        default = getattr(RunConfig, key)
        try:
            if key in ("n_angles", "n_bins"):
                return None if raw.lower() == "auto" else int(raw)
            if key == "loss_weights":
                return tuple(float(x) for x in raw.replace(",", " ").split())
            if isinstance(default, bool):
                return _parse_bool(raw)
            if isinstance(default, int):
                return int(raw)
            if isinstance(default, float):
                return float(raw)
        except ValueError as exc:
            raise ValueError(f"bad value for {key}: {raw!r} ({exc})") from None
        return raw

    def validate(self):
        if self.image_height < 2 or self.image_width < 2:
            raise ValueError("image dims must be >= 2")
        if len(self.loss_weights) != 3:
            raise ValueError("loss_weights needs three values")
        if self.osem_subsets < 1 or self.osem_iters < 1 or self.mlem_iters < 1:
            raise ValueError("iteration and subset counts must be >= 1")

    @property
    def image_shape(self):
        return (self.image_height, self.image_width)

    @property
    def sino_shape(self):
        return (self.n_angles or self.image_height, self.n_bins or self.image_width)

    def to_text(self, header="fully-resolved run configuration"):
        return format_kv({k: getattr(self, k) for k in self.keys()}, header)

    def recon_config(self):
        from .net.model import ReconConfig

        return ReconConfig(K=self.K, N=self.N, rho=self.rho, lambda_a=self.lambda_a, lambda_p=self.lambda_p,
                           apcm_mode=self.apcm_mode, loss_weights=self.loss_weights,
                           smooth_l1_delta=self.smooth_l1_delta, channels=self.channels,
                           shared_mu=self.shared_mu, seed=self.train_seed)

    def train_config(self):
        from .net.trainer import TrainConfig

        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr_start=self.lr_start,
                           lr_end=self.lr_end, beta1=self.beta1, beta2=self.beta2,
                           weight_decay=self.weight_decay, seed=self.train_seed, dtype=self.dtype)

    def degradation(self, seed):
        from .simulator import DegradationConfig

        return DegradationConfig(dose_fraction=self.dose_fraction, ac_bias_strength=self.ac_bias_strength,
                                 ac_bias_scale=self.ac_bias_scale, seed=int(seed),
                                 full_count_mean=self.full_count_mean)


# ---------------------------------------------------------------- dataset manifests
MANIFEST_FORMAT = "fourierpet-dataset-1"


@dataclass
class PairEntry:
    seed: int
    kind: str
    scale: float
    truth: str
    low: str
    full: str
    roi: str


@dataclass
class Manifest:
    """A simulated dataset: the config that generated it plus one entry per pair.

    File names are relative to the manifest's directory.
    """

    config: RunConfig
    pairs: list
    root: str = "."

    def path(self, name):
        return os.path.join(self.root, name)

    def to_text(self):
        items = {"format": MANIFEST_FORMAT}
        items.update({k: getattr(self.config, k) for k in RunConfig.keys()})
        for i, p in enumerate(self.pairs):
            for f in fields(PairEntry):
                items[f"pair.{i}.{f.name}"] = repr(float(p.scale)) if f.name == "scale" else getattr(p, f.name)
        return format_kv(items, "fourierpet dataset manifest")

    def write(self, path):
        atomic_write_text(path, self.to_text())

    @classmethod
    def read(cls, path):
        with open(path) as fh:
            kv = parse_kv(fh.read(), path)
        if kv.pop("format", None) != MANIFEST_FORMAT:
            raise ValueError(f"{path}: not a {MANIFEST_FORMAT} manifest")
        pair_kv = {k: v for k, v in kv.items() if k.startswith("pair.")}
        cfg = RunConfig().updated({k: v for k, v in kv.items() if not k.startswith("pair.")}, path)
        grouped = {}
        for key, val in pair_kv.items():
            _, idx, name = key.split(".", 2)
            grouped.setdefault(int(idx), {})[name] = val
        pairs = []
        for i in sorted(grouped):
            g = grouped[i]
            try:
                pairs.append(PairEntry(int(g["seed"]), g["kind"], float(g["scale"]), g["truth"], g["low"],
                                       g["full"], g["roi"]))
            except KeyError as exc:
                raise ValueError(f"{path}: pair {i} is missing field {exc}") from None
        return cls(cfg, pairs, os.path.dirname(os.path.abspath(path)))

    def load_arrays(self, which=("truth", "low", "full")):
        """Stack the requested fields of every pair into arrays."""
        return {w: np.stack([read_grid(self.path(getattr(p, w))) for p in self.pairs]).astype(np.float64)
                for w in which}
