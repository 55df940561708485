"""Binary containers for networks and conditional energy models.

Network container (all integers little-endian)::

    offset  type        field
    0       4 bytes     magic b"ICEB"
    4       u32         format version (1)
    8       u32         kind (0 = network, 1 = model)
    12      u32         n_dims
    16      u32[n_dims] layer widths
    ..      f64         leaky slope
    ..      u32         flags (bit 0: ReLU output layer, bit 1: unchecked widths)
    ..      i64         spec seed
    ..      f64[...]    W_1 .. W_L, each row-major with shape (dims[l+1], dims[l])
    ..      f64[...]    b_1 .. b_L

Model container (``.icebeem``)::

    magic, version, kind = 1
    u32         mode (0 plain, 1 positive, 2 augmented)
    u64         byte length of the embedded f container, then that container
    u32         embedding kind (0 lookup table, 1 network)
    lookup:     u32 n_segments, u32 d_g, f64[n_segments * d_g] row-major table
    network:    u64 byte length, then a network container (input width = n_segments)
    f64[n_segments] per-segment offsets

Every float is a little-endian IEEE-754 double, so files round-trip exactly.
:func:`net_to_text` writes the same numbers as ``repr`` strings.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from ._kernels_py import MODE_CODES
from .ebm import ConditionEmbedding, IceBeemModel
from .errors import ConfigError
from .netcore import MlpNet, MlpSpec

MAGIC = b"ICEB"
VERSION = 1
KIND_NET = 0
KIND_MODEL = 1
_MODES = {v: k for k, v in MODE_CODES.items()}


class _Reader:
    def __init__(self, buf: bytes, name: str):
        self.buf = buf
        self.pos = 0
        self.name = name

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise ConfigError(f"{self.name}: truncated container")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals if len(vals) > 1 else vals[0]

    def doubles(self, count: int) -> np.ndarray:
        size = 8 * count
        if self.pos + size > len(self.buf):
            raise ConfigError(f"{self.name}: truncated container")
        out = np.frombuffer(self.buf, dtype="<f8", count=count, offset=self.pos).astype(np.float64)
        self.pos += size
        return out

    def raw(self, size: int) -> bytes:
        if self.pos + size > len(self.buf):
            raise ConfigError(f"{self.name}: truncated container")
        out = self.buf[self.pos:self.pos + size]
        self.pos += size
        return out


def _header(r: _Reader, want_kind: int) -> None:
    if r.raw(4) != MAGIC:
        raise ConfigError(f"{r.name}: not an ICEB container")
    version = r.take("<I")
    if version != VERSION:
        raise ConfigError(f"{r.name}: unsupported container version {version}")
    kind = r.take("<I")
    if kind != want_kind:
        raise ConfigError(f"{r.name}: expected container kind {want_kind}, found {kind}")


def net_to_bytes(net: MlpNet) -> bytes:
    spec = net.spec
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<III", VERSION, KIND_NET, len(spec.dims)))
    out.write(struct.pack(f"<{len(spec.dims)}I", *spec.dims))
    flags = (spec.output_activation == "relu") | (spec.unchecked << 1)
    out.write(struct.pack("<dIq", spec.leaky_slope, flags, spec.seed))
    for w in net.weights:
        out.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
    for b in net.biases:
        out.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return out.getvalue()


def _read_net(r: _Reader) -> MlpNet:
    _header(r, KIND_NET)
    n = r.take("<I")
    if n < 2:
        raise ConfigError(f"{r.name}: a network needs at least two widths")
    dims = tuple(r.take(f"<{n}I"))
    slope, flags, seed = r.take("<dIq")
    spec = MlpSpec(
        dims,
        leaky_slope=slope,
        output_activation="relu" if flags & 1 else "none",
        seed=seed,
        unchecked=bool(flags & 2),
    )
    weights = [r.doubles(dims[l + 1] * dims[l]).reshape(dims[l + 1], dims[l]) for l in range(n - 1)]
    biases = [r.doubles(dims[l + 1]) for l in range(n - 1)]
    return MlpNet(spec, weights, biases)


def net_from_bytes(buf: bytes, name: str = "<bytes>") -> MlpNet:
    r = _Reader(buf, name)
    net = _read_net(r)
    if r.pos != len(buf):
        raise ConfigError(f"{name}: trailing bytes after network container")
    return net


def model_to_bytes(model: IceBeemModel) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<III", VERSION, KIND_MODEL, MODE_CODES[model.mode]))
    fbytes = net_to_bytes(model.f)
    out.write(struct.pack("<Q", len(fbytes)))
    out.write(fbytes)
    if model.g.kind == "lookup":
        out.write(struct.pack("<III", 0, *model.g.table.shape))
        out.write(np.ascontiguousarray(model.g.table, dtype="<f8").tobytes())
    else:
        gbytes = net_to_bytes(model.g.net)
        out.write(struct.pack("<IQ", 1, len(gbytes)))
        out.write(gbytes)
    out.write(np.ascontiguousarray(model.offsets, dtype="<f8").tobytes())
    return out.getvalue()


def model_from_bytes(buf: bytes, name: str = "<bytes>") -> IceBeemModel:
    r = _Reader(buf, name)
    _header(r, KIND_MODEL)
    code = r.take("<I")
    if code not in _MODES:
        raise ConfigError(f"{name}: unknown mode code {code}")
    flen = r.take("<Q")
    f = net_from_bytes(r.raw(flen), name)
    gkind = r.take("<I")
    if gkind == 0:
        M, dg = r.take("<II")
        g = ConditionEmbedding(M, table=r.doubles(M * dg).reshape(M, dg))
    elif gkind == 1:
        glen = r.take("<Q")
        gnet = net_from_bytes(r.raw(glen), name)
        g = ConditionEmbedding(gnet.dims[0], net=gnet)
    else:
        raise ConfigError(f"{name}: unknown embedding kind {gkind}")
    offsets = r.doubles(g.n_segments)
    if r.pos != len(buf):
        raise ConfigError(f"{name}: trailing bytes after model container")
    return IceBeemModel(f, g, _MODES[code], offsets)


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def save_net(path, net: MlpNet, text_dump: bool = True) -> None:
    path = Path(path)
    _atomic_write(path, net_to_bytes(net))
    if text_dump:
        _atomic_write(path.with_name(path.name + ".txt"), net_to_text(net).encode())


def load_net(path) -> MlpNet:
    path = Path(path)
    return net_from_bytes(path.read_bytes(), str(path))


def save_model(path, model: IceBeemModel, text_dump: bool = True) -> None:
    path = Path(path)
    _atomic_write(path, model_to_bytes(model))
    if text_dump:
        _atomic_write(path.with_name(path.name + ".txt"), model_to_text(model).encode())


def load_model(path) -> IceBeemModel:
    path = Path(path)
    return model_from_bytes(path.read_bytes(), str(path))


def load_any(path):
    """Load a network or a model, whichever the container holds."""
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise ConfigError(f"{path}: not an ICEB container")
    kind = struct.unpack_from("<I", buf, 8)[0]
    if kind == KIND_NET:
        return net_from_bytes(buf, str(path))
    return model_from_bytes(buf, str(path))


def _fmt_row(row) -> str:
    return " ".join(repr(float(v)) for v in row)


def net_to_text(net: MlpNet) -> str:
    spec = net.spec
    lines = [
        f"ICEB network v{VERSION}",
        "dims " + " ".join(str(d) for d in spec.dims),
        f"leaky_slope {spec.leaky_slope!r}",
        f"output_activation {spec.output_activation}",
        f"seed {spec.seed}",
        f"unchecked {int(spec.unchecked)}",
    ]
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        lines.append(f"W{l} {w.shape[0]} {w.shape[1]}")
        lines.extend(_fmt_row(row) for row in w)
        lines.append(f"b{l} {b.shape[0]}")
        lines.append(_fmt_row(b))
    return "\n".join(lines) + "\n"


def net_from_text(text: str) -> MlpNet:
    lines = iter(text.splitlines())
    if not next(lines).startswith("ICEB network"):
        raise ConfigError("not a network text dump")
    fields = {}
    for _ in range(5):
        key, _, val = next(lines).partition(" ")
        fields[key] = val
    dims = tuple(int(v) for v in fields["dims"].split())
    spec = MlpSpec(
        dims,
        leaky_slope=float(fields["leaky_slope"]),
        output_activation=fields["output_activation"],
        seed=int(fields["seed"]),
        unchecked=bool(int(fields["unchecked"])),
    )
    weights, biases = [], []
    for _ in range(len(dims) - 1):
        rows, _cols = (int(v) for v in next(lines).split()[1:])
        weights.append(np.array([[float(v) for v in next(lines).split()] for _ in range(rows)]))
        next(lines)
        biases.append(np.array([float(v) for v in next(lines).split()]))
    return MlpNet(spec, weights, biases)


def model_to_text(model: IceBeemModel) -> str:
    parts = [f"ICEB model v{VERSION}", f"mode {model.mode}", "[f]", net_to_text(model.f).rstrip("\n")]
    if model.g.kind == "lookup":
        parts.append(f"[g lookup {model.g.table.shape[0]} {model.g.table.shape[1]}]")
        parts.extend(_fmt_row(row) for row in model.g.table)
    else:
        parts += ["[g network]", net_to_text(model.g.net).rstrip("\n")]
    parts.append("offsets " + _fmt_row(model.offsets))
    return "\n".join(parts) + "\n"
