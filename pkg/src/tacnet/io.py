"""On-disk formats: raw tensors, checkpoints, PGM/PPM images, key = value configs.

Raw tensor (``.tact``): ``b"TACT"``, u32 version, u32 rank, rank x u32 dims,
then little-endian float32 row-major payload.

Checkpoint (``.tacl``): ``b"TACL"``, u32 version, then per tensor u32 name
length, UTF-8 name, u32 rank, rank x u32 dims, little-endian float32 payload.
"""

import struct
from dataclasses import fields

import numpy as np

TENSOR_MAGIC = b"TACT"
CHECKPOINT_MAGIC = b"TACL"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Malformed file contents."""


def _u32(buf, pos):
    if pos + 4 > len(buf):
        raise FormatError("truncated header")
    return struct.unpack_from("<I", buf, pos)[0], pos + 4


def _pack_tensor(arr):
    a = np.array(arr, dtype="<f4", order="C")
    head = struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes()


def _unpack_tensor(buf, pos):
    rank, pos = _u32(buf, pos)
    dims = []
    for _ in range(rank):
        d, pos = _u32(buf, pos)
        dims.append(d)
    nbytes = int(np.prod(dims, dtype=np.int64)) * 4
    if pos + nbytes > len(buf):
        raise FormatError("payload shorter than product(dims) * 4")
    arr = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims)
    return arr.astype(np.float32), pos + nbytes


def encode_tensor(arr):
    return TENSOR_MAGIC + struct.pack("<I", FORMAT_VERSION) + _pack_tensor(arr)


def decode_tensor(buf):
    if buf[:4] != TENSOR_MAGIC:
        raise FormatError("not a raw tensor file (bad magic)")
    version, pos = _u32(buf, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported tensor version {version}")
    arr, pos = _unpack_tensor(buf, pos)
    if pos != len(buf):
        raise FormatError("trailing bytes after payload")
    return arr


def write_tensor(path, arr):
    with open(path, "wb") as fh:
        fh.write(encode_tensor(arr))


def read_tensor(path):
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())


def write_checkpoint(path, tensors):
    """Write an ordered mapping of name -> array."""
    out = [CHECKPOINT_MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw + _pack_tensor(arr))
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def read_checkpoint(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version, pos = _u32(buf, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    tensors = {}
    while pos < len(buf):
        n, pos = _u32(buf, pos)
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        tensors[name], pos = _unpack_tensor(buf, pos)
    return tensors


def to_bytes8(values):
    """Map [0, 1] to 0..255 with round-half-up."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, image):
    img = to_bytes8(image)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def write_ppm(path, rgb):
    img = to_bytes8(rgb)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_pnm(path):
    """Read binary P5/P6 with maxval 255; returns uint8 array."""
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        end = pos
        while not buf[end:end + 1].isspace():
            end += 1
        tokens.append(buf[pos:end].decode("ascii"))
        pos = end
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255 or magic not in ("P5", "P6"):
        raise FormatError(f"unsupported PNM {magic} maxval {maxval}")
    data = np.frombuffer(buf, dtype=np.uint8, offset=pos + 1)
    return data.reshape((h, w) if magic == "P5" else (h, w, 3))


def overlay_rgb(prob, attention):
    """Grey probability map with the attention map (scaled to its max) on red."""
    p = np.clip(np.asarray(prob, dtype=np.float64), 0.0, 1.0)
    a = np.asarray(attention, dtype=np.float64)
    peak = a.max()
    a = a / peak if peak > 0 else np.zeros_like(a)
    return np.stack([np.maximum(p, a), p, p], axis=-1)


def _parse_value(raw, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def read_config_text(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def apply_config(cls, raw, **overrides):
    """Build dataclass ``cls`` from string values, ignoring keys it does not own."""
    kwargs = {}
    for f in fields(cls):
        default = f.default
        if f.name in raw:
            try:
                kwargs[f.name] = _parse_value(raw[f.name], default)
            except ValueError as exc:
                raise FormatError(f"config key {f.name}: {exc}") from None
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**kwargs)


def load_config(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        return read_config_text(fh.read())
