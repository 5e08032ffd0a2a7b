"""Readers and writers for clouds, images, intrinsics, configs and poses.

Formats:

* PLY, ASCII or binary little-endian, vertex properties ``x y z`` and
  ``red green blue`` (uchar); other properties and elements are skipped.
* PPM P6 with maxval 255 (native), other image types through ``CODECS``.
* ``key=value`` text for intrinsics and alignment settings.
* Pose files: the six parameters on one line followed by the 4x4 matrix.
"""

from __future__ import annotations

import dataclasses
import re
import warnings
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, PointCloud, PoseParams

__all__ = [
    "PlyError",
    "ImageFormatError",
    "ConfigError",
    "load_ply",
    "save_ply",
    "parse_ply",
    "load_image",
    "save_image",
    "parse_ppm",
    "encode_ppm",
    "register_codec",
    "load_intrinsics",
    "parse_key_values",
    "load_config",
    "save_pose",
    "load_pose",
]

MAX_HEADER = 1 << 16


class PlyError(ValueError):
    """Malformed or unsupported PLY data; ``offset`` is the byte position."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class ImageFormatError(ValueError):
    pass


class ConfigError(ValueError):
    """Bad key=value input; ``key`` names the offending entry when known."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


# PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_FORMATS = ("ascii", "binary_little_endian")


def _parse_ply_header(data):
    if not data.startswith(b"ply"):
        raise PlyError("missing 'ply' magic", 0)
    end = data.find(b"end_header", 0, MAX_HEADER)
    if end < 0:
        raise PlyError("no end_header within the first 64 KiB", min(len(data), MAX_HEADER))
    body_start = data.find(b"\n", end)
    if body_start < 0:
        raise PlyError("end_header line is not terminated", end)
    body_start += 1
    try:
        text = data[:end].decode("ascii")
    except UnicodeDecodeError as exc:
        raise PlyError("header is not ASCII", exc.start) from None

    fmt = None
    elements = []
    lines = text.splitlines(keepends=True)
    offset = len(lines[0])
    for line in lines[1:]:
        pos = offset
        offset += len(line)
        words = line.split()
        if not words or words[0] in ("comment", "obj_info"):
            continue
        if words[0] == "format":
            if len(words) != 3 or words[1] not in _FORMATS:
                raise PlyError(f"unsupported format line {line.strip()!r}", pos)
            fmt = words[1]
        elif words[0] == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise PlyError(f"bad element line {line.strip()!r}", pos)
            elements.append((words[1], int(words[2]), []))
        elif words[0] == "property":
            if not elements:
                raise PlyError("property before any element", pos)
            if len(words) == 5 and words[1] == "list":
                if words[2] not in _PLY_TYPES or words[3] not in _PLY_TYPES:
                    raise PlyError(f"bad list property {line.strip()!r}", pos)
                elements[-1][2].append((words[4], None, (words[2], words[3])))
            elif len(words) == 3 and words[1] in _PLY_TYPES:
                elements[-1][2].append((words[2], words[1], None))
            else:
                raise PlyError(f"bad property line {line.strip()!r}", pos)
        else:
            raise PlyError(f"unexpected header keyword {words[0]!r}", pos)
    if fmt is None:
        raise PlyError("missing format line", 0)
    return fmt, elements, body_start


def _vertex_layout(props, offset):
    names = [p[0] for p in props]
    for required in ("x", "y", "z", "red", "green", "blue"):
        if required not in names:
            raise PlyError(f"vertex element lacks property {required!r}", offset)
    for name, typ, lst in props:
        if lst is not None:
            raise PlyError(f"list property {name!r} in vertex element is not supported", offset)
        if name in ("red", "green", "blue") and _PLY_TYPES[typ] != "u1":
            raise PlyError(f"color property {name!r} must be uchar", offset)
    return names


def _fixed_size(props):
    if any(lst is not None for _, _, lst in props):
        return None
    return sum(np.dtype(_PLY_TYPES[typ]).itemsize for _, typ, _ in props)


def _cloud(xyz, rgb, offset):
    xyz = np.asarray(xyz, dtype=float)
    if len(xyz) == 0:
        raise PlyError("no vertices", offset)
    if not np.all(np.isfinite(xyz)):
        raise PlyError("non-finite vertex coordinates", offset)
    return PointCloud(xyz, np.asarray(rgb, dtype=float) / 255.0)


def _parse_binary(data, elements, pos):
    for name, count, props in elements:
        size = _fixed_size(props)
        if name != "vertex":
            if size is None:
                raise PlyError(f"cannot skip variable-size element {name!r} before vertices", pos)
            pos += count * size
            continue
        _vertex_layout(props, pos)
        dtype = np.dtype([(p, "<" + _PLY_TYPES[t]) for p, t, _ in props])
        need = count * dtype.itemsize
        if pos + need > len(data):
            raise PlyError(f"truncated body: {count} vertices need {need} bytes", len(data))
        rec = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
        xyz = np.stack([rec["x"], rec["y"], rec["z"]], axis=1)
        rgb = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1)
        return _cloud(xyz, rgb, pos)
    raise PlyError("no vertex element", pos)


def _parse_ascii(data, elements, pos):
    for name, count, props in elements:
        if name != "vertex":
            for _ in range(count):
                nl = data.find(b"\n", pos)
                if nl < 0:
                    raise PlyError(f"truncated element {name!r}", len(data))
                pos = nl + 1
            continue
        names = _vertex_layout(props, pos)
        cols = [names.index(k) for k in ("x", "y", "z", "red", "green", "blue")]
        xyz = np.empty((count, 3)) if count * 3 <= len(data) else None
        if xyz is None:
            raise PlyError(f"vertex count {count} exceeds the file size", pos)
        rgb = np.empty((count, 3))
        for i in range(count):
            nl = data.find(b"\n", pos)
            line = data[pos:] if nl < 0 else data[pos:nl]
            if not line.strip() and nl < 0:
                raise PlyError(f"truncated body: expected {count} vertices, got {i}", pos)
            words = line.split()
            if len(words) != len(names):
                raise PlyError(f"vertex {i} has {len(words)} values, expected {len(names)}", pos)
            try:
                xyz[i] = [float(words[c]) for c in cols[:3]]
                color = [int(words[c]) for c in cols[3:]]
            except ValueError:
                raise PlyError(f"non-numeric value in vertex {i}", pos) from None
            if min(color) < 0 or max(color) > 255:
                raise PlyError(f"color out of uchar range in vertex {i}", pos)
            rgb[i] = color
            pos = len(data) if nl < 0 else nl + 1
        return _cloud(xyz, rgb, pos)
    raise PlyError("no vertex element", pos)


def parse_ply(data):
    """Parse PLY bytes into a PointCloud. Raises PlyError on bad input."""
    fmt, elements, pos = _parse_ply_header(data)
    if fmt == "ascii":
        return _parse_ascii(data, elements, pos)
    return _parse_binary(data, elements, pos)


def load_ply(path):
    return parse_ply(Path(path).read_bytes())


def save_ply(path, pc, binary=False):
    """Write ``pc`` as PLY; colors are rounded to the nearest uchar."""
    rgb = np.rint(np.clip(pc.colors, 0, 1) * 255).astype(np.uint8)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\nelement vertex {len(pc)}\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    ).encode("ascii")
    if binary:
        rec = np.empty(len(pc), dtype=[("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
                                       ("red", "u1"), ("green", "u1"), ("blue", "u1")])
        rec["x"], rec["y"], rec["z"] = pc.positions.T
        rec["red"], rec["green"], rec["blue"] = rgb.T
        body = rec.tobytes()
    else:
        lines = [f"{x!r} {y!r} {z!r} {r} {g} {b}"
                 for (x, y, z), (r, g, b) in zip(pc.positions.tolist(), rgb.tolist())]
        body = ("\n".join(lines) + "\n").encode("ascii")
    Path(path).write_bytes(header + body)


# images

_PPM_HEADER = re.compile(rb"P6(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def parse_ppm(data):
    """Decode binary PPM (P6, maxval 255) into a float image in [0, 1]."""
    if not data.startswith(b"P6"):
        raise ImageFormatError("not a P6 PPM file")
    m = _PPM_HEADER.match(data[:4096])
    if m is None:
        raise ImageFormatError("malformed PPM header")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}, only 255 is supported")
    if width < 1 or height < 1:
        raise ImageFormatError("PPM dimensions must be positive")
    need = width * height * 3
    if len(data) - m.end() < need:
        raise ImageFormatError(f"short read: need {need} pixel bytes, have {len(data) - m.end()}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=need, offset=m.end())
    return pixels.reshape(height, width, 3) / 255.0


def encode_ppm(image):
    image = np.asarray(image, dtype=float)
    height, width = image.shape[:2]
    pixels = np.rint(np.clip(image, 0, 1) * 255).astype(np.uint8)
    return f"P6\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes()


def _load_png(path):
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=float) / 255.0


def _save_png(path, image):
    from PIL import Image

    pixels = np.rint(np.clip(image, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(pixels, "RGB").save(path)


CODECS = {".png": (_load_png, _save_png)}


def register_codec(suffix, loader, saver):
    """Add an image codec: ``loader(path) -> (h, w, 3) floats``, ``saver(path, image)``."""
    CODECS[suffix.lower()] = (loader, saver)


def load_image(path):
    path = Path(path)
    data = path.read_bytes()
    if data.startswith(b"P6"):
        return parse_ppm(data)
    codec = CODECS.get(path.suffix.lower())
    if codec is None:
        raise ImageFormatError(f"unsupported image format for {path.name}")
    try:
        return codec[0](path)
    except ImportError as exc:
        raise ImageFormatError(f"codec for {path.suffix} unavailable: {exc}") from None


def save_image(path, image):
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pnm", ""):
        path.write_bytes(encode_ppm(image))
        return
    codec = CODECS.get(suffix)
    if codec is None:
        raise ImageFormatError(f"unsupported image format {suffix}")
    codec[1](path, np.asarray(image, dtype=float))


# key=value files


def parse_key_values(text):
    """Parse ``key = value`` lines; ``#`` starts a comment.

    A repeated key keeps its last value and emits a warning.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in values:
            warnings.warn(f"duplicate key {key!r} on line {lineno}; last value wins", stacklevel=2)
        values[key] = value
    return values


def load_intrinsics(path):
    values = parse_key_values(Path(path).read_text())
    parsed = {}
    for key in ("fx", "fy", "cx", "cy", "width", "height"):
        if key not in values:
            raise ConfigError(f"missing key {key!r}", key)
        try:
            parsed[key] = float(values[key])
        except ValueError:
            raise ConfigError(f"key {key!r} is not numeric: {values[key]!r}", key) from None
    for key in ("width", "height"):
        if not parsed[key].is_integer():
            raise ConfigError(f"key {key!r} must be an integer", key)
        parsed[key] = int(parsed[key])
    try:
        return CameraIntrinsics(**parsed)
    except ValueError as exc:
        raise ConfigError(f"invalid intrinsics: {exc}") from None


def _convert(field_type, key, value):
    if value.lower() == "none" and "None" in str(field_type):
        return None
    for kind in (int, float, str):
        if kind.__name__ in str(field_type):
            try:
                return kind(value)
            except ValueError:
                continue
    raise ConfigError(f"key {key!r} has invalid value {value!r}", key)


def load_config(path, cls):
    """Read ``key=value`` settings for the dataclass ``cls``; returns a dict."""
    values = parse_key_values(Path(path).read_text())
    fields = {f.name: f.type for f in dataclasses.fields(cls)}
    out = {}
    for key, value in values.items():
        if key not in fields:
            raise ConfigError(f"unknown setting {key!r}", key)
        out[key] = _convert(fields[key], key, value)
    return out


# poses


def save_pose(path, theta):
    """Write the six parameters, then the 4x4 world-to-camera matrix."""
    lines = ["# omega_x omega_y omega_z tau_x tau_y tau_z",
             " ".join(repr(float(x)) for x in theta.vector),
             "# 4x4 matrix, world -> camera"]
    lines += [" ".join(repr(float(x)) for x in row) for row in theta.matrix()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_pose(path):
    """Read a pose file: a line of six parameters, or four rows of a 4x4 matrix."""
    rows = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            try:
                rows.append([float(x) for x in line.split()])
            except ValueError:
                raise ConfigError(f"non-numeric pose entry {line!r}") from None
    if rows and len(rows[0]) == 6:
        return PoseParams.from_vector(rows[0])
    if len(rows) == 4 and all(len(r) == 4 for r in rows):
        return PoseParams.from_matrix(np.array(rows))
    raise ConfigError("pose file must hold 6 parameters or a 4x4 matrix")
