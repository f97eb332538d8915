# hdr_io.py

import json
import os
import re
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from PIL import Image

from panorama_geometry import UNIT_TOLERANCE, Light, LightSet, check_depthmap, check_envmap

LIGHTSET_VERSION = 1
RENORMALIZE_TOLERANCE = 0.02
RGBE_MIN_SCANLINE = 8
RGBE_MAX_SCANLINE = 0x7FFF
PREVIEW_GAMMA = 2.2


class HdrFormatError(ValueError):
    """Base class for malformed HDR / PFM content."""


class MalformedHeaderError(HdrFormatError):
    pass


class AspectRatioError(HdrFormatError):
    pass


class NegativeRadianceError(HdrFormatError):
    pass


class NonFiniteRadianceError(HdrFormatError):
    pass


class TruncatedStreamError(HdrFormatError):
    def __init__(self, message="unexpected end of stream"):
        super().__init__(message)


class LightSetFormatError(ValueError):
    pass


@contextmanager
def atomic_output(path):
    """Yield a temp path next to `path`; move it into place only if the block succeeds."""
    path = Path(path)
    try:
        fd, tmp_name = tempfile.mkstemp(prefix=f".{path.stem}.", suffix=path.suffix, dir=path.parent)
    except OSError as e:
        # report the requested path, not the temp name
        raise type(e)(e.errno, e.strerror, str(path)) from e
    os.close(fd)
    tmp_path = Path(tmp_name)
    try:
        yield tmp_path
        os.replace(tmp_path, path)
    finally:
        if tmp_path.exists():
            tmp_path.unlink()


class _Reader:
    """Byte cursor that reports truncation uniformly."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def readline(self) -> bytes:
        end = self.data.find(b"\n", self.pos)
        if end < 0:
            raise TruncatedStreamError()
        line = self.data[self.pos:end]
        self.pos = end + 1
        return line

    def read(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise TruncatedStreamError()
        chunk = self.data[self.pos:self.pos + count]
        self.pos += count
        return chunk


# RGBE

def rgbe_to_rgb(rgbe: np.ndarray) -> np.ndarray:
    """uint8[..., 4] -> float64[..., 3]; exponent byte 0 decodes to black."""
    rgb = rgbe[..., :3].astype(np.float64)
    e = rgbe[..., 3:].astype(np.int64)
    scale = np.where(e > 0, np.ldexp(1.0, e - (128 + 8)), 0.0)
    return rgb * scale


def rgb_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    """float[..., 3] -> uint8[..., 4] shared-exponent encoding, mantissas rounded."""
    rgb = np.asarray(rgb, dtype=np.float64)
    peak = rgb.max(axis=-1)
    mantissa, exponent = np.frexp(peak)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(peak > 1e-32, mantissa * 256.0 / peak, 0.0)
    quantized = np.clip(np.floor(rgb * scale[..., None] + 0.5), 0, 255)
    rgbe = np.zeros(rgb.shape[:-1] + (4,), dtype=np.uint8)
    rgbe[..., :3] = quantized.astype(np.uint8)
    rgbe[..., 3] = np.where(peak > 1e-32, np.clip(exponent + 128, 0, 255), 0).astype(np.uint8)
    rgbe[peak <= 1e-32] = 0
    return rgbe


def _parse_rgbe_header(reader: _Reader):
    magic = reader.readline()
    if not magic.startswith(b"#?"):
        raise MalformedHeaderError(f"Missing '#?' magic, got {magic[:16]!r}")
    while True:
        line = reader.readline()
        if line == b"":
            break
        if line.startswith(b"FORMAT=") and line != b"FORMAT=32-bit_rle_rgbe":
            raise MalformedHeaderError(f"Unsupported format line {line.decode(errors='replace')}")
    resolution = reader.readline().decode(errors="replace")
    match = re.fullmatch(r"-Y (\d+) \+X (\d+)", resolution.strip())
    if not match:
        raise MalformedHeaderError(f"Expected '-Y <h> +X <w>' but got '{resolution}'")
    height, width = map(int, match.groups())
    return width, height


def _parse_rle_scanline(reader: _Reader, width: int) -> np.ndarray:
    buffer = np.zeros((width, 4), np.uint8)
    for channel in range(4):
        i = 0
        while i < width:
            count = reader.read(1)[0]
            if count > 128:
                count -= 128
                if i + count > width:
                    raise MalformedHeaderError("RLE run overflows scanline")
                buffer[i:i + count, channel] = reader.read(1)[0]
            else:
                if count == 0 or i + count > width:
                    raise MalformedHeaderError("Bad RLE literal count")
                buffer[i:i + count, channel] = np.frombuffer(reader.read(count), np.uint8)
            i += count
    return buffer


def _parse_rgbe_body(reader: _Reader, width: int, height: int) -> np.ndarray:
    rgbe = np.zeros((height, width, 4), np.uint8)
    for y in range(height):
        head = reader.read(4)
        is_rle = (
            RGBE_MIN_SCANLINE <= width <= RGBE_MAX_SCANLINE
            and head[0] == 2 and head[1] == 2 and not head[2] & 0x80
        )
        if is_rle:
            if (head[2] << 8) + head[3] != width:
                raise MalformedHeaderError("RLE scanline width mismatch")
            rgbe[y] = _parse_rle_scanline(reader, width)
        else:
            flat = head + reader.read(4 * (width - 1))
            rgbe[y] = np.frombuffer(flat, np.uint8).reshape(width, 4)
    return rgbe


# PFM

def _parse_pfm(reader: _Reader, channels_expected: int) -> np.ndarray:
    kind = reader.readline().strip()
    if kind not in (b"PF", b"Pf"):
        raise MalformedHeaderError(f"Unknown PFM kind {kind!r}")
    channels = 3 if kind == b"PF" else 1
    if channels != channels_expected:
        raise MalformedHeaderError(f"Expected a {channels_expected}-channel PFM, got {kind.decode()}")
    try:
        width, height = map(int, reader.readline().split())
        scale = float(reader.readline().strip())
    except ValueError as e:
        raise MalformedHeaderError(f"Bad PFM size or scale line: {e}") from e
    if scale == 0:
        raise MalformedHeaderError("PFM scale must be non-zero")
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    data = np.frombuffer(reader.read(4 * count), dtype=dtype).astype(np.float64)
    # rows are stored bottom to top
    return data.reshape(height, width, channels)[::-1]


def _pfm_bytes(data: np.ndarray) -> bytes:
    height, width = data.shape[:2]
    channels = 1 if data.ndim == 2 else data.shape[2]
    kind = b"PF" if channels == 3 else b"Pf"
    header = kind + b"\n" + f"{width} {height}\n".encode() + b"-1.0\n"
    body = np.ascontiguousarray(data[::-1], dtype="<f4").tobytes()
    return header + body


# Environment maps

def load_image(path) -> np.ndarray:
    """Load an RGBE (.hdr) or RGB PFM file as float64[h, w, 3] without the 2:1 check."""
    path = Path(path)
    reader = _Reader(path.read_bytes())
    if reader.data.startswith(b"#?"):
        width, height = _parse_rgbe_header(reader)
        rgb = rgbe_to_rgb(_parse_rgbe_body(reader, width, height))
    elif reader.data.startswith(b"P"):
        rgb = _parse_pfm(reader, channels_expected=3)
    else:
        raise MalformedHeaderError(f"{path.name}: not a Radiance HDR or PFM file")
    if not np.all(np.isfinite(rgb)):
        raise NonFiniteRadianceError(f"{path.name}: non-finite radiance values")
    if np.any(rgb < 0):
        raise NegativeRadianceError(f"{path.name}: negative radiance values")
    return rgb


def load_envmap(path) -> np.ndarray:
    rgb = load_image(path)
    height, width = rgb.shape[:2]
    if width != 2 * height:
        raise AspectRatioError(f"{Path(path).name}: panorama must be 2:1, got {width}x{height}")
    return rgb


def save_image(data, path, format: str = "rgbe"):
    """Write float[h, w, 3] as flat-scanline RGBE or little-endian PFM."""
    data = np.asarray(data, dtype=np.float64)
    if format == "rgbe":
        height, width = data.shape[:2]
        header = f"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y {height} +X {width}\n".encode()
        payload = header + rgb_to_rgbe(data).tobytes()
    elif format == "pfm":
        payload = _pfm_bytes(data)
    else:
        raise ValueError(f"Unknown image format: {format}")
    with atomic_output(path) as tmp:
        tmp.write_bytes(payload)


def save_envmap(envmap, path, format: str = "rgbe"):
    save_image(check_envmap(envmap), path, format)


def format_for_path(path) -> str:
    return "pfm" if Path(path).suffix.lower() == ".pfm" else "rgbe"


# Depth maps

def load_depthmap(path) -> np.ndarray:
    """Single-channel PFM in meters; 0.0 marks unknown depth."""
    reader = _Reader(Path(path).read_bytes())
    depth = _parse_pfm(reader, channels_expected=1)[..., 0]
    return check_depthmap(depth)


def save_depthmap(depth, path):
    depth = check_depthmap(depth)
    with atomic_output(path) as tmp:
        tmp.write_bytes(_pfm_bytes(depth))


# Light sets

_LIGHTSET_FIELDS = {"version", "lights", "ambient"}
_LIGHT_FIELDS = {"l", "d", "s", "c"}


def _triple(value, name: str) -> np.ndarray:
    if not isinstance(value, list) or len(value) != 3:
        raise LightSetFormatError(f"'{name}' must be a list of 3 numbers")
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise LightSetFormatError(f"'{name}' must be finite")
    return arr


def lightset_from_document(doc: dict) -> LightSet:
    if not isinstance(doc, dict):
        raise LightSetFormatError("Light-set document must be an object")
    unknown = set(doc) - _LIGHTSET_FIELDS
    if unknown:
        raise LightSetFormatError(f"Unknown fields: {sorted(unknown)}")
    if doc.get("version") != LIGHTSET_VERSION:
        raise LightSetFormatError(f"Unsupported version {doc.get('version')!r}")
    ambient = _triple(doc.get("ambient"), "ambient")
    if np.any(ambient < 0):
        raise LightSetFormatError(f"Negative ambient {ambient.tolist()}")

    lights = []
    for i, record in enumerate(doc.get("lights", [])):
        if not isinstance(record, dict):
            raise LightSetFormatError(f"Light {i} must be an object")
        unknown = set(record) - _LIGHT_FIELDS
        missing = _LIGHT_FIELDS - set(record)
        if unknown or missing:
            raise LightSetFormatError(f"Light {i}: unknown {sorted(unknown)}, missing {sorted(missing)}")
        l = _triple(record["l"], f"lights[{i}].l")
        norm = np.linalg.norm(l)
        if abs(norm - 1.0) > RENORMALIZE_TOLERANCE:
            raise LightSetFormatError(f"Light {i}: direction norm {norm:.6f} is not unit")
        c = _triple(record["c"], f"lights[{i}].c")
        try:
            d, s = float(record["d"]), float(record["s"])
        except (TypeError, ValueError) as e:
            raise LightSetFormatError(f"Light {i}: d and s must be numbers") from e
        if d <= 0 or s <= 0 or np.any(c < 0):
            raise LightSetFormatError(f"Light {i}: negative or zero d/s, or negative color")
        try:
            if abs(norm - 1.0) > UNIT_TOLERANCE:
                l = l / norm
            lights.append(Light(l=l, d=d, s=s, c=c))
        except ValueError as e:
            raise LightSetFormatError(f"Light {i}: {e}") from e
    return LightSet(lights=lights, ambient=ambient)


def lightset_to_document(lightset: LightSet) -> dict:
    return {
        "version": LIGHTSET_VERSION,
        "lights": [
            {"l": light.l.tolist(), "d": light.d, "s": light.s, "c": light.c.tolist()}
            for light in lightset.lights
        ],
        "ambient": lightset.ambient.tolist(),
    }


def load_lightset(path) -> LightSet:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise LightSetFormatError(f"Not a light-set document: {e}") from e
    return lightset_from_document(doc)


def save_lightset(lightset: LightSet, path):
    text = json.dumps(lightset_to_document(lightset), indent=2)
    with atomic_output(path) as tmp:
        tmp.write_text(text + "\n", encoding="utf-8")


# Previews

def tonemap(data, exposure: float = 1.0) -> np.ndarray:
    """float[h, w, 3] -> uint8[h, w, 3] with a 1/2.2 gamma."""
    if exposure <= 0:
        raise ValueError(f"Exposure must be > 0, got {exposure}")
    scaled = np.clip(exposure * np.asarray(data, dtype=np.float64), 0.0, None)
    encoded = np.clip(scaled ** (1.0 / PREVIEW_GAMMA), 0.0, 1.0)
    return np.round(encoded * 255.0).astype(np.uint8)


def save_preview(data, path, exposure: float = 1.0):
    pixels = tonemap(data, exposure)
    with atomic_output(path) as tmp:
        Image.fromarray(pixels).save(tmp, format="PNG")
