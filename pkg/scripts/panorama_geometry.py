# panorama_geometry.py

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

# Y is up, +Z is the camera's forward axis, phi = 0 at the center column.
FOUR_PI = 4.0 * np.pi
UNIT_TOLERANCE = 1e-9
LUMINANCE_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])


def pixel_to_direction(x: int, y: int, width: int, height: int) -> np.ndarray:
    """Unit direction of the center of pixel (x, y)."""
    if not (0 <= x < width and 0 <= y < height):
        raise ValueError(f"Pixel ({x}, {y}) outside a {width}x{height} map")
    theta = np.pi * (y + 0.5) / height
    phi = 2.0 * np.pi * (x + 0.5) / width - np.pi
    return np.array([
        np.sin(theta) * np.sin(phi),
        np.cos(theta),
        np.sin(theta) * np.cos(phi),
    ])


def direction_from_angles(azimuth: float, elevation: float) -> np.ndarray:
    """Unit direction for an azimuth (0 = +Z, 90 = +X) and an elevation above the horizon, in degrees."""
    az, el = np.radians(azimuth), np.radians(elevation)
    return np.array([np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)])


def directions_to_pixels(dirs: np.ndarray, width: int, height: int):
    """Vectorized direction_to_pixel. dirs: float[..., 3] -> (int[...], int[...])"""
    dirs = np.asarray(dirs, dtype=np.float64)
    theta = np.arccos(np.clip(dirs[..., 1], -1.0, 1.0))
    phi = np.arctan2(dirs[..., 0], dirs[..., 2])
    xs = np.floor((phi + np.pi) / (2.0 * np.pi) * width).astype(np.int64) % width
    ys = np.clip(np.floor(theta / np.pi * height).astype(np.int64), 0, height - 1)
    return xs, ys


def direction_to_pixel(u, width: int, height: int) -> tuple:
    """Pixel (column, row) containing direction u. Azimuth wraps, poles clamp."""
    xs, ys = directions_to_pixels(np.asarray(u, dtype=np.float64), width, height)
    return int(xs), int(ys)


def pixel_solid_angle(y, width: int, height: int):
    """Exact solid angle of a pixel in row y (scalar or array of rows)."""
    y = np.asarray(y)
    if np.any(y < 0) or np.any(y >= height):
        raise ValueError(f"Row {y} outside a map of height {height}")
    band = np.cos(np.pi * y / height) - np.cos(np.pi * (y + 1) / height)
    omega = (2.0 * np.pi / width) * band
    return float(omega) if omega.ndim == 0 else omega


@lru_cache(maxsize=16)
def pixel_directions(width: int, height: int) -> np.ndarray:
    """All pixel-center directions as float[h, w, 3]. Cached, read-only."""
    theta = np.pi * (np.arange(height) + 0.5) / height
    phi = 2.0 * np.pi * (np.arange(width) + 0.5) / width - np.pi
    phi, theta = np.meshgrid(phi, theta)
    dirs = np.stack([
        np.sin(theta) * np.sin(phi),
        np.cos(theta),
        np.sin(theta) * np.cos(phi),
    ], axis=-1)
    dirs.setflags(write=False)
    return dirs


@lru_cache(maxsize=16)
def solid_angle_map(width: int, height: int) -> np.ndarray:
    """Per-pixel solid angles as float[h, w]. Cached, read-only."""
    rows = pixel_solid_angle(np.arange(height), width, height)
    omega = np.repeat(rows[:, None], width, axis=1)
    omega.setflags(write=False)
    return omega


def luminance(rgb) -> np.ndarray:
    """Rec. 709 luminance of float[..., 3], summed in the same order for a pixel or a whole map."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = LUMINANCE_WEIGHTS
    return rgb[..., 0] * r + rgb[..., 1] * g + rgb[..., 2] * b


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def check_envmap(envmap) -> np.ndarray:
    """Validate an environment map and return it as float64[h, w, 3]."""
    envmap = np.asarray(envmap, dtype=np.float64)
    if envmap.ndim != 3 or envmap.shape[2] != 3:
        raise ValueError(f"Environment map must be float[h, w, 3], got shape {envmap.shape}")
    height, width = envmap.shape[:2]
    if height == 0 or width != 2 * height:
        raise ValueError(f"Environment map must be 2:1, got {width}x{height}")
    if not np.all(np.isfinite(envmap)):
        raise ValueError("Environment map contains non-finite values")
    if np.any(envmap < 0):
        raise ValueError("Environment map contains negative radiance")
    return envmap


def check_depthmap(depth, width: int = None, height: int = None) -> np.ndarray:
    """Validate a depth map (0 = unknown), optionally against a companion map size."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValueError(f"Depth map must be float[h, w], got shape {depth.shape}")
    if width is not None and depth.shape != (height, width):
        raise ValueError(
            f"Depth map is {depth.shape[1]}x{depth.shape[0]}, expected {width}x{height}"
        )
    if not np.all(np.isfinite(depth)) or np.any(depth < 0):
        raise ValueError("Depth map must hold finite distances >= 0 (0 = unknown)")
    return depth


@dataclass
class Light:
    """One parametric source: direction l, distance d (m), solid angle s (sr), RGB color c."""
    l: np.ndarray
    d: float
    s: float
    c: np.ndarray

    def __post_init__(self):
        self.l = np.asarray(self.l, dtype=np.float64).reshape(3)
        self.c = np.asarray(self.c, dtype=np.float64).reshape(3)
        self.d = float(self.d)
        self.s = float(self.s)
        if abs(np.dot(self.l, self.l) - 1.0) > UNIT_TOLERANCE:
            raise ValueError(f"Light direction {self.l} is not unit length")
        if not self.d > 0:
            raise ValueError(f"Light distance must be > 0, got {self.d}")
        if not 0 < self.s <= FOUR_PI:
            raise ValueError(f"Light size must be in (0, 4pi], got {self.s}")
        if not np.all(np.isfinite(self.c)) or np.any(self.c < 0):
            raise ValueError(f"Light color must be >= 0, got {self.c}")

    @property
    def is_off(self) -> bool:
        return not np.any(self.c)


@dataclass
class LightSet:
    """N parametric lights plus an ambient RGB term."""
    lights: list = field(default_factory=list)
    ambient: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.lights = list(self.lights)
        self.ambient = np.asarray(self.ambient, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(self.ambient)) or np.any(self.ambient < 0):
            raise ValueError(f"Ambient must be >= 0, got {self.ambient}")

    def __len__(self):
        return len(self.lights)

    def stack(self) -> dict:
        """Pack into arrays: directions (N,3), distances (N,), sizes (N,), colors (N,3), ambient (3,)."""
        n = len(self.lights)
        return {
            "directions": np.array([light.l for light in self.lights]).reshape(n, 3),
            "distances": np.array([light.d for light in self.lights], dtype=np.float64),
            "sizes": np.array([light.s for light in self.lights], dtype=np.float64),
            "colors": np.array([light.c for light in self.lights]).reshape(n, 3),
            "ambient": self.ambient.copy(),
        }

    @classmethod
    def from_arrays(cls, directions, distances, sizes, colors, ambient, renormalize: bool = True):
        """Inverse of stack(); renormalizes directions and clamps sizes into (0, 4pi].

        renormalize=False keeps directions bit-exact; they must already be unit.
        """
        directions = np.array(directions, dtype=np.float64).reshape(-1, 3)
        if renormalize:
            directions = normalize(directions)
        sizes = np.clip(np.asarray(sizes, dtype=np.float64), 1e-4, FOUR_PI)
        colors = np.maximum(np.asarray(colors, dtype=np.float64).reshape(-1, 3), 0.0)
        lights = [
            Light(l=l, d=d, s=s, c=c)
            for l, d, s, c in zip(directions, distances, sizes, colors)
        ]
        return cls(lights=lights, ambient=np.maximum(ambient, 0.0))

    def copy(self):
        return LightSet(
            lights=[Light(l=light.l.copy(), d=light.d, s=light.s, c=light.c.copy()) for light in self.lights],
            ambient=self.ambient.copy(),
        )
