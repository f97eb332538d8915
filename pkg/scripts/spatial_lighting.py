# spatial_lighting.py

from dataclasses import dataclass

import numpy as np

from panorama_geometry import (
    FOUR_PI,
    Light,
    LightSet,
    check_depthmap,
    check_envmap,
    direction_from_angles,
    directions_to_pixels,
    normalize,
    pixel_directions,
)

MIN_LIGHT_DISTANCE = 1e-6
MIN_KNOWN_DEPTH_FRACTION = 0.99
DEFAULT_FOV = 90.0
RING_SIZE = 8

# 4-neighbours first, then diagonals; the first filled neighbour wins
DILATION_ORDER = (
    (0, -1), (0, 1), (-1, 0), (1, 0),
    (-1, -1), (-1, 1), (1, -1), (1, 1),
)


@dataclass
class CropImage:
    """Rectilinear view cut out of a panorama."""
    data: np.ndarray  # float[h, w, 3]
    fov: float        # horizontal, degrees

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


def parse_translation(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(t)):
        raise ValueError(f"Translation must be finite, got {t}")
    return t


def light_world_position(light: Light) -> np.ndarray:
    """Light center in meters with the camera at the origin."""
    return light.d * light.l


def relocate_lightset(lightset: LightSet, t) -> LightSet:
    """Express every light from an observer moved by t.

    Sizes keep a constant physical area (s' = s (d/d')^2); colors are radiance
    and stay unchanged, as does the ambient term.
    """
    t = parse_translation(t)
    if not np.any(t):
        return lightset.copy()
    lights = []
    for i, light in enumerate(lightset.lights):
        v = light_world_position(light) - t
        distance = float(np.linalg.norm(v))
        if distance <= MIN_LIGHT_DISTANCE:
            raise ValueError(f"Observer at {t.tolist()} coincides with light {i}")
        size = min(light.s * (light.d / distance) ** 2, FOUR_PI)
        lights.append(Light(l=v / distance, d=distance, s=size, c=light.c.copy()))
    return LightSet(lights=lights, ambient=lightset.ambient.copy())


def fill_unknown_depth(depth) -> np.ndarray:
    """Replace unknown (0) depths with the nearest known depth along the row.

    Rows with no known depth at all take the mean of every known depth.
    """
    depth = check_depthmap(depth)
    known = depth > 0
    if not known.any():
        raise ValueError("Depth map has no known depth")
    if known.all():
        return depth.copy()
    fraction = known.mean()
    if fraction < MIN_KNOWN_DEPTH_FRACTION:
        print(f"Warning: only {fraction:.1%} of depth pixels are known")

    filled = depth.copy()
    fallback = float(depth[known].mean())
    width = depth.shape[1]
    cols = np.arange(width)
    for y in range(depth.shape[0]):
        row_known = np.flatnonzero(known[y])
        if row_known.size == 0:
            filled[y] = fallback
            continue
        # circular distance to every known column, ties go to the lower column
        gap = np.abs(cols[:, None] - row_known[None, :])
        gap = np.minimum(gap, width - gap)
        nearest = row_known[np.argmin(gap, axis=1)]
        filled[y] = depth[y, nearest]
    return filled


def _shift(values: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """values[y + dy, x + dx] with wrapping columns and clamped rows."""
    shifted = np.roll(values, -dx, axis=1)
    rows = np.clip(np.arange(values.shape[0]) + dy, 0, values.shape[0] - 1)
    return shifted[rows]


def dilate_holes(envmap: np.ndarray, filled: np.ndarray) -> np.ndarray:
    """Grow filled pixels into holes one ring at a time until none remain."""
    envmap = envmap.copy()
    filled = filled.copy()
    if not filled.any():
        raise ValueError("Nothing to dilate from")
    while not filled.all():
        holes = ~filled
        taken = np.zeros_like(filled)
        for dy, dx in DILATION_ORDER:
            source_filled = _shift(filled, dy, dx)
            take = holes & ~taken & source_filled
            if take.any():
                envmap[take] = _shift(envmap, dy, dx)[take]
                taken |= take
        filled |= taken
    return envmap


def warp_envmap(envmap, depth, t) -> np.ndarray:
    """Re-project a panorama to an observer displaced by t using per-pixel depth.

    Forward splat of every source pixel's world point; the nearest point wins a
    destination pixel, holes are dilated. Radiance values are copied unchanged.
    """
    envmap = check_envmap(envmap)
    height, width = envmap.shape[:2]
    depth = check_depthmap(depth, width, height)
    t = parse_translation(t)
    if not (depth > 0).any():
        raise ValueError("Depth map has no known depth")
    if not np.any(t):
        return envmap.copy()
    depth = fill_unknown_depth(depth)

    points = depth[..., None] * pixel_directions(width, height) - t
    distance = np.linalg.norm(points, axis=-1).ravel()
    # directions_to_pixels expects unit vectors
    unit = points.reshape(-1, 3) / np.where(distance > 0, distance, 1.0)[:, None]
    xs, ys = directions_to_pixels(unit, width, height)
    destination = ys * width + xs

    # nearest point first; ties resolved by source index
    order = np.lexsort((np.arange(distance.size), distance))
    _, first = np.unique(destination[order], return_index=True)
    winners = order[first]

    warped = np.zeros_like(envmap)
    filled = np.zeros((height, width), dtype=bool)
    flat = envmap.reshape(-1, 3)
    warped.reshape(-1, 3)[destination[winners]] = flat[winners]
    filled.reshape(-1)[destination[winners]] = True
    return dilate_holes(warped, filled)


def _view_basis(azimuth: float, elevation: float):
    az = np.radians(azimuth)
    forward = direction_from_angles(azimuth, elevation)
    up = np.array([0.0, 1.0, 0.0])
    right = np.cross(up, forward)
    if np.linalg.norm(right) < 1e-9:
        # looking straight up or down: keep the azimuth's horizontal right vector
        right = np.array([np.cos(az), 0.0, -np.sin(az)])
    right = normalize(right)
    return forward, right, np.cross(forward, right)


def crop_directions(azimuth: float, elevation: float, fov: float, width: int, height: int) -> np.ndarray:
    """Gnomonic view directions float[h, w, 3]; pixel (w/2, h/2) looks at the crop center."""
    if not 0 < fov < 180:
        raise ValueError(f"Field of view must be in (0, 180) degrees, got {fov}")
    forward, right, up = _view_basis(azimuth, elevation)
    half = np.tan(np.radians(fov) / 2.0)
    px = (np.arange(width) - width / 2.0) / (width / 2.0) * half
    py = (height / 2.0 - np.arange(height)) / (width / 2.0) * half
    px, py = np.meshgrid(px, py)
    rays = forward + px[..., None] * right + py[..., None] * up
    return normalize(rays)


def crop_view(envmap, azimuth: float, elevation: float, fov: float = DEFAULT_FOV,
              width: int = 256, height: int = 256) -> CropImage:
    """Nearest-neighbour rectilinear crop centered on (azimuth, elevation) in degrees."""
    envmap = check_envmap(envmap)
    dirs = crop_directions(azimuth, elevation, fov, width, height)
    xs, ys = directions_to_pixels(dirs, envmap.shape[1], envmap.shape[0])
    return CropImage(data=envmap[ys, xs], fov=fov)


def crop_ring(envmap, count: int = RING_SIZE, elevation: float = 0.0, fov: float = DEFAULT_FOV,
              width: int = 256, height: int = 256) -> list:
    """Evenly spaced crops around the horizon, starting at azimuth 0."""
    return [
        crop_view(envmap, 360.0 * k / count, elevation, fov, width, height)
        for k in range(count)
    ]
