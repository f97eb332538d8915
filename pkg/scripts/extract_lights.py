# extract_lights.py

from collections import deque
from dataclasses import dataclass

import numpy as np

from panorama_geometry import (
    FOUR_PI,
    Light,
    LightSet,
    check_depthmap,
    check_envmap,
    luminance,
    normalize,
    pixel_directions,
    solid_angle_map,
)

GROWTH_FRACTION = 1.0 / 3.0   # growth stops under a third of the seed
ENERGY_FRACTION = 0.10        # significant sources carry >= 10% of the strongest
MAX_LIGHTS = 10
DEFAULT_DEPTH = 3.0
MIN_SIZE = 1e-4

NEIGHBORS = (
    (-1, 0), (1, 0), (0, -1), (0, 1),
    (-1, -1), (-1, 1), (1, 1), (1, -1),
)


@dataclass
class LightMask:
    """Pixels of one detected source. pixels: int[k, 2] as (x, y)."""
    pixels: np.ndarray
    peak: float
    energy: float

    @property
    def xs(self):
        return self.pixels[:, 0]

    @property
    def ys(self):
        return self.pixels[:, 1]

    def to_grid(self, width: int, height: int) -> np.ndarray:
        grid = np.zeros((height, width), dtype=bool)
        grid[self.ys, self.xs] = True
        return grid


def grow_region(lum: np.ndarray, blocked: np.ndarray, seed: tuple, floor: float) -> np.ndarray:
    """8-connected flood fill from seed (y, x) over unblocked pixels with lum >= floor.

    Columns wrap around in azimuth; rows stop at the poles.
    """
    height, width = lum.shape
    visited = blocked.copy()
    visited[seed] = True
    queue = deque([seed])
    region = []
    while queue:
        y, x = queue.popleft()
        region.append((x, y))
        for dy, dx in NEIGHBORS:
            ny, nx = y + dy, (x + dx) % width
            if 0 <= ny < height and not visited[ny, nx] and lum[ny, nx] >= floor:
                visited[ny, nx] = True
                queue.append((ny, nx))
    return np.array(region, dtype=np.int64)


def detect_lights(envmap) -> list:
    """Detect light sources by repeated peak seeding and region growing.

    Returns LightMasks ordered by decreasing energy. Each mask grows from the
    brightest unmasked pixel while luminance stays >= a third of that peak.
    Detection stops when a new mask carries < 10% of the strongest mask's
    energy (that mask is discarded) or after MAX_LIGHTS masks.
    """
    envmap = check_envmap(envmap)
    height, width = envmap.shape[:2]
    lum = luminance(envmap)
    omega = solid_angle_map(width, height)
    masked = np.zeros((height, width), dtype=bool)

    masks = []
    while len(masks) < MAX_LIGHTS:
        candidates = np.where(masked, -np.inf, lum)
        seed = np.unravel_index(np.argmax(candidates), lum.shape)
        peak = float(lum[seed])
        if peak <= 0:
            break
        pixels = grow_region(lum, masked, seed, peak * GROWTH_FRACTION)
        energy = float(np.sum(lum[pixels[:, 1], pixels[:, 0]] * omega[pixels[:, 1], pixels[:, 0]]))
        strongest = max((m.energy for m in masks), default=energy)
        if energy < ENERGY_FRACTION * strongest:
            break
        masks.append(LightMask(pixels=pixels, peak=peak, energy=energy))
        masked[pixels[:, 1], pixels[:, 0]] = True

    if masks:
        strongest = max(m.energy for m in masks)
        masks = [m for m in masks if m.energy >= ENERGY_FRACTION * strongest]
    masks.sort(key=lambda m: m.energy, reverse=True)
    return masks


def _tangent_basis(l: np.ndarray):
    helper = np.array([0.0, 1.0, 0.0]) if abs(l[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = normalize(np.cross(helper, l))
    e2 = np.cross(l, e1)
    return e1, e2


def estimate_size(dirs: np.ndarray, weights: np.ndarray, l: np.ndarray) -> float:
    """Solid angle of the ellipse fitted to directions around l.

    Directions go through the equal-area azimuthal projection onto the tangent
    plane at l, so a uniform disc maps to a uniform disc of the same area.
    Half-axes are 2 sigma of the weighted PCA.
    """
    e1, e2 = _tangent_basis(l)
    cos_t = np.clip(dirs @ l, -1.0 + 1e-12, 1.0)
    tangent = dirs - cos_t[:, None] * l
    scale = np.sqrt(2.0 / (1.0 + cos_t))
    offsets = np.stack([tangent @ e1, tangent @ e2], axis=-1) * scale[:, None]

    w = weights / weights.sum()
    mean = w @ offsets
    centered = offsets - mean
    cov = (centered * w[:, None]).T @ centered
    eig = np.clip(np.linalg.eigvalsh(cov), 0.0, None)
    a, b = 2.0 * np.sqrt(eig)
    theta = 2.0 * np.arcsin(min(1.0, (a + b) / 4.0))
    return float(np.clip(2.0 * np.pi * (1.0 - np.cos(theta)), MIN_SIZE, FOUR_PI))


def estimate_light(mask: LightMask, envmap, depth=None) -> Light:
    """Parametric light for one mask: centroid direction, mean depth, ellipse size, mean color."""
    envmap = np.asarray(envmap, dtype=np.float64)
    height, width = envmap.shape[:2]
    if len(mask.pixels) == 0:
        raise ValueError("Cannot estimate a light from an empty mask")
    xs, ys = mask.xs, mask.ys
    dirs = pixel_directions(width, height)[ys, xs]
    colors = envmap[ys, xs]
    omega = solid_angle_map(width, height)[ys, xs]
    lum = luminance(colors)

    l = normalize(lum @ dirs) if len(xs) > 1 else dirs[0] / np.linalg.norm(dirs[0])

    d = DEFAULT_DEPTH
    if depth is not None:
        depth = check_depthmap(depth, width, height)
        known = depth[ys, xs]
        known = known[known > 0]
        if known.size:
            d = float(known.mean())

    s = estimate_size(dirs, omega, l)
    c = (omega @ colors) / omega.sum()
    return Light(l=l, d=d, s=s, c=c)


def estimate_ambient(envmap, masks: list) -> np.ndarray:
    """Solid-angle-weighted mean RGB over pixels outside every mask."""
    envmap = check_envmap(envmap)
    height, width = envmap.shape[:2]
    omega = solid_angle_map(width, height)
    outside = np.ones((height, width), dtype=bool)
    for mask in masks:
        outside[mask.ys, mask.xs] = False
    if not outside.any():
        return np.zeros(3)
    w = omega[outside]
    return (w @ envmap[outside]) / w.sum()


def extract_lightset(envmap, depth=None, masks: list = None) -> LightSet:
    """Detect lights, estimate each one and the ambient term. Lights are ordered by energy."""
    envmap = check_envmap(envmap)
    if masks is None:
        masks = detect_lights(envmap)
    lights = [estimate_light(mask, envmap, depth) for mask in masks]
    ambient = estimate_ambient(envmap, masks)
    print(f"Detected {len(lights)} light source(s)")
    return LightSet(lights=lights, ambient=ambient)
