# evaluate_lighting.py

from dataclasses import dataclass

import numpy as np
import pandas as pd

from panorama_geometry import LightSet, check_envmap, pixel_directions, solid_angle_map
from project_lights import project_lightset
from spatial_lighting import parse_translation, relocate_lightset, warp_envmap

PROJECTION_HEIGHT = 64
PROJECTION_WIDTH = 128
MIN_RESOLUTION = 16
CHUNK_ELEMENTS = 4_000_000
DEFAULT_OFFSETS = ((0.0, 0.0, 0.0), (-1.0, 0.0, 0.0), (1.0, 0.0, 0.0))
REPORT_COLUMNS = ["offset_x", "offset_y", "offset_z", "rmse", "si_rmse"]


@dataclass
class ProbeImage:
    """Diffuse sphere render; background pixels are zero and excluded from metrics."""
    data: np.ndarray        # float[r, r, 3]
    foreground: np.ndarray  # bool[r, r]

    @property
    def resolution(self) -> int:
        return self.data.shape[0]

    def values(self) -> np.ndarray:
        return self.data[self.foreground]


def irradiance_many(envmap, normals) -> np.ndarray:
    """E(n) = sum_u L(u) max(0, n.u) d_omega for normals float[k, 3] -> float[k, 3].

    Rows are integrated in fixed chunks, top to bottom.
    """
    envmap = check_envmap(envmap)
    height, width = envmap.shape[:2]
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    dirs = pixel_directions(width, height)
    omega = solid_angle_map(width, height)
    rows_per_chunk = max(1, CHUNK_ELEMENTS // max(1, len(normals) * width))

    result = np.zeros((len(normals), 3))
    for top in range(0, height, rows_per_chunk):
        band = slice(top, top + rows_per_chunk)
        u = dirs[band].reshape(-1, 3)
        radiance = (envmap[band] * omega[band][..., None]).reshape(-1, 3)
        cosine = np.maximum(normals @ u.T, 0.0)
        result += cosine @ radiance
    return result


def irradiance(envmap, n) -> np.ndarray:
    return irradiance_many(envmap, np.asarray(n, dtype=np.float64).reshape(1, 3))[0]


def sphere_normals(resolution: int):
    """Normals of an orthographic unit sphere seen along -Z, and its silhouette mask."""
    centers = (np.arange(resolution) + 0.5) / resolution
    px = 2.0 * centers - 1.0
    py = 1.0 - 2.0 * centers
    px, py = np.meshgrid(px, py)
    r2 = px ** 2 + py ** 2
    foreground = r2 <= 1.0
    pz = np.sqrt(np.clip(1.0 - r2, 0.0, None))
    return np.stack([px, py, pz], axis=-1), foreground


def render_sphere(source, resolution: int = 64) -> ProbeImage:
    """Unit-albedo diffuse sphere under an environment map or a LightSet.

    LightSets are first projected (ambient included) at 64x128 so both
    representations share one integration path.
    """
    if resolution < MIN_RESOLUTION:
        raise ValueError(f"Probe resolution must be >= {MIN_RESOLUTION}, got {resolution}")
    if isinstance(source, LightSet):
        envmap = project_lightset(source, PROJECTION_WIDTH, PROJECTION_HEIGHT, include_ambient=True)
    else:
        envmap = check_envmap(source)
    normals, foreground = sphere_normals(resolution)
    data = np.zeros((resolution, resolution, 3))
    data[foreground] = irradiance_many(envmap, normals[foreground]) / np.pi
    return ProbeImage(data=data, foreground=foreground)


def _check_pair(a: ProbeImage, b: ProbeImage):
    if a.data.shape != b.data.shape:
        raise ValueError(f"Probe resolutions differ: {a.resolution} vs {b.resolution}")


def rmse(a: ProbeImage, b: ProbeImage) -> float:
    """Root mean squared error over foreground pixels and channels."""
    _check_pair(a, b)
    diff = a.values() - b.values()
    return float(np.sqrt(np.mean(diff ** 2)))


def si_rmse(a: ProbeImage, b: ProbeImage) -> float:
    """RMSE after scaling a by the single least-squares factor alpha* = <a, b> / <a, a>."""
    _check_pair(a, b)
    va, vb = a.values(), b.values()
    energy = float(np.sum(va * va))
    if energy == 0:
        raise ValueError("si-RMSE is undefined when the first image is black")
    alpha = float(np.sum(va * vb)) / energy
    return float(np.sqrt(np.mean((alpha * va - vb) ** 2)))


def evaluate_at_positions(predicted: LightSet, gt_map, gt_depth, offsets=DEFAULT_OFFSETS,
                          resolution: int = 64) -> pd.DataFrame:
    """Render probes from the prediction and the warped ground truth at each offset.

    Returns one row per offset with columns offset_x, offset_y, offset_z, rmse, si_rmse.
    """
    offsets = [parse_translation(t) for t in offsets]
    if not offsets:
        raise ValueError("At least one insertion offset is required")
    rows = []
    for t in offsets:
        gt_probe = render_sphere(warp_envmap(gt_map, gt_depth, t), resolution)
        predicted_probe = render_sphere(relocate_lightset(predicted, t), resolution)
        error = rmse(predicted_probe, gt_probe)
        if np.any(predicted_probe.values()):
            scale_free = si_rmse(predicted_probe, gt_probe)
        else:
            # no scale helps a black prediction
            scale_free = error
        rows.append([t[0], t[1], t[2], error, scale_free])
        print(f"- offset {t.tolist()}: rmse={error:.6g} si_rmse={scale_free:.6g}")
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)
