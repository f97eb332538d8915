# project_lights.py

from dataclasses import dataclass

import numpy as np

from panorama_geometry import LightSet, check_envmap, pixel_directions, solid_angle_map

LN10 = np.log(10.0)
# kappa = s * BANDWIDTH_PER_SR makes a lobe fall to 10% of its peak at the
# edge of a cap of solid angle s.
BANDWIDTH_PER_SR = 1.0 / (2.0 * np.pi * LN10)


@dataclass
class ProjectionJacobian:
    """Gradients of a scalar loss wrt every light parameter and the ambient term."""
    directions: np.ndarray  # (N, 3), tangent to the unit sphere at each l
    sizes: np.ndarray       # (N,)
    colors: np.ndarray      # (N, 3)
    ambient: np.ndarray     # (3,)

    def as_dict(self) -> dict:
        return {
            "directions": self.directions,
            "sizes": self.sizes,
            "colors": self.colors,
            "ambient": self.ambient,
        }


def gaussian_bandwidth(s):
    """kappa such that exp((cos theta_s - 1) / kappa) = 0.1 at the cap radius theta_s of s."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s <= 0):
        raise ValueError(f"Solid angle must be > 0, got {s}")
    kappa = s * BANDWIDTH_PER_SR
    return float(kappa) if kappa.ndim == 0 else kappa


def _lobes(directions: np.ndarray, sizes: np.ndarray, width: int, height: int):
    """Per-light cosines and gaussian kernels: (cos float[N, h, w], kernel float[N, h, w], kappa float[N])."""
    dirs = pixel_directions(width, height)
    kappa = gaussian_bandwidth(sizes) if len(sizes) else np.zeros(0)
    cos = np.einsum("hwk,nk->nhw", dirs, directions)
    kernel = np.exp((cos - 1.0) / np.reshape(kappa, (-1, 1, 1)))
    return cos, kernel, np.atleast_1d(kappa)


def project_arrays(directions, sizes, colors, ambient, width: int, height: int,
                   include_ambient: bool = False) -> np.ndarray:
    """Spherical-gaussian environment map from stacked light parameters."""
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    sizes = np.asarray(sizes, dtype=np.float64).reshape(-1)
    envmap = np.zeros((height, width, 3))
    if len(sizes):
        _, kernel, _ = _lobes(directions, sizes, width, height)
        # accumulate in light order to keep a fixed summation order
        for i in range(len(sizes)):
            envmap += kernel[i][..., None] * colors[i]
    if include_ambient:
        envmap += np.asarray(ambient, dtype=np.float64)
    return envmap


def project_lightset(lightset: LightSet, width: int, height: int, include_ambient: bool = False) -> np.ndarray:
    """f(P): sum of c_i exp((l_i.u - 1) / kappa(s_i)) per pixel direction u. Distances play no role."""
    if width != 2 * height:
        raise ValueError(f"Projection size must be 2:1, got {width}x{height}")
    stacked = lightset.stack()
    return project_arrays(
        stacked["directions"], stacked["sizes"], stacked["colors"], stacked["ambient"],
        width, height, include_ambient,
    )


def loss_and_gradients(lightset: LightSet, target, target_ambient, w_r: float = 20.0, w_a: float = 1.0):
    """w_r * l2(f(P), R) + w_a * l2(a_hat, a) with analytic gradients.

    Both l2 terms are means over channels; the render term is also a
    solid-angle-weighted mean over pixels so values do not depend on resolution.
    """
    if w_r < 0 or w_a < 0:
        raise ValueError(f"Loss weights must be >= 0, got w_r={w_r}, w_a={w_a}")
    target = check_envmap(target)
    height, width = target.shape[:2]
    stacked = lightset.stack()
    directions, sizes, colors = stacked["directions"], stacked["sizes"], stacked["colors"]
    ambient = stacked["ambient"]
    target_ambient = np.asarray(target_ambient, dtype=np.float64).reshape(3)

    omega = solid_angle_map(width, height)
    norm = 3.0 * omega.sum()
    n = len(sizes)

    envmap = np.zeros((height, width, 3))
    if n:
        cos, kernel, kappa = _lobes(directions, sizes, width, height)
        for i in range(n):
            envmap += kernel[i][..., None] * colors[i]
    residual = envmap - target
    render_loss = w_r * np.sum(omega[..., None] * residual ** 2) / norm
    ambient_residual = ambient - target_ambient
    ambient_loss = w_a * np.mean(ambient_residual ** 2)

    grad_dirs = np.zeros((n, 3))
    grad_sizes = np.zeros(n)
    grad_colors = np.zeros((n, 3))
    if n:
        # dL/df per pixel and channel
        g_map = (2.0 * w_r / norm) * omega[..., None] * residual
        dirs = pixel_directions(width, height)
        for i in range(n):
            k = kernel[i]
            grad_colors[i] = np.einsum("hw,hwc->c", k, g_map)
            g_k = (g_map @ colors[i]) * k
            raw = np.einsum("hw,hwk->k", g_k, dirs) / kappa[i]
            grad_dirs[i] = raw - np.dot(raw, directions[i]) * directions[i]
            d_kappa = np.sum(g_k * (1.0 - cos[i])) / kappa[i] ** 2
            grad_sizes[i] = d_kappa * BANDWIDTH_PER_SR
    grad_ambient = 2.0 * w_a * ambient_residual / 3.0

    jacobian = ProjectionJacobian(
        directions=grad_dirs, sizes=grad_sizes, colors=grad_colors, ambient=grad_ambient,
    )
    return float(render_loss + ambient_loss), jacobian
