# fit_lights.py

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from evaluate_lighting import render_sphere
from extract_lights import LightMask
from panorama_geometry import (
    FOUR_PI,
    Light,
    LightSet,
    check_envmap,
    luminance,
    solid_angle_map,
)
from project_lights import loss_and_gradients

ASSIGNMENT_CUTOFF_DEG = 45.0
ANGLE_TOLERANCE_DEG = 1e-9
MIN_SIZE = 1e-4
MIN_DISTANCE = 1e-3
# fitted lobes span at least this many pixels of the target
MIN_SIZE_PIXELS = 4.0

INITIAL_SIZE = 0.3
INITIAL_COLOR = (1.0, 1.0, 1.0)
INITIAL_DISTANCE = 3.0
GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))

NNLS_TOLERANCE = 1e-8
NNLS_MAX_ITER = 10_000
REFINE_RESOLUTION = 32
# relative slack on the threshold comparison
THRESHOLD_SLACK = 8 * np.finfo(np.float64).eps


@dataclass
class LossConfig:
    w_r: float = 20.0
    w_a: float = 1.0
    threshold_fraction: float = 0.05

    def __post_init__(self):
        if self.w_r < 0 or self.w_a < 0:
            raise ValueError(f"Loss weights must be >= 0, got w_r={self.w_r}, w_a={self.w_a}")
        if not 0 < self.threshold_fraction < 1:
            raise ValueError(f"Threshold fraction must be in (0, 1), got {self.threshold_fraction}")


@dataclass
class FitOptions:
    iterations: int = 500
    learning_rate: float = 1e-3
    lr_half_life: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError(f"Iterations must be > 0, got {self.iterations}")
        if self.learning_rate <= 0:
            raise ValueError(f"Learning rate must be > 0, got {self.learning_rate}")
        if self.lr_half_life <= 0:
            raise ValueError(f"Learning-rate half-life must be > 0, got {self.lr_half_life}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0 <= value < 1:
                raise ValueError(f"{name} must be in [0, 1), got {value}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass
class Assignment:
    """Nearest ground-truth light per predicted light: pairs of (pred, gt, degrees)."""
    pairs: list = field(default_factory=list)
    unmatched: list = field(default_factory=list)

    def matched_indices(self) -> list:
        return [pred for pred, _, _ in self.pairs]


class Adam:
    """First/second moment optimizer over a dict of arrays, with bias correction."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        """Update params in place."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for key in params:
            g = grads[key]
            if key not in self.m:
                self.m[key] = np.zeros_like(params[key])
                self.v[key] = np.zeros_like(params[key])
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[key] / bc1
            v_hat = self.v[key] / bc2
            params[key] -= self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


def threshold_ground_truth(envmap, fraction: float):
    """Keep pixels with luminance >= fraction * peak; the rest is averaged into an ambient RGB."""
    if not 0 < fraction < 1:
        raise ValueError(f"Threshold fraction must be in (0, 1), got {fraction}")
    envmap = check_envmap(envmap)
    lum = luminance(envmap)
    peak = float(lum.max())
    if peak <= 0:
        raise ValueError("Cannot threshold an all-zero environment map")
    keep = lum >= fraction * peak * (1.0 - THRESHOLD_SLACK)
    thresholded = np.where(keep[..., None], envmap, 0.0)

    omega = solid_angle_map(envmap.shape[1], envmap.shape[0])
    dropped = ~keep
    if not dropped.any():
        return thresholded, np.zeros(3)
    w = omega[dropped]
    return thresholded, (w @ envmap[dropped]) / w.sum()


def loss_step1(lightset: LightSet, gt_map, gt_ambient, cfg: LossConfig = None):
    """Correspondence-free loss: weighted l2 on the projection plus l2 on ambient."""
    cfg = cfg or LossConfig()
    return loss_and_gradients(lightset, gt_map, gt_ambient, w_r=cfg.w_r, w_a=cfg.w_a)


def assign_lights(predicted: LightSet, gt: LightSet) -> Assignment:
    """Match every predicted light to its angularly closest ground-truth light (<= 45 deg)."""
    assignment = Assignment()
    if len(gt) == 0:
        assignment.unmatched = list(range(len(predicted)))
        return assignment
    gt_dirs = gt.stack()["directions"]
    for i, light in enumerate(predicted.lights):
        angles = np.degrees(np.arccos(np.clip(gt_dirs @ light.l, -1.0, 1.0)))
        j = int(np.argmin(angles))
        if angles[j] <= ASSIGNMENT_CUTOFF_DEG + ANGLE_TOLERANCE_DEG:
            assignment.pairs.append((i, j, float(angles[j])))
        else:
            assignment.unmatched.append(i)
    return assignment


def loss_step2_and_gradients(predicted: LightSet, gt: LightSet, assignment: Assignment = None):
    """Assignment loss on d, s, c of matched lights plus ambient, with gradients.

    Returns (loss, grads) where grads holds "distances" (N,), "sizes" (N,),
    "colors" (N, 3) and "ambient" (3,). Directions receive no gradient.
    """
    if assignment is None:
        assignment = assign_lights(predicted, gt)
    n = len(predicted)
    grads = {
        "distances": np.zeros(n),
        "sizes": np.zeros(n),
        "colors": np.zeros((n, 3)),
        "ambient": np.zeros(3),
    }
    ambient_residual = predicted.ambient - gt.ambient
    loss = float(np.mean(ambient_residual ** 2))
    grads["ambient"] = 2.0 * ambient_residual / 3.0

    for i, j, _ in assignment.pairs:
        p, g = predicted.lights[i], gt.lights[j]
        dd = p.d - g.d
        ds = p.s - g.s
        dc = p.c - g.c
        loss += dd ** 2 + ds ** 2 + float(np.mean(dc ** 2))
        grads["distances"][i] = 2.0 * dd
        grads["sizes"][i] = 2.0 * ds
        grads["colors"][i] = 2.0 * dc / 3.0
    return loss, grads


def loss_step2(predicted: LightSet, gt: LightSet) -> float:
    loss, _ = loss_step2_and_gradients(predicted, gt)
    return loss


def nnls_projected_gradient(A, b, tol: float = NNLS_TOLERANCE, max_iter: int = NNLS_MAX_ITER) -> np.ndarray:
    """argmin ||Ax - b||^2 subject to x >= 0, by projected gradient descent from x = 1."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if A.ndim != 2 or A.shape[0] != b.size:
        raise ValueError(f"Incompatible shapes: A {A.shape}, b {b.shape}")
    x = np.ones(A.shape[1])
    lipschitz = np.linalg.norm(A, 2) ** 2
    if lipschitz == 0:
        return np.zeros(A.shape[1])
    AtA = A.T @ A
    Atb = A.T @ b
    for _ in range(max_iter):
        x_new = np.maximum(x - (AtA @ x - Atb) / lipschitz, 0.0)
        step = np.linalg.norm(x_new - x)
        x = x_new
        if step <= tol * max(1.0, np.linalg.norm(x)):
            break
    return x


def refine_intensities(lightset: LightSet, gt_map, masks: list, resolution: int = REFINE_RESOLUTION) -> LightSet:
    """Rescale each light's color so its probe render matches the ground truth seen through its mask.

    One non-negative scale per light and channel, solved jointly over all lights.
    """
    gt_map = check_envmap(gt_map)
    if len(masks) != len(lightset):
        raise ValueError(f"Expected one mask per light, got {len(masks)} masks for {len(lightset)} lights")
    n = len(lightset)
    if n == 0:
        return lightset.copy()
    height, width = gt_map.shape[:2]

    target = None
    columns = []
    for light, mask in zip(lightset.lights, masks):
        if not isinstance(mask, LightMask):
            raise ValueError(f"Expected a LightMask, got {type(mask).__name__}")
        masked = np.where(mask.to_grid(width, height)[..., None], gt_map, 0.0)
        gt_probe = render_sphere(masked, resolution)
        target = gt_probe.values() if target is None else target + gt_probe.values()
        columns.append(render_sphere(LightSet(lights=[light]), resolution).values())

    alphas = np.zeros((n, 3))
    active = []
    for i, column in enumerate(columns):
        if np.any(column):
            active.append(i)
        else:
            print(f"Warning: light {i} renders to zero; its intensity is set to 0")
    if active:
        for channel in range(3):
            A = np.stack([columns[i][:, channel] for i in active], axis=1)
            alphas[active, channel] = nnls_projected_gradient(A, target[:, channel])

    refined = lightset.copy()
    for light, alpha in zip(refined.lights, alphas):
        light.c = np.maximum(alpha * light.c, 0.0)
    return refined


def fibonacci_directions(n: int) -> np.ndarray:
    """n near-uniform unit vectors, float[n, 3], y being the polar axis."""
    k = np.arange(n)
    y = 1.0 - (2.0 * k + 1.0) / n
    r = np.sqrt(np.clip(1.0 - y ** 2, 0.0, None))
    phi = GOLDEN_ANGLE * k
    return np.stack([r * np.cos(phi), y, r * np.sin(phi)], axis=-1)


def initial_lightset(n: int, seed: int = 0, ambient=(0.0, 0.0, 0.0)) -> LightSet:
    """Seeded starting point: a random rotation of a Fibonacci lattice, s=0.3, c=(1,1,1), d=3."""
    if n < 1:
        raise ValueError(f"Light count must be >= 1, got {n}")
    rotation = Rotation.random(None, np.random.default_rng(seed))
    directions = rotation.apply(fibonacci_directions(n))
    return LightSet.from_arrays(
        directions,
        np.full(n, INITIAL_DISTANCE),
        np.full(n, INITIAL_SIZE),
        np.tile(INITIAL_COLOR, (n, 1)),
        ambient,
    )


def min_fit_size(width: int, height: int) -> float:
    """Smallest lobe the fit may shrink to on a width x height map."""
    return max(MIN_SIZE, MIN_SIZE_PIXELS * float(solid_angle_map(width, height).max()))


def _schedule(optimizer: Adam, opts: FitOptions, iteration: int):
    optimizer.lr = opts.learning_rate * 0.5 ** (iteration // opts.lr_half_life)


def fit_lightset(target, n: int = 3, cfg: LossConfig = None, opts: FitOptions = None,
                 initial: LightSet = None):
    """Fit n parametric lights to an environment map by minimizing loss_step1.

    Directions, sizes, colors and ambient are optimized; distances keep their
    initial value. `initial` replaces the seeded initialization when given.
    Sizes never drop below min_fit_size, so an unneeded light goes dark
    through its color.
    Returns the fitted LightSet and a DataFrame trace (iteration, loss) of the
    loss before each step.
    """
    cfg = cfg or LossConfig()
    opts = opts or FitOptions()
    gt_map, gt_ambient = threshold_ground_truth(target, cfg.threshold_fraction)
    start = initial.copy() if initial is not None else initial_lightset(n, opts.seed, gt_ambient)
    if len(start) == 0:
        raise ValueError("Cannot fit an empty light set")

    stacked = start.stack()
    distances = stacked.pop("distances")
    params = stacked
    min_size = min_fit_size(gt_map.shape[1], gt_map.shape[0])
    params["sizes"] = np.clip(params["sizes"], min_size, FOUR_PI)
    optimizer = Adam(opts.learning_rate, opts.beta1, opts.beta2, opts.epsilon)

    losses = []
    for iteration in range(opts.iterations):
        current = LightSet.from_arrays(distances=distances, **params)
        loss, jacobian = loss_step1(current, gt_map, gt_ambient, cfg)
        losses.append(loss)
        _schedule(optimizer, opts, iteration)
        optimizer.step(params, jacobian.as_dict())

        norms = np.linalg.norm(params["directions"], axis=1, keepdims=True)
        params["directions"] /= norms
        params["sizes"] = np.clip(params["sizes"], min_size, FOUR_PI)
        params["colors"] = np.maximum(params["colors"], 0.0)
        params["ambient"] = np.maximum(params["ambient"], 0.0)

    fitted = LightSet.from_arrays(distances=distances, **params)
    print(f"Fit {len(fitted)} light(s) in {opts.iterations} iterations: loss {losses[0]:.6g} -> {losses[-1]:.6g}")
    trace = pd.DataFrame({"iteration": np.arange(len(losses)), "loss": losses})
    return fitted, trace


def refine_by_assignment(predicted: LightSet, gt: LightSet, opts: FitOptions = None):
    """Optimize d, s, c and ambient on loss_step2 with directions frozen.

    Assignments depend only on directions, so they are computed once.
    """
    opts = opts or FitOptions()
    assignment = assign_lights(predicted, gt)
    stacked = predicted.stack()
    directions = stacked.pop("directions")
    params = stacked
    optimizer = Adam(opts.learning_rate, opts.beta1, opts.beta2, opts.epsilon)

    losses = []
    for iteration in range(opts.iterations):
        current = LightSet.from_arrays(directions=directions, renormalize=False, **params)
        loss, grads = loss_step2_and_gradients(current, gt, assignment)
        losses.append(loss)
        _schedule(optimizer, opts, iteration)
        optimizer.step(params, grads)

        params["distances"] = np.maximum(params["distances"], MIN_DISTANCE)
        params["sizes"] = np.clip(params["sizes"], MIN_SIZE, FOUR_PI)
        params["colors"] = np.maximum(params["colors"], 0.0)
        params["ambient"] = np.maximum(params["ambient"], 0.0)

    refined = LightSet.from_arrays(directions=directions, renormalize=False, **params)
    trace = pd.DataFrame({"iteration": np.arange(len(losses)), "loss": losses})
    return refined, trace


def fit_two_step(target, gt: LightSet, n: int = 3, cfg: LossConfig = None, opts: FitOptions = None) -> LightSet:
    """Projection loss first, then the assignment loss with directions frozen."""
    fitted, _ = fit_lightset(target, n, cfg, opts)
    refined, _ = refine_by_assignment(fitted, gt, opts)
    return refined


def render_error(lightset: LightSet, target) -> float:
    """Solid-angle-weighted mean squared error between the projection (no ambient) and a map."""
    loss, _ = loss_and_gradients(lightset, target, np.zeros(3), w_r=1.0, w_a=0.0)
    return loss
