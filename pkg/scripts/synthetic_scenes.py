# synthetic_scenes.py
# Planted-parameter scenes with known answers, used by the tests.

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from fit_lights import initial_lightset
from panorama_geometry import Light, LightSet, direction_from_angles, normalize, pixel_directions

BACKGROUND = 0.02
SCENE_DEPTH = 3.0


@dataclass
class Disc:
    """Uniform circular emitter: center in degrees, angular radius in degrees, RGB radiance."""
    azimuth: float
    elevation: float
    radius: float
    color: tuple

    @property
    def direction(self) -> np.ndarray:
        return direction_from_angles(self.azimuth, self.elevation)

    @property
    def solid_angle(self) -> float:
        return 2.0 * np.pi * (1.0 - np.cos(np.radians(self.radius)))


def disc_scene(discs: list, width: int = 128, height: int = 64, background: float = BACKGROUND,
               depth: float = SCENE_DEPTH):
    """Panorama with uniform discs over a uniform background, at constant depth.

    Returns (envmap, depthmap, planted LightSet); the planted lights list the
    discs in the given order with their exact cap solid angles.
    """
    dirs = pixel_directions(width, height)
    envmap = np.full((height, width, 3), float(background))
    lights = []
    for disc in discs:
        inside = dirs @ disc.direction >= np.cos(np.radians(disc.radius))
        envmap[inside] = disc.color
        lights.append(Light(l=disc.direction, d=depth, s=disc.solid_angle, c=disc.color))
    depthmap = np.full((height, width), float(depth))
    return envmap, depthmap, LightSet(lights=lights, ambient=np.full(3, float(background)))


def random_disc_scene(seed: int, count: int, width: int = 128, height: int = 64):
    """1-3 well separated discs with random placement, size and color."""
    rng = np.random.default_rng(seed)
    discs = []
    while len(discs) < count:
        candidate = Disc(
            azimuth=float(rng.uniform(-180.0, 180.0)),
            elevation=float(rng.uniform(-30.0, 30.0)),
            radius=float(rng.uniform(12.0, 14.0)),
            color=tuple(rng.uniform(40.0, 80.0) * rng.uniform(0.7, 1.0, size=3)),
        )
        # keep discs at least 60 degrees apart
        if all(np.dot(candidate.direction, other.direction) < 0.5 for other in discs):
            discs.append(candidate)
    return disc_scene(discs, width, height)


def scattered_lights(seed: int, colors: list, sizes: list, distance: float = SCENE_DEPTH) -> LightSet:
    """Planted lights at the disc placements of random_disc_scene(seed, len(colors)).

    Directions depend only on `seed`, never on a fit's initialization.
    """
    _, _, discs = random_disc_scene(seed, len(colors))
    lights = [
        Light(l=disc.l, d=distance, s=s, c=c)
        for disc, c, s in zip(discs.lights, colors, sizes)
    ]
    return LightSet(lights=lights)


def tilt(direction, degrees: float) -> np.ndarray:
    """Rotate a unit direction by `degrees` along a fixed perpendicular."""
    direction = normalize(direction)
    helper = np.array([0.0, 1.0, 0.0]) if abs(direction[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    axis = normalize(np.cross(direction, helper))
    return Rotation.from_rotvec(np.radians(degrees) * axis).apply(direction)


def lights_near_initialization(seed: int, n: int, colors: list, sizes: list, offset: float = 12.0,
                               distance: float = SCENE_DEPTH) -> LightSet:
    """Planted lights placed `offset` degrees from the first len(colors) seeded fit directions."""
    start = initial_lightset(n, seed)
    lights = [
        Light(l=tilt(start.lights[i].l, offset), d=distance, s=s, c=c)
        for i, (c, s) in enumerate(zip(colors, sizes))
    ]
    return LightSet(lights=lights)
