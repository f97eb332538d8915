# lumiparam.py
# Command-line entry point: python scripts/lumiparam.py <subcommand> ...

import os
import sys

THREAD_VARIABLES = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def apply_thread_limit(environ=os.environ) -> None:
    """Copy LUMIPARAM_THREADS into the BLAS/OpenMP variables; must run before numpy loads."""
    value = environ.get("LUMIPARAM_THREADS")
    if value is None:
        return
    if not value.isdigit() or int(value) < 1:
        print(f"Warning: ignoring LUMIPARAM_THREADS={value!r} (expected a positive integer)", file=sys.stderr)
        return
    for name in THREAD_VARIABLES:
        environ[name] = value


apply_thread_limit()

import argparse  # noqa: E402
import re  # noqa: E402
from dataclasses import dataclass, field  # noqa: E402
from pathlib import Path  # noqa: E402

from evaluate_lighting import DEFAULT_OFFSETS, evaluate_at_positions, render_sphere  # noqa: E402
from extract_lights import detect_lights, extract_lightset  # noqa: E402
from fit_lights import FitOptions, LossConfig, fit_lightset, refine_intensities  # noqa: E402
from hdr_io import (  # noqa: E402
    atomic_output,
    format_for_path,
    load_depthmap,
    load_envmap,
    load_lightset,
    save_envmap,
    save_image,
    save_lightset,
    save_preview,
)
from project_lights import project_lightset  # noqa: E402
from spatial_lighting import DEFAULT_FOV, RING_SIZE, crop_ring, crop_view, relocate_lightset, warp_envmap  # noqa: E402

IMAGE_SUFFIXES = {".hdr", ".pfm", ".pic", ".rgbe"}
VECTOR_FLAGS = {"--t", "--offsets"}
NEGATIVE_VALUE = re.compile(r"^-\.?\d")


@dataclass
class CommandResult:
    exit_code: int
    artifacts: list = field(default_factory=list)


class UsageError(Exception):
    pass


class DataError(Exception):
    """A data problem tied to one file."""

    def __init__(self, path, cause):
        super().__init__(f"{path}: {cause}")
        self.path = path
        self.cause = cause


class LumiparamParser(argparse.ArgumentParser):
    """ArgumentParser that reports errors to the caller instead of exiting."""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# Argument types

def parse_size(text: str):
    try:
        width, height = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got '{text}'")
    if width <= 0 or height <= 0:
        raise argparse.ArgumentTypeError(f"size must be positive, got '{text}'")
    return width, height


def parse_vector(text: str):
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got '{text}'")
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected 3 components, got '{text}'")
    return values


def parse_offsets(text: str):
    return [parse_vector(part) for part in text.split(";") if part.strip()]


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got '{text}'")
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def build_parser() -> LumiparamParser:
    parser = LumiparamParser(
        prog="lumiparam",
        description="Parametric lighting from HDR panoramas: extract, project, fit and evaluate light sets",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", required=True, parser_class=LumiparamParser)

    def command(name, help_text):
        return commands.add_parser(name, help=help_text, formatter_class=argparse.ArgumentDefaultsHelpFormatter)

    p = command("extract", "Detect light sources in a panorama and write a light set")
    p.add_argument("input", type=Path, help="Panorama (.hdr or .pfm)")
    p.add_argument("--depth", type=Path, help="Depth map (.pfm, meters, 0 = unknown)")
    p.add_argument("--refine", action="store_true", help="Fine-tune intensities against the detected masks")
    p.add_argument("--output", "-o", type=Path, required=True, help="Light-set document to write")

    p = command("project", "Render a light set as a spherical-gaussian panorama")
    p.add_argument("input", type=Path, help="Light-set document")
    p.add_argument("--size", type=parse_size, default=(128, 64), help="Panorama size WxH (2:1)")
    p.add_argument("--ambient", action="store_true", help="Add the ambient term")
    p.add_argument("--output", "-o", type=Path, required=True, help="Panorama to write")

    p = command("relocate", "Express a light set from a displaced observer")
    p.add_argument("input", type=Path, help="Light-set document")
    p.add_argument("--t", type=parse_vector, required=True, help="Translation x,y,z in meters")
    p.add_argument("--output", "-o", type=Path, required=True, help="Light-set document to write")

    p = command("warp", "Re-project a panorama to a displaced observer using depth")
    p.add_argument("input", type=Path, help="Panorama")
    p.add_argument("--depth", type=Path, required=True, help="Depth map (.pfm)")
    p.add_argument("--t", type=parse_vector, required=True, help="Translation x,y,z in meters")
    p.add_argument("--output", "-o", type=Path, required=True, help="Panorama to write")

    p = command("refine", "Fine-tune light intensities against a panorama")
    p.add_argument("input", type=Path, help="Light-set document")
    p.add_argument("panorama", type=Path, help="Panorama the light set was extracted from")
    p.add_argument("--output", "-o", type=Path, required=True, help="Light-set document to write")

    defaults = FitOptions()
    loss_defaults = LossConfig()
    p = command("fit", "Fit N parametric lights to a panorama by gradient descent")
    p.add_argument("input", type=Path, help="Panorama")
    p.add_argument("--n", type=positive_int, default=3, help="Number of lights")
    p.add_argument("--iters", type=positive_int, default=defaults.iterations, help="Iterations")
    p.add_argument("--lr", type=float, default=defaults.learning_rate, help="Learning rate")
    p.add_argument("--half-life", type=positive_int, default=defaults.lr_half_life,
                   help="Iterations between learning-rate halvings")
    p.add_argument("--seed", type=int, default=defaults.seed, help="Initialization seed")
    p.add_argument("--wr", type=float, default=loss_defaults.w_r, help="Render-term weight")
    p.add_argument("--wa", type=float, default=loss_defaults.w_a, help="Ambient-term weight")
    p.add_argument("--threshold", type=float, default=loss_defaults.threshold_fraction,
                   help="Ground-truth threshold as a fraction of peak luminance")
    p.add_argument("--trace", type=Path, help="CSV file for the per-iteration loss")
    p.add_argument("--output", "-o", type=Path, required=True, help="Light-set document to write")

    p = command("render", "Render a diffuse probe sphere under a light set or a panorama")
    p.add_argument("input", type=Path, help="Light-set document or panorama (.hdr/.pfm)")
    p.add_argument("--res", type=positive_int, default=64, help="Probe resolution in pixels")
    p.add_argument("--png", type=Path, help="Also write a tone-mapped PNG preview")
    p.add_argument("--exposure", type=float, default=1.0, help="Preview exposure")
    p.add_argument("--output", "-o", type=Path, required=True, help="Probe image to write (.hdr or .pfm)")

    p = command("evaluate", "Compare a light set with a panorama at several insertion points")
    p.add_argument("input", type=Path, help="Predicted light-set document")
    p.add_argument("panorama", type=Path, help="Ground-truth panorama")
    p.add_argument("--depth", type=Path, required=True, help="Ground-truth depth map (.pfm)")
    p.add_argument("--offsets", type=parse_offsets, default=list(DEFAULT_OFFSETS),
                   help="Insertion offsets 'x,y,z;x,y,z;...'")
    p.add_argument("--res", type=positive_int, default=64, help="Probe resolution in pixels")
    p.add_argument("--output", "-o", type=Path, required=True, help="CSV report to write")

    p = command("crop", "Cut a rectilinear view out of a panorama")
    p.add_argument("input", type=Path, help="Panorama")
    p.add_argument("--az", type=float, default=0.0, help="Azimuth of the view center in degrees")
    p.add_argument("--el", type=float, default=0.0, help="Elevation of the view center in degrees")
    p.add_argument("--fov", type=float, default=DEFAULT_FOV, help="Horizontal field of view in degrees")
    p.add_argument("--size", type=parse_size, default=(256, 256), help="Crop size WxH")
    p.add_argument("--ring", action="store_true",
                   help=f"Write {RING_SIZE} crops around the horizon as <stem>_<k><suffix>")
    p.add_argument("--output", "-o", type=Path, required=True, help="Image to write")
    return parser


# Loading with the offending file attached to any failure

def _load(loader, path):
    try:
        return loader(path)
    except (OSError, ValueError) as e:
        raise DataError(path, e) from e


# Subcommands; each appends the files it writes to `written`

def cmd_extract(args, written):
    envmap = _load(load_envmap, args.input)
    depth = _load(load_depthmap, args.depth) if args.depth else None
    masks = detect_lights(envmap)
    lightset = extract_lightset(envmap, depth, masks)
    if args.refine:
        lightset = refine_intensities(lightset, envmap, masks)
    save_lightset(lightset, args.output)
    written.append(args.output)


def cmd_project(args, written):
    lightset = _load(load_lightset, args.input)
    width, height = args.size
    envmap = project_lightset(lightset, width, height, include_ambient=args.ambient)
    save_envmap(envmap, args.output, format_for_path(args.output))
    written.append(args.output)


def cmd_relocate(args, written):
    lightset = _load(load_lightset, args.input)
    save_lightset(relocate_lightset(lightset, args.t), args.output)
    written.append(args.output)


def cmd_warp(args, written):
    envmap = _load(load_envmap, args.input)
    depth = _load(load_depthmap, args.depth)
    warped = warp_envmap(envmap, depth, args.t)
    save_envmap(warped, args.output, format_for_path(args.output))
    written.append(args.output)


def cmd_refine(args, written):
    lightset = _load(load_lightset, args.input)
    envmap = _load(load_envmap, args.panorama)
    masks = detect_lights(envmap)
    if len(masks) != len(lightset):
        raise DataError(args.panorama, f"{len(masks)} detected light(s) but {len(lightset)} in {args.input}")
    save_lightset(refine_intensities(lightset, envmap, masks), args.output)
    written.append(args.output)


def cmd_fit(args, written):
    envmap = _load(load_envmap, args.input)
    cfg = LossConfig(w_r=args.wr, w_a=args.wa, threshold_fraction=args.threshold)
    opts = FitOptions(iterations=args.iters, learning_rate=args.lr, lr_half_life=args.half_life, seed=args.seed)
    lightset, trace = fit_lightset(envmap, args.n, cfg, opts)
    save_lightset(lightset, args.output)
    written.append(args.output)
    if args.trace:
        with atomic_output(args.trace) as tmp:
            trace.to_csv(tmp, index=False)
        written.append(args.trace)


def cmd_render(args, written):
    if args.input.suffix.lower() in IMAGE_SUFFIXES:
        source = _load(load_envmap, args.input)
    else:
        source = _load(load_lightset, args.input)
    probe = render_sphere(source, args.res)
    save_image(probe.data, args.output, format_for_path(args.output))
    written.append(args.output)
    if args.png:
        save_preview(probe.data, args.png, args.exposure)
        written.append(args.png)


def cmd_evaluate(args, written):
    lightset = _load(load_lightset, args.input)
    envmap = _load(load_envmap, args.panorama)
    depth = _load(load_depthmap, args.depth)
    report = evaluate_at_positions(lightset, envmap, depth, args.offsets, args.res)
    with atomic_output(args.output) as tmp:
        report.to_csv(tmp, index=False)
    written.append(args.output)


def cmd_crop(args, written):
    envmap = _load(load_envmap, args.input)
    width, height = args.size
    fmt = format_for_path(args.output)
    if not args.ring:
        crop = crop_view(envmap, args.az, args.el, args.fov, width, height)
        save_image(crop.data, args.output, fmt)
        written.append(args.output)
        return
    for k, crop in enumerate(crop_ring(envmap, RING_SIZE, args.el, args.fov, width, height)):
        path = args.output.with_name(f"{args.output.stem}_{k}{args.output.suffix}")
        save_image(crop.data, path, fmt)
        written.append(path)


COMMANDS = {
    "extract": cmd_extract,
    "project": cmd_project,
    "relocate": cmd_relocate,
    "warp": cmd_warp,
    "refine": cmd_refine,
    "fit": cmd_fit,
    "render": cmd_render,
    "evaluate": cmd_evaluate,
    "crop": cmd_crop,
}


def attach_negative_vectors(argv) -> list:
    """Rewrite `--t -1,0,0` as `--t=-1,0,0` so argparse does not read the value as a flag."""
    argv = list(argv)
    out = []
    i = 0
    while i < len(argv):
        if argv[i] in VECTOR_FLAGS and i + 1 < len(argv) and NEGATIVE_VALUE.match(argv[i + 1]):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def run(argv) -> CommandResult:
    """Parse argv, run one subcommand and report the outcome.

    Exit codes: 0 success, 1 usage error, 2 data error. A failed command
    removes every file it wrote.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(attach_negative_vectors(argv))
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return CommandResult(exit_code=1)
    except SystemExit as e:
        # --help
        return CommandResult(exit_code=int(e.code or 0))

    written = []
    try:
        COMMANDS[args.command](args, written)
    except (DataError, OSError, ValueError) as e:
        if isinstance(e, DataError):
            source = e.path
        elif isinstance(e, OSError) and e.filename:
            source = e.filename
        else:
            source = args.input
        cause = e.cause if isinstance(e, DataError) else e
        print(f"❌ Error: {source}: {cause}", file=sys.stderr)
        for path in written:
            Path(path).unlink(missing_ok=True)
        return CommandResult(exit_code=2)

    for path in written:
        print(f"✅ Saved {args.command} output: {path}")
    return CommandResult(exit_code=0, artifacts=written)


if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]).exit_code)
