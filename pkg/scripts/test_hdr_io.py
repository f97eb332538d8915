import json
import tempfile
import unittest
from pathlib import Path

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from PIL import Image

from hdr_io import (
    AspectRatioError,
    LightSetFormatError,
    MalformedHeaderError,
    NegativeRadianceError,
    NonFiniteRadianceError,
    TruncatedStreamError,
    atomic_output,
    load_depthmap,
    load_envmap,
    load_image,
    load_lightset,
    rgb_to_rgbe,
    rgbe_to_rgb,
    save_depthmap,
    save_envmap,
    save_image,
    save_lightset,
    save_preview,
    tonemap,
)
from panorama_geometry import Light, LightSet

RGBE_HEADER = b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n"


def pfm_bytes(kind: bytes, width: int, height: int, values, scale: float = -1.0) -> bytes:
    dtype = "<f4" if scale < 0 else ">f4"
    body = np.asarray(values, dtype=dtype).tobytes()
    return kind + b"\n" + f"{width} {height}\n{scale}\n".encode() + body


class HdrTestCase(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, name: str, payload: bytes) -> Path:
        path = self.dir / name
        path.write_bytes(payload)
        return path


class TestRgbeCodec(unittest.TestCase):

    def test_unit_pixel_encoding(self):
        assert_array_equal(rgb_to_rgbe(np.array([1.0, 1.0, 1.0])), [128, 128, 128, 129])

    def test_zero_pixel_encoding(self):
        assert_array_equal(rgb_to_rgbe(np.zeros(3)), [0, 0, 0, 0])
        assert_array_equal(rgbe_to_rgb(np.zeros(4, dtype=np.uint8)), [0, 0, 0])

    def test_decode_unit_pixel(self):
        assert_allclose(rgbe_to_rgb(np.array([128, 128, 128, 129], dtype=np.uint8)), [1.0, 1.0, 1.0])

    def test_quantization_error_bounded_by_pixel_peak(self):
        rng = np.random.default_rng(3)
        rgb = rng.uniform(0.0, 1.0, (500, 3)) * 10.0 ** rng.uniform(-3, 4, (500, 1))
        decoded = rgbe_to_rgb(rgb_to_rgbe(rgb))
        peak = rgb.max(axis=1, keepdims=True)
        self.assertTrue(np.all(np.abs(decoded - rgb) <= peak / 255.0))


class TestLoadEnvmap(HdrTestCase):

    def test_minimal_flat_file(self):
        pixels = bytes([128, 128, 128, 129]) * 2
        path = self.write("tiny.hdr", RGBE_HEADER + b"-Y 1 +X 2\n" + pixels)
        envmap = load_envmap(path)
        self.assertEqual(envmap.shape, (1, 2, 3))
        assert_allclose(envmap, 1.0)

    def test_rle_scanlines(self):
        width = 8
        literal = list(range(1, 9))
        scanline = bytes([2, 2, 0, width])
        scanline += bytes([128 + width, 128])   # red: one run
        scanline += bytes([width] + literal)    # green: literal bytes
        scanline += bytes([128 + 4, 64, 4, 10, 20, 30, 40])  # blue: run then literal
        scanline += bytes([128 + width, 129])   # exponent
        path = self.write("rle.hdr", RGBE_HEADER + b"-Y 4 +X 8\n" + scanline * 4)
        envmap = load_envmap(path)
        self.assertEqual(envmap.shape, (4, 8, 3))
        assert_allclose(envmap[:, :, 0], 1.0)
        assert_allclose(envmap[0, :, 1], np.array(literal) / 128.0)
        assert_allclose(envmap[2, :, 2], np.array([64, 64, 64, 64, 10, 20, 30, 40]) / 128.0)

    def test_pfm_zeros(self):
        path = self.write("zeros.pfm", pfm_bytes(b"PF", 4, 2, np.zeros(24)))
        envmap = load_envmap(path)
        self.assertEqual(envmap.shape, (2, 4, 3))
        self.assertFalse(envmap.any())

    def test_pfm_rows_are_bottom_up(self):
        values = np.zeros((2, 4, 3), dtype=np.float32)
        values[0] = 1.0  # first stored row is the bottom of the image
        path = self.write("rows.pfm", pfm_bytes(b"PF", 4, 2, values))
        envmap = load_envmap(path)
        assert_allclose(envmap[1], 1.0)
        assert_allclose(envmap[0], 0.0)

    def test_truncated_stream(self):
        path = self.write("cut.hdr", RGBE_HEADER + b"-Y 1 +X 2\n" + bytes([128, 128, 128]))
        with self.assertRaises(TruncatedStreamError) as ctx:
            load_envmap(path)
        self.assertIn("unexpected end of stream", str(ctx.exception))

    def test_malformed_header(self):
        path = self.write("bad.hdr", b"#?RADIANCE\n\n-Y two +X 4\n")
        with self.assertRaises(MalformedHeaderError):
            load_envmap(path)
        path = self.write("junk.hdr", b"GIF89a....")
        with self.assertRaises(MalformedHeaderError):
            load_envmap(path)

    def test_aspect_ratio(self):
        path = self.write("square.pfm", pfm_bytes(b"PF", 2, 2, np.ones(12)))
        with self.assertRaises(AspectRatioError):
            load_envmap(path)
        self.assertEqual(load_image(path).shape, (2, 2, 3))

    def test_negative_radiance(self):
        values = np.ones(24)
        values[5] = -2.0
        path = self.write("neg.pfm", pfm_bytes(b"PF", 4, 2, values))
        with self.assertRaises(NegativeRadianceError):
            load_envmap(path)

    def test_non_finite_radiance(self):
        for bad in (np.nan, np.inf):
            values = np.ones(24)
            values[7] = bad
            path = self.write("bad.pfm", pfm_bytes(b"PF", 4, 2, values))
            with self.assertRaises(NonFiniteRadianceError) as caught:
                load_envmap(path)
            self.assertNotIsInstance(caught.exception, NegativeRadianceError)
            self.assertIn("non-finite", str(caught.exception))

    def test_error_cases_are_value_errors(self):
        path = self.write("square.pfm", pfm_bytes(b"PF", 2, 2, np.ones(12)))
        with self.assertRaises(ValueError):
            load_envmap(path)


class TestSaveEnvmap(HdrTestCase):

    def test_pfm_round_trip_is_bit_exact(self):
        rng = np.random.default_rng(0)
        envmap = rng.exponential(2.0, (16, 32, 3)).astype(np.float32).astype(np.float64)
        path = self.dir / "env.pfm"
        save_envmap(envmap, path, format="pfm")
        assert_array_equal(load_envmap(path), envmap)

    def test_rgbe_round_trip(self):
        rng = np.random.default_rng(1)
        envmap = rng.exponential(2.0, (16, 32, 3))
        envmap[0, 0] = 0.0
        path = self.dir / "env.hdr"
        save_envmap(envmap, path)
        loaded = load_envmap(path)
        peak = envmap.max(axis=-1, keepdims=True)
        self.assertTrue(np.all(np.abs(loaded - envmap) <= peak / 255.0))
        assert_array_equal(loaded[0, 0], 0.0)

    def test_save_image_accepts_any_aspect(self):
        path = self.dir / "probe.pfm"
        save_image(np.ones((5, 5, 3)), path, format="pfm")
        assert_array_equal(load_image(path), 1.0)

    def test_save_envmap_validates(self):
        with self.assertRaises(ValueError):
            save_envmap(np.ones((5, 5, 3)), self.dir / "bad.hdr")
        self.assertFalse((self.dir / "bad.hdr").exists())

    def test_unknown_format(self):
        with self.assertRaises(ValueError):
            save_image(np.ones((2, 4, 3)), self.dir / "x.exr", format="exr")
        self.assertEqual(list(self.dir.iterdir()), [])


class TestDepthmap(HdrTestCase):

    def test_constant_round_trip(self):
        depth = np.full((8, 16), 3.0)
        path = self.dir / "depth.pfm"
        save_depthmap(depth, path)
        assert_array_equal(load_depthmap(path), depth)

    def test_unknown_pixels_load_as_zero(self):
        depth = np.full((4, 8), 2.5)
        depth[1, 2] = 0.0
        path = self.dir / "depth.pfm"
        save_depthmap(depth, path)
        loaded = load_depthmap(path)
        self.assertEqual(loaded[1, 2], 0.0)
        self.assertEqual(int((loaded == 0).sum()), 1)

    def test_random_round_trip(self):
        depth = np.random.default_rng(2).uniform(0.5, 20.0, (8, 16)).astype(np.float32).astype(np.float64)
        path = self.dir / "depth.pfm"
        save_depthmap(depth, path)
        assert_array_equal(load_depthmap(path), depth)

    def test_rgb_pfm_is_not_a_depth_map(self):
        path = self.write("rgb.pfm", pfm_bytes(b"PF", 4, 2, np.ones(24)))
        with self.assertRaises(MalformedHeaderError):
            load_depthmap(path)


class TestLightSetDocument(HdrTestCase):

    def write_doc(self, doc) -> Path:
        path = self.dir / "lights.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        return path

    def test_single_light_round_trip(self):
        lightset = LightSet(lights=[Light(l=[0, 0, 1], d=2.0, s=0.1, c=[5, 5, 5])], ambient=[0.1, 0.1, 0.1])
        path = self.dir / "lights.json"
        save_lightset(lightset, path)
        loaded = load_lightset(path)
        self.assertEqual(len(loaded), 1)
        assert_array_equal(loaded.lights[0].l, [0, 0, 1])
        self.assertEqual((loaded.lights[0].d, loaded.lights[0].s), (2.0, 0.1))
        assert_array_equal(loaded.lights[0].c, [5, 5, 5])
        assert_array_equal(loaded.ambient, [0.1, 0.1, 0.1])

    def test_random_round_trip_is_lossless(self):
        rng = np.random.default_rng(4)
        dirs = rng.normal(size=(3, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        lightset = LightSet.from_arrays(dirs, rng.uniform(1, 5, 3), rng.uniform(0.01, 1, 3),
                                        rng.uniform(0, 10, (3, 3)), rng.uniform(0, 1, 3))
        path = self.dir / "lights.json"
        save_lightset(lightset, path)
        loaded = load_lightset(path)
        for a, b in zip(lightset.lights, loaded.lights):
            assert_array_equal(a.l, b.l)
            self.assertEqual((a.d, a.s), (b.d, b.s))
            assert_array_equal(a.c, b.c)
        assert_array_equal(loaded.ambient, lightset.ambient)

    def test_ambient_only_document(self):
        loaded = load_lightset(self.write_doc({"version": 1, "lights": [], "ambient": [0.2, 0.2, 0.2]}))
        self.assertEqual(len(loaded), 0)
        assert_allclose(loaded.ambient, 0.2)

    def test_nearly_unit_direction_is_renormalized(self):
        doc = {"version": 1, "lights": [{"l": [0, 0, 1.01], "d": 1, "s": 0.1, "c": [1, 1, 1]}], "ambient": [0, 0, 0]}
        loaded = load_lightset(self.write_doc(doc))
        assert_allclose(loaded.lights[0].l, [0, 0, 1])

    def test_rejections(self):
        light = {"l": [0, 0, 1], "d": 1, "s": 0.1, "c": [1, 1, 1]}
        bad_docs = [
            {"version": 1, "lights": [dict(light, l=[0, 0, 1.1])], "ambient": [0, 0, 0]},
            {"version": 1, "lights": [dict(light, d=-1)], "ambient": [0, 0, 0]},
            {"version": 1, "lights": [dict(light, s=0)], "ambient": [0, 0, 0]},
            {"version": 1, "lights": [dict(light, c=[1, -1, 1])], "ambient": [0, 0, 0]},
            {"version": 1, "lights": [dict(light, extra=3)], "ambient": [0, 0, 0]},
            {"version": 1, "lights": [light], "ambient": [0, 0, 0], "notes": "x"},
            {"version": 2, "lights": [light], "ambient": [0, 0, 0]},
            {"version": 1, "lights": [light], "ambient": [0, -0.1, 0]},
            {"version": 1, "lights": [dict(light, d="far")], "ambient": [0, 0, 0]},
        ]
        for doc in bad_docs:
            with self.assertRaises(LightSetFormatError, msg=str(doc)):
                load_lightset(self.write_doc(doc))

    def test_not_json(self):
        path = self.dir / "lights.txt"
        path.write_text("light 1: somewhere", encoding="utf-8")
        with self.assertRaises(LightSetFormatError):
            load_lightset(path)


class TestPreview(HdrTestCase):

    def test_tonemap_values(self):
        assert_array_equal(tonemap(np.array([[[0.0, 1.0, 0.5]]])), [[[0, 255, 186]]])

    def test_black_png(self):
        path = self.dir / "black.png"
        save_preview(np.zeros((4, 8, 3)), path)
        pixels = np.array(Image.open(path))
        self.assertEqual(pixels.shape, (4, 8, 3))
        self.assertFalse(pixels.any())

    def test_exposure_must_be_positive(self):
        with self.assertRaises(ValueError):
            save_preview(np.zeros((4, 8, 3)), self.dir / "x.png", exposure=0.0)
        self.assertFalse((self.dir / "x.png").exists())


class TestAtomicOutput(HdrTestCase):

    def test_failed_block_leaves_nothing(self):
        target = self.dir / "out.hdr"
        with self.assertRaises(RuntimeError):
            with atomic_output(target) as tmp:
                tmp.write_bytes(b"partial")
                raise RuntimeError("interrupted")
        self.assertEqual(list(self.dir.iterdir()), [])

    def test_successful_block_replaces_target(self):
        target = self.dir / "out.txt"
        target.write_text("old")
        with atomic_output(target) as tmp:
            tmp.write_text("new")
        self.assertEqual(target.read_text(), "new")
        self.assertEqual(list(self.dir.iterdir()), [target])

    def test_missing_directory_names_the_target(self):
        target = self.dir / "no_such_dir" / "out.hdr"
        with self.assertRaises(FileNotFoundError) as caught:
            with atomic_output(target):
                pass
        self.assertEqual(caught.exception.filename, str(target))


if __name__ == "__main__":
    unittest.main()
