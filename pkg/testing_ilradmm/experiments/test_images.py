import os

import numpy as np
import pytest

from ilradmm.experiments.images import (ImageBuffer, PGMParseError, add_noise,
                                        gaussian_kernel, load_pgm, parse_pgm,
                                        phantom_image, save_pgm, snr)


def test_gaussian_kernel_of_size_one():
    assert np.array_equal(gaussian_kernel(1, 3.0), [[1.0]])


def test_gaussian_kernel_sums_to_one():
    kernel = gaussian_kernel(17, 5.0)

    assert kernel.shape == (17, 17)
    assert kernel.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(kernel, kernel.T)
    assert np.array_equal(kernel, kernel[::-1, ::-1])


def test_wide_gaussian_kernel_is_flat():
    assert np.allclose(gaussian_kernel(3, 1000.0), 1.0 / 9.0, atol=1e-6)


@pytest.mark.parametrize("size,width", [(4, 1.0), (0, 1.0), (3, 0.0), (3, -1.0)])
def test_gaussian_kernel_rejects_bad_arguments(size, width):
    with pytest.raises(ValueError):
        gaussian_kernel(size, width)


def test_save_then_load_is_within_quantization(tmpdir):
    rng = np.random.default_rng(0)
    img = ImageBuffer(rng.uniform(0, 1, size=(7, 5)))
    path = os.path.join(tmpdir, 'img.pgm')

    save_pgm(img, path)
    loaded = load_pgm(path)

    assert loaded.shape == (7, 5)
    assert np.max(np.abs(loaded.pixels - img.pixels)) <= 1.0 / 255.0


def test_zero_image_roundtrips_bitwise(tmpdir):
    path = os.path.join(tmpdir, 'zeros.pgm')

    save_pgm(ImageBuffer(np.zeros((4, 4))), path)

    assert np.array_equal(load_pgm(path).pixels, np.zeros((4, 4)))


def test_save_clamps_out_of_range_pixels(tmpdir):
    path = os.path.join(tmpdir, 'clamped.pgm')

    save_pgm(ImageBuffer(np.array([[-0.5, 1.5]])), path)

    with open(path, 'rb') as f:
        assert f.read() == b"P5\n2 1\n255\n\x00\xff"


def test_wrong_magic_is_rejected():
    with pytest.raises(PGMParseError) as e:
        parse_pgm(b"P6\n1 1\n255\n\x00\x00\x00")

    assert e.value.offset == 0


def test_ascii_graymap_with_comments():
    img = parse_pgm(b"P2\n# a comment\n3 2\n# another\n4\n0 1 2\n3 4 0\n")

    assert np.array_equal(img.pixels, np.array([[0, 1, 2], [3, 4, 0]]) / 4.0)


def test_sixteen_bit_binary_graymap_is_big_endian():
    img = parse_pgm(b"P5\n2 1\n65535\n\x00\x01\xff\xff")

    assert np.array_equal(img.pixels, [[1.0 / 65535.0, 1.0]])


@pytest.mark.parametrize("data", [
    b"P5\n2 2\n255\n\x00\x01\x02",
    b"P2\n2 2\n255\n0 1 2",
    b"P5\n2 2",
    b"P5\n2 2\n70000\n\x00\x00\x00\x00",
    b"P2\n1 1\n3\n9",
    b"P5\n0 2\n255\n",
])
def test_malformed_graymaps_are_rejected(data):
    with pytest.raises(PGMParseError) as e:
        parse_pgm(data)

    assert 0 <= e.value.offset <= len(data)


def test_truncated_raster_reports_end_of_data():
    data = b"P5\n2 2\n255\n\x00\x01\x02"

    with pytest.raises(PGMParseError) as e:
        parse_pgm(data)

    assert e.value.offset == len(data)


def test_phantom_is_deterministic():
    assert np.array_equal(phantom_image(64, 64, seed=3).pixels, phantom_image(64, 64, seed=3).pixels)
    assert not np.array_equal(phantom_image(64, 64, seed=3).pixels, phantom_image(64, 64, seed=4).pixels)


def test_phantom_is_piecewise_constant_in_unit_range():
    img = phantom_image()

    assert img.shape == (64, 64)
    assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0
    assert len(np.unique(img.pixels)) >= 3


def test_phantom_rejects_small_dimensions():
    with pytest.raises(ValueError):
        phantom_image(8, 64)


def test_noise_free_image_is_unchanged():
    img = phantom_image(16, 16)

    assert np.array_equal(add_noise(img, 0.0, seed=1).pixels, img.pixels)


def test_noise_statistics():
    # Given a mid-gray image, far from the clamping bounds
    img = ImageBuffer(np.full((256, 256), 0.5))
    std = 0.01

    # When
    noise = add_noise(img, std, seed=0).pixels - 0.5

    # Then
    n = noise.size
    assert abs(noise.mean()) <= 4 * std / np.sqrt(n)
    assert 0.009 <= noise.std() <= 0.011


def test_noise_is_seeded():
    img = phantom_image(32, 32)

    assert np.array_equal(add_noise(img, 0.05, seed=7).pixels, add_noise(img, 0.05, seed=7).pixels)
    assert np.all((add_noise(img, 0.5, seed=7).pixels >= 0) & (add_noise(img, 0.5, seed=7).pixels <= 1))


def test_snr_of_identical_images_is_infinite():
    img = phantom_image(16, 16)

    assert snr(img, img) == float('inf')


def test_snr_of_the_mean_image_is_zero():
    img = phantom_image(16, 16)

    assert snr(img, ImageBuffer(np.full(img.shape, img.pixels.mean()))) == pytest.approx(0.0, abs=1e-12)


def test_snr_of_two_pixels():
    assert snr(ImageBuffer(np.array([[0.0, 1.0]])), ImageBuffer(np.array([[0.5, 0.5]]))) == pytest.approx(0.0)


def test_snr_needs_matching_shapes():
    with pytest.raises(ValueError):
        snr(ImageBuffer(np.zeros((2, 2))), ImageBuffer(np.zeros((2, 3))))


def test_image_buffer_is_read_only():
    img = ImageBuffer.from_flat(np.arange(6.0), width=3, height=2)

    assert img.shape == (2, 3)
    assert np.array_equal(img.flat, np.arange(6.0))
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 1.0
