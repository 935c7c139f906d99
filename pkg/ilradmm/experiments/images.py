"""
Images
====================================
Gray images in [0, 1], portable graymap (PGM) I/O, Gaussian blur kernels, seeded noise, test phantoms
and the SNR quality metric.

..
    Copyright 2022, The ilradmm developers.

    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        http://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.

"""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np


class PGMParseError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset}).")


@dataclass(frozen=True)
class ImageBuffer:
    """
    Gray image stored as a ``(height, width)`` float array. Values may leave [0, 1] while solving;
    they are clamped on save.
    """
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=float)
        if pixels.ndim != 2 or pixels.shape[0] <= 0 or pixels.shape[1] <= 0:
            raise ValueError(f"Image pixels must be a non-empty 2-D array, got shape {pixels.shape}.")
        pixels.setflags(write=False)
        object.__setattr__(self, 'pixels', pixels)

    @staticmethod
    def from_flat(values: np.ndarray, width: int, height: int) -> 'ImageBuffer':
        values = np.asarray(values, dtype=float)
        if values.size != width * height:
            raise ValueError(f"Expected {width * height} pixels for a {width}x{height} image, got {values.size}.")
        return ImageBuffer(values.reshape(height, width))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape

    @property
    def flat(self) -> np.ndarray:
        """
        Row-major pixel vector.
        """
        return self.pixels.ravel()

    def clamped(self) -> 'ImageBuffer':
        return ImageBuffer(np.clip(self.pixels, 0.0, 1.0))


def gaussian_kernel(size: int, width: float) -> np.ndarray:
    """
    ``size x size`` kernel proportional to ``exp(-(i^2 + j^2) / (2 width^2))`` on the centered grid, summing to 1.
    """
    if int(size) != size or size <= 0 or size % 2 == 0:
        raise ValueError(f"Kernel size must be a positive odd integer, got {size}.")
    if not width > 0:
        raise ValueError(f"Kernel width must be > 0, got {width}.")
    half = (int(size) - 1) // 2
    i = np.arange(-half, half + 1, dtype=float)
    kernel = np.exp(-(i[:, None] ** 2 + i[None, :] ** 2) / (2.0 * width ** 2))
    kernel /= kernel.sum()
    return kernel / kernel.sum()


def _next_token(data: bytes, pos: int) -> Tuple[bytes, int]:
    """
    Read one whitespace-delimited header token, skipping ``#`` comments. Returns the token and the
    offset just after it.
    """
    n = len(data)
    while pos < n:
        if data[pos:pos + 1] == b'#':
            while pos < n and data[pos:pos + 1] not in (b'\n', b'\r'):
                pos += 1
        elif data[pos:pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b'#':
        pos += 1
    if start == pos:
        raise PGMParseError("Truncated header", start)
    return data[start:pos], pos


def _header_int(data: bytes, pos: int, what: str) -> Tuple[int, int]:
    token, end = _next_token(data, pos)
    if not token.isdigit():
        raise PGMParseError(f"Expected {what}, got {token[:16]!r}", end - len(token))
    return int(token), end


def parse_pgm(data: bytes) -> ImageBuffer:
    """
    Parse binary (P5) or ASCII (P2) graymap bytes. Samples are divided by maxval.

    :raises PGMParseError: naming the byte offset of the first problem
    """
    magic, pos = _next_token(data, 0)
    if magic not in (b'P2', b'P5'):
        raise PGMParseError(f"Unsupported magic number {magic[:8]!r}, expected P2 or P5", 0)
    width, pos = _header_int(data, pos, "width")
    height, pos = _header_int(data, pos, "height")
    maxval, pos = _header_int(data, pos, "maxval")
    if width <= 0 or height <= 0:
        raise PGMParseError(f"Image dimensions must be positive, got {width}x{height}", pos)
    if not 0 < maxval <= 65535:
        raise PGMParseError(f"maxval must be in [1, 65535], got {maxval}", pos)
    n = width * height

    if magic == b'P5':
        if pos >= len(data) or not data[pos:pos + 1].isspace():
            raise PGMParseError("Expected a single whitespace byte before the raster", pos)
        pos += 1
        dtype = np.dtype('u1') if maxval < 256 else np.dtype('>u2')
        needed = n * dtype.itemsize
        if len(data) - pos < needed:
            raise PGMParseError(f"Truncated raster: expected {needed} bytes, got {len(data) - pos}", len(data))
        samples = np.frombuffer(data, dtype=dtype, count=n, offset=pos).astype(float)
    else:
        values: List[int] = []
        for _ in range(n):
            try:
                value, pos = _header_int(data, pos, "sample")
            except PGMParseError as e:
                raise PGMParseError(f"Truncated or malformed raster after {len(values)} of {n} samples", e.offset) from e
            values.append(value)
        samples = np.array(values, dtype=float)

    if np.any(samples > maxval):
        raise PGMParseError(f"Sample larger than maxval {maxval}", pos)
    return ImageBuffer((samples / maxval).reshape(height, width))


def load_pgm(path: str) -> ImageBuffer:
    with open(path, 'rb') as f:
        return parse_pgm(f.read())


def save_pgm(img: ImageBuffer, path: str) -> None:
    """
    Write a binary (P5) graymap with maxval 255, rounding and clamping pixels.
    """
    raster = np.clip(np.round(img.pixels * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode('ascii')
    with open(path, 'wb') as f:
        f.write(header)
        f.write(raster.tobytes())


def phantom_image(width: int = 64, height: int = 64, seed: int = 0) -> ImageBuffer:
    """
    Piecewise-constant test image: a dark background with a horizontal step ramp, a few flat rectangles
    and disks with seeded positions and gray levels.
    """
    if width < 16 or height < 16:
        raise ValueError(f"Phantom dimensions must be >= 16, got {width}x{height}.")
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:height, 0:width]

    n_steps = 4
    img = 0.1 + 0.1 * np.floor(cols * n_steps / width) / n_steps

    for _ in range(3):
        h = int(rng.integers(height // 6, height // 3 + 1))
        w = int(rng.integers(width // 6, width // 3 + 1))
        top = int(rng.integers(0, height - h))
        left = int(rng.integers(0, width - w))
        img[top:top + h, left:left + w] = np.round(rng.uniform(0.35, 0.7), 2)

    for _ in range(2):
        radius = rng.uniform(min(width, height) / 10, min(width, height) / 5)
        cy = rng.uniform(radius, height - radius)
        cx = rng.uniform(radius, width - radius)
        img[(rows - cy) ** 2 + (cols - cx) ** 2 <= radius ** 2] = np.round(rng.uniform(0.75, 0.95), 2)

    return ImageBuffer(np.clip(img, 0.0, 1.0))


def add_noise(img: ImageBuffer, std: float, seed: int) -> ImageBuffer:
    """
    Add seeded i.i.d. Gaussian noise of standard deviation ``std``, then clamp to [0, 1].
    """
    if std < 0:
        raise ValueError(f"Noise std must be >= 0, got {std}.")
    if std == 0:
        return ImageBuffer(np.array(img.pixels))
    noise = np.random.default_rng(seed).normal(0.0, std, size=img.shape)
    return ImageBuffer(np.clip(img.pixels + noise, 0.0, 1.0))


def snr(u: ImageBuffer, u_star: ImageBuffer) -> float:
    """
    ``10 log10(||u - mean(u)||^2 / ||u - u_star||^2)`` in dB, where ``u`` is the reference image.
    Returns ``+inf`` when ``u_star == u``.
    """
    if u.shape != u_star.shape:
        raise ValueError(f"SNR needs images of the same shape, got {u.shape} and {u_star.shape}.")
    error = float(np.sum((u.pixels - u_star.pixels) ** 2))
    if error == 0.0:
        return float('inf')
    signal = float(np.sum((u.pixels - u.pixels.mean()) ** 2))
    if signal == 0.0:
        return float('-inf')
    return float(10.0 * np.log10(signal / error))
