"""Patch-based image denoising demo.

Pipeline: extract all overlapping 8x8 patches (stride 1), remove each
patch's mean, recover a sparse code per patch with subspace pursuit
(plain, and the perturb-and-average variant), re-add the means and
average overlapping estimates. The dictionary is an overcomplete 2-D DCT.

Images are 8-bit grayscale, stored as binary PGM (P5). Noisy images are
kept in float form internally; PSNR always uses peak 255.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .bayes import ls_estimate_rows
from .experiments import psnr
from .model import Dictionary, RngSeed, dictionary_from_matrix
from .pursuits import PursuitSpec

PATCH_SIZE = 8
DCT_ATOMS_PER_DIM = 16

# patches processed per pursuit batch; a compromise between BLAS
# efficiency and peak memory (chunk * K perturbed copies are in flight)
_PATCH_CHUNK = 4096


def overcomplete_dct_dictionary(
    patch_size: int = PATCH_SIZE, atoms_per_dim: int = DCT_ATOMS_PER_DIM
) -> Dictionary:
    """Separable overcomplete DCT: kron of a 1-D overcomplete DCT basis."""
    if atoms_per_dim < patch_size:
        raise ValueError("need at least as many atoms per dimension as pixels")
    grid = np.arange(patch_size)[:, None] * np.arange(atoms_per_dim)[None, :]
    base = np.cos(math.pi * grid / atoms_per_dim)
    base[:, 1:] -= base[:, 1:].mean(axis=0)
    base /= np.linalg.norm(base, axis=0)
    return dictionary_from_matrix(np.kron(base, base), kind="overcomplete")


# ---------------------------------------------------------------------------
# PGM I/O


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported, maxval was {maxval}")
    pos += 1  # single whitespace byte after the header
    if len(data) - pos < width * height:
        raise ValueError(f"{path}: pixel data truncated")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return pixels.reshape(height, width).copy()


def write_pgm(path, image) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM images must be 2-D grayscale")
    if img.dtype != np.uint8:
        if np.issubdtype(img.dtype, np.floating):
            img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        else:
            raise ValueError("expected uint8 or float image")
    height, width = img.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(header + img.tobytes())
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# patch plumbing


def extract_patches(image, size: int = PATCH_SIZE) -> tuple[np.ndarray, np.ndarray]:
    """All stride-1 patches as rows, with per-patch means removed.

    Returns (patches, means); patch rows are row-major over positions.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2 or img.shape[0] < size or img.shape[1] < size:
        raise ValueError("image smaller than the patch size")
    windows = np.lib.stride_tricks.sliding_window_view(img, (size, size))
    patches = windows.reshape(-1, size * size).copy()
    means = patches.mean(axis=1)
    patches -= means[:, None]
    return patches, means


def assemble_patches(patches, means, shape: tuple[int, int], size: int = PATCH_SIZE) -> np.ndarray:
    """Average overlapping patch estimates back into an image."""
    rows, cols = shape
    flat = np.asarray(patches, dtype=float) + np.asarray(means, dtype=float)[:, None]
    out = np.zeros(shape)
    counts = np.zeros(shape)
    pr, pc = rows - size + 1, cols - size + 1
    if flat.shape != (pr * pc, size * size):
        raise ValueError("patch array does not match the target shape")
    blocks = flat.reshape(pr, pc, size, size)
    for di in range(size):
        for dj in range(size):
            out[di : di + pr, dj : dj + pc] += blocks[:, :, di, dj]
            counts[di : di + pr, dj : dj + pc] += 1.0
    return out / counts


def add_noise(image, sigma: float, seed: RngSeed) -> np.ndarray:
    """White Gaussian noise, unclipped: PSNR vs the clean image is then
    10*log10(255^2/sigma^2) up to sampling error (16.1 dB at sigma=40)."""
    img = np.asarray(image, dtype=float)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return img.copy()
    return img + seed.generator(0).normal(0.0, sigma, size=img.shape)


# ---------------------------------------------------------------------------
# patch denoisers


def denoise_patches_sp(patches, dictionary: Dictionary, sparsity: int) -> np.ndarray:
    """Plain subspace pursuit + LS fit, batched over patches."""
    spec = PursuitSpec(method="sp", sparsity=sparsity)
    out = np.empty_like(patches)
    atoms = dictionary.atoms
    for lo in range(0, patches.shape[0], _PATCH_CHUNK):
        chunk = patches[lo : lo + _PATCH_CHUNK]
        supports = spec.run_rows(chunk, dictionary)
        coefs = ls_estimate_rows(dictionary, chunk, supports)
        out[lo : lo + _PATCH_CHUNK] = coefs @ atoms.T
    return out


def denoise_patches_sr(
    patches,
    dictionary: Dictionary,
    sparsity: int,
    sigma_n: float,
    iterations: int,
    seed: RngSeed,
) -> np.ndarray:
    """Perturb-and-average subspace pursuit (LS form), batched.

    Per patch: run SP on `iterations` noisy copies, fit each recovered
    support to the original patch by least squares, average with
    multiplicity. Patch i draws its noise from the sub-stream (seed, i),
    so the randomness does not depend on the chunking (values agree up
    to BLAS rounding).
    """
    spec = PursuitSpec(method="sp", sparsity=sparsity)
    total, dim = patches.shape
    out = np.empty_like(patches)
    atoms = dictionary.atoms
    chunk_size = max(1, _PATCH_CHUNK // max(iterations, 1))
    for lo in range(0, total, chunk_size):
        chunk = patches[lo : lo + chunk_size]
        count = chunk.shape[0]
        noisy = np.repeat(chunk, iterations, axis=0)
        if sigma_n > 0:
            for i in range(count):
                block = seed.generator(lo + i).normal(
                    0.0, sigma_n, size=(iterations, dim)
                )
                noisy[i * iterations : (i + 1) * iterations] += block
        supports = spec.run_rows(noisy, dictionary)
        originals = np.repeat(chunk, iterations, axis=0)
        coefs = ls_estimate_rows(dictionary, originals, supports)
        estimates = (coefs @ atoms.T).reshape(count, iterations, dim).mean(axis=1)
        out[lo : lo + count] = estimates
    return out


# ---------------------------------------------------------------------------
# full-image pipeline


@dataclass(frozen=True)
class DenoiseReport:
    plain: np.ndarray
    sr: np.ndarray
    psnr_noisy: float
    psnr_plain: float
    psnr_sr: float
    sigma_n: float
    sparsity: int


def tune_sr_sigma(
    noisy_patches,
    clean_patches,
    dictionary: Dictionary,
    sparsity: int,
    sigma_grid,
    iterations: int,
    seed: RngSeed,
    subset: int = 1000,
) -> float:
    """Pick the perturbation level that best restores a patch subset."""
    sigma_grid = [float(s) for s in sigma_grid]
    if len(sigma_grid) == 1:
        return sigma_grid[0]
    total = noisy_patches.shape[0]
    step = max(1, total // subset)
    idx = np.arange(0, total, step)
    best_sigma, best_err = sigma_grid[0], math.inf
    for si, sigma_n in enumerate(sigma_grid):
        est = denoise_patches_sr(
            noisy_patches[idx], dictionary, sparsity, sigma_n, iterations, seed.child(si)
        )
        err = float(np.mean((est - clean_patches[idx]) ** 2))
        if err < best_err:
            best_sigma, best_err = sigma_n, err
    return best_sigma


def denoise_image(
    noisy,
    clean,
    dictionary: Dictionary,
    sigma_nu: float,
    sparsity: int,
    sigma_grid,
    iterations: int,
    seed: RngSeed,
) -> DenoiseReport:
    """Denoise with plain SP and SR-SP; PSNR is reported against `clean`.

    sigma_nu = 0 is a pass-through: both outputs equal the input.
    """
    noisy = np.asarray(noisy, dtype=float)
    clean = np.asarray(clean, dtype=float)
    if noisy.shape != clean.shape:
        raise ValueError("noisy and clean images must have the same shape")
    if sigma_nu == 0:
        img = noisy.copy()
        return DenoiseReport(
            plain=img,
            sr=img.copy(),
            psnr_noisy=psnr(noisy, clean),
            psnr_plain=psnr(noisy, clean),
            psnr_sr=psnr(noisy, clean),
            sigma_n=0.0,
            sparsity=sparsity,
        )
    patches, means = extract_patches(noisy)
    clean_patches, clean_means = extract_patches(clean)
    sigma_n = tune_sr_sigma(
        patches,
        clean_patches + clean_means[:, None] - means[:, None],
        dictionary,
        sparsity,
        sigma_grid,
        iterations,
        seed.child(0),
    )
    plain_est = denoise_patches_sp(patches, dictionary, sparsity)
    sr_est = denoise_patches_sr(patches, dictionary, sparsity, sigma_n, iterations, seed.child(1))
    plain_img = assemble_patches(plain_est, means, noisy.shape)
    sr_img = assemble_patches(sr_est, means, noisy.shape)
    return DenoiseReport(
        plain=plain_img,
        sr=sr_img,
        psnr_noisy=psnr(noisy, clean),
        psnr_plain=psnr(plain_img, clean),
        psnr_sr=psnr(sr_img, clean),
        sigma_n=sigma_n,
        sparsity=sparsity,
    )


def standard_test_image() -> np.ndarray:
    """256x256 8-bit test image: the classic cameraman shot when
    scikit-image is importable, otherwise a deterministic synthetic scene."""
    try:
        from skimage import data

        img = np.asarray(data.camera(), dtype=float)
        down = img.reshape(256, 2, 256, 2).mean(axis=(1, 3))
        return np.clip(np.rint(down), 0, 255).astype(np.uint8)
    except Exception:
        return _synthetic_test_image()


def _synthetic_test_image() -> np.ndarray:
    side = 256
    yy, xx = np.mgrid[0:side, 0:side].astype(float)
    img = 90.0 + 50.0 * np.sin(2 * math.pi * xx / 64.0) * np.cos(2 * math.pi * yy / 48.0)
    img += 0.25 * (xx + yy) / 2.0
    for cx, cy, r, level in ((64, 80, 40, 220.0), (180, 60, 28, 30.0), (150, 190, 55, 160.0)):
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        img[mask] = level
    img[200:240, 30:110] = 120.0
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)
