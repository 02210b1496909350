"""ACE target detection over a cube, ROI extraction, and background removal.

Scores are the signed cosine between the whitened pixel and whitened target,
both mean-subtracted: with W the symmetric inverse square root of the shrunk
background covariance, score = <W(t-mu), W(x-mu)> / (|W(t-mu)| |W(x-mu)|).
Background removal fits a detected pixel on the target plus nearby background
spectra jointly (no intercept) and subtracts only the background part.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import ImageCube, Spectrum, average_pixels
from .errors import AlignmentError, InputError, NumericalError
from . import regression

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


@dataclass(frozen=True, eq=False)
class BackgroundStats:
    """Mean and shrunk covariance of the background, plus the whitener.

    `covariance` is already shrunk: (1-lambda)*S + lambda*diag(S). It must be
    positive definite (checked by factorization); the symmetric inverse
    square root is precomputed for scoring.
    """

    mean: np.ndarray
    covariance: np.ndarray
    shrinkage: float
    whitener: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise InputError("mean length %d does not match covariance shape %r"
                             % (mean.size, cov.shape))
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-10 * max(1.0, abs(cov).max())):
            raise InputError("covariance must be symmetric")
        cov = (cov + cov.T) / 2.0
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise NumericalError(
                "background covariance is not positive definite; "
                "increase the shrinkage") from None
        evals, evecs = np.linalg.eigh(cov)
        if evals.min() <= 0:
            raise NumericalError(
                "background covariance is numerically singular; "
                "increase the shrinkage")
        whitener = (evecs / np.sqrt(evals)) @ evecs.T
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "whitener", whitener)

    @property
    def bands(self) -> int:
        return self.mean.size

    def whiten(self, values: np.ndarray) -> np.ndarray:
        """W(v - mu) for one spectrum or a stack of row spectra."""
        return (np.asarray(values, dtype=np.float64) - self.mean) @ self.whitener.T


@dataclass(frozen=True, eq=False)
class DetectionMap:
    """Per-pixel ACE scores."""

    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 2:
            raise InputError("scores must be (rows, cols)")
        if not np.all(np.isfinite(scores)):
            raise NumericalError("detection map contains non-finite scores")
        object.__setattr__(self, "scores", scores)


@dataclass(frozen=True, eq=False)
class RegionOfInterest:
    """One 8-connected group of above-threshold pixels."""

    pixels: tuple            # (row, col) pairs, row-major order
    peak_score: float
    mean_score: float
    average: Spectrum

    @property
    def bounding_box(self) -> tuple:
        rows = [r for r, _ in self.pixels]
        cols = [c for _, c in self.pixels]
        return min(rows), max(rows), min(cols), max(cols)


def background_stats(cube: ImageCube, shrinkage: float = 0.01,
                     mask: np.ndarray | None = None) -> BackgroundStats:
    """Sample mean/covariance over selected pixels, then shrink toward diag.

    `mask` selects the pixels to use (True = include); default all. Needs at
    least 2 pixels; the shrunk covariance must come out positive definite.
    """
    if not 0.0 <= shrinkage <= 1.0:
        raise InputError("shrinkage must be in [0, 1], got %r" % shrinkage)
    flat = cube.data.reshape(-1, cube.data.shape[2])
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (cube.rows, cube.cols):
            raise InputError("pixel mask shape %r does not match cube %r"
                             % (mask.shape, (cube.rows, cube.cols)))
        flat = flat[mask.reshape(-1)]
    if flat.shape[0] < 2:
        raise InputError("need at least 2 pixels for background statistics, got %d"
                         % flat.shape[0])
    mean = flat.mean(axis=0)
    centered = flat - mean
    cov = (centered.T @ centered) / (flat.shape[0] - 1)
    shrunk = (1.0 - shrinkage) * cov + shrinkage * np.diag(np.diag(cov))
    return BackgroundStats(mean, shrunk, shrinkage)


def _values_on(stats: BackgroundStats, spec, what: str) -> np.ndarray:
    values = spec.values if isinstance(spec, Spectrum) else np.asarray(spec, np.float64)
    if values.shape != (stats.bands,):
        raise AlignmentError("%s has %d bands but statistics have %d"
                             % (what, values.size, stats.bands))
    return values


def ace_score(pixel, target, stats: BackgroundStats) -> float:
    """Signed whitened cosine between pixel and target, in [-1, 1]."""
    x = stats.whiten(_values_on(stats, pixel, "pixel"))
    t = stats.whiten(_values_on(stats, target, "target"))
    xn = float(np.linalg.norm(x))
    tn = float(np.linalg.norm(t))
    if xn == 0.0 or tn == 0.0:
        raise NumericalError("whitened pixel or target has zero norm")
    return float(np.clip((t @ x) / (tn * xn), -1.0, 1.0))


def _score_block(block: np.ndarray, stats: BackgroundStats,
                 twhite: np.ndarray) -> np.ndarray:
    white = stats.whiten(block.reshape(-1, block.shape[-1]))
    norms = np.linalg.norm(white, axis=1)
    tnorm = np.linalg.norm(twhite)
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = (white @ twhite) / (norms * tnorm)
    scores[norms == 0.0] = 0.0  # pixel exactly at the mean carries no direction
    return np.clip(scores, -1.0, 1.0).reshape(block.shape[:-1])


def detect(cube: ImageCube, target, stats: BackgroundStats, threshold: float,
           threads: int = 1):
    """Score every pixel and group above-threshold pixels into ROIs.

    Returns (DetectionMap, list of RegionOfInterest sorted by peak score,
    descending). Connectivity is 8-neighbor; each ROI carries its pixel
    coordinates and average spectrum.
    """
    if not -1.0 < threshold < 1.0:
        raise InputError("threshold must lie in (-1, 1), got %r" % threshold)
    if isinstance(target, Spectrum) and target.grid != cube.grid:
        raise AlignmentError("target %r is not on the cube grid" % target.name)
    twhite = stats.whiten(_values_on(stats, target, "target"))
    if np.linalg.norm(twhite) == 0.0:
        raise NumericalError("whitened target has zero norm")
    threads = max(1, int(threads))
    if threads == 1 or cube.rows < 2 * threads:
        scores = _score_block(cube.data, stats, twhite)
    else:
        scores = np.empty((cube.rows, cube.cols))
        bounds = np.linspace(0, cube.rows, threads + 1, dtype=int)
        def work(i):
            lo, hi = bounds[i], bounds[i + 1]
            scores[lo:hi] = _score_block(cube.data[lo:hi], stats, twhite)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(threads)))
    dmap = DetectionMap(scores)
    labels, count = ndimage.label(scores > threshold, structure=EIGHT_CONNECTED)
    rois = []
    for lab in range(1, count + 1):
        rr, cc = np.nonzero(labels == lab)
        pixels = tuple(zip(rr.tolist(), cc.tolist()))
        vals = scores[rr, cc]
        rois.append(RegionOfInterest(
            pixels=pixels,
            peak_score=float(vals.max()),
            mean_score=float(vals.mean()),
            average=average_pixels(cube, pixels)))
    rois.sort(key=lambda r: (-r.peak_score, r.pixels[0]))
    return dmap, rois


@dataclass(frozen=True, eq=False)
class BackgroundRemoval:
    """Result of removing fitted background contributions from a pixel."""

    spectrum: Spectrum               # pixel minus fitted background part
    target_coefficient: float        # fitted abundance of the target
    background_names: tuple
    background_coefficients: np.ndarray
    rss: float


def background_removal(pixel: Spectrum, target: Spectrum,
                       backgrounds) -> BackgroundRemoval:
    """Joint no-intercept fit of pixel on target plus backgrounds.

    The returned spectrum is pixel - sum(a_i * background_i): the target's
    fitted share plus the fit residual. Degenerate designs (near-duplicate
    spectra) raise instead of producing meaningless coefficients.
    """
    backgrounds = list(backgrounds)
    if not backgrounds:
        raise InputError("background removal needs at least one background spectrum")
    grid = pixel.grid
    mask = pixel.valid_mask() & target.valid_mask()
    if target.grid != grid:
        raise AlignmentError("target %r is not on the pixel grid" % target.name)
    for s in backgrounds:
        if s.grid != grid:
            raise AlignmentError("background %r is not on the pixel grid" % s.name)
        mask &= s.valid_mask()
    if not mask.any():
        raise InputError("no valid bands shared by pixel, target, and backgrounds")
    names = [target.name] + [s.name for s in backgrounds]
    if len(set(names)) != len(names):
        raise InputError("duplicate spectrum names in background removal: %r" % names)
    columns = np.column_stack([target.values] + [s.values for s in backgrounds])
    model = regression.fit(pixel.values[mask], columns[mask], names)
    if model.condition_flag:
        close = _near_duplicates(columns[mask], names)
        detail = ("near-duplicate pairs: %s" % ", ".join(close)) if close \
            else "spectra are linearly dependent"
        raise NumericalError(
            "degenerate background-removal design over %r (%s)" % (names, detail))
    bkg_part = columns[:, 1:] @ model.coefficients[1:]
    removed = Spectrum("bkgr_" + pixel.name, grid, pixel.values - bkg_part,
                       valid=None if mask.all() else mask)
    return BackgroundRemoval(
        spectrum=removed,
        target_coefficient=float(model.coefficients[0]),
        background_names=tuple(names[1:]),
        background_coefficients=model.coefficients[1:],
        rss=model.rss)


def _near_duplicates(columns: np.ndarray, names) -> list:
    pairs = []
    norms = np.linalg.norm(columns, axis=0)
    norms[norms == 0] = 1.0
    unit = columns / norms
    corr = np.abs(unit.T @ unit)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            if corr[i, j] > 0.999:
                pairs.append("%s~%s" % (names[i], names[j]))
    return pairs


def annulus_coordinates(roi: RegionOfInterest, shape, inner: int = 1,
                        outer: int = 5, max_spectra: int = 24) -> list:
    """Background pixel coordinates ringing an ROI's bounding box.

    The ring spans the box grown by `inner` through `outer` pixels (both
    inclusive), clipped to the image, row-major ordered, and evenly strided
    down to at most `max_spectra` coordinates.
    """
    if inner < 1 or outer < inner:
        raise InputError("need 1 <= inner <= outer, got %r, %r" % (inner, outer))
    if max_spectra < 1:
        raise InputError("max_spectra must be >= 1")
    rows, cols = shape
    rmin, rmax, cmin, cmax = roi.bounding_box
    guard = inner - 1  # cells inside bbox+guard are still "on the object"
    coords = []
    for r in range(max(0, rmin - outer), min(rows, rmax + outer + 1)):
        for c in range(max(0, cmin - outer), min(cols, cmax + outer + 1)):
            if rmin - guard <= r <= rmax + guard and cmin - guard <= c <= cmax + guard:
                continue
            coords.append((r, c))
    if not coords:
        raise InputError("no background pixels available around the ROI")
    if len(coords) > max_spectra:
        idx = np.unique(np.linspace(0, len(coords) - 1, max_spectra).round().astype(int))
        coords = [coords[i] for i in idx]
    return coords
