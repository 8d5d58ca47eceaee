r"""Quality metrics for synthetic 3D volumes.

Voxel-wise metrics compare a real volume with its synthetic counterpart:

* :func:`psnr` -- ``10 log10(L^2 / MSE)``;
* :func:`ms_ssim` -- multi-scale SSIM with Gaussian windows, contrast-structure
  terms at the finer scales and full SSIM at the coarsest scale.

Distribution metrics compare sets of feature vectors (one row per volume):

* :func:`fid` -- Frechet distance between Gaussians fitted to each set;
* :func:`mmd2` -- unbiased squared maximum mean discrepancy.

Features come either from external files (:func:`load_features`) or from the
deterministic built-in descriptor :func:`extract_features`. The two must not
be mixed within one comparison; :class:`FeatureSet` carries its source.

The default MS-SSIM weights ``(0.0448, 0.2856, 0.3001)`` are the first three
of the usual five-scale set and are used unnormalized (they sum to 0.6305).
Pass ``renormalize=True`` in :class:`MsSsimConfig` to rescale them to 1.
"""

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import atomic_write
from .errors import (
    DimensionMismatch,
    DimsMismatch,
    MalformedFeatureFile,
    NonFiniteEigenvalue,
    TooFewSamples,
    VolumeTooSmall,
    ZeroMse,
)

__all__ = [
    "FeatureSet",
    "FeatureMoments",
    "MsSsimConfig",
    "WindowStats",
    "psnr",
    "mse",
    "ms_ssim",
    "gaussian_window",
    "window_stats",
    "extract_features",
    "features_from_volumes",
    "moments",
    "fid",
    "mmd2",
    "load_features",
    "save_features",
    "BUILTIN_FEATURE_SOURCE",
    "FEATURE_DIM",
]

BUILTIN_FEATURE_SOURCE = "builtin-pyramid-296"
PYRAMID_GRIDS = ((8, 8, 4), (4, 4, 2), (2, 2, 1))
FEATURE_DIM = sum(int(np.prod(g)) for g in PYRAMID_GRIDS) + 4
FEAT_MAGIC = b"FEAT"
FEAT_VERSION = 1
_FEAT_HEADER = struct.Struct("<4sHII")


def _array(v):
    return np.asarray(getattr(v, "data", v), dtype=np.float64)


def _same_dims(a, b):
    if a.shape != b.shape:
        raise DimsMismatch(f"volume dims differ: {a.shape} vs {b.shape}")


# --- PSNR ---------------------------------------------------------------------

def mse(a, b):
    a, b = _array(a), _array(b)
    _same_dims(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, L=1.0):
    """Peak signal-to-noise ratio in dB.

    Raises :class:`ZeroMse` for identical volumes instead of returning inf.
    """
    if not L > 0:
        raise ValueError("dynamic range L must be positive")
    err = mse(a, b)
    if err == 0.0:
        raise ZeroMse("volumes are identical; PSNR is infinite")
    return 10.0 * np.log10(L * L / err)


# --- MS-SSIM ------------------------------------------------------------------

@dataclass(frozen=True)
class MsSsimConfig:
    k1: float = 0.01
    k2: float = 0.03
    L: float = 1.0
    weights: tuple = (0.0448, 0.2856, 0.3001)
    win_size: int = 11
    win_sigma: float = 1.5
    renormalize: bool = False

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("L must be positive")
        if not self.weights or any(w <= 0 for w in self.weights):
            raise ValueError("MS-SSIM weights must be positive")
        if self.win_size < 1:
            raise ValueError("window size must be >= 1")

    @property
    def scales(self):
        return len(self.weights)

    @property
    def c1(self):
        return (self.k1 * self.L) ** 2

    @property
    def c2(self):
        return (self.k2 * self.L) ** 2

    def effective_weights(self):
        w = np.asarray(self.weights, dtype=np.float64)
        return w / w.sum() if self.renormalize else w


@dataclass(frozen=True, eq=False)
class WindowStats:
    mu_x: np.ndarray
    mu_y: np.ndarray
    var_x: np.ndarray
    var_y: np.ndarray
    cov_xy: np.ndarray


def gaussian_window(size, sigma):
    """Normalized 1-D Gaussian taps; the 3-D window is their outer product."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(a, taps):
    # separable correlation without padding: output shrinks by len(taps)-1
    k = len(taps)
    for axis in range(3):
        n = a.shape[axis] - k + 1
        lead = (slice(None),) * axis
        out = taps[0] * a[lead + (slice(0, n),)]
        for i in range(1, k):
            out += taps[i] * a[lead + (slice(i, i + n),)]
        a = out
    return a


def window_stats(x, y, taps):
    """Local Gaussian-weighted means, variances and covariance.

    Negative variances from cancellation are clamped to 0.
    """
    mu_x = _filter_valid(x, taps)
    mu_y = _filter_valid(y, taps)
    var_x = np.maximum(_filter_valid(x * x, taps) - mu_x ** 2, 0.0)
    var_y = np.maximum(_filter_valid(y * y, taps) - mu_y ** 2, 0.0)
    cov_xy = _filter_valid(x * y, taps) - mu_x * mu_y
    return WindowStats(mu_x, mu_y, var_x, var_y, cov_xy)


def _pool2(a):
    h, w, d = (n // 2 * 2 for n in a.shape)
    a = a[:h, :w, :d]
    return a.reshape(h // 2, 2, w // 2, 2, d // 2, 2).mean(axis=(1, 3, 5))


def _check_scales(shape, cfg):
    for j in range(cfg.scales):
        dims = tuple(n // 2 ** j for n in shape)
        for axis, n in enumerate(dims):
            if n < cfg.win_size:
                raise VolumeTooSmall(
                    f"axis {axis} has {n} voxels at scale {j + 1} of {cfg.scales}, "
                    f"smaller than the {cfg.win_size}-voxel window")


def ms_ssim(a, b, cfg=None):
    """Multi-scale structural similarity of two volumes.

    Per-window CS (finer scales) and SSIM (coarsest scale) maps are averaged
    first, then raised to the scale weights and multiplied. Scales are
    produced by 2x2x2 average pooling.
    """
    cfg = cfg or MsSsimConfig()
    x, y = _array(a), _array(b)
    _same_dims(x, y)
    _check_scales(x.shape, cfg)
    taps = gaussian_window(cfg.win_size, cfg.win_sigma)
    weights = cfg.effective_weights()
    result = 1.0
    for j, beta in enumerate(weights):
        s = window_stats(x, y, taps)
        cs_map = (2 * s.cov_xy + cfg.c2) / (s.var_x + s.var_y + cfg.c2)
        if j == len(weights) - 1:
            lum = (2 * s.mu_x * s.mu_y + cfg.c1) / (s.mu_x ** 2 + s.mu_y ** 2 + cfg.c1)
            term = float(np.mean(lum * cs_map))
        else:
            term = float(np.mean(cs_map))
            x, y = _pool2(x), _pool2(y)
        # anti-correlated content can push a mean below 0; a fractional power
        # of a negative number is undefined
        result *= max(term, 0.0) ** beta
    return float(result)


# --- built-in features ----------------------------------------------------------

def _block_means(a, grid):
    edges = [np.floor(np.arange(g + 1) * n / g).astype(int) for n, g in zip(a.shape, grid)]
    # sum over contiguous blocks via reduceat, axis by axis
    out = a
    for axis, e in enumerate(edges):
        out = np.add.reduceat(out, e[:-1], axis=axis)
    counts = np.einsum("i,j,k->ijk", *[np.diff(e) for e in edges])
    return (out / counts).ravel()


def extract_features(v):
    """Deterministic 296-d pyramid descriptor of a normalized volume.

    Block means on 8x8x4, 4x4x2 and 2x2x1 grids (blocks flattened in
    ``[x, y, z]`` C order, x slowest), then global mean, std, min, max.
    Block edges along an axis of n voxels split by g are ``floor(i n / g)``.
    """
    a = _array(v)
    for grid in PYRAMID_GRIDS:
        if any(n < g for n, g in zip(a.shape, grid)):
            raise VolumeTooSmall(f"volume {a.shape} smaller than feature grid {grid}")
    parts = [_block_means(a, g) for g in PYRAMID_GRIDS]
    parts.append(np.array([a.mean(), a.std(), a.min(), a.max()]))
    return np.concatenate(parts)


def features_from_volumes(volumes):
    rows = np.stack([extract_features(v) for v in volumes])
    return FeatureSet(rows, source=BUILTIN_FEATURE_SOURCE)


# --- feature sets and moments ------------------------------------------------

@dataclass(frozen=True, eq=False)
class FeatureSet:
    rows: np.ndarray
    source: str = "unspecified"

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
            raise MalformedFeatureFile(f"feature matrix must be n x d with n, d >= 1, got {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise MalformedFeatureFile("feature matrix contains non-finite values")
        object.__setattr__(self, "rows", rows)

    @property
    def n(self):
        return self.rows.shape[0]

    @property
    def d(self):
        return self.rows.shape[1]


@dataclass(frozen=True, eq=False)
class FeatureMoments:
    mu: np.ndarray
    sigma: np.ndarray
    n: int = 0
    source: str = "unspecified"

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        d = mu.shape[0]
        if sigma.shape != (d, d):
            raise DimensionMismatch(f"mean has {d} entries but covariance is {sigma.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise NonFiniteEigenvalue("moments contain non-finite values")
        if np.max(np.abs(sigma - sigma.T), initial=0.0) >= 1e-9:
            raise ValueError("covariance is not symmetric")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def d(self):
        return self.mu.shape[0]


def moments(fs):
    """Sample mean and unbiased (1/(n-1)) covariance of a feature set."""
    x = fs.rows
    n = x.shape[0]
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples for a covariance, got {n}")
    mu = x.mean(axis=0)
    centred = x - mu
    sigma = centred.T @ centred / (n - 1)
    sigma = (sigma + sigma.T) / 2.0
    return FeatureMoments(mu, sigma, n=n, source=fs.source)


def _psd_sqrt(s):
    w, v = np.linalg.eigh(s)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def fid(r, g, eps=0.0):
    r"""Frechet distance between two Gaussians.

    ``Tr((S_r S_g)^{1/2})`` is evaluated through the symmetric matrix
    ``A = S_r^{1/2} S_g S_r^{1/2}``, which has the same eigenvalues as
    ``S_r S_g``. Eigenvalues of ``A`` in ``[-1e-8 Tr(A), 0)`` are treated
    as 0; anything more negative is an error.

    ``eps > 0`` adds ``eps * I`` to both covariances (for rank-deficient
    small-sample estimates).
    """
    if r.d != g.d:
        raise DimensionMismatch(f"feature dimensions differ: {r.d} vs {g.d}")
    sr, sg = r.sigma, g.sigma
    if eps:
        eye = np.eye(r.d)
        sr, sg = sr + eps * eye, sg + eps * eye
    diff = r.mu - g.mu
    mean_term = float(diff @ diff)
    root_r = _psd_sqrt(sr)
    a = root_r @ sg @ root_r
    a = (a + a.T) / 2.0
    lam = np.linalg.eigvalsh(a)
    if not np.all(np.isfinite(lam)):
        raise NonFiniteEigenvalue("non-finite eigenvalue in covariance product")
    floor = -1e-8 * max(float(np.trace(a)), 0.0)
    if np.any(lam < floor):
        raise NonFiniteEigenvalue(f"covariance product has eigenvalue {lam.min():.3e} < {floor:.3e}")
    tr_sqrt = float(np.sqrt(np.clip(lam, 0.0, None)).sum())
    scale = mean_term + float(np.trace(sr)) + float(np.trace(sg))
    value = scale - 2.0 * tr_sqrt
    if value < -1e-6 * max(scale, 1.0):
        raise NonFiniteEigenvalue(f"FID evaluated to {value:.3e}; covariances are not PSD")
    return max(value, 0.0)


def _kernel(a, b, kernel, gamma):
    if kernel == "dot":
        return a @ b.T
    if kernel == "rbf":
        if gamma is None or gamma <= 0:
            raise ValueError("rbf kernel needs gamma > 0")
        sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
        return np.exp(-gamma * np.maximum(sq, 0.0))
    raise ValueError(f"unknown kernel {kernel!r}")


def mmd2(x, y, kernel="dot", gamma=None):
    """Unbiased squared MMD between two feature sets; may be negative."""
    xr = x.rows if isinstance(x, FeatureSet) else np.asarray(x, dtype=np.float64)
    yr = y.rows if isinstance(y, FeatureSet) else np.asarray(y, dtype=np.float64)
    n, m = xr.shape[0], yr.shape[0]
    if n < 2 or m < 2:
        raise TooFewSamples(f"MMD needs at least 2 samples per set, got {n} and {m}")
    if xr.shape[1] != yr.shape[1]:
        raise DimensionMismatch(f"feature dimensions differ: {xr.shape[1]} vs {yr.shape[1]}")
    kxx = _kernel(xr, xr, kernel, gamma)
    kyy = _kernel(yr, yr, kernel, gamma)
    kxy = _kernel(xr, yr, kernel, gamma)
    within_x = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    within_y = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    cross = 2.0 * kxy.sum() / (n * m)
    return float(within_x + within_y - cross)


# --- feature files ---------------------------------------------------------

def load_features(path):
    """Read a FEAT binary file or a headerless CSV (n rows, d columns)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise MalformedFeatureFile(f"{path}: cannot read: {exc}") from exc
    if raw[:4] == FEAT_MAGIC:
        return _parse_feat(raw, path)
    if path.suffix.lower() == ".csv":
        return _parse_csv(raw, path)
    raise MalformedFeatureFile(f"{path}: missing FEAT magic and not a .csv file")


def _parse_feat(raw, path):
    if len(raw) < _FEAT_HEADER.size:
        raise MalformedFeatureFile(
            f"{path}: header needs {_FEAT_HEADER.size} bytes, file has {len(raw)}")
    _, version, n, d = _FEAT_HEADER.unpack_from(raw, 0)
    if version != FEAT_VERSION:
        raise MalformedFeatureFile(f"{path}: unsupported FEAT version {version}")
    if n == 0 or d == 0:
        raise MalformedFeatureFile(f"{path}: header declares n={n}, d={d}")
    expected = n * d * 4
    actual = len(raw) - _FEAT_HEADER.size
    if actual != expected:
        raise MalformedFeatureFile(
            f"{path}: payload expected {expected} bytes, found {actual}")
    rows = np.frombuffer(raw, dtype="<f4", count=n * d, offset=_FEAT_HEADER.size)
    return FeatureSet(rows.reshape(n, d).astype(np.float64), source=str(path))


def _parse_csv(raw, path):
    try:
        reader = csv.reader(raw.decode("utf-8").splitlines())
        rows = [[float(c) for c in row] for row in reader if row]
    except (UnicodeDecodeError, ValueError) as exc:
        raise MalformedFeatureFile(f"{path}: {exc}") from exc
    if not rows:
        raise MalformedFeatureFile(f"{path}: no rows")
    if len({len(r) for r in rows}) != 1:
        raise MalformedFeatureFile(f"{path}: rows have differing lengths")
    return FeatureSet(np.array(rows), source=str(path))


def save_features(fs, path, format="feat"):
    rows = fs.rows if isinstance(fs, FeatureSet) else np.asarray(fs, dtype=np.float64)
    if format == "feat":
        n, d = rows.shape
        payload = _FEAT_HEADER.pack(FEAT_MAGIC, FEAT_VERSION, n, d) + rows.astype("<f4").tobytes()
        atomic_write(path, payload)
    elif format == "csv":
        atomic_write(path, "".join(",".join(repr(float(v)) for v in r) + "\n" for r in rows))
    else:
        raise ValueError(f"unknown feature format {format!r}")
