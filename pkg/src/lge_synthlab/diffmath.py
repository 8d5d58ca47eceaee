"""Diffusion-process numerics for latent DDPM training.

The denoising network itself is external: predicted-noise tensors arrive
as files (LTNS format, see :func:`read_tensor`) and this module only
evaluates schedules, forward noising, the noise-prediction MSE and
classifier-free guidance blending.

Step indexing runs ``1..T``; index 0 is the clean-latent boundary with
``alpha_bar[0] = 1``. All schedule arrays have length ``T + 1`` so that
``sched.alpha_bar[t]`` is the value at step ``t``.
"""

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import atomic_write
from .errors import MalformedTensorFile, ShapeMismatch, StepOutOfRange

__all__ = [
    "NoiseSchedule",
    "cosine_schedule",
    "forward_noise",
    "denoise_loss",
    "cfg_blend",
    "read_tensor",
    "write_tensor",
    "BETA_MIN",
    "BETA_MAX",
    "DEFAULT_OFFSET",
    "DEFAULT_GUIDANCE",
]

BETA_MIN = 1e-8
BETA_MAX = 0.999
DEFAULT_OFFSET = 0.008
DEFAULT_GUIDANCE = 1.5
LTNS_MAGIC = b"LTNS"


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def rows(self):
        """(t, beta_t, alpha_bar_t) for t = 1..T."""
        return [(t, float(self.beta[t]), float(self.alpha_bar[t])) for t in range(1, self.T + 1)]


def cosine_schedule(T=1000, s=DEFAULT_OFFSET):
    """Squared-cosine schedule with offset ``s`` and clipped betas.

    ``f(t) = cos^2(((t/T + s) / (1 + s)) pi/2)``; betas come from the ratio
    ``1 - f(t)/f(t-1)`` clipped to ``[1e-8, 0.999]`` and ``alpha_bar`` is
    rebuilt as the running product of ``1 - beta`` so that
    ``alpha_bar[t] == alpha_bar[t-1] * alpha[t]`` holds after clipping.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not s > 0:
        raise ValueError("offset s must be positive")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + s) / (1.0 + s)) * math.pi / 2.0) ** 2
    ratio = f / f[0]
    beta = np.empty(T + 1)
    beta[0] = 0.0
    beta[1:] = np.clip(1.0 - ratio[1:] / ratio[:-1], BETA_MIN, BETA_MAX)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def _match(a, b, what):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: shapes {a.shape} and {b.shape} differ")
    return a, b


def forward_noise(z, t, sched, eps):
    """Noised latent ``sqrt(abar_t) z + sqrt(1 - abar_t) eps``."""
    z, eps = _match(z, eps, "latent and noise")
    if not 0 <= t <= sched.T:
        raise StepOutOfRange(f"step {t} outside 0..{sched.T}")
    ab = sched.alpha_bar[t]
    return math.sqrt(ab) * z + math.sqrt(1.0 - ab) * eps


def denoise_loss(eps_true, eps_pred):
    """Mean squared error between true and predicted noise."""
    a, b = _match(eps_true, eps_pred, "noise tensors")
    return float(np.mean((a - b) ** 2))


def cfg_blend(eps_uncond, eps_cond, w=DEFAULT_GUIDANCE):
    """Classifier-free guidance: ``eps_u + w (eps_c - eps_u)``."""
    u, c = _match(eps_uncond, eps_cond, "guidance branches")
    return u + w * (c - u)


# --- LTNS tensor files ----------------------------------------------------------

def write_tensor(array, path):
    """Write ``array`` as LTNS: magic, u8 rank, rank x u32 dims, f32 payload.

    The payload is row-major (last index fastest).
    """
    array = np.asarray(array)
    if array.ndim > 255:
        raise ValueError("rank too large")
    header = LTNS_MAGIC + struct.pack("<B", array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape)
    atomic_write(path, header + np.ascontiguousarray(array, dtype="<f4").tobytes())


def read_tensor(path):
    raw = Path(path).read_bytes()
    if raw[:4] != LTNS_MAGIC:
        raise MalformedTensorFile(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 5:
        raise MalformedTensorFile(f"{path}: missing rank byte")
    rank = raw[4]
    head = 5 + 4 * rank
    if len(raw) < head:
        raise MalformedTensorFile(f"{path}: header needs {head} bytes, file has {len(raw)}")
    shape = struct.unpack_from(f"<{rank}I", raw, 5)
    count = int(np.prod(shape)) if rank else 1
    if len(raw) - head != 4 * count:
        raise MalformedTensorFile(
            f"{path}: payload expected {4 * count} bytes, found {len(raw) - head}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=head).astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise MalformedTensorFile(f"{path}: non-finite values")
    return data.reshape(shape)
