"""Seeded offline augmentation for volume / label-map pairs.

A plan is sampled once from a seed and a probability/range table, recorded
in full (including the sub-seeds of any random fields), and can be replayed
bit-exactly from its JSON form. Spatial ops (flip, affine, elastic) act on
both the volume (trilinear) and the mask (nearest); intensity ops (gamma,
bias field, blur, noise) touch the volume only.

Random numbers come from numpy's counter-based Philox generator.
"""

import copy
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DimsMismatch, InvalidRange, UnnormalizedInput
from .volcore import LabelMap3D, Volume3D, gaussian_smooth

__all__ = [
    "AugmentPlan",
    "DEFAULT_CONFIG",
    "SPATIAL_OPS",
    "INTENSITY_OPS",
    "sample_plan",
    "apply",
    "derive_seed",
    "load_config",
]

SPATIAL_OPS = ("flip", "affine", "elastic")
INTENSITY_OPS = ("gamma", "bias_field", "blur", "noise")

# Not tuned to any particular training setup; override per use.
DEFAULT_CONFIG = {
    "flip": {"p": 0.5, "axes": [0, 1, 2]},
    "affine": {"p": 0.3, "rotation_deg": [-10.0, 10.0], "scale": [0.9, 1.1],
               "translation_mm": [-5.0, 5.0]},
    "elastic": {"p": 0.2, "alpha": [0.0, 4.0], "sigma": [1.0, 2.0], "grid": 6},
    "gamma": {"p": 0.2, "gamma": [0.7, 1.5]},
    "bias_field": {"p": 0.2, "order": 3, "amplitude": [0.0, 0.3]},
    "blur": {"p": 0.2, "sigma": [0.5, 1.0]},
    "noise": {"p": 0.2, "sigma": [0.0, 0.05]},
}


def _rng(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


def derive_seed(seed, index):
    """Independent per-volume seed for batch processing."""
    return int(seed) ^ int(index)


def load_config(path):
    """Read an augmentation config from JSON or TOML."""
    text = open(path, "rb").read()
    if str(path).lower().endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        return tomllib.loads(text.decode("utf-8"))
    return json.loads(text)


@dataclass
class AugmentPlan:
    seed: int
    ops: list = field(default_factory=list)

    def to_json(self):
        return json.dumps({"seed": self.seed, "ops": self.ops}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(seed=int(data["seed"]), ops=list(data["ops"]))

    def spatial(self):
        return [op for op in self.ops if op["op"] in SPATIAL_OPS]


def _merge(config):
    merged = copy.deepcopy(DEFAULT_CONFIG)
    for name, params in (config or {}).items():
        if name not in merged:
            raise InvalidRange(f"unknown augmentation op {name!r}")
        merged[name].update(params)
    for name, params in merged.items():
        p = params["p"]
        if not 0.0 <= p <= 1.0:
            raise InvalidRange(f"{name}: probability {p} outside [0, 1]")
        for key, value in params.items():
            if isinstance(value, (list, tuple)) and len(value) == 2 and key != "axes":
                lo, hi = value
                if lo > hi:
                    raise InvalidRange(f"{name}.{key}: min {lo} > max {hi}")
    return merged


def sample_plan(seed, config=None):
    """Draw op parameters from ``config`` (merged over the defaults).

    Every op present in the returned plan carries all of its sampled
    parameters, so the plan alone determines the output.
    """
    cfg = _merge(config)
    rng = _rng(seed)

    def uniform(bounds):
        lo, hi = bounds
        return float(rng.uniform(lo, hi))

    ops = []
    flip = cfg["flip"]
    axes = [int(a) for a in flip["axes"] if rng.random() < flip["p"]]
    if axes:
        ops.append({"op": "flip", "axes": axes})

    aff = cfg["affine"]
    if rng.random() < aff["p"]:
        ops.append({
            "op": "affine",
            "rotation_deg": [uniform(aff["rotation_deg"]) for _ in range(3)],
            "scale": uniform(aff["scale"]),
            "translation_mm": [uniform(aff["translation_mm"]) for _ in range(3)],
        })

    el = cfg["elastic"]
    if rng.random() < el["p"]:
        ops.append({
            "op": "elastic",
            "alpha": uniform(el["alpha"]),
            "sigma": uniform(el["sigma"]),
            "grid": int(el["grid"]),
            "field_seed": int(rng.integers(2 ** 63)),
        })

    gam = cfg["gamma"]
    if rng.random() < gam["p"]:
        ops.append({"op": "gamma", "gamma": uniform(gam["gamma"])})

    bias = cfg["bias_field"]
    if rng.random() < bias["p"]:
        order = int(bias["order"])
        n_terms = len(_monomials(order))
        ops.append({
            "op": "bias_field",
            "order": order,
            "amplitude": uniform(bias["amplitude"]),
            "coefficients": [float(c) for c in rng.uniform(-1.0, 1.0, n_terms)],
        })

    blur = cfg["blur"]
    if rng.random() < blur["p"]:
        ops.append({"op": "blur", "sigma": uniform(blur["sigma"])})

    noise = cfg["noise"]
    if rng.random() < noise["p"]:
        ops.append({"op": "noise", "sigma": uniform(noise["sigma"]),
                    "noise_seed": int(rng.integers(2 ** 63))})
    return AugmentPlan(seed=int(seed), ops=ops)


# --- spatial ops ------------------------------------------------------------

def _rotation(angles_deg):
    ax, ay, az = (math.radians(a) for a in angles_deg)
    rx = np.array([[1, 0, 0], [0, math.cos(ax), -math.sin(ax)], [0, math.sin(ax), math.cos(ax)]])
    ry = np.array([[math.cos(ay), 0, math.sin(ay)], [0, 1, 0], [-math.sin(ay), 0, math.cos(ay)]])
    rz = np.array([[math.cos(az), -math.sin(az), 0], [math.sin(az), math.cos(az), 0], [0, 0, 1]])
    return rz @ ry @ rx


def _warp(array, coords, nearest):
    return ndimage.map_coordinates(array, coords, order=0 if nearest else 1,
                                   mode="constant", cval=0.0)


def _affine_coords(shape, spacing, op):
    # forward map: x_out = s R (x_in - c) + c + t; invert it per output voxel
    rot = _rotation(op["rotation_deg"])
    scale = float(op["scale"])
    shift = np.asarray(op["translation_mm"], dtype=np.float64) / np.asarray(spacing)
    centre = (np.asarray(shape, dtype=np.float64) - 1) / 2.0
    grid = np.indices(shape, dtype=np.float64).reshape(3, -1)
    src = rot.T @ (grid - (centre + shift)[:, None]) / scale + centre[:, None]
    return src.reshape((3,) + tuple(shape))


def _is_identity_affine(op):
    return (not any(op["rotation_deg"]) and op["scale"] == 1.0
            and not any(op["translation_mm"]))


def _elastic_coords(shape, op):
    g = max(int(op["grid"]), 2)
    rng = _rng(op["field_seed"])
    coarse = rng.standard_normal((3, g, g, g))
    disp = []
    for comp in coarse:
        comp = ndimage.gaussian_filter(comp, op["sigma"], mode="reflect")
        peak = np.abs(comp).max()
        if peak > 0:
            comp = comp / peak
        # align-corners trilinear upsampling of the control grid
        pos = [np.linspace(0, g - 1, n) for n in shape]
        up = ndimage.map_coordinates(comp, np.meshgrid(*pos, indexing="ij"), order=1, mode="nearest")
        disp.append(op["alpha"] * up)
    return np.indices(shape, dtype=np.float64) + np.stack(disp)


# --- intensity ops -----------------------------------------------------------

def _monomials(order):
    return [(i, j, k) for i in range(order + 1) for j in range(order + 1 - i)
            for k in range(order + 1 - i - j)]


def _bias_field(shape, op):
    axes = [np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1) for n in shape]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    poly = np.zeros(shape)
    for c, (i, j, k) in zip(op["coefficients"], _monomials(op["order"])):
        poly += c * x ** i * y ** j * z ** k
    peak = np.abs(poly).max()
    if peak > 0:
        poly /= peak
    return 1.0 + op["amplitude"] * poly


def apply(plan, v, m=None):
    """Replay ``plan`` on a volume and, optionally, its label map.

    Returns ``(volume, mask_or_None)``. Voxels mapped from outside the grid
    become 0.
    """
    if m is not None and m.dims != v.dims:
        raise DimsMismatch(f"volume {v.dims} vs mask {m.dims}")
    data = np.asarray(v.data, dtype=np.float64)
    labels = None if m is None else np.asarray(m.labels)
    shape = data.shape

    for op in plan.ops:
        kind = op["op"]
        if kind == "flip":
            axes = tuple(op["axes"])
            data = np.flip(data, axis=axes)
            if labels is not None:
                labels = np.flip(labels, axis=axes)
        elif kind == "affine":
            if _is_identity_affine(op):
                continue
            coords = _affine_coords(shape, v.spacing, op)
            data = _warp(data, coords, nearest=False)
            if labels is not None:
                labels = _warp(labels, coords, nearest=True)
        elif kind == "elastic":
            if op["alpha"] == 0:
                continue
            coords = _elastic_coords(shape, op)
            data = _warp(data, coords, nearest=False)
            if labels is not None:
                labels = _warp(labels, coords, nearest=True)
        elif kind == "gamma":
            if data.min() < 0.0 or data.max() > 1.0:
                raise UnnormalizedInput("gamma needs intensities in [0, 1]")
            if op["gamma"] != 1.0:
                data = data ** op["gamma"]
        elif kind == "bias_field":
            data = data * _bias_field(shape, op)
        elif kind == "blur":
            data = np.asarray(gaussian_smooth(Volume3D(data, v.spacing), op["sigma"]).data)
        elif kind == "noise":
            data = data + op["sigma"] * _rng(op["noise_seed"]).standard_normal(shape)
        else:
            raise ValueError(f"unknown op {kind!r} in plan")

    out_v = Volume3D(np.ascontiguousarray(data), v.spacing)
    out_m = None if m is None else LabelMap3D(np.ascontiguousarray(labels), m.spacing, m.absent_labels)
    return out_v, out_m
