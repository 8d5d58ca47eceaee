"""Composite semantic label maps from expert masks and intensity clusters.

Label semantics of the output map:

==========  ====================================================
0           background (the background cluster and unlabelled)
1           endocardium (blood pool), copied from the endo mask
2           atrial wall, copied from the wall mask
3, 4, ...   surviving context clusters, consecutive, in cluster-id order
==========  ====================================================

Cluster ids whose voxels are all covered by the masks vanish; the
remaining non-background ids are renumbered from 3 without gaps.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimsMismatch
from .volcore import LabelMap3D

__all__ = [
    "CompositeTrace",
    "ValidationReport",
    "detect_background_cluster",
    "compose",
    "validate_composite",
]

FIRST_CONTEXT_LABEL = 3


@dataclass(frozen=True, eq=False)
class CompositeTrace:
    background_cluster: int
    surviving_labels: tuple
    remap: dict
    final: LabelMap3D
    fallback: bool = False

    def to_dict(self):
        return {
            "b": self.background_cluster,
            "U": list(self.surviving_labels),
            "remap": {str(k): v for k, v in sorted(self.remap.items())},
            "fallback_flag": self.fallback,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def detect_background_cluster(cluster, v):
    """Smallest cluster id that contains a zero-intensity voxel.

    Returns ``(b, fallback)``. Without any exact zeros the darkest cluster
    is returned and ``fallback`` is True.
    """
    labels = cluster.assignments.labels
    if labels.shape != v.data.shape:
        raise DimsMismatch(f"cluster map {labels.shape} vs volume {v.data.shape}")
    zero_ids = labels[v.data == 0]
    if zero_ids.size:
        return int(zero_ids.min()), False
    return int(np.argmin(cluster.centroids)), True


def compose(v, masks, cluster):
    """Fuse expert masks with a cluster map into a composite label map.

    Parameters
    ----------
    v : Volume3D
        Intensities used to find the background cluster (zero voxels).
    masks : MaskPair
        Disjoint endocardium / wall masks.
    cluster : ClusterModel
        Intensity clustering on the same grid.

    Returns
    -------
    CompositeTrace
        Background id, the sorted ids left after masking, the id -> label
        remap and the final map.
    """
    lc = cluster.assignments.labels
    if not (lc.shape == v.data.shape == masks.dims):
        raise DimsMismatch(
            f"volume {v.data.shape}, masks {masks.dims}, clusters {lc.shape} differ")

    b, fallback = detect_background_cluster(cluster, v)
    masked = masks.endo | masks.wall
    lc_star = np.where(masked, 0, lc)
    surviving = np.unique(lc_star)
    # id 0 also holds the zeroed mask voxels, so it is never remapped
    context = [int(k) for k in surviving if k != b and k != 0]
    remap = {k: FIRST_CONTEXT_LABEL + j for j, k in enumerate(context)}

    lut = np.zeros(int(lc.max()) + 1, dtype=np.int64)
    for k, r in remap.items():
        lut[k] = r
    final = lut[lc_star]
    final[masks.endo] = 1
    final[masks.wall] = 2
    return CompositeTrace(
        background_cluster=b,
        surviving_labels=tuple(int(u) for u in surviving),
        remap=remap,
        final=LabelMap3D(final, cluster.assignments.spacing),
        fallback=fallback,
    )


@dataclass
class ValidationReport:
    checks: dict = field(default_factory=dict)
    counterexamples: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def ok(self):
        return all(self.checks.values())

    def to_dict(self):
        return {
            "ok": self.ok,
            "checks": dict(self.checks),
            "counterexamples": {k: list(v) for k, v in self.counterexamples.items()},
            "warnings": list(self.warnings),
        }


def _first_voxel(mask):
    hits = np.argwhere(mask)
    return tuple(int(i) for i in hits[0]) if len(hits) else None


def validate_composite(trace, masks):
    """Check the label-map invariants and report counterexamples.

    Never raises on a violated invariant; inspect ``report.checks``.
    """
    final = trace.final.labels
    report = ValidationReport()

    bad = masks.endo & (final != 1)
    report.checks["endo_is_1"] = not bad.any()
    if bad.any():
        report.counterexamples["endo_is_1"] = _first_voxel(bad)

    bad = masks.wall & (final != 2)
    report.checks["wall_is_2"] = not bad.any()
    if bad.any():
        report.counterexamples["wall_is_2"] = _first_voxel(bad)

    b = trace.background_cluster
    ok = b not in trace.remap
    report.checks["background_excluded"] = ok
    if not ok:
        report.counterexamples["background_excluded"] = _first_voxel(final == trace.remap[b])

    present = sorted(int(x) for x in np.unique(final))
    context = [x for x in present if x >= FIRST_CONTEXT_LABEL]
    expected = list(range(FIRST_CONTEXT_LABEL, FIRST_CONTEXT_LABEL + len(context)))
    if context != expected:
        missing = sorted(set(range(FIRST_CONTEXT_LABEL, max(context) + 1)) - set(context))
        report.warnings.append(f"label gap: labels {present}, missing {missing}")
    return report
