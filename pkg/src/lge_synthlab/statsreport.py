"""Paired significance testing and metric report rendering."""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as _stats

from ._io import atomic_write
from .errors import AllZeroDifferences, DataError, TooFewSamples

__all__ = [
    "WilcoxonResult",
    "ModelRow",
    "TestRow",
    "MetricsReport",
    "wilcoxon_signed_rank",
    "exact_signed_rank_counts",
    "summarize",
    "render_report",
    "emit_report",
    "EXACT_MAX_N",
    "TABLE_HEADER",
]

EXACT_MAX_N = 25
TABLE_HEADER = ("Model", "FID ↓", "MMD ↓", "MS-SSIM ↑", "PSNR (dB) ↑")


@dataclass(frozen=True)
class WilcoxonResult:
    W: float
    p: float
    n: int
    method: str
    alternative: str


def exact_signed_rank_counts(doubled_ranks):
    """Number of sign patterns giving each value of the positive rank sum.

    ``doubled_ranks`` are the (average) ranks times two, hence integers.
    Entry ``s`` of the result counts patterns whose doubled positive rank
    sum equals ``s``; the counts add up to ``2**n``.
    """
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    top = 0
    for r in doubled_ranks:
        r = int(r)
        shifted = counts[: top + 1].copy()
        counts[r: r + top + 1] += shifted
        top += r
    return counts


def wilcoxon_signed_rank(baseline, treatment, alternative="greater"):
    """Wilcoxon signed-rank test on paired scores.

    Differences are ``treatment - baseline``; zero differences are dropped
    before ranking and tied magnitudes share their average rank. ``W`` is
    the sum of ranks of positive differences. ``alternative="greater"``
    tests whether treatment exceeds baseline.

    For ``n <= 25`` the p-value is exact, counting all ``2**n`` sign
    assignments. Larger samples use the normal approximation with tie
    correction and a 0.5 continuity correction.
    """
    if alternative not in ("greater", "less", "two-sided"):
        raise ValueError(f"unknown alternative {alternative!r}")
    b = np.asarray(baseline, dtype=np.float64)
    t = np.asarray(treatment, dtype=np.float64)
    if b.shape != t.shape or b.ndim != 1:
        raise DataError("baseline and treatment must be equal-length 1-D sequences")
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(t))):
        raise DataError("scores must be finite")
    d = t - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise AllZeroDifferences("all paired differences are zero")
    ranks = _stats.rankdata(np.abs(d), method="average")
    w_plus = float(ranks[d > 0].sum())

    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = exact_signed_rank_counts(doubled)
        obs = int(round(2 * w_plus))
        total = 2 ** n
        upper = int(sum(counts[obs:]))
        lower = int(sum(counts[: obs + 1]))
        p_greater, p_less = upper / total, lower / total
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts ** 3 - tie_counts)) / 48.0
        sd = math.sqrt(var)
        p_greater = float(_stats.norm.sf((w_plus - mean - 0.5) / sd))
        p_less = float(_stats.norm.cdf((w_plus - mean + 0.5) / sd))
        method = "normal"

    if alternative == "greater":
        p = p_greater
    elif alternative == "less":
        p = p_less
    else:
        p = min(1.0, 2.0 * min(p_greater, p_less))
    return WilcoxonResult(W=w_plus, p=float(min(p, 1.0)), n=n, method=method, alternative=alternative)


def summarize(values):
    """Mean and sample (n-1) standard deviation."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if len(x) < 2:
        raise TooFewSamples("need at least two values for a standard deviation")
    mean = float(x.mean())
    return mean, float(math.sqrt(float(((x - mean) ** 2).sum()) / (len(x) - 1)))


# --- reports ------------------------------------------------------------------

@dataclass
class ModelRow:
    name: str
    fid: float | None = None
    mmd: float | None = None
    ms_ssim: float | None = None
    psnr_db: float | None = None
    feature_source: str | None = None
    n_volumes: int | None = None
    notes: list = field(default_factory=list)


@dataclass
class TestRow:
    __test__ = False  # not a pytest class

    name: str
    W: float
    p: float
    n: int
    method: str


@dataclass
class MetricsReport:
    models: list = field(default_factory=list)
    tests: list = field(default_factory=list)
    summaries: list = field(default_factory=list)
    pairs: list = field(default_factory=list)

    def to_dict(self):
        out = {
            "models": [asdict(m) for m in self.models],
            "tests": [asdict(t) for t in self.tests],
        }
        if self.summaries:
            out["summaries"] = list(self.summaries)
        if self.pairs:
            out["pairs"] = list(self.pairs)
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(
            models=[ModelRow(**m) for m in data.get("models", [])],
            tests=[TestRow(**t) for t in data.get("tests", [])],
            summaries=list(data.get("summaries", [])),
            pairs=list(data.get("pairs", [])),
        )


def _cell(value):
    return "n/a" if value is None else f"{value:.3f}"


def _as_report(rows):
    if isinstance(rows, MetricsReport):
        return rows
    return MetricsReport(models=[r if isinstance(r, ModelRow) else ModelRow(**r) for r in rows])


def render_report(rows, format="text-table"):
    """Render a report as ``json``, ``csv`` or a tab-separated ``text-table``.

    The text table has columns Model, FID, MMD, MS-SSIM, PSNR (dB) with
    direction arrows, values to three decimals.
    """
    report = _as_report(rows)
    if format == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cols = ["name", "fid", "mmd", "ms_ssim", "psnr_db", "feature_source", "n_volumes"]
        writer.writerow(cols)
        for m in report.models:
            writer.writerow(["" if getattr(m, c) is None else
                             (repr(getattr(m, c)) if isinstance(getattr(m, c), float) else getattr(m, c))
                             for c in cols])
        return buf.getvalue()
    if format in ("text-table", "table", "text"):
        lines = ["\t".join(TABLE_HEADER)]
        for m in report.models:
            lines.append("\t".join([m.name, _cell(m.fid), _cell(m.mmd), _cell(m.ms_ssim), _cell(m.psnr_db)]))
        for t in report.tests:
            lines.append(f"# {t.name}: W = {t.W:g}, p = {t.p:.5g} (n = {t.n}, {t.method})")
        for s in report.summaries:
            lines.append(f"# {s['name']}: {s['mean']:.3f} ± {s['std']:.4f}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {format!r}")


def emit_report(rows, path, format="text-table"):
    """Render and atomically write a report file."""
    atomic_write(path, render_report(rows, format))
