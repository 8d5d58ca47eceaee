"""Command-line entry point: ``lge-synthlab <command> [options]``.

Commands: compose, sweep, eval, augment, diff, test.

Exit codes: 0 success, 2 usage or configuration error, 3 data or
validation error, 4 internal invariant failure. Set ``LGE_SYNTHLAB_LOG``
(e.g. ``DEBUG``) to change the log level.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import augment as aug
from . import clusterlab, composite, diffmath, statsreport, synthmetrics, volcore
from ._io import atomic_write
from .errors import DataError, InvalidRange, SynthLabError, TooFewSamples, ZeroMse

log = logging.getLogger("lge_synthlab")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


class UsageError(Exception):
    pass


class InvariantFailure(Exception):
    pass


def _global_flags(suppress):
    p = argparse.ArgumentParser(add_help=False)
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=default(0), help="RNG seed (default 0)")
    p.add_argument("--threads", type=int, default=default(os.cpu_count() or 1),
                   help="worker threads (default: all cores)")
    p.add_argument("--format", choices=["json", "csv", "table"], default=default(None),
                   help="output format")
    p.add_argument("--out", default=default(None), help="output path (default stdout)")
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="lge-synthlab", description=__doc__.splitlines()[0],
                                     parents=[_global_flags(False)])
    sub = parser.add_subparsers(dest="command", required=True)
    common = _global_flags(True)

    p = sub.add_parser("compose", parents=[common], help="build a composite label map")
    p.add_argument("--volume", required=True)
    p.add_argument("--endo", required=True)
    p.add_argument("--wall", required=True)
    p.add_argument("--k", type=int, default=2, help="cluster count, 2..5 (default 2)")
    p.add_argument("--sigma", type=float, default=1.0, help="smoothing sigma in voxels")
    p.add_argument("--trace", help="trace JSON path (default <out stem>.trace.json)")

    p = sub.add_parser("sweep", parents=[common], help="score k-means over a range of k")
    p.add_argument("--volume", required=True)
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--sample-cap", type=int, default=clusterlab.DEFAULT_SAMPLE_CAP)

    p = sub.add_parser("eval", parents=[common], help="synthetic image quality metrics")
    p.add_argument("--manifest", help="JSON array of {real, synthetic, id}")
    p.add_argument("--real-features", help="FEAT or CSV feature file for real volumes")
    p.add_argument("--synth-features", help="FEAT or CSV feature file for synthetic volumes")
    p.add_argument("--name", default="model")
    p.add_argument("--kernel", choices=["dot", "rbf"], default="dot")
    p.add_argument("--gamma", type=float, help="rbf kernel width")
    p.add_argument("--dynamic-range", type=float, default=1.0)
    p.add_argument("--fid-eps", type=float, default=0.0, help="covariance regularization")
    p.add_argument("--window", type=int, default=11, help="MS-SSIM window size")
    p.add_argument("--normalize", action="store_true", help="min-max normalize volumes first")

    p = sub.add_parser("augment", parents=[common], help="seeded augmentation / plan replay")
    p.add_argument("--volume", required=True)
    p.add_argument("--mask")
    p.add_argument("--config", help="JSON or TOML probability/range table")
    p.add_argument("--plan", help="replay a saved plan instead of sampling")
    p.add_argument("--out-mask")
    p.add_argument("--plan-out")

    p = sub.add_parser("diff", parents=[common], help="diffusion numerics")
    p.add_argument("action", choices=["schedule", "noise", "loss", "blend"])
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--s", type=float, default=diffmath.DEFAULT_OFFSET)
    p.add_argument("--t", type=int, help="diffusion step for 'noise'")
    p.add_argument("--latent")
    p.add_argument("--noise")
    p.add_argument("--true")
    p.add_argument("--pred")
    p.add_argument("--uncond")
    p.add_argument("--cond")
    p.add_argument("--w", type=float, default=diffmath.DEFAULT_GUIDANCE)

    p = sub.add_parser("test", parents=[common], help="paired Wilcoxon signed-rank test")
    p.add_argument("--scores", required=True,
                   help="CSV with baseline,treatment columns or JSON {baseline, treatment}")
    p.add_argument("--alternative", choices=["greater", "less", "two-sided"], default="greater")
    p.add_argument("--name", default="dice")
    return parser


def _emit(args, text):
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


# --- compose -------------------------------------------------------------------

def cmd_compose(args):
    if not 2 <= args.k <= 5:
        raise UsageError("--k must be between 2 and 5 for composition")
    if not args.out:
        raise UsageError("compose needs --out for the label map")
    raw = volcore.load_volume(args.volume)
    masks = volcore.load_masks(args.endo, args.wall)
    if masks.dims != raw.dims:
        raise DataError(f"mask dims {masks.dims} differ from volume dims {raw.dims}")
    vol = volcore.normalize_intensity(raw)
    smooth = volcore.gaussian_smooth(vol, args.sigma)
    model = clusterlab.kmeans(smooth, args.k, seed=args.seed)
    trace = composite.compose(vol, masks, model)
    report = composite.validate_composite(trace, masks)
    if not report.ok:
        raise InvariantFailure(f"composite invariants failed: {report.to_dict()}")
    volcore.save_labelmap(trace.final, args.out)
    trace_path = args.trace or str(Path(args.out).with_suffix("")) + ".trace.json"
    payload = trace.to_dict()
    payload.update({"k": args.k, "seed": args.seed, "sigma": args.sigma,
                    "centroids": [float(c) for c in model.centroids],
                    "converged": model.converged, "warnings": report.warnings})
    atomic_write(trace_path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    log.info("wrote %s and %s", args.out, trace_path)
    return EXIT_OK


# --- sweep ---------------------------------------------------------------------

def cmd_sweep(args):
    if args.k_min < 2 or args.k_max < args.k_min:
        raise UsageError("need 2 <= --k-min <= --k-max")
    vol = volcore.normalize_intensity(volcore.load_volume(args.volume))
    smooth = volcore.gaussian_smooth(vol, args.sigma)
    report = clusterlab.sweep_k(smooth, args.k_min, args.k_max, seed=args.seed,
                                sample_cap=args.sample_cap)
    text = report.to_json() + "\n" if args.format == "json" else report.to_csv()
    _emit(args, text)
    return EXIT_OK


# --- eval ----------------------------------------------------------------------

def _load_manifest(path):
    try:
        entries = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot read manifest: {exc}") from exc
    if not isinstance(entries, list) or not entries:
        raise DataError(f"{path}: manifest must be a non-empty JSON array")
    base = Path(path).parent
    out = []
    for i, e in enumerate(entries):
        if not isinstance(e, dict) or "real" not in e or "synthetic" not in e:
            raise DataError(f"{path}: entry {i} needs 'real' and 'synthetic'")
        out.append({"id": str(e.get("id", i)),
                     "real": str(base / e["real"]), "synthetic": str(base / e["synthetic"])})
    return out


def _load_for_eval(path, normalize):
    try:
        v = volcore.load_volume(path)
    except SynthLabError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return volcore.normalize_intensity(v) if normalize else v


def _pair_metrics(entry, args, cfg):
    real = _load_for_eval(entry["real"], args.normalize)
    synth = _load_for_eval(entry["synthetic"], args.normalize)
    if real.dims != synth.dims:
        raise DataError(f"pair {entry['id']}: dims {real.dims} vs {synth.dims}")
    row = {"id": entry["id"]}
    try:
        row["psnr_db"] = synthmetrics.psnr(real, synth, args.dynamic_range)
    except ZeroMse:
        row["psnr_db"] = None
        row["zero_mse"] = True
    row["ms_ssim"] = synthmetrics.ms_ssim(real, synth, cfg)
    row["real_features"] = synthmetrics.extract_features(real)
    row["synth_features"] = synthmetrics.extract_features(synth)
    return row


def cmd_eval(args):
    if not args.manifest and not (args.real_features and args.synth_features):
        raise UsageError("eval needs --manifest and/or both --real-features and --synth-features")
    cfg = synthmetrics.MsSsimConfig(L=args.dynamic_range, win_size=args.window)
    model = statsreport.ModelRow(name=args.name)
    report = statsreport.MetricsReport(models=[model])
    real_fs = synth_fs = None

    if args.manifest:
        entries = _load_manifest(args.manifest)
        with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
            rows = list(pool.map(lambda e: _pair_metrics(e, args, cfg), entries))
        model.n_volumes = len(rows)
        psnrs = [r["psnr_db"] for r in rows if r["psnr_db"] is not None]
        model.psnr_db = float(np.mean(psnrs)) if psnrs else None
        zero = [r["id"] for r in rows if r.get("zero_mse")]
        if zero:
            model.notes.append(f"psnr: ZeroMse (identical volumes) for pairs {zero}")
        model.ms_ssim = float(np.mean([r["ms_ssim"] for r in rows]))
        report.pairs = [{"id": r["id"], "psnr_db": r["psnr_db"], "ms_ssim": r["ms_ssim"],
                         "zero_mse": bool(r.get("zero_mse", False))} for r in rows]
        real_fs = synthmetrics.FeatureSet(np.stack([r["real_features"] for r in rows]),
                                          source=synthmetrics.BUILTIN_FEATURE_SOURCE)
        synth_fs = synthmetrics.FeatureSet(np.stack([r["synth_features"] for r in rows]),
                                           source=synthmetrics.BUILTIN_FEATURE_SOURCE)
    else:
        model.notes.append("psnr, ms_ssim: skipped (no volumes)")

    if args.real_features and args.synth_features:
        real_fs = synthmetrics.load_features(args.real_features)
        synth_fs = synthmetrics.load_features(args.synth_features)
        model.feature_source = f"file:{args.real_features}|file:{args.synth_features}"
        if model.n_volumes is None:
            model.n_volumes = real_fs.n + synth_fs.n
    elif real_fs is not None:
        model.feature_source = synthmetrics.BUILTIN_FEATURE_SOURCE

    try:
        model.fid = synthmetrics.fid(synthmetrics.moments(real_fs), synthmetrics.moments(synth_fs),
                                     eps=args.fid_eps)
        model.mmd = synthmetrics.mmd2(real_fs, synth_fs, kernel=args.kernel, gamma=args.gamma)
    except TooFewSamples as exc:
        model.notes.append(f"fid, mmd: skipped ({exc})")
    if args.fid_eps:
        model.notes.append(f"fid: covariance regularization eps={args.fid_eps}")

    fmt = {"table": "text-table", None: "json"}.get(args.format, args.format)
    _emit(args, statsreport.render_report(report, fmt))
    return EXIT_OK


# --- augment -------------------------------------------------------------------

def cmd_augment(args):
    if not args.out:
        raise UsageError("augment needs --out for the augmented volume")
    if args.mask and not args.out_mask:
        raise UsageError("--mask needs --out-mask")
    if args.plan:
        plan = aug.AugmentPlan.from_json(Path(args.plan).read_text())
    else:
        config = aug.load_config(args.config) if args.config else None
        plan = aug.sample_plan(args.seed, config)
    vol = volcore.load_volume(args.volume)
    mask = volcore.load_labelmap(args.mask) if args.mask else None
    out_v, out_m = aug.apply(plan, vol, mask)
    volcore.save_volume(out_v, args.out)
    if out_m is not None:
        volcore.save_labelmap(out_m, args.out_mask)
    plan_path = args.plan_out or str(Path(args.out).with_suffix("")) + ".plan.json"
    atomic_write(plan_path, plan.to_json() + "\n")
    return EXIT_OK


# --- diff ----------------------------------------------------------------------

def _need(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"diff {args.action} needs " + ", ".join(f"--{m}" for m in missing))


def cmd_diff(args):
    if args.action == "schedule":
        sched = diffmath.cosine_schedule(args.T, args.s)
        if args.format == "json":
            text = json.dumps([{"t": t, "beta": b, "alpha_bar": a} for t, b, a in sched.rows()]) + "\n"
        else:
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(["t", "beta", "alpha_bar"])
            for t, b, a in sched.rows():
                writer.writerow([t, repr(b), repr(a)])
            text = buf.getvalue()
        _emit(args, text)
    elif args.action == "noise":
        _need(args, "latent", "noise", "t", "out")
        sched = diffmath.cosine_schedule(args.T, args.s)
        zt = diffmath.forward_noise(diffmath.read_tensor(args.latent), args.t, sched,
                                    diffmath.read_tensor(args.noise))
        diffmath.write_tensor(zt, args.out)
    elif args.action == "loss":
        _need(args, "true", "pred")
        loss = diffmath.denoise_loss(diffmath.read_tensor(args.true), diffmath.read_tensor(args.pred))
        _emit(args, json.dumps({"denoise_loss": loss}) + "\n")
    else:
        _need(args, "uncond", "cond", "out")
        blended = diffmath.cfg_blend(diffmath.read_tensor(args.uncond),
                                     diffmath.read_tensor(args.cond), args.w)
        diffmath.write_tensor(blended, args.out)
    return EXIT_OK


# --- test ----------------------------------------------------------------------

def _load_scores(path):
    text = Path(path).read_text()
    if path.lower().endswith(".json"):
        data = json.loads(text)
        return data["baseline"], data["treatment"]
    reader = csv.DictReader(text.splitlines())
    rows = list(reader)
    if not rows or "baseline" not in rows[0] or "treatment" not in rows[0]:
        raise DataError(f"{path}: CSV needs 'baseline' and 'treatment' columns")
    return [float(r["baseline"]) for r in rows], [float(r["treatment"]) for r in rows]


def cmd_test(args):
    try:
        baseline, treatment = _load_scores(args.scores)
    except (KeyError, ValueError) as exc:
        raise DataError(f"{args.scores}: {exc}") from exc
    res = statsreport.wilcoxon_signed_rank(baseline, treatment, args.alternative)
    report = statsreport.MetricsReport(
        tests=[statsreport.TestRow(name=args.name, W=res.W, p=res.p, n=res.n, method=res.method)])
    for label, values in (("baseline", baseline), ("treatment", treatment)):
        if len(values) >= 2:
            mean, std = statsreport.summarize(values)
            report.summaries.append({"name": label, "mean": mean, "std": std, "n": len(values)})
    fmt = {"table": "text-table", None: "json"}.get(args.format, args.format)
    _emit(args, statsreport.render_report(report, fmt))
    return EXIT_OK


COMMANDS = {
    "compose": cmd_compose,
    "sweep": cmd_sweep,
    "eval": cmd_eval,
    "augment": cmd_augment,
    "diff": cmd_diff,
    "test": cmd_test,
}


def main(argv=None):
    logging.basicConfig(level=os.environ.get("LGE_SYNTHLAB_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        # single-threaded BLAS keeps linear algebra bit-identical at any --threads
        with threadpool_limits(limits=1):
            return COMMANDS[args.command](args)
    except (UsageError, InvalidRange) as exc:
        parser.print_usage(sys.stderr)
        print(f"lge-synthlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"lge-synthlab: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantFailure as exc:
        print(f"lge-synthlab: invariant failure: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"lge-synthlab: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
