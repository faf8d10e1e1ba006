"""Command-line entry point: ``depthmotion <subcommand> ...``.

Every report is comma-separated text with a header row, written to
stdout or ``--output``.  Usage errors exit with status 2, data errors
with status 1, and a failed gradient check with status 3.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .errors import GeometryError
from .geometry import compose, invert
from .masking import MaskConfig
from .objective import TERMS, LossWeights, gradient_descent_refine, total_loss
from .synthetic import SCENARIOS, build_snippet, generate_matches, make_scene, perturb_translations

EXIT_DATA = 1
EXIT_CHECK_FAILED = 3


class DataError(Exception):
    """Input files or values that cannot be processed."""


def _emit(args, header, rows):
    """Write ``rows`` (dicts keyed by ``header`` or plain sequences) as CSV."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        vals = [r[h] for h in header] if isinstance(r, dict) else r
        w.writerow([_fmt(v) for v in vals])
    if getattr(args, "output", None):
        Path(args.output).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _angle_list(s):
    try:
        vals = [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from None
    if not vals:
        raise argparse.ArgumentTypeError("need at least one angle")
    return vals


def _add_output(p, figure=True):
    p.add_argument("-o", "--output", help="write the CSV report here instead of stdout")
    if figure:
        p.add_argument("--figure", help="also render a figure to this image file (png, pdf, svg)")


def _add_weights(p):
    d = LossWeights()
    for name in ("alpha", "beta", "gamma1", "gamma2", "mu1", "mu2"):
        p.add_argument(f"--{name}", type=float, default=getattr(d, name),
                       help=f"loss weight {name} (default {getattr(d, name)})")


def _add_snippet(p):
    p.add_argument("directory", help="sequence directory written by 'synth'")
    p.add_argument("--center", type=int, default=1, help="target frame; its neighbours are the sources")


def _weights(args):
    return LossWeights(args.alpha, args.beta, args.gamma1, args.gamma2, args.mu1, args.mu2)


# -- subcommands -------------------------------------------------------------

def cmd_synth(args):
    scene = make_scene(args.scenario, frames=args.frames, height=args.height, width=args.width,
                       seed=args.seed, baseline=args.baseline)
    images, depths = [], []
    for i in range(len(scene)):
        img, d, _ = scene.render(i)
        images.append(img[None])
        depths.append(d)
    matches = []
    for c in range(1, len(scene) - 1):
        for j, (s, third) in enumerate(((c - 1, c + 1), (c + 1, c - 1))):
            rec = generate_matches(scene, c, s, args.matches, args.seed * 1000 + 2 * c + j,
                                   third=third, noise=args.noise)
            matches.append((c, s, rec.pairs))
    out = Path(args.out)
    fileio.write_sequence(out, images, depths, scene.path, scene.intrinsics, matches)
    snippets = []
    for start in range(len(scene) - 2):
        origin = invert(scene.path[start])
        snippets.extend(compose(origin, scene.path[start + i]) for i in range(3))
    fileio.write_poses(out / "snippets.txt", snippets)
    if args.figure:
        from .plotting import plot_frames
        plot_frames(images, depths, args.figure)
    rows = [{"frame": i, "image": fileio.frame_name("image", i, "pfm"),
             "depth": fileio.frame_name("depth", i, "pfm"),
             "mean_depth": float(np.mean(depths[i]))} for i in range(len(scene))]
    _emit(args, ["frame", "image", "depth", "mean_depth"], rows)
    return 0


def _load(args, refine=False):
    cfg = MaskConfig(getattr(args, "error_percentile", 90.0), getattr(args, "gradient_percentile", 90.0))
    return fileio.load_snippet(args.directory, args.center, refine=refine, mask_config=cfg)


def cmd_loss(args):
    inp = _load(args, refine=args.refine)
    w = _weights(args)
    rep = total_loss(inp, w, grads=False)
    tw = w.term_weights()
    rows = [{"term": n, "value": rep.terms[n], "weight": tw[n], "weighted": tw[n] * rep.terms[n],
             "degraded": n in rep.flags} for n in TERMS]
    rows.append({"term": "total", "value": rep.total, "weight": 1.0, "weighted": rep.total,
                 "degraded": bool(rep.flags)})
    if args.figure:
        from .plotting import plot_terms
        plot_terms(rep.row(), args.figure, tw)
    _emit(args, ["term", "value", "weight", "weighted", "degraded"], rows)
    return 0


def cmd_gradcheck(args):
    from .gradsuite import perturbed_point, run_gradient_suite
    if args.directory:
        base = _load(args)
    else:
        base = build_snippet(make_scene(args.scenario, height=args.size, width=args.size, seed=args.seed),
                             seed=args.seed)
    inp = perturbed_point(base, args.seed, args.depth_noise, args.pose_noise)
    res = run_gradient_suite(inp, _weights(args), tol=args.tol)
    rows = res.rows()
    if args.figure:
        from .plotting import plot_gradcheck
        plot_gradcheck(rows, args.figure, args.tol)
    _emit(args, ["term", "depth_max_rel_error", "depth_kinks", "pose_max_rel_error", "pose_kinks", "passed"],
          rows)
    print(f"gradient suite {'passed' if res.passed else 'FAILED'} in {res.seconds:.1f} s", file=sys.stderr)
    return 0 if res.passed else EXIT_CHECK_FAILED


def cmd_refine(args):
    inp = _load(args)
    ref = inp.pose_params.copy()
    params = perturb_translations(ref, args.perturb_translation, args.seed)
    start = inp.with_params(pose_params=params)
    res = gradient_descent_refine(start, _weights(args), steps=args.steps, lr=args.lr,
                                  update_depths=not args.poses_only, update_poses=not args.depths_only)
    terr = [float(np.linalg.norm(p[:, 3:] - ref[:, 3:])) for p in res.pose_history]
    rows = [{"step": i, **h.terms, "total": h.total, "translation_error": terr[i]}
            for i, h in enumerate(res.history)]
    if args.figure:
        from .plotting import plot_refinement
        plot_refinement(res.history, args.figure, terr)
    _emit(args, ["step", *TERMS, "total", "translation_error"], rows)
    return 0


def cmd_chain(args):
    from .trajectory import Snippet, chain_snippets
    snippets = []
    for path in args.snippet_files:
        for group in fileio.read_snippet_groups(path):
            origin = invert(group[0])
            snippets.append(Snippet([compose(origin, p) for p in group]))
    traj = chain_snippets(snippets)
    if args.output:
        fileio.write_poses(args.output, traj.poses)
    else:
        for p in traj.poses:
            sys.stdout.write(fileio.format_pose_line(p) + "\n")
    return 0


def cmd_evaluate(args):
    from .trajectory import Trajectory, median_ape, snippet_ate, umeyama_align
    est, gt = Trajectory(fileio.read_poses(args.est)), Trajectory(fileio.read_poses(args.gt))
    if len(est) != len(gt):
        raise DataError(f"estimate has {len(est)} poses, ground truth {len(gt)}")
    n = args.snippet_length
    ates = [snippet_ate(est.snippet(i, n), gt.snippet(i, n)) for i in range(len(gt) - n + 1)]
    mape = median_ape(est, gt)
    rows = [("ate_mean", float(np.mean(ates))), ("ate_std", float(np.std(ates))),
            ("mape", mape), ("frames", len(gt)), ("snippets", len(ates))]
    if args.figure:
        from .plotting import plot_trajectories
        s, r, t = umeyama_align(est, gt)
        plot_trajectories(gt.positions(), s * est.positions() @ r.T + t, args.figure)
    _emit(args, ["metric", "value"], rows)
    return 0


def cmd_uncertainty(args):
    from .uncertainty import GridSpec, laplace_covariance, posterior, symmetric_pair, uncertainty_vs_baseline
    rows = uncertainty_vs_baseline(args.angles, sigma=args.sigma, radius=args.radius, cells=args.cells)
    if args.figure or args.density_dir:
        x0 = np.array([0.0, 1.0])
        posts = []
        for a in args.angles:
            cams = symmetric_pair(a, args.radius, x0)
            sd = np.sqrt(np.diag(laplace_covariance(cams, x0, args.sigma)))
            grid = GridSpec.around(x0, 8 * sd[0], 8 * sd[1], args.cells, args.cells)
            posts.append((a, posterior(cams, [c.project(x0) for c in cams], args.sigma, grid)))
        if args.figure:
            from .plotting import plot_uncertainty
            plot_uncertainty(rows, posts, args.figure)
        if args.density_dir:
            d = Path(args.density_dir)
            d.mkdir(parents=True, exist_ok=True)
            for a, post in posts:
                gx, gy = np.meshgrid(post.xs, post.ys)
                np.savetxt(d / f"posterior_{a:g}.csv", np.column_stack([gx.ravel(), gy.ravel(), post.density.ravel()]),
                           delimiter=",", header="x,y,density", comments="", fmt="%.17g")
    _emit(args, ["angle_deg", "largest_eigenvalue"], rows)
    return 0


# -- parser ------------------------------------------------------------------

def build_parser():
    fmt = argparse.RawDescriptionHelpFormatter
    p = argparse.ArgumentParser(prog="depthmotion", description=__doc__, formatter_class=fmt)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", formatter_class=fmt,
                       help="render a synthetic sequence with exact depth, poses and matches",
                       description="Render a synthetic sequence.\n\ncolumns: frame,image,depth,mean_depth")
    s.add_argument("out", help="output sequence directory")
    s.add_argument("--scenario", choices=SCENARIOS, default="lateral")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--frames", type=_positive_int, default=3)
    s.add_argument("--height", type=_positive_int, default=64)
    s.add_argument("--width", type=_positive_int, default=64)
    s.add_argument("--baseline", type=float, default=0.04)
    s.add_argument("--matches", type=_positive_int, default=100, help="matches per frame pair")
    s.add_argument("--noise", type=float, default=0.0, help="pixel noise std added to p'")
    _add_output(s)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("loss", formatter_class=fmt, help="evaluate the total objective on a snippet",
                       description="Per-term objective breakdown.\n\n"
                                   "columns: term,value,weight,weighted,degraded\n"
                                   "rows: pixel,ssim,smooth,epi,reproj,depth,multi,total")
    _add_snippet(s)
    _add_weights(s)
    s.add_argument("--refine", action="store_true", help="enable the percentile masks (refinement phase)")
    s.add_argument("--error-percentile", type=float, default=90.0)
    s.add_argument("--gradient-percentile", type=float, default=90.0)
    _add_output(s)
    s.set_defaults(func=cmd_loss)

    s = sub.add_parser("gradcheck", formatter_class=fmt,
                       help="compare analytic gradients with finite differences",
                       description="Finite-difference gradient suite at a perturbed point.\n\n"
                                   "columns: term,depth_max_rel_error,depth_kinks,pose_max_rel_error,"
                                   "pose_kinks,passed\nexit status 3 when any term fails")
    s.add_argument("directory", nargs="?", help="sequence directory (default: synthetic scene)")
    s.add_argument("--center", type=int, default=1)
    s.add_argument("--scenario", choices=SCENARIOS, default="lateral")
    s.add_argument("--size", type=_positive_int, default=64, help="synthetic image side length")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--depth-noise", type=float, default=0.01)
    s.add_argument("--pose-noise", type=float, default=0.002)
    s.add_argument("--tol", type=float, default=1e-4)
    _add_weights(s)
    _add_output(s)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("refine", formatter_class=fmt, help="gradient descent on depths and poses",
                       description="Plain gradient descent; one row per evaluated state.\n\n"
                                   "columns: step,pixel,ssim,smooth,epi,reproj,depth,multi,total,"
                                   "translation_error\ntranslation_error is measured against the "
                                   "file's poses")
    _add_snippet(s)
    _add_weights(s)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--steps", type=_positive_int, default=200)
    s.add_argument("--lr", type=float, default=3e-6)
    s.add_argument("--perturb-translation", type=float, default=0.0,
                   help="start from translations displaced by this fraction of their length")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--poses-only", action="store_true")
    g.add_argument("--depths-only", action="store_true")
    _add_output(s)
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("chain", formatter_class=fmt, help="chain 3-frame snippet poses into a trajectory",
                       description="Each input file holds consecutive 3-line snippets in KITTI layout;\n"
                                   "the chained camera-to-world trajectory is written in KITTI layout.")
    s.add_argument("snippet_files", nargs="+")
    s.add_argument("-o", "--output", help="trajectory file (default stdout)")
    s.set_defaults(func=cmd_chain)

    s = sub.add_parser("evaluate", formatter_class=fmt, help="snippet ATE and median APE",
                       description="Trajectory metrics.\n\ncolumns: metric,value\n"
                                   "rows: ate_mean,ate_std,mape,frames,snippets")
    s.add_argument("--est", required=True, help="estimated poses (KITTI layout)")
    s.add_argument("--gt", required=True, help="ground-truth poses (KITTI layout)")
    s.add_argument("--snippet-length", type=_positive_int, default=3)
    _add_output(s)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("uncertainty", formatter_class=fmt,
                       help="posterior spread of a two-view triangulation vs baseline angle",
                       description="Largest posterior covariance eigenvalue per angle.\n\n"
                                   "columns: angle_deg,largest_eigenvalue")
    s.add_argument("--angles", type=_angle_list, default=[5, 15, 30, 45, 60, 90],
                   help="comma-separated ray intersection angles in degrees")
    s.add_argument("--sigma", type=float, default=1e-3)
    s.add_argument("--radius", type=float, default=1.0)
    s.add_argument("--cells", type=_positive_int, default=512)
    s.add_argument("--density-dir", help="write each posterior grid as x,y,density CSV here")
    _add_output(s)
    s.set_defaults(func=cmd_uncertainty)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if hasattr(args, "alpha"):
            _weights(args)
        if hasattr(args, "error_percentile"):
            MaskConfig(args.error_percentile, args.gradient_percentile)
        if getattr(args, "lr", 0) < 0 or getattr(args, "tol", 1) <= 0:
            raise ValueError("learning rate must be >= 0 and tolerance > 0")
    except ValueError as e:
        parser.error(str(e))
    try:
        return args.func(args)
    except (DataError, GeometryError, ValueError, OSError, IndexError) as e:
        print(f"depthmotion {args.command}: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
