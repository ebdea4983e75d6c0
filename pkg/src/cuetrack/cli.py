"""Single-binary command-line surface.

Exit codes are a stable scripting contract: 0 success, 2 usage, 3 I/O,
4 format/validation, 5 numeric failure. Every run prints its resolved
configuration to stderr unless --quiet is given.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import synthetic
from .bundle_io import (
    read_bundle,
    read_token_grid,
    write_bundle,
    write_token_grid,
)
from .cue_mapping import (
    map_textual_cue,
    read_heatmap,
    scale_survey,
    write_heatmap,
    write_heatmap_pgm,
)
from .errors import (
    CuetrackError,
    FormatError,
    NumericError,
    TrainingError,
)
from .guidance import fuse, fuse_backward, init_weights, load_weights
from .metrics import emit_report, evaluate
from .numerics import finite_diff_check
from .synthetic import (
    SyntheticSpec,
    TrackRecord,
    generate_bundle,
    read_strategy_weights,
    read_track_record,
    run_tracker,
    train_guidance,
    write_strategy_weights,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_NUMERIC = 5


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--precision", choices=("f32", "f64"), default="f64")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quiet", action="store_true")


def _dtype(args):
    return np.float32 if args.precision == "f32" else np.float64


def cmd_map(args) -> int:
    bundle = read_bundle(args.bundle)
    heat = map_textual_cue(
        bundle,
        scale=args.scale,
        refine_map=not args.no_refine,
        normalize_map=not args.no_normalize,
        dtype=_dtype(args),
    )
    write_heatmap(heat, args.out)
    if args.pgm:
        write_heatmap_pgm(heat, args.pgm)
    if args.survey:
        survey_dir = Path(args.survey)
        survey_dir.mkdir(parents=True, exist_ok=True)
        for k, hm in scale_survey(bundle):
            write_heatmap(hm, survey_dir / f"scale_{k}.cthm")
            write_heatmap_pgm(hm, survey_dir / f"scale_{k}.pgm")
    return EXIT_OK


def cmd_fuse(args) -> int:
    heat = read_heatmap(args.heatmap)
    grid = read_token_grid(args.tokens)
    weights = load_weights(args.weights)
    fused = fuse(weights, heat, grid)
    write_token_grid(fused, args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = SyntheticSpec(seed=args.seed, frames=args.frames)
    manifest = {"spec": asdict(spec), "sequences": []}
    for i in range(args.sequences):
        sspec = replace(spec, seed=args.seed + i)
        seq_dir = out / f"seq_{i:03d}"
        seq_dir.mkdir(exist_ok=True)
        gt = []
        for f in range(sspec.frames):
            bundle, grid, gt_box = generate_bundle(sspec, f)
            write_bundle(bundle, seq_dir / f"frame_{f:03d}.ctfb")
            write_token_grid(grid, seq_dir / f"frame_{f:03d}.cttg")
            gt.append((f, gt_box))
        from .bundle_io import write_boxes

        write_boxes(seq_dir / "groundtruth.txt", gt)
        manifest["sequences"].append(
            {"id": i, "seed": sspec.seed, "frames": sspec.frames, "dir": seq_dir.name}
        )
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    spec = SyntheticSpec(frames=args.frames)
    def progress(epoch, train_loss, val_loss):
        if not args.quiet:
            print(
                f"epoch {epoch}: train {train_loss:.6f} val {val_loss:.6f}",
                file=sys.stderr,
            )

    result = train_guidance(
        spec,
        args.strategy,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        steps_per_epoch=args.steps,
        progress=progress,
    )
    write_strategy_weights(result.weights, args.out, dim_g=spec.dim_g)
    if not args.quiet:
        print(f"best epoch {result.best_epoch}", file=sys.stderr)
    return EXIT_OK


def cmd_track(args) -> int:
    spec = SyntheticSpec(frames=args.frames)
    weights = None
    if args.weights:
        weights = read_strategy_weights(args.weights)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.sequences):
        sspec = replace(spec, seed=args.suite_seed + i)
        rec = run_tracker(sspec, args.strategy, weights, cadence=args.cadence)
        rec.write(out / f"pred_{i:03d}.txt", out / f"gt_{i:03d}.txt")
    return EXIT_OK


def cmd_eval(args) -> int:
    pairs = []
    if args.pred and args.gt:
        rec = read_track_record(args.pred, args.gt)
        pairs.extend(rec.pairs())
    elif args.dir:
        d = Path(args.dir)
        pred_files = sorted(d.glob("pred_*.txt"))
        if not pred_files:
            raise FileNotFoundError(f"no pred_*.txt files in {d}")
        for pf in pred_files:
            gf = d / pf.name.replace("pred_", "gt_")
            rec = read_track_record(pf, gf)
            pairs.extend(rec.pairs())
    else:
        raise CuetrackError("need --dir or both --pred and --gt")
    report = evaluate(pairs)
    emit_report(report, args.out)
    if not args.quiet:
        print(
            f"auc {report.auc:.4f} precision {report.precision:.4f} "
            f"norm_precision {report.norm_precision:.4f}",
            file=sys.stderr,
        )
    return EXIT_OK


def _grad_check_case(seed: int, grid_w: int, grid_h: int, dim: int):
    """Deterministic random fuse case with rectifier margins >= 1e-3.

    The margin dwarfs the preactivation movement a central-difference step
    can cause, so the +-eps evaluations never cross a rectifier kink.
    """
    from .bundle_io import TokenGrid
    from .cue_mapping import Heatmap
    from .guidance import fuse_preactivation_margin

    for attempt in range(256):
        rng = np.random.default_rng((9090, seed, attempt))
        base = init_weights(dim, seed=int(rng.integers(0, 2**32)))
        vec = base.pack() + 0.05 * rng.standard_normal(base.pack().size)
        weights = base.with_packed(vec)
        heat = Heatmap(rng.uniform(0.0, 1.0, (7, 9)), normalized=True)
        grid = TokenGrid(rng.standard_normal((grid_w * grid_h, dim)), grid_w, grid_h)
        if fuse_preactivation_margin(weights, heat, grid) >= 1e-3:
            # small readout scale keeps negligible-influence parameters
            # below the checker's denominator floor
            readout = 1e-4 * rng.standard_normal((grid_w * grid_h, dim))
            return weights, heat, grid, readout
    raise NumericError(f"no kink-free gradient-check case found for seed {seed}")


def cmd_check_grad(args) -> int:
    from .bundle_io import TokenGrid

    overall = 0.0
    for s in range(args.seeds):
        weights, heat, grid, readout = _grad_check_case(
            s, args.grid_w, args.grid_h, args.dim
        )
        grads, grad_tokens = fuse_backward(
            weights, heat, grid, TokenGrid(readout, grid.grid_w, grid.grid_h)
        )
        rng = np.random.default_rng((4242, s))

        vec = weights.pack()
        idx_w = rng.choice(vec.size, size=min(args.samples, vec.size), replace=False)

        def loss_weights(v):
            out = fuse(weights.with_packed(v), heat, grid)
            return float(np.sum(readout * out.tokens))

        rel_w = finite_diff_check(
            loss_weights, vec, grads.pack(), eps=args.eps, indices=idx_w
        )

        tok = grid.tokens
        idx_t = rng.choice(tok.size, size=min(16, tok.size), replace=False)

        def loss_tokens(t):
            out = fuse(weights, heat, TokenGrid(t, grid.grid_w, grid.grid_h))
            return float(np.sum(readout * out.tokens))

        rel_t = finite_diff_check(
            loss_tokens, tok, grad_tokens.tokens, eps=args.eps, indices=idx_t
        )
        rel = float(max(rel_w, rel_t))
        overall = max(overall, rel)
        if not args.quiet:
            print(f"seed {s}: max_rel_error {rel:.3e}", file=sys.stderr)
    print(f"max_rel_error {overall!r}")
    if overall >= args.tol:
        raise NumericError(
            f"gradient check failed: {overall:.3e} >= tolerance {args.tol:.3e}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cuetrack",
        description="textual-cue heatmaps, guidance fusion, and the synthetic rig",
    )
    sub = p.add_subparsers(dest="command", required=True)

    mp = sub.add_parser("map", help="bundle -> target-distribution heatmap")
    mp.add_argument("--bundle", required=True)
    mp.add_argument("--out", required=True)
    mp.add_argument("--scale", type=int, default=1)
    mp.add_argument("--no-refine", action="store_true")
    mp.add_argument("--no-normalize", action="store_true")
    mp.add_argument("--pgm")
    mp.add_argument("--survey")
    _add_common(mp)
    mp.set_defaults(func=cmd_map)

    fp = sub.add_parser("fuse", help="heatmap + tokens + weights -> fused tokens")
    fp.add_argument("--heatmap", required=True)
    fp.add_argument("--tokens", required=True)
    fp.add_argument("--weights", required=True)
    fp.add_argument("--out", required=True)
    _add_common(fp)
    fp.set_defaults(func=cmd_fuse)

    sp = sub.add_parser("synth", help="materialize a synthetic dataset directory")
    sp.add_argument("--out", required=True)
    sp.add_argument("--sequences", type=int, default=4)
    sp.add_argument("--frames", type=int, default=12)
    _add_common(sp)
    sp.set_defaults(func=cmd_synth)

    tp = sub.add_parser("train", help="train one strategy on generated frames")
    tp.add_argument("--strategy", choices=synthetic.STRATEGIES, required=True)
    tp.add_argument("--out", required=True)
    tp.add_argument("--epochs", type=int, default=5)
    tp.add_argument("--lr", type=float, default=2e-3)
    tp.add_argument("--steps", type=int, default=300)
    tp.add_argument("--frames", type=int, default=12)
    _add_common(tp)
    tp.set_defaults(func=cmd_train)

    kp = sub.add_parser("track", help="run the mock tracker over suite sequences")
    kp.add_argument("--strategy", choices=synthetic.STRATEGIES, required=True)
    kp.add_argument("--weights")
    kp.add_argument("--out", required=True)
    kp.add_argument("--cadence", type=int, default=1)
    kp.add_argument("--sequences", type=int, default=20)
    kp.add_argument("--frames", type=int, default=12)
    kp.add_argument("--suite-seed", type=int, default=synthetic.EVAL_SUITE_SEED)
    _add_common(kp)
    kp.set_defaults(func=cmd_track)

    ep = sub.add_parser("eval", help="score prediction/ground-truth box files")
    ep.add_argument("--dir")
    ep.add_argument("--pred")
    ep.add_argument("--gt")
    ep.add_argument("--out", required=True)
    _add_common(ep)
    ep.set_defaults(func=cmd_eval)

    gp = sub.add_parser("check-grad", help="verify fuse gradients by finite differences")
    gp.add_argument("--seeds", type=int, default=20)
    gp.add_argument("--grid-w", type=int, default=4)
    gp.add_argument("--grid-h", type=int, default=4)
    gp.add_argument("--dim", type=int, default=8)
    gp.add_argument("--eps", type=float, default=1e-5)
    gp.add_argument("--tol", type=float, default=1e-6)
    gp.add_argument("--samples", type=int, default=48)
    _add_common(gp)
    gp.set_defaults(func=cmd_check_grad)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0
    if not args.quiet:
        shown = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
        print(f"# config: {shown}", file=sys.stderr)
    try:
        code = args.func(args)
        return EXIT_OK if code is None else code
    except (NumericError, TrainingError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except CuetrackError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
