"""Command-line entry point: ``aff <command> ...``.

Exit codes: 0 success, 1 usage error (bad flags or paths), 2 validation
failure (malformed input data, failed gradient check).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as affio
from .clustering import balanced_cluster, no_anchor_cluster, silhouette
from .model import PRESETS, ModelConfig, forward, init_params
from .sfc import CURVES

log = logging.getLogger("aff")


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _out_dir(path: str) -> Path:
    p = Path(path)
    if p.exists() and not p.is_dir():
        raise UsageError(f"output path exists and is not a directory: {path}")
    p.mkdir(parents=True, exist_ok=True)
    return p


def load_config(spec: str) -> ModelConfig:
    """A preset name (``nano``, ``mini``) or a JSON config file."""
    if spec in PRESETS:
        return PRESETS[spec]()
    path = _existing(spec)
    try:
        return ModelConfig.load(path)
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"{spec}: bad config: {exc}") from exc


def grid_positions(side: int) -> np.ndarray:
    ys, xs = np.divmod(np.arange(side * side), side)
    return np.stack([xs, ys], axis=1).astype(np.float64)


# -- commands ---------------------------------------------------------------------


def cmd_cluster(args) -> int:
    if (args.input is None) == (args.grid is None):
        raise UsageError("give exactly one of --input or --grid")
    if args.cluster_size < 1:
        raise UsageError("--cluster-size must be at least 1")
    if args.input is not None:
        try:
            pos = affio.read_positions(_existing(args.input))
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
    else:
        if args.grid < 1:
            raise UsageError("--grid must be at least 1")
        pos = grid_positions(args.grid)
    fn = no_anchor_cluster if args.no_anchors else balanced_cluster
    assignment = fn(pos, args.cluster_size, args.curve)
    text = affio.assignment_csv(pos, assignment)
    if args.out:
        Path(args.out).write_text(text)
    if args.figure:
        from .plotting import plot_clusters
        kind = "no anchors" if args.no_anchors else "anchored"
        plot_clusters(pos, assignment, args.figure, f"{args.curve}, {kind}, {assignment.cluster_count} clusters")
    if assignment.cluster_count < 2:
        print(f"clusters {assignment.cluster_count} silhouette undefined")
    else:
        print(f"clusters {assignment.cluster_count} silhouette {silhouette(pos, assignment):.6f}")
    return 0


def _load_image(path, channels: int) -> np.ndarray:
    try:
        img = affio.read_image(_existing(path))
    except affio.ImageFormatError as exc:
        raise ValidationError(str(exc)) from exc
    if img.ndim == 3 and channels == 1:
        img = np.rint(img.mean(axis=2)).astype(np.uint8)
    elif img.ndim == 2 and channels == 3:
        img = np.repeat(img[:, :, None], 3, axis=2)
    h, w = img.shape[:2]
    if h < 8 or w < 8 or h % 4 or w % 4:
        raise ValidationError(f"{path}: image is {w}x{h}; sides must be >= 8 and divisible by 4")
    return img


def _load_store(config, checkpoint, seed):
    store = init_params(config, seed=seed, dtype=np.float32)
    if checkpoint:
        try:
            store.load(_existing(checkpoint))
        except (ValueError, KeyError) as exc:
            raise ValidationError(f"{checkpoint}: {exc}") from exc
    return store


def cmd_downsample_demo(args) -> int:
    config = load_config(args.config)
    if args.alpha is not None:
        config = config.replace(alpha=args.alpha)
    if args.keep is not None:
        config = config.replace(keep_fraction=args.keep)
    img = _load_image(args.image, config.in_channels)
    store = _load_store(config, args.checkpoint, args.seed)
    out = _out_dir(args.out)
    pixels = img if img.ndim == 3 else img[:, :, None]
    _, records = forward(pixels[None].astype(np.float64) / 255.0, store, config, record=True)
    panels = []
    for rec in records:
        affio.write_tokens(out / f"stage{rec.stage}.csv", affio.record_rows(rec))
        affio.write_image(out / f"stage{rec.stage}.ppm", affio.render_overlay(img, rec.positions[0]))
        panels.append((rec.stage, rec.positions[0]))
        print(f"stage {rec.stage}: {len(rec.positions[0])} tokens")
    if not args.no_figure:
        from .plotting import plot_stages
        plot_stages(img, panels, out / "stages.png")
    return 0


def cmd_gradcheck(args) -> int:
    from .checks import TOLERANCE, full_suite
    worst = 0.0
    failed = []
    score_norms = []
    print("case,max_rel_err,grad_norm,status")
    for res in full_suite(args.seed):
        norm = float(np.sqrt(sum(r.grad_norm ** 2 for r in res.reports)))
        ok = res.ok(TOLERANCE)
        print(f"{res.case},{res.max_rel_err:.3e},{norm:.3e},{'ok' if ok else 'FAIL'}")
        worst = max(worst, res.max_rel_err)
        if not ok:
            failed.append(res.case)
        score_norms += [(f"{res.case}:{r.name}", r.grad_norm) for r in res.reports
                        if r.name.endswith("score.weight")]
    for name, norm in score_norms:
        print(f"score layer gradient {name} {norm:.3e}")
        if not norm > 0:
            failed.append(name)
    print(f"max relative error {worst:.3e} (tolerance {TOLERANCE:g})")
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return 2
    return 0


def cmd_train_toy(args) -> int:
    from .toy import make_toy_dataset, train_toy, write_metrics
    config = load_config(args.config)
    if args.alpha is not None:
        config = config.replace(alpha=args.alpha)
    if args.epochs < 1 or args.train_size < 1 or args.test_size < 1:
        raise UsageError("--epochs, --train-size and --test-size must be positive")
    if args.image_size < 8 or args.image_size % 4:
        raise UsageError("--image-size must be >= 8 and divisible by 4")
    out = _out_dir(args.out)
    data = make_toy_dataset(args.seed, args.train_size + args.test_size, args.image_size)
    train = data.subset(slice(0, args.train_size))
    test = data.subset(slice(args.train_size, None))
    try:
        store, config, history = train_toy(config, train, test, args.epochs, lr=args.lr,
                                           seed=args.seed, batch_size=args.batch_size,
                                           weight_decay=args.weight_decay)
    except FloatingPointError as exc:
        raise ValidationError(str(exc)) from exc
    store.save(out / "checkpoint.bin")
    (out / "config.json").write_text(config.to_json() + "\n")
    write_metrics(history, out / "metrics.csv")
    if not args.no_figure:
        from .plotting import plot_metrics
        plot_metrics(history, out / "metrics.png")
    last = history[-1]
    print(f"epoch {last.epoch} loss {last.loss:.6f} acc {last.acc:.6f} focus_ratio {last.focus_ratio:.6f}")
    return 0


def cmd_render(args) -> int:
    try:
        img = affio.read_image(_existing(args.image))
        tokens = affio.read_tokens(_existing(args.tokens))
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    pos = np.stack([tokens["x"], tokens["y"]], axis=1)
    if args.selected_only:
        pos = pos[tokens["selected"]]
    try:
        overlay = affio.render_overlay(img, pos)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    affio.write_image(args.out, overlay)
    return 0


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="aff", description="Irregular-token clustering, attention and adaptive downsampling.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("cluster", help="balanced clustering of a token set")
    c.add_argument("--input", help="CSV with x and y columns")
    c.add_argument("--grid", type=int, help="use an N x N unit grid instead of --input")
    c.add_argument("--cluster-size", type=int, default=8)
    c.add_argument("--curve", choices=CURVES, default="scanline")
    c.add_argument("--no-anchors", action="store_true", help="order tokens on the curve directly")
    c.add_argument("--out", help="assignment CSV (token_index,x,y,cluster_id)")
    c.add_argument("--figure", help="write a cluster scatter plot here")
    c.set_defaults(func=cmd_cluster)

    d = sub.add_parser("downsample-demo", help="per-stage retained tokens for one image")
    d.add_argument("--image", required=True, help="P5/P6 image")
    d.add_argument("--config", default="nano", help="preset name or JSON config")
    d.add_argument("--checkpoint", help="parameter file; random init when omitted")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--alpha", type=float)
    d.add_argument("--keep", type=float, help="override keep fraction")
    d.add_argument("--out", required=True)
    d.add_argument("--no-figure", action="store_true")
    d.set_defaults(func=cmd_downsample_demo)

    g = sub.add_parser("gradcheck", help="finite-difference check of every op and composed loss")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("train-toy", help="train on the synthetic textured-patch task")
    t.add_argument("--config", default="nano", help="preset name or JSON config")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--lr", type=float, default=2e-3)
    t.add_argument("--alpha", type=float)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--weight-decay", type=float, default=0.05)
    t.add_argument("--train-size", type=int, default=2000)
    t.add_argument("--test-size", type=int, default=500)
    t.add_argument("--image-size", type=int, default=48)
    t.add_argument("--out", required=True)
    t.add_argument("--no-figure", action="store_true")
    t.set_defaults(func=cmd_train_toy)

    r = sub.add_parser("render", help="draw a token dump onto an image")
    r.add_argument("--image", required=True)
    r.add_argument("--tokens", required=True, help="token CSV from downsample-demo")
    r.add_argument("--out", required=True)
    r.add_argument("--selected-only", action="store_true", help="only rows with selected=1")
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"aff: error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"aff: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
