"""Batch command line for every pipeline stage.

Subcommands: segment, sample, score, dice, evaluate, compare, phantom,
serve. All numeric output uses '.' decimals and 6 significant digits by
default (--precision widens); every result matches the corresponding
library call bit-for-bit.

`--config FILE` (JSON, keys named like the flag destinations, e.g.
``{"k": 8, "cell_edge": 4}``) supplies defaults; explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import scoring, stats
from .annotation import SliceAnnotation
from .errors import AplError, DegenerateVarianceError
from .lungmask import (
    dice_score,
    dice_table_csv,
    evaluate_masks,
    fallback_segment,
    ingest_mask,
)
from .nifti import extract_axial_slice, read_image, read_labels, write_volume
from .sampling import DEFAULT_SLICE_COUNT, plan_for_mask


def _fmt(x: float, precision: int) -> str:
    return f"{x:.{precision}g}"


def _load_mask(path, flip_lr: bool = False):
    return ingest_mask(read_labels(path), flip_lr=flip_lr)


def _annotations_from_volume(ann_vol, plan):
    return [SliceAnnotation(z, extract_axial_slice(ann_vol, z)) for z in plan.slices]


def cmd_segment(args) -> int:
    image = read_image(args.image)
    mask = fallback_segment(image, flip_lr=args.flip_lr)
    write_volume(mask.volume, args.out)
    counts = mask.voxel_counts
    print(f"wrote {args.out} (right={counts.get(1, 0)} left={counts.get(2, 0)} voxels)")
    return 0


def cmd_sample(args) -> int:
    plan = plan_for_mask(_load_mask(args.mask), k=args.k)
    print(",".join(str(z) for z in plan.slices))
    if plan.short_extent:
        print(f"short_extent: extent {plan.extent} < k {plan.k_requested}", file=sys.stderr)
    return 0


def cmd_score(args) -> int:
    mask = _load_mask(args.mask, flip_lr=args.flip_lr)
    ann_vol = read_labels(args.ann)
    plan = plan_for_mask(mask, k=args.k)
    annotations = _annotations_from_volume(ann_vol, plan)
    if args.mode == "pixel":
        report = scoring.pixel_score(mask, annotations, plan,
                                     clip_to_lung=not args.no_clip)
    else:
        cell_edge = args.cell_edge or scoring.default_cell_edge(mask, plan)
        report = scoring.grid_score(mask, annotations, plan,
                                    cell_edge=cell_edge, tau=args.tau)
    if args.json:
        print(report.to_json())
    else:
        print(scoring.CSV_HEADER)
        print(report.csv_row(args.subject_id, precision=args.precision))
    return 0


def cmd_dice(args) -> int:
    a = read_labels(args.a)
    b = read_labels(args.b)
    label = args.label if args.label == "foreground" else int(args.label)
    print(_fmt(dice_score(a, b, label=label), args.precision))
    return 0


def cmd_evaluate(args) -> int:
    if len(args.pred) != len(args.gt):
        print(f"error: {len(args.pred)} predictions vs {len(args.gt)} ground truths",
              file=sys.stderr)
        return 1
    rows = evaluate_masks(args.pred, args.gt)
    text = dice_table_csv(rows, precision=args.precision)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def _read_column(path, key: str, column: str) -> dict[str, float]:
    out: dict[str, float] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if key not in row or column not in row:
                raise AplError(f"{path}: need columns {key!r} and {column!r}")
            out[row[key]] = float(row[column])
    return out


def cmd_compare(args) -> int:
    a = _read_column(args.a, args.key, args.column)
    b = _read_column(args.b, args.key, args.column)
    shared = sorted(set(a) & set(b))
    if len(shared) < 2:
        print(f"error: only {len(shared)} shared subject ids", file=sys.stderr)
        return 1
    sample = stats.PairedSample(
        a=tuple(a[s] for s in shared),
        b=tuple(b[s] for s in shared),
        labels=tuple(shared),
    )
    p = args.precision
    try:
        t = stats.paired_t_test(sample)
        print(f"paired_t statistic={_fmt(t.statistic, p)} df={_fmt(t.df, p)} "
              f"p={_fmt(t.p_two_tailed, p)} stars={t.stars} "
              f"mean_difference={_fmt(t.effect, p)}")
    except DegenerateVarianceError as err:
        print(f"paired_t degenerate_variance mean_difference={_fmt(err.mean_difference, p)} "
              f"p=NA stars=NA")
    r = stats.pearson(sample)
    print(f"pearson r={_fmt(r.effect, p)} statistic={_fmt(r.statistic, p)} "
          f"df={_fmt(r.df, p)} p={_fmt(r.p_two_tailed, p)} stars={r.stars}")
    return 0


def cmd_phantom(args) -> int:
    from . import phantom

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.n == 1:
        results = [phantom.generate(phantom.random_spec(args.seed, noise_sigma=args.noise))]
    else:
        results = phantom.cohort(args.n, args.seed, noise_sigma=args.noise)
    lines = ["subject_id,lung_voxels,cat1_voxels,cat2_voxels,cat3_voxels"]
    for i, res in enumerate(results):
        sid = f"s{i:03d}"
        write_volume(res.image, out / f"{sid}_image.nii.gz")
        write_volume(res.mask.volume, out / f"{sid}_mask.nii.gz")
        write_volume(res.annotation, out / f"{sid}_annotation.nii.gz")
        cat = res.truth.category_voxels_total
        lines.append(f"{sid},{res.truth.lung_voxels_total},{cat[1]},{cat[2]},{cat[3]}")
    (out / "truth.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {len(results)} phantom(s) to {out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.store, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser(config: dict | None = None) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apl",
                                     description="lung MRI quantitative scoring workbench")
    parser.add_argument("--config", default=None,
                        help="JSON file of flag defaults (flags win)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_precision(p):
        p.add_argument("--precision", type=int, default=6,
                       help="significant digits for printed numbers")

    p = sub.add_parser("segment", help="run the fallback lung segmenter")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--flip-lr", action="store_true",
                   help="flip the left/right physical-x convention")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("sample", help="print the sampled slice plan for a mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--k", type=int, default=DEFAULT_SLICE_COUNT)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("score", help="pixel or grid score from mask + annotation volumes")
    p.add_argument("--mask", required=True)
    p.add_argument("--ann", required=True)
    p.add_argument("--mode", choices=("pixel", "grid"), default="pixel")
    p.add_argument("--k", type=int, default=DEFAULT_SLICE_COUNT)
    p.add_argument("--cell-edge", type=int, default=None,
                   help="grid cell edge in voxels (default: lung-scaled)")
    p.add_argument("--tau", type=float, default=scoring.DEFAULT_TAU,
                   help="lung-cell threshold fraction")
    p.add_argument("--no-clip", action="store_true",
                   help="count annotated pixels outside the lung mask too")
    p.add_argument("--flip-lr", action="store_true")
    p.add_argument("--subject-id", default="subject")
    p.add_argument("--json", action="store_true", help="emit the full JSON report")
    add_precision(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("dice", help="Dice overlap between two label volumes")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--label", default="foreground",
                   help="target label number or 'foreground'")
    add_precision(p)
    p.set_defaults(func=cmd_dice)

    p = sub.add_parser("evaluate", help="Dice table over prediction/truth mask pairs")
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--gt", nargs="+", required=True)
    p.add_argument("--out", default=None, help="write CSV here instead of stdout")
    add_precision(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="paired t-test + Pearson r between two score CSVs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--key", default="subject_id")
    p.add_argument("--column", default="total_ratio")
    add_precision(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("phantom", help="write synthetic phantom volumes + truth CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.0,
                   help="gaussian noise sigma as a fraction of dynamic range")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("serve", help="start the annotation HTTP service")
    p.add_argument("--store", required=True, help="session/volume storage directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ui", default=None, help="static frontend directory to serve at /")
    p.set_defaults(func=cmd_serve)

    if config:
        for sp in sub.choices.values():
            known = {action.dest for action in sp._actions}
            sp.set_defaults(**{k: v for k, v in config.items() if k in known})

    return parser


def _peel_config(argv) -> dict | None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return None
    doc = json.loads(Path(known.config).read_text())
    if not isinstance(doc, dict):
        raise AplError(f"{known.config}: config must be a JSON object")
    return doc


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    try:
        config = _peel_config(argv)
        args = build_parser(config).parse_args(argv)
        return args.func(args)
    except AplError as err:
        print(f"error [{err.code}]: {err.message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
