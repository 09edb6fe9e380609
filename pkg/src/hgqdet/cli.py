"""Command-line entry point: ``hgqdet {synth,train,infer,eval,froc}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, TrainConfig, apply_overrides, desk_config, load_config, resolve_run_dir
from .data import CocoFormatError, SynthSpec, load_coco, save_coco, synth_generate
from .evaluation import (
    JoinError,
    ap_sweep,
    bootstrap_froc,
    check_join,
    froc_curve,
    gts_from_coco,
    preds_from_results,
)
from .inference import InferenceConfig, infer
from .plotting import FrocEntry, plot_froc

log = logging.getLogger("hgqdet")


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2))


def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_images=args.n_images,
        image_size=args.image_size,
        cells_per_image=tuple(args.cells),
        soma_radius=tuple(args.radius),
        noise=args.noise,
        seed=args.seed,
        stain_tag=args.stain,
        first_id=args.first_id,
    )
    path = save_coco(synth_generate(spec), args.out)
    print(path)
    return 0


def _train_config(args) -> TrainConfig:
    if args.preset == "desk":
        base = desk_config().to_dict()
        if args.config:
            import yaml

            with open(args.config) as fh:
                base.update(yaml.safe_load(fh) or {})
        return TrainConfig.from_dict(apply_overrides(base, args.set))
    return load_config(args.config, args.set)


def cmd_train(args) -> int:
    from .train import train

    cfg = _train_config(args)
    dataset = load_coco(args.data, args.images)
    run_dir = Path(args.run_dir) if args.run_dir else resolve_run_dir(cfg, args.name)

    def report(rec):
        val = rec["val"]["total"] if rec["val"] else float("nan")
        print(f"epoch {rec['epoch']:4d}  lr {rec['lr']:.2e}  train {rec['train']['total']:.4f}  val {val:.4f}",
              flush=True)

    res = train(cfg, dataset, run_dir, on_epoch=None if args.quiet else report)
    print(json.dumps({"run_dir": str(res.run_dir), "best": str(res.best_path),
                      "best_epoch": res.manifest.best_epoch}))
    return 0


def cmd_infer(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    dataset = load_coco(args.data, args.images)
    cfg = InferenceConfig(score_floor=args.score_floor, max_dets=args.max_dets)
    results = infer(model, dataset, cfg)
    _write_json(Path(args.out), results)
    print(f"{len(results)} detections for {len(dataset)} images -> {args.out}")
    return 0


def _inputs(gt_path, pred_path):
    gt = gts_from_coco(_load_json(gt_path))
    preds = preds_from_results(_load_json(pred_path), gt.keys())
    check_join(preds, gt)
    return preds, gt


def _froc_rows(label, curve, band):
    for k, t in enumerate(curve.thresholds):
        row = {
            "model": label,
            "threshold": f"{t:.2f}",
            "fppi": curve.fppi[k],
            "sensitivity": curve.sensitivity[k],
        }
        if band is not None:
            row.update(
                fppi_mean=band.fppi_mean[k], fppi_lo=band.fppi_lower[k], fppi_hi=band.fppi_upper[k],
                sens_mean=band.sens_mean[k], sens_lo=band.sens_lower[k], sens_hi=band.sens_upper[k],
            )
        yield row


def _write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})


def cmd_eval(args) -> int:
    preds, gt = _inputs(args.gt, args.pred)
    ap = ap_sweep(preds, gt, max_dets=args.max_dets)
    curve = froc_curve(preds, gt)
    band = bootstrap_froc(preds, gt, B=args.bootstrap, seed=args.seed) if args.bootstrap else None
    report = {
        "n_images": len(gt),
        "n_gt": int(sum(len(g) for g in gt.values())),
        "n_detections": int(sum(len(p.scores) for p in preds.values())),
        **{k: ap[k] for k in ("ap_mean", "ap_at_050", "ap_small", "ap_medium", "ar_mean")},
        "ap_per_threshold": ap["ap_per_threshold"],
        "iou_thresholds": ap["iou_thresholds"],
        "froc": curve.to_dict(),
        "bootstrap": band.to_dict() if band is not None else None,
    }
    out = Path(args.out)
    _write_json(out, report)
    _write_csv(out.with_suffix(".froc.csv"), list(_froc_rows(args.label, curve, band)))
    if not args.no_plot:
        plot_froc([FrocEntry(args.label, curve, band, ap["ap_mean"])], out.with_suffix(".froc.png"))
    print(json.dumps({k: report[k] for k in ("ap_mean", "ap_at_050", "ap_small", "ap_medium")}))
    return 0


def cmd_froc(args) -> int:
    if len(args.pred) != len(args.label):
        raise ConfigError("give one --label per --pred")
    entries, rows, summary = [], [], {}
    for pred_path, label in zip(args.pred, args.label):
        preds, gt = _inputs(args.gt, pred_path)
        ap = ap_sweep(preds, gt)
        curve = froc_curve(preds, gt)
        band = bootstrap_froc(preds, gt, B=args.bootstrap, seed=args.seed)
        entries.append(FrocEntry(label, curve, band, ap["ap_mean"]))
        rows.extend(_froc_rows(label, curve, band))
        summary[label] = {"ap_mean": ap["ap_mean"], "froc": curve.to_dict(), "bootstrap": band.to_dict()}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    plot_froc(entries, out, title=args.title)
    _write_csv(out.with_suffix(".csv"), rows)
    _write_json(out.with_suffix(".json"), summary)
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hgqdet", description="Heatmap-seeded query detector tools.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic COCO dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n-images", type=int, default=20)
    s.add_argument("--image-size", type=int, default=128)
    s.add_argument("--cells", type=int, nargs=2, default=(3, 6), metavar=("MIN", "MAX"))
    s.add_argument("--radius", type=float, nargs=2, default=(5.0, 9.0), metavar=("MIN", "MAX"))
    s.add_argument("--noise", type=float, default=0.03)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--stain", default="synthetic")
    s.add_argument("--first-id", type=int, default=1)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a detector")
    t.add_argument("--data", required=True, help="COCO annotation file")
    t.add_argument("--images", required=True, help="image directory")
    t.add_argument("--config", help="YAML/JSON config file")
    t.add_argument("--preset", choices=("full", "desk"), default="full",
                   help="full-scale defaults or the small CPU preset")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--run-dir")
    t.add_argument("--name", help="run name below $HGQDET_RUN_ROOT")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="predict boxes for a COCO image set")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--images", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--score-floor", type=float, default=0.05)
    i.add_argument("--max-dets", type=int, default=100)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="AP sweep + FROC report for one prediction file")
    e.add_argument("--gt", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--out", required=True, help="report JSON; .froc.csv/.froc.png written alongside")
    e.add_argument("--label", default="model")
    e.add_argument("--bootstrap", type=int, default=200, help="resamples (0 disables)")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--max-dets", type=int, default=100)
    e.add_argument("--no-plot", action="store_true")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("froc", help="multi-model FROC plot with bootstrap bands")
    f.add_argument("--gt", required=True)
    f.add_argument("--pred", action="append", required=True)
    f.add_argument("--label", action="append", required=True)
    f.add_argument("--out", required=True, help="plot image; .csv/.json written alongside")
    f.add_argument("--bootstrap", type=int, default=200)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--title")
    f.set_defaults(func=cmd_froc)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CocoFormatError, JoinError, CheckpointError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
