"""Command-line front end: gen / train / eval / ablate / metrics.

Exit codes: 0 success, 1 usage or config error, 2 data/format error,
3 numeric failure (non-finite training loss).
DEEPLIGHT_THREADS caps worker parallelism (default 1).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import model as M
from .baselines import bicubic_upsample
from .data import (SceneSpec, generate_dataset, make_manifest, read_bundle,
                   read_manifest, read_raster)
from .errors import ConfigError, DataError, FormatError
from .kvtext import read_kv_file, write_kv_file
from .metrics import aggregate, evaluate_pair
from .train import (BEST_CKPT, LOG_NAME, RunConfig, _geometry_from_data,
                    evaluate_scenes, load_for_inference, load_split, train)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

# Table rows in presentation order; the full model closes the table.
MATRIX_ROWS = (
    ("no-lr-ntl", "w/o LR NTL"),
    ("no-dmo", "w/o DMO"),
    ("no-dem", "w/o DEM"),
    ("no-isp", "w/o ISP"),
    ("no-caa", "w/o CAA"),
    ("no-amff", "w/o AMFF"),
    ("no-aer", "w/o AER"),
    ("none", "Ours full"),
)


def _workers() -> int:
    raw = os.environ.get("DEEPLIGHT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"DEEPLIGHT_THREADS must be an integer, got '{raw}'")
    return max(1, n)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------- gen

def cmd_gen(args) -> int:
    spec = SceneSpec(
        seed=0, hr_size=args.hr_size, scale_r=args.scale,
        num_settlements=tuple(args.settlements),
        terrain_roughness=args.roughness,
        saturation_level=args.saturation,
        bloom_sigma_px=args.bloom_sigma,
        warp_max_px=args.warp_max,
        noise_sigma=args.noise_sigma,
    )
    manifest = make_manifest(args.scenes, tuple(args.fractions), args.seed,
                             spec)
    out = Path(args.out)
    generate_dataset(out, manifest, workers=_workers())

    zero = total = 0
    per_scene = []
    for i in range(manifest.n_scenes):
        hr = read_bundle(manifest.scene_dir(out, i)).hr_ntl
        z = int(np.count_nonzero(hr == 0))
        per_scene.append(z / hr.size)
        zero += z
        total += hr.size
    report = {
        "scenes": manifest.n_scenes,
        "seed": args.seed,
        "splits": {k: len(v) for k, v in manifest.splits.items()},
        "dark_fraction": zero / total,
        "dark_fraction_min_scene": min(per_scene),
    }
    (out / "gen_report.json").write_text(json.dumps(report, indent=2) + "\n",
                                         encoding="utf-8")
    print(f"generated {manifest.n_scenes} scenes under {out} "
          f"(dark_fraction={report['dark_fraction']:.4f})")
    return EXIT_OK


# ---------------------------------------------------------------- train

_OVERLAY_FLAGS = {
    "steps": "steps", "batch_size": "batch_size", "seed": "seed",
    "eval_every": "eval_every", "lr": "optimizer.lr",
    "alpha": "loss.alpha", "ablation": "model.ablation",
}


def _merged_config(args) -> dict[str, str]:
    """defaults < config file < command-line flags."""
    flat: dict[str, str] = {}
    if args.config:
        flat.update(read_kv_file(args.config))
    for attr, key in _OVERLAY_FLAGS.items():
        v = getattr(args, attr, None)
        if v is not None:
            flat[key] = str(v)
    if getattr(args, "data", None) is not None:
        flat["data_dir"] = str(args.data)
    if not flat.get("data_dir"):
        raise ConfigError("no dataset given: pass --data or set data_dir "
                          "in the config file")
    return flat


def _echo(row) -> None:
    if row["step"] % 50 == 0:
        print(f"step {row['step']:>5d}  total {row['total']:.5f}  "
              f"l1 {row['l1']:.5f}")


def cmd_train(args) -> int:
    from .reporting import write_loss_curve

    cfg = RunConfig.from_flat(_merged_config(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_kv_file(out / "run_config.txt", cfg.to_flat())
    result = train(cfg, out, resume=args.resume, echo=_echo)
    if (out / LOG_NAME).stat().st_size:
        write_loss_curve(out / LOG_NAME, out / "loss_curve.png")
    if result.status != "ok":
        print(f"numeric failure at step {result.final_step}; last finite "
              f"state saved to {result.last_ckpt}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"trained {result.final_step} steps; best val PSNR "
          f"{result.best_val_psnr:.3f} dB; checkpoints in {out}")
    return EXIT_OK


# ---------------------------------------------------------------- eval

def _eval_baseline(scenes):
    reports = []
    for sc in scenes:
        r = sc.hr.shape[1] // sc.lr.shape[1]
        pred = np.clip(bicubic_upsample(sc.lr[0], r), 0.0, 1.0)
        reports.append(evaluate_pair(pred, sc.hr[0], tile_id=sc.tile_id))
    return reports, aggregate(reports)


def cmd_eval(args) -> int:
    from .reporting import eval_report_doc, write_eval_report

    scenes = load_split(args.data, args.split)
    if not scenes:
        raise DataError(f"split '{args.split}' of {args.data} is empty")
    if args.ckpt:
        state, _ = load_for_inference(args.ckpt)
    else:
        model_cfg = _geometry_from_data(RunConfig(), scenes)
        state = M.build(model_cfg, seed=args.seed)
    reports, agg = evaluate_scenes(state, scenes, workers=_workers())
    baseline = _eval_baseline(scenes) if args.baseline else None
    doc = eval_report_doc(args.split, reports, agg, baseline,
                          extra={"checkpoint": str(args.ckpt or "")})
    paths = write_eval_report(args.report, doc)
    line = f"{args.split}: PSNR {agg['psnr']:.3f} dB  SSIM {agg['ssim']:.4f}"
    if baseline:
        line += f"  (bicubic PSNR {baseline[1]['psnr']:.3f} dB)"
    print(line)
    print(f"report: {paths['json']} (+ .csv, .png)")
    return EXIT_OK


# ---------------------------------------------------------------- ablate

def cmd_ablate(args) -> int:
    from .reporting import write_ablation_report

    base = _merged_config(args)
    out = Path(args.out)
    rows = []
    for ablation, label in MATRIX_ROWS:
        flat = dict(base)
        flat["model.ablation"] = ablation
        run_dir = out / ("full" if ablation == "none" else ablation)
        row = {"label": label, "ablation": ablation}
        try:
            cfg = RunConfig.from_flat(flat)
            result = train(cfg, run_dir)
            if result.status != "ok":
                raise DataError(f"numeric failure at step {result.final_step}")
            state, _ = load_for_inference(run_dir / BEST_CKPT)
            _, agg = evaluate_scenes(state, load_split(cfg.data_dir, "val"),
                                     workers=_workers())
            row.update(agg)
        except (ConfigError, DataError, FormatError, OSError) as e:
            row["error"] = str(e)
        rows.append(row)
        shown = row.get("psnr", row.get("error"))
        print(f"{label:<12} {shown if isinstance(shown, str) else f'{shown:.3f} dB'}")
    paths = write_ablation_report(args.matrix or out / "ablation.json", rows,
                                  meta={"seed": base.get("seed", "0"),
                                        "steps": base.get("steps", "")})
    print(f"matrix: {paths['json']} (+ .csv, .png)")
    ok = [r for r in rows if "error" not in r]
    return EXIT_OK if ok else EXIT_DATA


# ---------------------------------------------------------------- metrics

def cmd_metrics(args) -> int:
    def band(path):
        arr = read_raster(path)
        if not 0 <= args.band < arr.shape[0]:
            raise DataError(f"{path} has {arr.shape[0]} bands; "
                            f"--band {args.band} is out of range")
        return arr[args.band]

    report = evaluate_pair(band(args.pred), band(args.target))
    doc = report.to_dict()
    text = json.dumps(doc, indent=2)
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------- wiring

def build_parser() -> _Parser:
    p = _Parser(prog="deeplight", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--scenes", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--hr-size", type=int, default=256)
    g.add_argument("--scale", type=int, default=8)
    g.add_argument("--fractions", type=float, nargs=3,
                   default=(0.8, 0.1, 0.1), metavar=("TRAIN", "VAL", "TEST"))
    g.add_argument("--settlements", type=int, nargs=2, default=(6, 10),
                   metavar=("LO", "HI"))
    g.add_argument("--roughness", type=float, default=0.55)
    g.add_argument("--saturation", type=float, default=0.85)
    g.add_argument("--bloom-sigma", type=float, default=6.0)
    g.add_argument("--warp-max", type=float, default=6.0)
    g.add_argument("--noise-sigma", type=float, default=0.015)
    g.set_defaults(run=cmd_gen)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--config", default=None,
                   help="flat key = value file; flags override it")
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--alpha", type=float, default=None)
    t.add_argument("--ablation", choices=M.ABLATIONS, default=None)
    t.add_argument("--eval-every", dest="eval_every", type=int, default=None)
    t.add_argument("--resume", default=None, help="checkpoint to resume from")
    t.set_defaults(run=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint against a split")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", default=None,
                   help="omit to score a freshly initialized model")
    e.add_argument("--split", default="val")
    e.add_argument("--seed", type=int, default=0,
                   help="init seed when no checkpoint is given")
    e.add_argument("--report", default="eval_report.json")
    e.add_argument("--baseline", choices=("bicubic",), default=None)
    e.set_defaults(run=cmd_eval)

    a = sub.add_parser("ablate", help="train and score all 8 table variants")
    a.add_argument("--data", default=None)
    a.add_argument("--out", required=True)
    a.add_argument("--config", default=None)
    a.add_argument("--matrix", default=None,
                   help="matrix JSON path (default <out>/ablation.json)")
    a.add_argument("--steps", type=int, default=None)
    a.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--eval-every", dest="eval_every", type=int, default=None)
    a.set_defaults(run=cmd_ablate)

    m = sub.add_parser("metrics", help="score one raster pair")
    m.add_argument("pred")
    m.add_argument("target")
    m.add_argument("--band", type=int, default=0)
    m.add_argument("--report", default=None)
    m.set_defaults(run=cmd_metrics)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # argparse --help exits 0; usage errors exit 1
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    try:
        return args.run(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, NotADirectoryError, IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
