"""Command-line interface: corpus synthesis, training, evaluation, serving."""
from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

from .config import load_configs
from .data import load_dataset, save_folder_dataset, synth_ambiguity_dataset
from .evaluation import EvalConfig, evaluate_dataset, flatten_to_instances
from .model import ModelConfig, load_checkpoint
from .report import write_report
from .training import TrainConfig, train


def _cmd_synth(args):
    samples = synth_ambiguity_dataset(args.n, size=args.size, seed=args.seed)
    save_folder_dataset(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")


def _cmd_train(args):
    if args.config:
        model_config, train_config = load_configs(args.config)
    else:
        model_config, train_config = ModelConfig(), TrainConfig()
    dataset = load_dataset(args.data, format=args.format)
    outcome = train(
        dataset, train_config, args.out, model_config=model_config, resume=args.resume
    )
    print(f"checkpoint: {outcome.checkpoint_path}")
    print(f"metrics: {outcome.metrics_path}")
    print(f"skipped samples: {outcome.skipped}")


def _cmd_eval(args):
    model, _ = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data, format=args.format)
    config = EvalConfig(
        iou_thresholds=tuple(float(t) for t in args.thresholds.split(",")),
        max_clicks=args.max_clicks,
        k_list=tuple(int(k) for k in args.k_list.split(",")),
        selection_mode=args.selection_mode,
        count_repicks=args.repicks,
    )
    result = evaluate_dataset(model, flatten_to_instances(dataset), config)
    paths = write_report(result, config, args.out, figures=not args.no_figures)
    print(json.dumps({"mean_noc": {str(t): v for t, v in result.mean_noc.items()},
                      "miou_at_k": {str(k): v for k, v in result.miou_at_k.items()},
                      "mean_repicks": result.mean_repicks}, indent=2))
    for kind, path in paths.items():
        print(f"{kind}: {path}")


def _cmd_serve(args):
    import uvicorn

    from .service import create_app

    model, _ = load_checkpoint(args.ckpt)
    ui_dir = args.ui_dir if args.ui_dir and Path(args.ui_dir).is_dir() else None
    app = create_app(model, max_side=args.max_side, ui_dir=ui_dir)
    uvicorn.run(app, host=args.host, port=args.port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clickseg")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic ambiguity corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", default=None, help="flat YAML config file")
    p.add_argument("--data", required=True)
    p.add_argument("--format", default="folder_pngs", choices=["folder_pngs", "coco_json"])
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="run the interactive evaluation protocol")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--format", default="folder_pngs", choices=["folder_pngs", "coco_json"])
    p.add_argument("--thresholds", default="0.85,0.90")
    p.add_argument("--max-clicks", type=int, default=20)
    p.add_argument("--k-list", default="1,2,3,5")
    p.add_argument("--selection-mode", default="product",
                   choices=["product", "iou_only", "conf_only"])
    p.add_argument("--repicks", action="store_true",
                   help="simulate human re-picks when a better proposal exists")
    p.add_argument("--out", default="report.json")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("serve", help="start the annotation service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--max-side", type=int, default=1024)
    p.add_argument("--ui-dir", default=None, help="static frontend build to mount at /")
    p.set_defaults(func=_cmd_serve)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
