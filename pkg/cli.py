"""Command-line harness.

Exit codes: 0 success, 2 invalid arguments or configuration, 3 I/O failure,
4 numerical failure.
"""

from pathlib import Path
from typing import Any, Callable, Dict, List, Optional
import argparse
import logging
import sys

from app.config import build_run_config, load_config_file, settings, setup_logging
from app.models import RunConfig, ThresholdConfig

logger = logging.getLogger("cli")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

BASELINE_METHODS = {"otsu": "otsu", "local": "local_mean", "local_mean": "local_mean"}


def _run_config(args: argparse.Namespace, overrides: Dict[str, Any]) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else None
    return build_run_config(getattr(args, "preset", None), file_values, overrides)


def cmd_synth(args: argparse.Namespace) -> int:
    from app.services.synth_service import SynthService

    run = _run_config(args, {"scene.size": args.size, "scene.seed": args.seed})
    manifest = SynthService.generate_dataset(run.scene, args.count, args.out)
    print(manifest)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    from app.services.training_service import TrainingService

    overrides = {"training.iterations": args.iters, "seed": args.seed}
    if args.no_aux:
        overrides["network.aux_loss_weight"] = 0.0
    run = _run_config(args, overrides)
    data_dir = args.data or run.data_dir
    if not data_dir:
        raise ValueError("no dataset given (--data or data_dir in the config file)")
    result = TrainingService.train(
        run, data_dir, checkpoint=args.out, loss_log=args.loss_log, augment=not args.no_augment
    )
    print(result.checkpoint)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    from app.services.evaluation_service import EvaluationService
    from app.services.training_service import TrainingService
    from app.storage.checkpoint import CheckpointStore

    if bool(args.ckpt) == bool(args.pred):
        raise ValueError("give exactly one of --ckpt or --pred")
    run = _run_config(args, {})
    data_dir = args.data or run.data_dir
    if not data_dir:
        raise ValueError("no dataset given (--data or data_dir in the config file)")
    if args.pred:
        report = EvaluationService.evaluate_directory(args.pred, data_dir, args.region)
    else:
        net = CheckpointStore.load(args.ckpt)
        report = EvaluationService.evaluate_network(
            net, data_dir, args.region, TrainingService.render_mode(run)
        )
    print(EvaluationService.write_report(report, args.report))
    return EXIT_OK


def cmd_baseline(args: argparse.Namespace) -> int:
    from app.services.evaluation_service import EvaluationService

    run = _run_config(args, {})
    data_dir = args.data or run.data_dir
    if not data_dir:
        raise ValueError("no dataset given (--data or data_dir in the config file)")
    method = BASELINE_METHODS[args.method]
    cfg = ThresholdConfig(method=method, window=args.window, offset=args.offset)
    masks_dir = args.masks or Path(args.report).parent / f"{method}_masks"
    report = EvaluationService.run_baseline(data_dir, cfg, masks_dir, args.region)
    print(EvaluationService.write_report(report, args.report))
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    from app.services.inference_service import InferenceService
    from app.services.training_service import TrainingService
    from app.storage.checkpoint import CheckpointStore
    from app.storage.dataset import read_gray

    run = _run_config(args, {})
    net = CheckpointStore.load(args.ckpt)
    image = read_gray(args.image)
    written = InferenceService.render_to_dir(net, image, args.out, TrainingService.render_mode(run))
    for path in written.values():
        print(path)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    if args.ckpt:
        settings.checkpoint_path = args.ckpt
    from main import app

    uvicorn.run(app, host=args.host or settings.host, port=args.port or settings.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svsnet", description="SVS-net desk pipeline")
    parser.add_argument("--log-level", default=None, help="override LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler: Callable[[argparse.Namespace], int], help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="key=value or JSON run configuration")
        p.set_defaults(handler=handler)
        return p

    p = command("synth", cmd_synth, "generate a synthetic dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--count", required=True, type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--seed", type=int)

    p = command("train", cmd_train, "train a network on a dataset")
    p.add_argument("--data", type=Path)
    p.add_argument("--preset", choices=("desk", "paper"))
    p.add_argument("--iters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, type=Path, help="checkpoint path")
    p.add_argument("--loss-log", type=Path, help="defaults to <out>.loss.csv")
    p.add_argument("--no-aux", action="store_true", help="drop the backbone auxiliary loss")
    p.add_argument("--no-augment", action="store_true")

    p = command("eval", cmd_eval, "evaluate a checkpoint or a mask directory")
    p.add_argument("--data", type=Path)
    p.add_argument("--ckpt", type=Path)
    p.add_argument("--pred", type=Path, help="directory of NNNN.png masks (0/255)")
    p.add_argument("--report", required=True, type=Path)
    p.add_argument("--region", choices=("np",))

    p = command("baseline", cmd_baseline, "threshold the test split and evaluate it")
    p.add_argument("--data", type=Path)
    p.add_argument("--method", required=True, choices=sorted(BASELINE_METHODS))
    p.add_argument("--report", required=True, type=Path)
    p.add_argument("--masks", type=Path, help="defaults to <report dir>/<method>_masks")
    p.add_argument("--window", type=int, default=15)
    p.add_argument("--offset", type=int, default=5)
    p.add_argument("--region", choices=("np",))

    p = command("render", cmd_render, "write backbone, attention, final and mask PNGs")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)

    p = command("serve", cmd_serve, "start the HTTP inference service")
    p.add_argument("--ckpt", type=str)
    p.add_argument("--host", type=str)
    p.add_argument("--port", type=int)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.log_level:
        settings.log_level = args.log_level
    setup_logging()
    try:
        return args.handler(args)
    except FloatingPointError as e:
        print(f"error: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
