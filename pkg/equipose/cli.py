"""
Command Line Interface
gen, pretrain, refine, infer, eval, gradcheck and selftest

Usage:
    python run_equipose.py gen --out data/toy --seed 7
    python run_equipose.py pretrain --data data/toy --out runs/toy --config run.json
    python run_equipose.py refine --data data/toy --out runs/toy
    python run_equipose.py infer --data data/toy --out runs/toy
    python run_equipose.py eval --data data/toy --out runs/toy
    python run_equipose.py selftest

Exit codes: 0 success, 1 failure, 2 bad usage.
"""

import argparse
from pathlib import Path
from typing import List, Optional

from .config import EQUIPOSE_DATA_DIR, apply_runtime_settings
from .database.dataset_store import load_dataset
from .database.file_store import atomic_write_text
from .models import ModelConfig, RunConfig, ScheduleConfig, SynthSpec

EVAL_CSV = "eval.csv"
EVAL_SUMMARY = "summary.json"
EVAL_XLSX = "eval.xlsx"
DEFAULT_RUN_DIR = "runs/default"


def load_run_config(path: Optional[str], seed: Optional[int] = None) -> RunConfig:
    """RunConfig from a JSON file (desk-scale defaults when omitted); --seed overrides train.seed."""
    config = RunConfig() if path is None else RunConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))
    if seed is not None:
        config = config.model_copy(update={"train": config.train.model_copy(update={"seed": seed})})
    return config


def toy_gradcheck_config() -> RunConfig:
    """Smallest assembled model: d=8, N=32, T=20, smooth activation."""
    return RunConfig(
        model=ModelConfig(feature_dim=8, heads=2, group="tetrahedral", n_points=32, n_observed=32,
                          kernel_size=8, max_neighbors=8, activation="silu"),
        schedule=ScheduleConfig(T=20),
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Seed (overrides the config)")
    common.add_argument("--config", default=None, help="Run configuration JSON")
    common.add_argument("--deterministic", action="store_true", help="Force deterministic torch kernels")
    common.add_argument("--out", default=None, help="Output directory")

    parser = argparse.ArgumentParser(prog="equipose", description="Category-level shape, pose and size estimation")
    sub = parser.add_subparsers(dest="command")

    gen = sub.add_parser("gen", parents=[common], help="Generate a synthetic category dataset")
    gen.add_argument("--categories", nargs="+", default=["box", "cylinder", "bottle"])
    gen.add_argument("--instances", type=int, default=8, help="Instances per category")
    gen.add_argument("--points", type=int, default=128, help="Points per canonical shape")
    gen.add_argument("--noise", type=float, default=0.0, help="Observation noise standard deviation")
    gen.add_argument("--full-visibility", action="store_true", help="Skip hidden point removal")
    gen.add_argument("--test-fraction", type=float, default=0.25)

    for name, text in (("pretrain", "Pretrain the prior-conditioned denoiser and heads"),
                       ("refine", "Refine through the control branch")):
        phase = sub.add_parser(name, parents=[common], help=text)
        phase.add_argument("--data", default=EQUIPOSE_DATA_DIR, help="Dataset directory")
        if name == "refine":
            phase.add_argument("--base", default=None, help="Pretrained checkpoint (default <out>/pretrain)")

    infer = sub.add_parser("infer", parents=[common], help="Reconstruct shapes and estimate poses")
    infer.add_argument("--data", default=EQUIPOSE_DATA_DIR, help="Dataset directory")
    infer.add_argument("--checkpoint", default=None, help="Checkpoint (default <out>/refine)")
    infer.add_argument("--split", default="test", choices=["train", "test", "all"])

    evaluate = sub.add_parser("eval", parents=[common], help="Score predictions against ground truth")
    evaluate.add_argument("--data", default=EQUIPOSE_DATA_DIR, help="Dataset directory")
    evaluate.add_argument("--predictions", default=None, help="Predictions directory (default <out>)")
    evaluate.add_argument("--no-symmetry", action="store_true", help="Ignore category symmetry axes")

    gradcheck = sub.add_parser("gradcheck", parents=[common], help="Finite-difference gradient check")
    gradcheck.add_argument("--samples", type=int, default=2, help="Entries checked per tensor (0 = all)")
    gradcheck.add_argument("--tol", type=float, default=1e-4)

    sub.add_parser("selftest", parents=[common], help="Run the invariant suite")
    return parser


# ----------------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------------

def cmd_gen(args: argparse.Namespace) -> int:
    from .services.synth_dataset import synth_dataset

    spec = SynthSpec(
        categories=args.categories,
        instances_per_category=args.instances,
        n_points=args.points,
        noise=args.noise,
        full_visibility=args.full_visibility,
        test_fraction=args.test_fraction,
        seed=0 if args.seed is None else args.seed,
    )
    synth_dataset(spec, args.out or EQUIPOSE_DATA_DIR)
    return 0


def cmd_pretrain(args: argparse.Namespace) -> int:
    from .services.training_service import pretrain

    config = load_run_config(args.config, args.seed)
    pretrain(load_dataset(args.data), config, args.out or DEFAULT_RUN_DIR)
    return 0


def cmd_refine(args: argparse.Namespace) -> int:
    from .services.training_service import refine

    config = load_run_config(args.config, args.seed)
    out = Path(args.out or DEFAULT_RUN_DIR)
    refine(args.base or out / "pretrain", load_dataset(args.data), config, out)
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    from .services.inference_service import run_inference

    out = Path(args.out or DEFAULT_RUN_DIR)
    run_inference(args.checkpoint or out / "refine", load_dataset(args.data), out,
                  seed=0 if args.seed is None else args.seed,
                  split=None if args.split == "all" else args.split)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from .services.evaluation_service import build_jobs, evaluate_many, summarize
    from .services.inference_service import read_predictions
    from .services.report_generator import write_evaluation_excel, write_records_csv, write_summary_json

    out = Path(args.out or DEFAULT_RUN_DIR)
    predictions, shapes = read_predictions(args.predictions or out)
    records = evaluate_many(build_jobs(predictions, load_dataset(args.data), shapes, not args.no_symmetry))
    summary = summarize(records)
    write_records_csv(records, out / EVAL_CSV)
    write_summary_json(summary, out / EVAL_SUMMARY)
    write_evaluation_excel(records, summary, out / EVAL_XLSX)
    print("SUCCESS: [EVAL] " + ", ".join(f"{key}={value:.4g}" for key, value in summary.items()))
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    from .ai.network import build_model
    from .services.gradcheck_service import grad_check, toy_loss

    config = toy_gradcheck_config() if args.config is None else load_run_config(args.config)
    seed = 0 if args.seed is None else args.seed
    model = build_model(config.model, seed)
    report = grad_check(model, toy_loss(model, config, seed), tol=args.tol, samples_per_tensor=args.samples,
                        seed=seed)
    for check in report.failures():
        print(f"ERROR: [GRADCHECK] {check.name}: relative error {check.max_rel_error:.3e}")
    if args.out:
        atomic_write_text(Path(args.out) / "gradcheck.json", report.model_dump_json(indent=2) + "\n")
    return 0 if report.passed else 1


def cmd_selftest(args: argparse.Namespace) -> int:
    from .services.selftest import run_selftest

    results = run_selftest()
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"ERROR: [SELFTEST] failed: {', '.join(failed)}")
        return 1
    print(f"SUCCESS: [SELFTEST] all {len(results)} suites passed")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "pretrain": cmd_pretrain,
    "refine": cmd_refine,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "selftest": cmd_selftest,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    if args.command is None:
        parser.print_usage()
        return 2
    try:
        apply_runtime_settings(args.deterministic)
        return COMMANDS[args.command](args)
    except Exception as e:
        print(f"ERROR: [CLI] {args.command} failed: {e}")
        return 1
