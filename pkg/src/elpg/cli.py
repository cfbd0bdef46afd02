"""Batch command line: ``elpg {synth,extract,train,ablate,flops}``.

Exit codes: 0 success, 2 configuration error, 3 data error (including
partial extraction failure), 4 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .data_io import CohortConfig, generate_synthetic_cohort, load_cohort
from .errors import ConfigError, ElpgError, FormatError, ValidationError
from .model import ModelConfig, Montage, flops_report
from .training import ABLATIONS, AblationSpec, TrainConfig, cross_validate, run_ablation, write_results

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("elpg")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_CONFIG)


def _positive_float(flag):
    def parse(text):
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} expects a number, got {text!r}") from None
        if v <= 0:
            raise argparse.ArgumentTypeError(f"{flag} must be positive, got {text!r}")
        return v

    return parse


def _add_training_flags(p):
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--max-epochs", type=int, default=80)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=_positive_float("--lr"), default=1e-3)
    p.add_argument("--kl-beta", type=float, default=1e-3)
    p.add_argument("--kl-p0", type=float, default=0.2)
    p.add_argument("--no-prior", action="store_true", help="force the prior gate closed")
    p.add_argument("--no-learnable-adjacency", action="store_true", help="freeze the edge mask at 0.5")
    p.add_argument("--no-mi", action="store_true", help="zero the MI features")
    p.add_argument("--no-attention-mi", action="store_true", help="drop channel-band attention and MI")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="elpg", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, type=Path, help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1, help="folds trained concurrently")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic cohort")
    s.add_argument("--n-per-class", type=int, default=20)
    s.add_argument("--channels", type=int, default=16)
    s.add_argument("--fs", type=_positive_float("--fs"), default=250.0)
    s.add_argument("--duration", type=_positive_float("--duration"), default=60.0)
    s.add_argument("--alpha-power-ratio", type=float, default=3.0)
    s.add_argument("--coupling-delta", type=float, default=0.3)
    s.add_argument("--noise-std", type=float, default=0.1)

    e = sub.add_parser("extract", parents=[common], help="preprocess and cache features")
    e.add_argument("--manifest", required=True, type=Path)

    for name, text in (("train", "subject-wise cross-validation"), ("ablate", "ablation table")):
        _add_training_flags(sub.add_parser(name, parents=[common], help=text))

    f = sub.add_parser("flops", help="attention and GCN operation counts")
    f.add_argument("--n", type=int, default=128)
    f.add_argument("--d", type=int, default=64)
    f.add_argument("--keep-frac", type=float, default=0.25)
    return parser


def _train_config(args) -> TrainConfig:
    return TrainConfig(lr=args.lr, batch_size=args.batch_size, patience=args.patience,
                       max_epochs=args.max_epochs, seed=args.seed, kl_beta=args.kl_beta,
                       kl_p0=args.kl_p0, folds=args.folds)


def _load(args):
    cohort = load_cohort(args.manifest, cache_dir=args.out / "cache")
    if cohort.failures:
        raise ValidationError(f"{len(cohort.failures)} subject(s) failed to load: {sorted(cohort.failures)}")
    n = len(cohort.layout.coords)
    return cohort, Montage(cohort.layout.coords, cohort.parcellation), ModelConfig(n_channels=n)


def cmd_synth(args) -> int:
    cfg = CohortConfig(n_per_class=args.n_per_class, n_channels=args.channels, fs=args.fs,
                       duration_sec=args.duration, alpha_power_ratio=args.alpha_power_ratio,
                       coupling_delta=args.coupling_delta, noise_std=args.noise_std, seed=args.seed)
    try:
        cfg.validate()
    except ConfigError as exc:
        if "fs" in str(exc):
            raise ConfigError(f"--fs: {exc}") from None
        raise
    print(generate_synthetic_cohort(cfg, args.out))
    return EXIT_OK


def cmd_extract(args) -> int:
    cohort = load_cohort(args.manifest, cache_dir=args.out / "cache")
    for s in cohort.subjects:
        print(f"{s.subject_id}: T={s.de.shape[0]} windows")
    for sid, err in cohort.failures.items():
        print(f"{sid}: FAILED ({err})", file=sys.stderr)
    print(f"{len(cohort.subjects)} ok, {len(cohort.failures)} failed, {cohort.cache_hits} cache hits")
    return EXIT_DATA if cohort.failures else EXIT_OK


def _variant(args) -> AblationSpec:
    return AblationSpec("cli", disable_prior_gate=args.no_prior, freeze_edge_mask=args.no_learnable_adjacency,
                        drop_mi=args.no_mi, drop_attention_and_mi=args.no_attention_mi)


def cmd_train(args) -> int:
    cfg = _train_config(args)
    cohort, montage, model_cfg = _load(args)
    spec = _variant(args)
    name = "ELPG-DTFS" if spec == AblationSpec("cli") else "ELPG-DTFS (ablated)"
    report = cross_validate(cohort.subjects, cfg, model_cfg=spec.apply(model_cfg), montage=montage, jobs=args.jobs)
    txt, _ = write_results({name: report}, args.out, "results")
    print(txt.read_text(), end="")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _train_config(args)
    cohort, montage, model_cfg = _load(args)
    base = _variant(args).apply(model_cfg)
    table = run_ablation(cohort.subjects, cfg, base, montage, ABLATIONS, jobs=args.jobs)
    txt, _ = write_results(table, args.out, "ablation")
    print(txt.read_text(), end="")
    return EXIT_OK


def cmd_flops(args) -> int:
    attn, gcn = flops_report(args.n, args.d, args.keep_frac)
    print(f"attention_flops {attn}")
    print(f"gcn_flops {gcn}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "extract": cmd_extract, "train": cmd_train, "ablate": cmd_ablate,
            "flops": cmd_flops}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("ELPG_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValidationError, FormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ElpgError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
