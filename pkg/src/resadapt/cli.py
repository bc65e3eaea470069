"""Operator entry point.

Subcommands wire manifest/bank/residual files into the pipeline and emit
reports: a human table on stdout plus machine JSON behind --json.  Every
effective hyperparameter (defaulted or not) is echoed into the report so
a run is reconstructible from the report alone, and every command is
deterministic given its full flag set including --seed.

Exit codes: 0 success, 1 validation error, 2 runtime data error,
3 gradient verification failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .backend import backend_name
from .classifier import predict_labels
from .core import check_tau
from .dg import (
    MultiDomainBank,
    inference_anchors,
    train_common_baseline,
    train_disentangled,
)
from .errors import (
    ConfigInvalid,
    EmptyEvaluation,
    ManifestInvalid,
    MissingLabels,
    ResadaptError,
    ValidationError,
)
from .gradcheck import run_gradcheck
from .io_formats import (
    load_manifest,
    read_dg_shared,
    read_residual,
    write_dg_residual,
    write_residual,
)
from .selftrain import (
    TrainConfig,
    adapted_anchors,
    generate_pseudo_labels,
    train_task_residual,
)
from .synth import SynthConfig, generate, save_problem


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_train_flags(p):
    p.add_argument("--gamma", type=float, default=0.5,
                   help="confidence threshold for pseudo-label retention")
    p.add_argument("--lr", type=float, default=3e-4, help="Adam learning rate")
    p.add_argument("--batch", type=int, default=64, help="batch size")
    p.add_argument("--epochs", type=int, default=5, help="training epochs")
    p.add_argument("--seed", type=int, default=0, help="shuffling seed")
    p.add_argument("--tau", type=float, default=0.01, help="softmax temperature")
    p.add_argument("--refresh-pseudo-labels", action="store_true",
                   help="regenerate pseudo-labels from adapted anchors each epoch")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="resadapt",
                     description="Embedding-space domain adaptation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    z = sub.add_parser("zeroshot", help="evaluate zero-shot accuracy per split")
    z.add_argument("manifest")
    z.add_argument("--domain-prior", action="store_true",
                   help="use the domain-decorated anchor bank")
    z.add_argument("--tau", type=float, default=0.01)
    z.add_argument("--json", dest="json_path", help="write the machine report here")
    z.set_defaults(func=cmd_zeroshot)

    st = sub.add_parser("selftrain",
                        help="self-train a task residual on one target split")
    st.add_argument("manifest")
    st.add_argument("--split", help="target split (defaults when there is only one)")
    st.add_argument("--domain-prior", action="store_true",
                    help="use domain-decorated anchors throughout the run")
    _add_train_flags(st)
    st.add_argument("--out", required=True, help="residual output file")
    st.add_argument("--json", dest="json_path")
    st.set_defaults(func=cmd_selftrain)

    dg = sub.add_parser("dgtrain",
                        help="train on several domains, evaluate on a held-out one")
    dg.add_argument("manifest")
    dg.add_argument("--holdout", required=True, help="split evaluated, never trained on")
    dg.add_argument("--baseline", choices=("common", "disentangled"),
                    default="disentangled")
    _add_train_flags(dg)
    dg.add_argument("--out", required=True,
                    help="residual file (common) or container directory (disentangled)")
    dg.add_argument("--eval-only", action="store_true",
                    help="skip training; evaluate the residual already at --out")
    dg.add_argument("--json", dest="json_path")
    dg.set_defaults(func=cmd_dgtrain)

    sy = sub.add_parser("synth", help="materialize a synthetic problem directory")
    sy.add_argument("--out", required=True)
    sy.add_argument("--classes", type=int, default=5)
    sy.add_argument("--dim", type=int, default=32)
    sy.add_argument("--domains", type=int, default=1)
    sy.add_argument("--per-class", type=int, default=100,
                    help="samples per class per domain")
    sy.add_argument("--class-sep", type=float, default=1.0)
    sy.add_argument("--domain-shift", type=float, default=0.3)
    sy.add_argument("--noise", type=float, default=0.4)
    sy.add_argument("--anchor-noise", type=float, default=0.3)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--json", dest="json_path")
    sy.set_defaults(func=cmd_synth)

    gc = sub.add_parser("gradcheck",
                        help="verify the analytic gradient against finite differences")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--instances", type=int, default=20)
    gc.add_argument("--classes", type=int, default=5, help="max classes per instance")
    gc.add_argument("--dim", type=int, default=16, help="max dimension per instance")
    gc.add_argument("--samples", type=int, default=32, help="max samples per instance")
    gc.add_argument("--step", type=float, default=1e-3)
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.add_argument("--json", dest="json_path")
    gc.set_defaults(func=cmd_gradcheck)

    return parser


def _config_echo(cfg: TrainConfig) -> dict:
    return {
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
        "epochs": cfg.epochs,
        "gamma": cfg.gamma,
        "tau": cfg.tau,
        "adam_beta1": cfg.adam_beta1,
        "adam_beta2": cfg.adam_beta2,
        "adam_epsilon": cfg.adam_epsilon,
        "seed": cfg.seed,
        "refresh_pseudo_labels_each_epoch": cfg.refresh_pseudo_labels_each_epoch,
    }


def _split_accuracy(bank, labels, anchors, tau) -> float:
    if bank.shape[0] == 0:
        raise EmptyEvaluation("split has no rows to evaluate")
    pred = predict_labels(bank, anchors, tau)
    return float((pred == labels).mean()) * 100.0


def cmd_zeroshot(args) -> dict:
    tau = check_tau(args.tau)
    man = load_manifest(args.manifest)
    anchors = man.anchor_set(domain_prior=args.domain_prior)
    method = "domain-prior" if args.domain_prior else "zero-shot"
    rows = []
    for entry in man.splits:
        bank, labels, _ = man.load_split(entry.name)
        if labels is None:
            raise MissingLabels(
                f"split {entry.name!r} has no labels; zeroshot evaluates every split")
        acc = _split_accuracy(bank, labels, anchors, tau)
        rows.append({"name": entry.name, "domain_name": entry.domain_name,
                     "rows": int(bank.shape[0]), "accuracy_pct": acc})
    print(f"method: {method}   tau: {tau:g}   backend: {backend_name()}")
    print(f"{'split':24s} {'domain':16s} {'rows':>7s} {'accuracy%':>10s}")
    for r in rows:
        print(f"{r['name']:24s} {r['domain_name']:16s} {r['rows']:7d} "
              f"{r['accuracy_pct']:10.2f}")
    return {
        "method": method,
        "tau": tau,
        "manifest": str(args.manifest),
        "backend": backend_name(),
        "splits": rows,
    }


def cmd_selftrain(args) -> dict:
    man = load_manifest(args.manifest)
    if args.split is None:
        if len(man.splits) != 1:
            raise ConfigInvalid("--split is required when the manifest has several")
        split = man.splits[0].name
    else:
        split = args.split
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch,
                      epochs=args.epochs, gamma=args.gamma, tau=args.tau,
                      seed=args.seed,
                      refresh_pseudo_labels_each_epoch=args.refresh_pseudo_labels)
    anchors = man.anchor_set(domain_prior=args.domain_prior)
    bank, labels, entry = man.load_split(split)

    pseudo = generate_pseudo_labels(bank, anchors, cfg.tau, cfg.gamma)
    before = None if labels is None else _split_accuracy(bank, labels, anchors, cfg.tau)
    residual, log = train_task_residual(bank, anchors, cfg)
    write_residual(residual, args.out)
    after = None
    if labels is not None:
        after = _split_accuracy(bank, labels, adapted_anchors(anchors, residual),
                                cfg.tau)

    print(f"method: self-training   split: {split}   backend: {backend_name()}")
    print(f"retained {len(pseudo)}/{pseudo.total_candidates} pseudo-labels "
          f"at gamma={cfg.gamma:g}")
    for e in log:
        print(f"epoch {e['epoch']}: retained {e['retained']}, "
              f"mean loss {e['mean_loss']:.6f}")
    if before is not None:
        print(f"accuracy before {before:.2f}%  after {after:.2f}%")
    print(f"residual written to {args.out}")
    return {
        "method": "self-training",
        "config": _config_echo(cfg),
        "domain_prior": bool(args.domain_prior),
        "manifest": str(args.manifest),
        "split": split,
        "domain_name": entry.domain_name,
        "rows": int(bank.shape[0]),
        "retained": len(pseudo),
        "total_candidates": pseudo.total_candidates,
        "accuracy_before_pct": before,
        "accuracy_after_pct": after,
        "epoch_log": log,
        "residual_path": str(args.out),
        "backend": backend_name(),
    }


def cmd_dgtrain(args) -> dict:
    man = load_manifest(args.manifest)
    holdout = man.split(args.holdout)
    train_entries = [s for s in man.splits if s.name != args.holdout]
    if len(train_entries) < 2:
        raise ManifestInvalid(
            f"dgtrain needs >= 2 training domains besides the holdout, "
            f"found {len(train_entries)}")
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch,
                      epochs=args.epochs, gamma=args.gamma, tau=args.tau,
                      seed=args.seed,
                      refresh_pseudo_labels_each_epoch=args.refresh_pseudo_labels)
    anchors = man.anchor_set()
    banks, names = [], []
    for e in train_entries:
        b, _, _ = man.load_split(e.name)
        banks.append(b)
        names.append(e.domain_name)
    ho_bank, ho_labels, _ = man.load_split(args.holdout)
    if ho_labels is None:
        raise MissingLabels(f"holdout split {args.holdout!r} needs labels")
    before = _split_accuracy(ho_bank, ho_labels, anchors, cfg.tau)

    method = "dg-shared" if args.baseline == "disentangled" else "dg-common-baseline"
    log = None
    retained = None
    if args.eval_only:
        if args.baseline == "disentangled":
            eval_anchors = adapted_anchors(anchors, read_dg_shared(args.out))
        else:
            eval_anchors = adapted_anchors(anchors, read_residual(args.out))
    else:
        data = MultiDomainBank(banks, names)
        retained = {
            name: len(generate_pseudo_labels(bank, anchors, cfg.tau, cfg.gamma))
            for name, bank in zip(names, banks)
        }
        if args.baseline == "disentangled":
            res, log = train_disentangled(data, anchors, cfg)
            write_dg_residual(res, args.out)
            eval_anchors = inference_anchors(anchors, res)
        else:
            residual, log = train_common_baseline(data, anchors, cfg)
            write_residual(residual, args.out)
            eval_anchors = adapted_anchors(anchors, residual)
    after = _split_accuracy(ho_bank, ho_labels, eval_anchors, cfg.tau)

    print(f"method: {method}   holdout: {args.holdout}   backend: {backend_name()}")
    if retained is not None:
        counts = "  ".join(f"{n}={c}" for n, c in retained.items())
        print(f"retained per domain: {counts}")
    print(f"holdout accuracy: zero-shot {before:.2f}%  adapted {after:.2f}%")
    return {
        "method": method,
        "config": _config_echo(cfg),
        "manifest": str(args.manifest),
        "holdout": args.holdout,
        "holdout_domain": holdout.domain_name,
        "training_domains": names,
        "retained": retained,
        "eval_only": bool(args.eval_only),
        "holdout_rows": int(ho_bank.shape[0]),
        "accuracy_before_pct": before,
        "accuracy_after_pct": after,
        "log": log,
        "out_path": str(args.out),
        "backend": backend_name(),
    }


def cmd_synth(args) -> dict:
    cfg = SynthConfig(num_classes=args.classes, dim=args.dim,
                      num_domains=args.domains,
                      samples_per_class_per_domain=args.per_class,
                      class_separation=args.class_sep,
                      domain_shift=args.domain_shift, noise=args.noise,
                      anchor_noise=args.anchor_noise, seed=args.seed)
    problem = generate(cfg)
    manifest_path = save_problem(problem, args.out)
    files = sorted(p.name for p in Path(args.out).iterdir())
    print(f"synthetic problem written to {args.out} ({len(files)} files)")
    print(f"manifest: {manifest_path}")
    return {
        "command": "synth",
        "config": {
            "num_classes": cfg.num_classes,
            "dim": cfg.dim,
            "num_domains": cfg.num_domains,
            "samples_per_class_per_domain": cfg.samples_per_class_per_domain,
            "class_separation": cfg.class_separation,
            "domain_shift": cfg.domain_shift,
            "noise": cfg.noise,
            "anchor_noise": cfg.anchor_noise,
            "seed": cfg.seed,
        },
        "out_dir": str(args.out),
        "manifest": str(manifest_path),
        "files": files,
    }


def cmd_gradcheck(args) -> dict:
    report = run_gradcheck(instances=args.instances, seed=args.seed,
                           max_classes=args.classes, max_dim=args.dim,
                           max_samples=args.samples, step=args.step,
                           tolerance=args.tolerance)
    print(f"gradcheck: {args.instances} instances, "
          f"max relative error {report['max_rel_err']:.3g} "
          f"(tolerance {args.tolerance:g})")
    return {
        "command": "gradcheck",
        "seed": args.seed,
        "instances": args.instances,
        "max_classes": args.classes,
        "max_dim": args.dim,
        "max_samples": args.samples,
        "step": args.step,
        "tolerance": args.tolerance,
        "max_rel_err": report["max_rel_err"],
        "worst": report["worst"],
        "passed": report["passed"],
        "backend": backend_name(),
    }


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        report = args.func(args)
        if getattr(args, "json_path", None):
            payload = json.dumps(report, sort_keys=True, indent=2) + "\n"
            Path(args.json_path).write_text(payload)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ResadaptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    return 0
