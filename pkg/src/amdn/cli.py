"""Command-line front end.

Subcommands::

    amdn synth   --out DATA                 synthetic train/ and test/ splits
    amdn train   --data DATA/train --run RUN
    amdn score   --data DATA/test  --run RUN
    amdn eval    --data DATA/test  --run RUN
    amdn nu-grid --data DATA/train --run RUN [--test DATA/test]
    amdn flow    --data ROOT                write Horn-Schunck .flo files

Every subcommand accepts ``--config FILE``, ``--seed N``, ``--flow {hs,flo-dir}``
and ``--paper-arch``. A run directory holds ``model/`` (the bundle),
``scores/``, ``eval/`` and an append-only ``run.log`` that echoes the resolved
configuration of every invocation.
"""

import argparse
import logging
import sys
import warnings
from pathlib import Path

from . import __version__
from . import config as config_mod
from . import fusion, pipeline, synth
from .errors import AmdnError

log = logging.getLogger("amdn")


def _common(p):
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--flow", choices=("hs", "flo-dir"), help="optical flow source")
    p.add_argument("--paper-arch", action="store_true", help="published layer widths and optimiser settings")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser():
    parser = argparse.ArgumentParser(prog="amdn", description="Video anomaly detection with SDAE features, "
                                     "one-class SVM scoring and late fusion.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    _common(p)

    p = sub.add_parser("train", help="train the three pipelines and the fusion weights")
    p.add_argument("--data", type=Path, required=True, help="training split root")
    p.add_argument("--run", type=Path, required=True, help="run directory")
    _common(p)

    p = sub.add_parser("score", help="score a test split")
    p.add_argument("--data", type=Path, required=True, help="test split root")
    p.add_argument("--run", type=Path, required=True)
    _common(p)

    p = sub.add_parser("eval", help="frame- and pixel-level ROC of scored frames")
    p.add_argument("--data", type=Path, required=True, help="test split root with ground truth")
    p.add_argument("--run", type=Path, required=True)
    _common(p)

    p = sub.add_parser("nu-grid", help="one-class SVM nu sweep on trained SDAE features")
    p.add_argument("--data", type=Path, required=True, help="training split root")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--test", type=Path, help="test split for per-nu frame AUC")
    p.add_argument("--nu", type=float, nargs="+", help="nu values (default: eval.nu_grid)")
    _common(p)

    p = sub.add_parser("flow", help="precompute Horn-Schunck flow as .flo files")
    p.add_argument("--data", type=Path, required=True, help="dataset split root")
    _common(p)
    return parser


def resolve_config(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.flow is not None:
        overrides["flow"] = {"method": args.flow}
    return config_mod.build(args.config, paper_arch=args.paper_arch, overrides=overrides)


def _setup_logging(args, log_path=None):
    root = logging.getLogger("amdn")
    root.setLevel(logging.DEBUG)
    for h in list(root.handlers):
        root.removeHandler(h)
        h.close()
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.INFO if args.verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    root.addHandler(console)
    if log_path is not None:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        fh = logging.FileHandler(log_path, mode="a")
        fh.setLevel(logging.INFO)
        fh.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
        root.addHandler(fh)
    logging.captureWarnings(True)
    wlog = logging.getLogger("py.warnings")
    wlog.handlers = root.handlers[:]
    wlog.propagate = False


def _echo_config(args, cfg):
    log.info("command: %s", " ".join(sys.argv[1:]) or args.command)
    from . import _kernels

    log.info("kernel backend: %s", _kernels.backend())
    log.info("resolved configuration:\n%s", config_mod.dump(cfg))


def cmd_synth(args, cfg):
    s = cfg["synth"]
    prevalence = synth.generate(args.out, cfg["seed"], s["train_clips"], s["test_clips"], s["frames"],
                                s["width"], s["height"], s["anomaly_rate"])
    print(f"wrote {args.out}/train and {args.out}/test (test anomaly prevalence {prevalence:.3f})")


def cmd_train(args, cfg):
    bundle = pipeline.train_bundle(args.data, cfg)
    bundle.save(args.run / "model")
    (args.run / "config.yaml").write_text(config_mod.dump(cfg))
    print(f"alpha (A, M, J) = {fusion.format_alpha(bundle.models.fusion.alpha)}")
    print(f"eta = {bundle.eta:.6g}")


def cmd_score(args, cfg):
    bundle = pipeline.Bundle.load(args.run / "model")
    index = pipeline.score_split(bundle, args.data, cfg, args.run / "scores")
    n = sum(c["frames"] for c in index["clips"])
    print(f"scored {n} frames in {len(index['clips'])} clips -> {args.run / 'scores'}")


def cmd_eval(args, cfg):
    weights = fusion.load(args.run / "model" / "fusion.json")
    summary = pipeline.evaluate(args.run / "scores", args.data, args.run / "eval", weights, cfg["eval"]["overlap"])
    print(f"frame-level AUC {summary['frame']['auc']:.3f} EER {summary['frame']['eer']:.3f}")
    if "pixel" in summary:
        print(f"pixel-level AUC {summary['pixel']['auc']:.3f} EER {summary['pixel']['eer']:.3f}")
    if "pipelines" in summary:
        print("single-pipeline AUC " + " ".join(f"{k} {v:.3f}" for k, v in summary["pipelines"].items()))
    print(f"alpha (A, M, J) = {fusion.format_alpha(weights.alpha)}")


def cmd_nu_grid(args, cfg):
    bundle = pipeline.Bundle.load(args.run / "model")
    nus = args.nu or cfg["eval"]["nu_grid"]
    rows = pipeline.nu_grid(bundle, args.data, cfg, nus, args.test)
    out = args.run / "nu_grid.csv"
    pipeline.write_nu_grid(out, rows)
    for r in rows:
        auc = "" if r["frame_auc"] is None else f" auc {r['frame_auc']:.3f}"
        print(f"{r['pipeline']} nu={r['nu']:g} sv {r['sv_fraction']:.3f} outliers {r['outlier_fraction']:.3f}{auc}")


def cmd_flow(args, cfg):
    n = pipeline.export_flows(args.data, cfg)
    print(f"wrote {n} flow fields under {args.data}")


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "score": cmd_score,
    "eval": cmd_eval,
    "nu-grid": cmd_nu_grid,
    "flow": cmd_flow,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        run_dir = getattr(args, "run", None)
        _setup_logging(args, run_dir / "run.log" if run_dir is not None else None)
        _echo_config(args, cfg)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            COMMANDS[args.command](args, cfg)
    except AmdnError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
