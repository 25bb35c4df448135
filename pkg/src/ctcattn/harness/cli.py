"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..data import SyntheticTaskConfig, Vocab, generate_synthetic, read_dataset, write_dataset
from ..errors import FormatError, InvalidArgument
from ..model import ModelConfig
from ..probe import layer_unique_token_stats, render_report
from .checkpoint import load_checkpoint
from .config import TrainConfig, build, check_keys, read_config_file
from .gradsuite import run_gradient_suite
from .training import evaluate, probe_dataset, train

log = logging.getLogger("ctcattn")

GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key=value config file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--lambda", dest="lam", type=float, help="regularization weight")
    common.add_argument("--alpha", type=float, help="CTC weight in the joint loss")
    common.add_argument("--checkpoint", metavar="PATH")
    common.add_argument("--data", metavar="PATH")
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--epochs", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="ctcattn", description="Joint CTC/attention toy model with a CTC probe of attention heads.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset file (--data)")
    sub.add_parser("train", parents=[common], help="train on --data, write --checkpoint")
    sub.add_parser("eval", parents=[common], help="greedy-decode --data with --checkpoint, report TER")
    sub.add_parser("probe", parents=[common], help="write one probe TSV per utterance into --out")
    sub.add_parser("stats", parents=[common], help="per-layer unique-token statistics")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the joint loss")
    return p


def _require(args, *names):
    missing = [f"--{n}" for n in names if getattr(args, n) is None]
    if missing:
        need = " ".join(f"--{n} {n.upper()}" for n in names)
        raise UsageError(
            f"usage: ctcattn {args.command} {need} [options]\n"
            f"ctcattn {args.command}: error: missing required option(s) {', '.join(missing)}"
        )


def _values(args) -> dict:
    values = read_config_file(args.config) if args.config else {}
    check_keys(values)
    return values


def _cmd_synth(args, values):
    _require(args, "data")
    cfg = build(SyntheticTaskConfig, values, seed=args.seed)
    ds = generate_synthetic(cfg)
    write_dataset(ds, args.data)
    print(f"wrote {len(ds)} utterances to {args.data}")


def _cmd_train(args, values):
    _require(args, "data", "checkpoint")
    ds = read_dataset(args.data)
    mcfg = build(ModelConfig, values, vocab_size=ds.vocab.size, feature_dim=ds.feature_dim)
    tcfg = build(TrainConfig, values, seed=args.seed, lam=args.lam, alpha=args.alpha,
                 epochs=args.epochs, checkpoint_path=args.checkpoint)
    lines = ["epoch\tloss\tloss_per_token\tctc\tce\treg"]

    def report(r):
        lines.append(f"{r.epoch}\t{r.loss:.6f}\t{r.loss_per_token:.6f}\t{r.ctc:.6f}\t{r.ce:.6f}\t{r.reg:.6f}")
        print(lines[-1], flush=True)

    print(lines[0])
    train(ds, mcfg, tcfg, on_epoch=report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "loss_history.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load(args):
    _require(args, "checkpoint", "data")
    ds = read_dataset(args.data)
    model = load_checkpoint(args.checkpoint).build_model()
    return ds, model


def _cmd_eval(args, values):
    ds, model = _load(args)
    res = evaluate(ds, model)
    rows = ["id\tter\thyp\tref"]
    for uid, hyp, ref, ter in res.per_utterance:
        rows.append(f"{uid}\t{ter:.6f}\t{' '.join(map(str, hyp))}\t{' '.join(map(str, ref))}")
    rows.append(f"mean\t{res.mean_ter:.6f}\t\t")
    text = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "eval.tsv").write_text(text, encoding="utf-8")
    print(f"mean TER {res.mean_ter:.4f} over {len(res.per_utterance)} utterances")


def _cmd_probe(args, values):
    _require(args, "out")
    ds, model = _load(args)
    vocab = Vocab(ds.vocab.size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    threshold = float(values.get("posterior_threshold", 0.0))
    for rep in probe_dataset(ds, model):
        text = render_report(rep, threshold, vocab.name)
        (out / f"{rep.utterance_id}.tsv").write_bytes(text.encode("utf-8"))
    print(f"wrote {len(ds)} reports to {out}")


def stats_table(stats) -> str:
    rows = ["layer\tmean_unique\tstd_unique"]
    rows += [f"{s.layer}\t{s.mean:.4f}\t{s.std:.4f}" for s in stats]
    return "\n".join(rows) + "\n"


def _cmd_stats(args, values):
    ds, model = _load(args)
    text = stats_table(layer_unique_token_stats(probe_dataset(ds, model)))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "stats.tsv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _cmd_gradcheck(args, values):
    tcfg = build(TrainConfig, values, seed=args.seed, lam=args.lam, alpha=args.alpha)
    lam = tcfg.lam if args.lam is not None or "lam" in values else 0.1
    errs = run_gradient_suite(seed=tcfg.seed, alpha=tcfg.alpha, lam=lam)
    for name, err in errs.items():
        print(f"{name}\t{err:.3e}")
    worst = max(errs.values())
    ok = worst <= GRADCHECK_TOL
    print(f"max relative error {worst:.3e} ({'PASS' if ok else 'FAIL'} at {GRADCHECK_TOL:g})")
    if not ok:
        raise RuntimeError("gradient check failed")


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "probe": _cmd_probe,
    "stats": _cmd_stats,
    "gradcheck": _cmd_gradcheck,
}


def cli_dispatch(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        values = _values(args)
        _COMMANDS[args.command](args, values)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else 1
    except (InvalidArgument, FormatError, OSError, RuntimeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
