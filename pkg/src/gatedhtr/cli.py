"""Command-line interface: ``gatedhtr {preprocess,train,transcribe,evaluate}``.

Exit codes: 0 success, 2 input error, 3 numeric divergence, 4 artifact
mismatch (checkpoint / bundle / charset disagree).
"""

import argparse
import contextlib
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .config import KEYS, RunConfig, fmt_value
from .errors import CharsetMismatchError, HTRError, NumericError
from .metrics import evaluate_pairs, write_report
from .model import HTRModel
from .pipeline.bundle import build_bundles, read_bundle
from .pipeline.charset import Charset
from .pipeline.image import load_image, preprocess, to_input
from .training import evaluate, train

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_MISMATCH = 0, 2, 3, 4


def _epilog():
    defaults = RunConfig()
    lines = ["configuration keys (flat 'key = value' file, '#' comments):"]
    for key, (_, text) in KEYS.items():
        lines.append(f"  {key:<17} {text} [default: {fmt_value(getattr(defaults, key))}]")
    lines.append("")
    lines.append("exit codes: 0 ok, 2 input error, 3 numeric divergence, 4 artifact/charset mismatch")
    return "\n".join(lines)


def _common(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="PATH", default=default, help="run configuration file")
    parser.add_argument("--seed", type=int, metavar="N", default=default, help="override the seed key")
    parser.add_argument("--threads", type=int, metavar="N", default=default,
                        help="cap worker threads of the numerical libraries")
    parser.add_argument("--dump-config", action="store_true", default=default,
                        help="print the effective configuration and exit")


def _decode_flags(parser):
    g = parser.add_mutually_exclusive_group()
    g.add_argument("--beam", type=int, metavar="K", help="prefix beam search of width K")
    g.add_argument("--greedy", action="store_true", help="best-path decoding")


def build_parser():
    p = argparse.ArgumentParser(
        prog="gatedhtr", description="Offline handwritten text recognition: gated CNN, attention, BiGRU, CTC.",
        epilog=_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    _common(p, suppress=False)
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    sp = sub.add_parser("preprocess", help="build train/valid/test bundles from a corpus directory")
    _common(sp, suppress=True)
    sp.add_argument("corpus_dir", help="directory with labels.tsv and one image per id")
    sp.add_argument("out_dir", help="where <split>.htrb files are written")

    sp = sub.add_parser("train", help="train a model on preprocessed bundles")
    _common(sp, suppress=True)
    sp.add_argument("bundles", help="directory holding train.htrb and valid.htrb")
    sp.add_argument("--out", default="run", help="output directory for checkpoints and the log (default: run)")
    sp.add_argument("--resume", metavar="CKPT", help="continue from a last.htrf checkpoint")

    sp = sub.add_parser("transcribe", help="transcribe image files")
    _common(sp, suppress=True)
    sp.add_argument("checkpoint")
    sp.add_argument("images", nargs="+")
    _decode_flags(sp)
    sp.add_argument("--topk", type=int, metavar="K", default=0,
                    help="also print the K most likely symbols at every time step")

    sp = sub.add_parser("evaluate", help="score a checkpoint on a bundle")
    _common(sp, suppress=True)
    sp.add_argument("checkpoint", help="model checkpoint ('-' allowed with --oracle)")
    sp.add_argument("bundle")
    sp.add_argument("--report", metavar="PATH", help="write the per-sample TSV report here")
    sp.add_argument("--oracle", action="store_true",
                    help="self-test: use the references as hypotheses (all rates must be 0)")
    _decode_flags(sp)
    return p


def resolve_config(args, base=None):
    cfg = base or RunConfig()
    if getattr(args, "config", None):
        cfg = RunConfig.load(args.config, cfg)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        changes["threads"] = args.threads
    return cfg.replace(**changes) if changes else cfg


def _beam(args, cfg):
    if getattr(args, "greedy", False):
        return None
    if getattr(args, "beam", None) is not None:
        return args.beam
    return cfg.beam_width


def _charset(cfg):
    if cfg.charset == "default":
        return Charset.default()
    if cfg.charset == "data":
        return None
    return Charset.from_file(cfg.charset)


def cmd_preprocess(args, out=sys.stdout):
    cfg = resolve_config(args)
    paths = build_bundles(
        args.corpus_dir, args.out_dir, charset=_charset(cfg), fractions=cfg.splits, seed=cfg.seed,
        disjoint=cfg.word_disjoint or None, target=(cfg.input_width, cfg.input_height),
        illumination=cfg.illumination, deslant=cfg.deslant)
    first = read_bundle(next(iter(paths.values())))
    cs = first.charset
    print(f"charset: {len(cs)} symbols (hash {cs.hash}): {cs.to_text()}", file=out)
    total = 0
    for name, path in paths.items():
        n = len(read_bundle(path))
        total += n
        print(f"{name}\t{n}\t{path}", file=out)
    print(f"total\t{total}", file=out)
    return EXIT_OK


def cmd_train(args, out=sys.stdout):
    base = None
    if args.resume and not args.config:
        base, _ = HTRModel.load(args.resume)
        base = base.cfg
    cfg = resolve_config(args, base)
    bdir = Path(args.bundles)
    tr, va = read_bundle(bdir / "train.htrb"), read_bundle(bdir / "valid.htrb")
    print(f"RMSProp lr {cfg.learning_rate:g}, batch {cfg.batch_size}, patience {cfg.patience}, "
          f"rho {cfg.rho:g}, eps {cfg.epsilon:g}, max_epochs {cfg.max_epochs}, seed {cfg.seed}, "
          f"dtype {cfg.dtype}", file=out)
    print(f"train {len(tr)} samples, valid {len(va)} samples, output {args.out}", file=out)

    def report(epoch, tl, vl, improved):
        print(f"epoch {epoch}\ttrain_loss {tl:.4f}\tval_loss {vl:.4f}{'  *' if improved else ''}",
              file=out, flush=True)

    res = train(cfg, tr, va, out_dir=args.out, resume=args.resume, on_epoch=report)
    why = "early stop" if res.stopped_early else "epoch cap"
    print(f"{why}: best epoch {res.best_epoch}, val_loss {res.best_val_loss:.4f}, checkpoint {res.checkpoint}",
          file=out)
    return EXIT_OK


def _format_topk(log_probs, charset, k):
    lines = []
    names = [repr(c) for c in charset.symbols] + ["<blank>"]
    for t, row in enumerate(np.exp(log_probs)):
        top = np.argsort(-row, kind="stable")[:k]
        lines.append(f"t={t:03d}  " + "  ".join(f"{names[i]} {row[i]:.4f}" for i in top))
    return lines


def cmd_transcribe(args, out=sys.stdout):
    model, _ = HTRModel.load(args.checkpoint)
    cfg = model.cfg
    beam = _beam(args, cfg)
    target = (cfg.input_width, cfg.input_height)
    for path in args.images:
        img = preprocess(load_image(path), target, cfg.illumination, cfg.deslant)
        lp = model.log_probs(to_input(img, cfg.invert)[None])[0]
        print(model.decode(lp, beam), file=out)
        if args.topk > 0:
            for line in _format_topk(lp, model.charset, args.topk):
                print(line, file=out)
    return EXIT_OK


def cmd_evaluate(args, out=sys.stdout):
    bundle = read_bundle(args.bundle)
    model = None if args.oracle and args.checkpoint == "-" else HTRModel.load(args.checkpoint)[0]
    if args.oracle:
        if model is not None and model.charset.hash != bundle.manifest["charset_hash"]:
            raise CharsetMismatchError("checkpoint and bundle use different charsets")
        refs = bundle.texts()
        report = evaluate_pairs(zip(refs, refs), [s.id for s in bundle.samples])
        if args.report:
            write_report(report, args.report)
    else:
        report = evaluate(model, bundle, _beam(args, model.cfg), args.report)
    print("split\tCER\tWER\tSER\tsamples", file=out)
    print(f"{bundle.split}\t{report.cer:.3f}\t{report.wer:.3f}\t{report.ser:.3f}\t{report.count}", file=out)
    return EXIT_OK


COMMANDS = {"preprocess": cmd_preprocess, "train": cmd_train,
            "transcribe": cmd_transcribe, "evaluate": cmd_evaluate}


def main(argv=None, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.dump_config:
            out.write(resolve_config(args).dumps())
            return EXIT_OK
        if args.command is None:
            parser.print_help(out)
            return EXIT_INPUT
        threads = args.threads if args.threads is not None else resolve_config(args).threads
        with threadpool_limits(limits=threads):
            return COMMANDS[args.command](args, out)
    except CharsetMismatchError as exc:
        print(f"error: artifact mismatch: {exc}", file=err)
        return EXIT_MISMATCH
    except NumericError as exc:
        print(f"error: training diverged: {exc}", file=err)
        return EXIT_DIVERGED
    except (HTRError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
