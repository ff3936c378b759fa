"""Command-line entry point: ``edr-nmt <command> [flags]``.

Exit codes: 0 success, 1 usage, 2 config, 3 checkpoint, 4 data,
5 gradient check above tolerance.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from . import model as M
from . import training as T
from .autodiff import UsageError, finite_diff_check
from .data import (
    DataError,
    Vocabulary,
    build_vocab,
    collate,
    encode_pairs,
    read_lines,
    synthetic_corpus,
    write_lines,
)
from .decoding import export_attention, greedy_decode_batch
from .evaluation import bootstrap_significance, evaluate, format_report

log = logging.getLogger("edr_nmt")

EXIT_USAGE, EXIT_CONFIG, EXIT_CHECKPOINT, EXIT_DATA, EXIT_GRADCHECK = 1, 2, 3, 4, 5
GRADCHECK_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="edr-nmt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-data", help="write synthetic corpora, vocabularies and a config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--task", choices=("copy", "reverse"), default="copy")
    p.add_argument("--train-size", type=int, default=5000)
    p.add_argument("--dev-size", type=int, default=500)
    p.add_argument("--test-size", type=int, default=500)
    p.add_argument("--symbols", type=int, default=20)
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--src", help="existing source corpus: build vocabularies only")
    p.add_argument("--ref", help="existing target corpus (with --src)")
    p.add_argument("--vocab-cap", type=int, default=30000)

    p = sub.add_parser("train", help="train in the configured regime")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="overrides out_dir")
    p.add_argument("--checkpoint", help="pretrained baseline for the finetune regime")

    for name, help_ in (("translate", "greedy-decode a source file"),
                        ("dump-attention", "write per-sentence attention TSVs")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True)
        p.add_argument("--src", required=True)
        p.add_argument("--checkpoint")
        p.add_argument("--out", required=name == "dump-attention")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("evaluate", help="BLEU, word counters and bootstrap p-value")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp-b", help="comparison system; p-value is for --hyp beating it")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("gradcheck", help="finite-difference check on a tiny seeded model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--embed", type=int, default=8)
    p.add_argument("--vocab", type=int, default=20)
    p.add_argument("--max-sent-len", type=int, default=6)
    p.add_argument("--coords", type=int, default=20, help="coordinates sampled per tensor")
    p.add_argument("--eps", type=float, default=1e-5)
    return parser


def _require_files(*paths) -> None:
    for path in paths:
        if path is not None and not Path(path).is_file():
            raise DataError(f"no such file: {path}")


# ------------------------------------------------------------------ commands


def cmd_make_data(args) -> None:
    out = Path(args.out)
    if args.src or args.ref:
        if not (args.src and args.ref):
            raise UsageError("--src and --ref must be given together")
        _require_files(args.src, args.ref)
        out.mkdir(parents=True, exist_ok=True)
        build_vocab(read_lines(args.src), args.vocab_cap).save(out / "src.vocab")
        build_vocab(read_lines(args.ref), args.vocab_cap).save(out / "tgt.vocab")
        return
    out.mkdir(parents=True, exist_ok=True)
    splits = {}
    for k, (name, size) in enumerate((("train", args.train_size), ("dev", args.dev_size), ("test", args.test_size))):
        pairs = synthetic_corpus(args.task, size, [args.seed, k], args.symbols, args.min_len, args.max_len)
        write_lines(out / f"{name}.src", (s for s, _ in pairs))
        write_lines(out / f"{name}.tgt", (t for _, t in pairs))
        splits[name] = pairs
    cap = args.symbols + 4
    build_vocab((s for s, _ in splits["train"]), cap).save(out / "src.vocab")
    build_vocab((t for _, t in splits["train"]), cap).save(out / "tgt.vocab")
    cfg = T.TrainingConfig(
        train_src="train.src", train_tgt="train.tgt", dev_src="dev.src", dev_tgt="dev.tgt",
        test_src="test.src", test_tgt="test.tgt", src_vocab_file="src.vocab",
        tgt_vocab_file="tgt.vocab", out_dir="run", vocab_cap=cap, max_len=args.max_len, seed=args.seed,
    )
    (out / "config.txt").write_text(T.format_config(cfg), encoding="utf-8")


def cmd_train(args) -> None:
    cfg = T.with_overrides(T.load_config(args.config), seed=args.seed)
    if args.out:
        cfg = T.with_overrides(cfg, out_dir=str(Path(args.out).resolve()))
    pretrained = args.checkpoint or (str(cfg.path("pretrained")) if cfg.pretrained else None)
    _require_files(pretrained)
    corp = T.load_corpora(cfg)
    out = cfg.path("out_dir")
    out.mkdir(parents=True, exist_ok=True)
    if cfg.regime == "baseline":
        T.train_baseline(corp, cfg, out)
    elif cfg.regime == "joint":
        T.train_joint(corp, cfg, out)
    elif cfg.regime == "finetune":
        if pretrained:
            theta = M.split_params(checkpoint.load(pretrained))[0]
        else:
            theta = M.split_params(T.train_baseline(corp, cfg, out).params)[0]
        T.train_finetune(theta, corp, cfg, out)
    else:
        _, reports = T.compare_regimes(corp, cfg, out)
        text = format_report(reports)
        (out / "report.tsv").write_text(text, encoding="utf-8")
        sys.stdout.write(text)


def _load_for_inference(args):
    cfg = T.with_overrides(T.load_config(args.config), seed=args.seed)
    _require_files(args.src, args.checkpoint)
    sv_path, tv_path = T.vocab_paths(cfg)
    _require_files(sv_path, tv_path)
    sv, tv = Vocabulary.load(sv_path), Vocabulary.load(tv_path)
    ckpt = args.checkpoint or T.default_checkpoint(cfg)
    if not Path(ckpt).is_file():
        raise checkpoint.CheckpointError(f"no checkpoint at {ckpt}")
    theta = M.split_params(checkpoint.load(ckpt))[0]
    T.check_compatible(theta, len(sv), len(tv))
    sentences = read_lines(args.src)
    if any(not s for s in sentences):
        raise DataError(f"{args.src}: empty source line")
    return sv, tv, theta, sentences


def cmd_translate(args) -> None:
    sv, tv, theta, sentences = _load_for_inference(args)
    outs = greedy_decode_batch(theta, [sv.encode(s) for s in sentences])
    lines = [" ".join(tv.decode(t.ids)) + "\n" for t in outs]
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        with open(Path(args.out) / "hyp.txt", "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(lines)
    else:
        sys.stdout.writelines(lines)


def cmd_dump_attention(args) -> None:
    sv, tv, theta, sentences = _load_for_inference(args)
    outs = greedy_decode_batch(theta, [sv.encode(s) for s in sentences])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    width = len(str(len(sentences)))
    for n, (src, t) in enumerate(zip(sentences, outs), 1):
        text = export_attention(t, src, tv.decode(t.ids))
        (out / f"{n:0{width}d}.tsv").write_text(text, encoding="utf-8")


def cmd_evaluate(args) -> None:
    _require_files(args.hyp, args.ref, args.hyp_b)
    hyp, ref = read_lines(args.hyp), read_lines(args.ref)
    reports = [evaluate(Path(args.hyp).name, hyp, ref)]
    if args.hyp_b:
        hyp_b = read_lines(args.hyp_b)
        reports.insert(0, evaluate(Path(args.hyp_b).name, hyp_b, ref))
        reports[1].p_value = bootstrap_significance(hyp, hyp_b, ref, args.samples, args.seed)
    text = format_report(reports)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "report.tsv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def gradcheck_error(seed=0, hidden=8, embed=8, vocab=20, max_sent_len=6, coords=20, eps=1e-5):
    """Worst relative gradient error over both objectives on a random tiny batch."""
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(vocab - 4)]
    sents = [[words[k] for k in rng.integers(0, len(words), size=rng.integers(1, max_sent_len + 1))]
             for _ in range(6)]
    pairs = list(zip(sents[:3], sents[3:]))
    sv = build_vocab((s for s, _ in pairs), vocab)
    tv = build_vocab((t for _, t in pairs), vocab)
    batch = collate(encode_pairs(pairs, sv, tv))
    theta, gamma = M.init_params(M.ModelConfig(vocab, vocab, embed, hidden, seed))
    params = {**theta, **gamma}
    return max(
        finite_diff_check(M.objective(batch, 1.0, reconstruct), params, eps, coords, seed)
        for reconstruct in (False, True)
    )


def cmd_gradcheck(args) -> int:
    err = gradcheck_error(args.seed, args.hidden, args.embed, args.vocab, args.max_sent_len, args.coords, args.eps)
    print(f"max relative error: {err:.3e}")
    return 0 if err < GRADCHECK_TOLERANCE else EXIT_GRADCHECK


COMMANDS = {
    "make-data": cmd_make_data,
    "train": cmd_train,
    "translate": cmd_translate,
    "dump-attention": cmd_dump_attention,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args) or 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except T.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except checkpoint.CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())
