"""Command-line entry point: ``otlm train | parse | eval-f1 | baseline | gradcheck | inspect-gates``.

Exit codes: 0 success, 1 internal error, 2 user error. Machine-readable
results go to files or to stdout as JSON; human-readable logs go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import ConfigError, DataConfig, ModelConfig, TrainConfig, from_text, parse_pairs, replace, to_text
from .corpus import Vocab, build_vocab, encode, read_lines, tokenize
from .evaluation import STRATEGIES, baseline_report, corpus_f1
from .induction import tree_to_string
from .model import CheckpointError, lm_forward, load_checkpoint
from .parsing import default_layer, parse_tokens
from .treebank import TreebankError, load_treebank, parse_bracketed, wsj10_filter

log = logging.getLogger("otlm")

VOCAB_FILE = "vocab.tsv"
CONFIG_FILE = "config.txt"
MANIFEST_FILE = "manifest.json"


class UserError(Exception):
    """Bad input from the user; reported without a traceback, exit code 2."""


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _read_text(path, what: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise UserError(f"cannot read {what} {path}: {exc}") from None


def _load_model(path):
    try:
        weights, cfg = load_checkpoint(path)
    except OSError as exc:
        raise UserError(f"cannot read checkpoint {path}: {exc}") from None
    vocab_path = Path(path).parent / VOCAB_FILE
    if not vocab_path.exists():
        raise UserError(f"no {VOCAB_FILE} next to checkpoint {path}")
    vocab = Vocab.load(vocab_path, lowercase=weights.data.lowercase, min_count=weights.data.min_count)
    if len(vocab) != cfg.vocab_size:
        raise UserError(f"{vocab_path} has {len(vocab)} entries but the checkpoint expects {cfg.vocab_size}")
    return weights, vocab


# ---------------------------------------------------------------------------
# train


def resolve_configs(config_text: str, lines) -> tuple:
    """Model, train and data configs plus the vocabulary built from ``lines``.

    ``vocab_size`` is taken from the vocabulary; an explicit value must agree.
    """
    model_cfg, train_cfg, data_cfg = from_text(config_text, ModelConfig, TrainConfig, DataConfig)
    vocab = build_vocab(lines, min_count=data_cfg.min_count, lowercase=data_cfg.lowercase)
    if "vocab_size" in parse_pairs(config_text) and model_cfg.vocab_size != len(vocab):
        raise ConfigError(f"vocab_size={model_cfg.vocab_size} but the corpus vocabulary has {len(vocab)} entries")
    return replace(model_cfg, vocab_size=len(vocab)), train_cfg, data_cfg, vocab


def cmd_train(args) -> int:
    from .training import train

    config_text = _read_text(args.config, "config")
    try:
        lines = read_lines(args.corpus)
    except (OSError, UnicodeDecodeError) as exc:
        raise UserError(f"cannot read corpus {args.corpus}: {exc}") from None
    if not lines:
        raise UserError(f"corpus {args.corpus} has no sentences")
    model_cfg, train_cfg, data_cfg, vocab = resolve_configs(config_text, lines)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / VOCAB_FILE)
    (out / CONFIG_FILE).write_text(to_text(model_cfg, train_cfg, data_cfg), encoding="utf-8")
    manifest = {
        "tool": "otlm",
        "version": __version__,
        "command": "train",
        "corpus": str(Path(args.corpus).resolve()),
        "config_file": str(Path(args.config).resolve()),
        "config": {"model": asdict(model_cfg), "train": asdict(train_cfg), "data": asdict(data_cfg)},
        "seed": train_cfg.seed,
        "started": _now(),
        "finished": None,
        "status": "running",
        "outputs": {"vocab": VOCAB_FILE, "config": CONFIG_FILE, "metrics": "metrics.jsonl"},
    }
    _write_manifest(out, manifest)
    log.info("training on %d sentences, vocab %d, %d steps", len(lines), len(vocab), train_cfg.max_steps)
    try:
        final = train(encode(lines, vocab), model_cfg, train_cfg, out, data_cfg=data_cfg)
    except BaseException as exc:
        manifest.update(finished=_now(), status="failed", error=str(exc))
        last = getattr(exc, "last_checkpoint", None)
        if last is not None:
            manifest["outputs"]["last_checkpoint"] = Path(last).name
        _write_manifest(out, manifest)
        raise
    manifest["outputs"]["checkpoints"] = sorted(p.name for p in out.glob("step-*.otlm"))
    manifest["outputs"]["final"] = final.name
    manifest.update(finished=_now(), status="completed")
    _write_manifest(out, manifest)
    log.info("wrote %s", final)
    return 0


def _write_manifest(out: Path, manifest: dict) -> None:
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# parse / inspect-gates


def cmd_parse(args) -> int:
    weights, vocab = _load_model(args.model)
    layer = default_layer(weights.config.n_layers) if args.layer is None else args.layer
    if not 0 <= layer < weights.config.n_layers:
        raise UserError(f"--layer {layer} out of range for a {weights.config.n_layers}-layer model")
    lines = _read_text(args.input, "input").splitlines()
    trees, distances, skipped = [], [], 0
    for lineno, line in enumerate(lines, 1):
        tokens = tokenize(line)
        if not tokens:
            continue
        if len(tokens) > weights.config.max_seq_len:
            log.warning("line %d: %d words exceeds max_seq_len=%d, skipped", lineno, len(tokens), weights.config.max_seq_len)
            skipped += 1
            continue
        result = parse_tokens(tokens, weights, vocab, layer, args.agg)
        trees.append(tree_to_string(result.tree, tokens) + "\n")
        values = [] if result.distances is None else result.distances.values
        distances.append("\t".join(repr(float(v)) for v in values) + "\n")
    Path(args.output).write_text("".join(trees), encoding="utf-8")
    if args.distances:
        Path(args.distances).write_text("".join(distances), encoding="utf-8")
    if skipped:
        log.warning("%d line(s) skipped", skipped)
    log.info("parsed %d sentences with layer %d, %s aggregation", len(trees), layer, args.agg)
    return 0


def cmd_inspect_gates(args) -> int:
    weights, vocab = _load_model(args.model)
    sentences = []
    for line in _read_text(args.input, "input").splitlines():
        tokens = tokenize(line)
        if not tokens:
            continue
        if len(tokens) > weights.config.max_seq_len:
            log.warning("sentence of %d words exceeds max_seq_len, skipped", len(tokens))
            continue
        trace = lm_forward([vocab.lookup(t) for t in tokens], weights, capture_gates=True)
        sentences.append({"tokens": tokens, "layers": [g.to_dict() for g in trace.per_layer]})
    _emit({"model": str(args.model), "n_layers": weights.config.n_layers, "sentences": sentences})
    return 0


# ---------------------------------------------------------------------------
# eval-f1 / baseline / gradcheck


def _gold(path, max_len: int) -> list:
    try:
        trees = load_treebank(path)
    except OSError as exc:
        raise UserError(f"cannot read gold treebank {path}: {exc}") from None
    kept = wsj10_filter(trees, max_len)
    log.info("gold: %d trees, %d kept with at most %d words", len(trees), len(kept), max_len)
    return kept


def cmd_eval_f1(args) -> int:
    gold = _gold(args.gold, args.max_len)
    pred = [parse_bracketed(line) for line in _read_text(args.pred, "predictions").splitlines() if line.strip()]
    if len(pred) != len(gold):
        raise UserError(f"{len(pred)} predicted trees but {len(gold)} gold trees after filtering")
    report = corpus_f1(zip(pred, gold))
    _emit({**report.to_dict(), "config": {"pred": str(args.pred), "gold": str(args.gold), "max_len": args.max_len}})
    return 0


def cmd_baseline(args) -> int:
    if args.strategy not in STRATEGIES:
        raise UserError(f"unknown strategy {args.strategy!r}; choose from {', '.join(STRATEGIES)}")
    gold = _gold(args.gold, args.max_len)
    if not gold:
        raise UserError("no gold trees left after filtering")
    report = baseline_report(args.strategy, gold, seed=args.seed)
    config = {"gold": str(args.gold), "strategy": args.strategy, "seed": args.seed, "max_len": args.max_len}
    _emit({**report.to_dict(), "config": config})
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite()
    for r in results:
        print(r.line(), file=sys.stderr)
    _emit([{"name": r.name, "error": r.error, "threshold": r.threshold, "passed": r.passed} for r in results])
    return 0 if all(r.passed for r in results) else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otlm", description="Ordered-attention language model and tree induction.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a language model")
    p.add_argument("--corpus", required=True, help="one sentence per line")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("parse", help="induce trees with a trained model")
    p.add_argument("--model", required=True, help="checkpoint; vocab.tsv must sit next to it")
    p.add_argument("--input", required=True, help="one tokenised sentence per line")
    p.add_argument("--layer", type=int, default=None, help="layer to read gates from (default: middle)")
    p.add_argument("--agg", choices=("mean", "max"), default="mean", help="head aggregation")
    p.add_argument("--output", required=True, help="bracketed trees, one per line")
    p.add_argument("--distances", default=None, help="optional tab-separated distance sidecar")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("eval-f1", help="unlabeled bracket F1 against a PTB file")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--max-len", type=int, default=10)
    p.set_defaults(func=cmd_eval_f1)

    p = sub.add_parser("baseline", help="score a baseline strategy against a PTB file")
    p.add_argument("--gold", required=True)
    p.add_argument("--strategy", required=True, help=", ".join(STRATEGIES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", type=int, default=10)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect-gates", help="dump gate activations as JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_inspect_gates)
    return parser


USER_ERRORS = (UserError, ConfigError, CheckpointError, TreebankError, FileNotFoundError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"otlm {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.exception("internal error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
