"""``ptner`` command-line entry point."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import checkpoint, config as config_mod
from .corpus import (
    TagSet,
    build_vocab,
    encode_sentence,
    format_column_file,
    parse_column_file,
    read_column_file,
    specials_mask,
    split_tag,
    TaggedSentence,
)
from .encoder import PRESETS, attention_probs, init_params, num_parameters, preset
from .evaluator import EvalRow, evaluate, format_report, report_json
from .pretrain import (
    SpanLexicon,
    make_dlm_samples,
    make_nsp_pairs,
    plan_mask,
    read_documents,
    write_jsonl,
)
from .seeding import derive_seed
from .trainer import PretrainHeads, assemble_tagger, finetune, predict_tags, pretrain

log = logging.getLogger("ptner")

SUBCOMMANDS = ("preprocess", "pretrain", "train", "eval", "predict", "inspect")
LOG_ENV = "PTNER_LOG_LEVEL"


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, dest="learning_rate")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--checkpoint-dir", type=Path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ptner",
        description="Pre-training strategies and FC+CRF fine-tuning for character-level NER.",
    )
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")

    p = sub.add_parser("preprocess", help="emit mask plans / NSP pairs / DLM samples as JSON Lines")
    p.add_argument("--task", choices=("mask", "nsp", "dlm"), default="mask")
    p.add_argument("--input", type=Path, help="column corpus (mask) or blank-line separated documents (nsp, dlm)")
    p.add_argument("--output", type=Path, help="JSONL output (default: stdout)")
    p.add_argument("--strategy", choices=("static", "dynamic", "span"))
    p.add_argument("--rate", type=float)
    p.add_argument("--lexicon", type=Path)
    p.add_argument("--num-epochs", type=int, default=1, help="epochs of dynamic plans to emit")
    p.add_argument("-n", type=int, default=1000, help="number of NSP pairs / DLM samples")
    p.add_argument("--entity-types", help="comma-separated entity types")
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("pretrain", help="toy MLM or MLM+NSP pre-training of the encoder")
    _add_overrides(p)
    p.add_argument("--strategy", choices=("static", "dynamic", "span"))
    p.add_argument("--objective", choices=("mlm", "mlm_nsp"))

    p = sub.add_parser("train", help="fine-tune encoder + FC + CRF on a tagged corpus")
    _add_overrides(p)
    p.add_argument("--freeze-encoder", action="store_true", default=None)

    p = sub.add_parser("eval", help="entity-level P/R/F1 report")
    p.add_argument("--gold", type=Path, required=True)
    p.add_argument("--pred", type=Path, help="predicted column file")
    p.add_argument("--checkpoint", type=Path, help="predict the gold tokens with this model")
    p.add_argument("--name", default="model")
    p.add_argument("--entity-types", help="comma-separated; inferred from the files if omitted")
    p.add_argument("--output", type=Path, help="also write the table here")
    p.add_argument("--json", type=Path, help="also write the JSON report here")

    p = sub.add_parser("predict", help="tag raw sentences (one per line)")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, help="column-format output (default: stdout)")

    p = sub.add_parser("inspect", help="print an encoder config or an attention matrix")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", type=Path)
    src.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--text", help="sentence whose attention to print")
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--head", type=int, default=0)
    return parser


def _load_config(args) -> config_mod.RunConfig:
    cfg = config_mod.load(args.config) if getattr(args, "config", None) else config_mod.RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "preset", None):
        cfg.encoder_preset = args.preset
    if getattr(args, "checkpoint_dir", None):
        cfg.paths.checkpoint_dir = args.checkpoint_dir
    return cfg


def _train_overrides(args, base):
    changes = {
        k: getattr(args, k)
        for k in ("epochs", "learning_rate", "batch_size")
        if getattr(args, k, None) is not None
    }
    if getattr(args, "freeze_encoder", None):
        changes["freeze_encoder"] = True
    if getattr(args, "objective", None):
        changes["objective"] = args.objective
    return dataclasses.replace(base, **changes)


def _write_text(path: Path | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text, encoding="utf-8")


def _read(path: Path) -> str:
    return path.read_text(encoding="utf-8")


def infer_tagset(*texts: str) -> TagSet:
    types = []
    for text in texts:
        for line in text.splitlines():
            if "\t" in line:
                prefix, t = split_tag(line.split("\t")[1].strip())
                if t is not None and t not in types:
                    types.append(t)
    return TagSet(tuple(sorted(types)))


# --------------------------------------------------------------------------


def cmd_preprocess(args) -> int:
    cfg = _load_config(args)
    seed = cfg.seed
    records = []
    if args.task == "mask":
        src = args.input or cfg.paths.train
        if src is None:
            raise config_mod.ConfigError("preprocess --task mask needs --input or paths.train")
        text = _read(src)
        tagset = (
            TagSet(tuple(args.entity_types.split(","))) if args.entity_types
            else (cfg.tagset if args.config else infer_tagset(text))
        )  # fmt: skip
        sentences = parse_column_file(text, tagset)
        vocab = build_vocab(sentences, cfg.min_freq)
        strategy = args.strategy or cfg.pretrain.strategy
        rate = args.rate or cfg.pretrain.mask_rate
        lex_path = args.lexicon or cfg.paths.lexicon
        lexicon = SpanLexicon.from_file(lex_path) if lex_path else SpanLexicon()
        epochs = range(args.num_epochs) if strategy == "dynamic" else range(1)
        for epoch in epochs:
            for i, s in enumerate(sentences):
                ids, _, _ = encode_sentence(vocab, s, len(s) + 2)
                surface = ["[CLS]", *s.tokens, "[SEP]"]
                plan = plan_mask(
                    strategy, ids, specials_mask(ids), rate, derive_seed(seed, "mask", i), epoch,
                    vocab_size=len(vocab), tokens=surface, lexicon=lexicon, seq_id=i,
                )  # fmt: skip
                records.append(plan.to_json())
    else:
        src = args.input or cfg.paths.pretrain
        if src is None:
            raise config_mod.ConfigError(f"preprocess --task {args.task} needs --input")
        docs = read_documents(_read(src))
        if args.task == "nsp":
            records = [e.to_json() for e in make_nsp_pairs(docs, args.n, derive_seed(seed, "nsp", 0))]
        else:
            records = [e.to_json() for e in make_dlm_samples(docs, derive_seed(seed, "dlm"), args.n)]
    if args.output:
        write_jsonl(records, args.output)
    else:
        for r in records:
            sys.stdout.write(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n")
    log.info("wrote %d records", len(records))
    return 0


def _pretrain_documents(cfg):
    if cfg.paths.pretrain is not None:
        return read_documents(_read(cfg.paths.pretrain))
    if cfg.paths.train is None:
        raise config_mod.ConfigError("pretrain needs paths.pretrain or paths.train")
    return [[s.tokens for s in read_column_file(cfg.paths.train, cfg.tagset)]]


def cmd_pretrain(args) -> int:
    cfg = _load_config(args)
    if args.strategy:
        cfg.pretrain.strategy = args.strategy
    tcfg = dataclasses.replace(_train_overrides(args, cfg.pretrain.train), seed=cfg.seed)
    cfg.pretrain.train = tcfg
    cfg.validate()
    docs = _pretrain_documents(cfg)
    vocab = build_vocab([TaggedSentence(s, ["O"] * len(s)) for d in docs for s in d], cfg.min_freq)
    enc_cfg = cfg.encoder_config(len(vocab))
    encoder = init_params(enc_cfg, derive_seed(cfg.seed, "init", 0))
    heads = PretrainHeads(enc_cfg, cfg.seed)
    lexicon = SpanLexicon.from_file(cfg.paths.lexicon) if cfg.paths.lexicon else None

    out_dir = cfg.paths.checkpoint_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "pretrain.log", "w", encoding="utf-8") as logf:
        history = pretrain(
            encoder, heads, vocab, docs, tcfg,
            strategy=cfg.pretrain.strategy, rate=cfg.pretrain.mask_rate, lexicon=lexicon,
            on_log=lambda line: logf.write(line + "\n"),
        )  # fmt: skip
    checkpoint.save(out_dir / "encoder.ckpt", vocab, encoder=encoder, heads=heads)
    print(
        f"pretrained {len(history.step_losses)} steps; final mlm loss "
        f"{history.step_losses[-1]:.6f}; checkpoint {out_dir / 'encoder.ckpt'}"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    cfg.train = dataclasses.replace(_train_overrides(args, cfg.train), seed=cfg.seed)
    cfg.validate()
    if cfg.paths.train is None:
        raise config_mod.ConfigError("train needs paths.train")
    tagset = cfg.tagset
    data = read_column_file(cfg.paths.train, tagset)
    if cfg.paths.init_checkpoint is not None:
        init = checkpoint.load(cfg.paths.init_checkpoint)
        vocab = init.vocab
        model = assemble_tagger(init.config, tagset, cfg.seed)
        model.encoder.load_state_dict(init.encoder.state_dict())
    else:
        vocab = build_vocab(data, cfg.min_freq)
        model = assemble_tagger(cfg.encoder_config(len(vocab)), tagset, cfg.seed)

    out_dir = cfg.paths.checkpoint_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "train.log", "w", encoding="utf-8") as logf:
        history = finetune(model, data, cfg.train, vocab, on_log=lambda l: logf.write(l + "\n"))
    checkpoint.save(out_dir / "model.ckpt", vocab, tagger=model)

    rows = []
    for split in ("dev", "test"):
        path = getattr(cfg.paths, split)
        if path is not None:
            gold = read_column_file(path, tagset)
            pred = [predict_tags(model, s.tokens, vocab) for s in gold]
            rows.append(evaluate(gold, pred, name=split))
    msg = f"trained {len(history.step_losses)} steps; final epoch loss {history.epoch_losses[-1]:.6f}"
    print(msg)
    if rows:
        table = format_report(rows)
        (out_dir / "report.txt").write_text(table, encoding="utf-8")
        (out_dir / "report.json").write_text(report_json(rows), encoding="utf-8")
        sys.stdout.write(table)
    return 0


def cmd_eval(args) -> int:
    gold_text = _read(args.gold)
    if (args.pred is None) == (args.checkpoint is None):
        raise config_mod.ConfigError("eval needs exactly one of --pred or --checkpoint")
    if args.checkpoint is not None:
        ckpt = checkpoint.load(args.checkpoint)
        if ckpt.tagger is None:
            raise config_mod.ConfigError("checkpoint holds no tagger")
        tagset = ckpt.tagset
        gold = parse_column_file(gold_text, tagset)
        pred = [predict_tags(ckpt.tagger, s.tokens, ckpt.vocab) for s in gold]
    else:
        pred_text = _read(args.pred)
        tagset = (
            TagSet(tuple(args.entity_types.split(","))) if args.entity_types
            else infer_tagset(gold_text, pred_text)
        )  # fmt: skip
        gold = parse_column_file(gold_text, tagset)
        pred_sents = parse_column_file(pred_text, tagset)
        if len(pred_sents) != len(gold):
            raise ValueError(f"{len(gold)} gold sentences but {len(pred_sents)} predicted")
        for i, (g, p) in enumerate(zip(gold, pred_sents)):
            if g.tokens != p.tokens:
                raise ValueError(f"sentence {i}: gold and predicted tokens differ")
        pred = [p.tags for p in pred_sents]
    rows: list[EvalRow] = [evaluate(gold, pred, name=args.name)]
    table = format_report(rows)
    sys.stdout.write(table)
    if args.output:
        args.output.write_text(table, encoding="utf-8")
    if args.json:
        args.json.write_text(report_json(rows), encoding="utf-8")
    return 0


def cmd_predict(args) -> int:
    ckpt = checkpoint.load(args.checkpoint)
    if ckpt.tagger is None:
        raise config_mod.ConfigError("checkpoint holds no tagger")
    out = []
    for line in _read(args.input).splitlines():
        tokens = tuple(line.strip())
        if tokens:
            out.append(TaggedSentence(tokens, predict_tags(ckpt.tagger, tokens, ckpt.vocab)))
    _write_text(args.output, format_column_file(out))
    return 0


def cmd_inspect(args) -> int:
    if args.checkpoint:
        ckpt = checkpoint.load(args.checkpoint)
        enc, vocab = ckpt.encoder, ckpt.vocab
        info = {
            "kind": ckpt.kind,
            "encoder_config": ckpt.config.to_dict(),
            "tags": list(ckpt.tagset.tags) if ckpt.tagset else [],
            "vocab_size": len(vocab),
            "num_parameters": num_parameters(ckpt.tagger or enc),
        }
    else:
        cfg = preset(args.preset)
        enc, vocab = None, None
        info = {"preset": args.preset, "encoder_config": cfg.to_dict()}
    if args.text is None:
        print(json.dumps(info, ensure_ascii=False, indent=2, sort_keys=True))
        return 0
    if enc is None:
        enc = init_params(preset(args.preset), 0)
        ids = [2] + [5 + (ord(c) % (enc.config.vocab_size - 5)) for c in args.text] + [3]
        labels = ["[CLS]", *args.text, "[SEP]"]
    else:
        ids, _, _ = encode_sentence(vocab, list(args.text), len(args.text) + 2)
        labels = ["[CLS]", *args.text, "[SEP]"]
    probs = attention_probs(enc, ids, [0] * len(ids), [1] * len(ids), args.layer, args.head)
    print("\t" + "\t".join(labels))
    for lab, row in zip(labels, probs.tolist()):
        print(lab + "\t" + "\t".join(f"{x:.4f}" for x in row))
    return 0


HANDLERS = {
    "preprocess": cmd_preprocess,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "inspect": cmd_inspect,
}


def run(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get(LOG_ENV, "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"subcommands: {', '.join(SUBCOMMANDS)}\n")
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return HANDLERS[args.command](args)
    except BrokenPipeError:
        return 0
    except (ValueError, OSError, RuntimeError, IndexError) as e:
        sys.stderr.write(f"ptner {args.command}: error: {e}\n")
        return 1


def main() -> None:
    code = run()
    try:
        sys.stdout.flush()
    except BrokenPipeError:
        # reader went away (e.g. `| head`); silence the flush at interpreter exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        code = 0
    sys.exit(code)
