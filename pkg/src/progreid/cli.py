"""Command-line pipeline: gen, ingest, train, eval, detect, embed.

Settings come from three layers, highest first: command-line flags, a TOML
config file (``--config``), built-in defaults. The config file is flat
``key = value`` TOML; keys are the ``RunConfig`` field names below and any
other key is rejected.

Exit codes: 0 success, 1 runtime error, 2 usage or configuration error.
Errors print one line to stderr: ``error: <Code>: <message>``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .channels import parse_channels
from .dataset import build_example, load_examples, reid_dataset, save_examples
from .encoder import EncoderConfig
from .errors import ConfigError, EmptyDataset, EmptyWindow, ReidError, TargetAbsent, UsageError
from .evaluation import (ablation_run, evaluate, format_json, format_table, kfold_split, macro_average,
                         score_examples)
from .events import read_event_stream
from .features import FeatureConfig
from .model import ModelConfig, TrainConfig, atomic_write_text, decide, load_model, save_model, train
from .synth import DAY, corpus_from_manifest, gen_corpus, inject_disguise, load_profiles, load_scenarios, write_corpus

logger = logging.getLogger("progreid")


@dataclass(frozen=True)
class RunConfig:
    channels: tuple[str, ...] = ("PP", "PF", "PI")
    feature_set: str = "both"
    d_con: int = 256
    n_layers: int = 3
    hidden_dim: int = 32
    propagation: str = "diffusion"
    fusion: str = "attention"
    att_dim: Optional[int] = None
    gate: str = "leaky_relu"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 200
    patience: int = 20
    batch_size: Optional[int] = None
    seed: int = 0
    hops: int = 3
    window_len: int = DAY
    n_windows: int = 40

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            channels=parse_channels(self.channels),
            features=FeatureConfig.from_feature_set(self.feature_set, self.d_con),
            encoder=EncoderConfig(self.n_layers, self.hidden_dim, self.propagation),
            fusion=self.fusion,
            att_dim=self.att_dim,
            gate=self.gate,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.lr, self.beta1, self.beta2, self.eps, self.epochs, self.seed, self.patience,
                           self.batch_size)

    def validate(self) -> "RunConfig":
        self.model_config()
        self.train_config()
        if self.hops < 0:
            raise ConfigError("hops must be >= 0")
        if self.window_len < 1:
            raise ConfigError("window_len must be >= 1")
        if self.n_windows < 1:
            raise ConfigError("n_windows must be >= 1")
        return self


_FIELDS = {f.name: f for f in fields(RunConfig)}
_INT_KEYS = {"d_con", "n_layers", "hidden_dim", "att_dim", "epochs", "patience", "batch_size", "seed", "hops",
             "window_len", "n_windows"}
_FLOAT_KEYS = {"lr", "beta1", "beta2", "eps"}


def _coerce(key: str, value):
    if key == "channels":
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
            raise ConfigError("channels must be a list of names")
        return tuple(v.upper() for v in value)
    if key in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if key in _FLOAT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


def load_config_file(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    unknown = sorted(set(data) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return {k: _coerce(k, v) for k, v in data.items()}


def resolve_config(file_values: dict, flag_values: dict) -> RunConfig:
    """Defaults, overridden by the config file, overridden by explicit flags."""
    merged = {**file_values, **{k: _coerce(k, v) for k, v in flag_values.items() if v is not None}}
    return replace(RunConfig(), **merged).validate()


# ------------------------------------------------------------------ parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


_MODEL_FLAGS = ("channels", "feature_set", "d_con", "n_layers", "hidden_dim", "propagation", "fusion", "att_dim",
                "gate", "hops")
_TRAIN_FLAGS = ("lr", "beta1", "beta2", "eps", "epochs", "patience", "batch_size")


def _add_setting(p: argparse.ArgumentParser, key: str) -> None:
    kind = int if key in _INT_KEYS else float if key in _FLOAT_KEYS else str
    help_text = f"overrides config key {key!r} (default {getattr(RunConfig(), key)!r})"
    p.add_argument("--" + key.replace("_", "-"), dest=key, type=kind, default=None, help=help_text)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="progreid", description="Program reidentification from system-event behavior graphs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name: str, help_text: str, settings: Sequence[str]) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", dest="seed", type=int, default=None, help="random seed (default 0)")
        for key in settings:
            _add_setting(p, key)
        return p

    p = command("gen", "generate a synthetic corpus and attack windows", ("n_windows", "window_len"))
    p.add_argument("--profiles", required=True, help="JSON list of program profiles")
    p.add_argument("--scenarios", help="JSON list of attack scenarios")
    p.add_argument("--out", required=True, help="output directory")

    p = command("ingest", "turn event windows into serialized examples", _MODEL_FLAGS + ("window_len",))
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--corpus", help="directory written by gen")
    src.add_argument("--events", help="JSONL event stream")
    p.add_argument("--program", action="append", dest="programs", default=None,
                   help="claimed program id; repeat for several (required with --events)")
    p.add_argument("--split", choices=("corpus", "attack"), default="corpus",
                   help="corpus: genuine windows plus renamed impostors; attack: injected test windows")
    p.add_argument("--label", type=int, choices=(1, -1), help="label to attach to --events examples")
    p.add_argument("--skip-bad", action="store_true", help="skip malformed event lines instead of failing")
    p.add_argument("--out", required=True, help="output directory")

    p = command("train", "train one per-program verifier", _MODEL_FLAGS + _TRAIN_FLAGS)
    p.add_argument("--examples", required=True, help="examples directory or JSONL")
    p.add_argument("--program", help="claimed id to train for (default: the examples' only id)")
    p.add_argument("--model-out", required=True, help="checkpoint path")

    p = command("eval", "evaluate a model, or cross-validate a configuration", _MODEL_FLAGS + _TRAIN_FLAGS)
    p.add_argument("--examples", required=True, help="examples directory or JSONL")
    p.add_argument("--model", action="append", dest="models", default=None,
                   help="checkpoint to evaluate; repeat for several")
    p.add_argument("--kfold", type=int, help="cross-validate with k stratified folds")
    p.add_argument("--ablation", help="comma-separated variants, e.g. att,con,pp,pf,pi,att-shallow")
    p.add_argument("--format", choices=("json", "table"), default="json", help="report format (default json)")
    p.add_argument("--out", help="write the report here instead of stdout")

    p = command("detect", "score windows and emit +1/-1 verdicts", ())
    p.add_argument("--model", required=True, help="checkpoint")
    p.add_argument("--examples", required=True, help="examples directory or JSONL")
    p.add_argument("--out", help="write JSONL here instead of stdout")

    p = command("embed", "export joint embeddings as CSV", ())
    p.add_argument("--model", required=True, help="checkpoint")
    p.add_argument("--examples", required=True, help="examples directory or JSONL")
    p.add_argument("--out", required=True, help="CSV path")
    return parser


# ---------------------------------------------------------------- commands


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def cmd_gen(args, cfg: RunConfig) -> int:
    profiles = load_profiles(args.profiles)
    scenarios = load_scenarios(args.scenarios, profiles) if args.scenarios else []
    corpus = gen_corpus(profiles, cfg.n_windows, cfg.seed, cfg.window_len)
    attacks = [lw for i, sc in enumerate(scenarios) for lw in inject_disguise(corpus, sc, cfg.seed, i)]
    path = write_corpus(corpus, args.out, attacks)
    logger.info("wrote %d corpus and %d attack windows to %s", len(corpus.windows), len(attacks), path.parent)
    return 0


def _windows_of(events, window_len: int) -> dict:
    out: dict[int, list] = {}
    for e in events:
        out.setdefault(e.ts // window_len, []).append(e)
    return out


def cmd_ingest(args, cfg: RunConfig) -> int:
    mcfg = cfg.model_config()
    examples = []
    meta = {"seed": cfg.seed, "hops": cfg.hops, "channels": [c.value for c in mcfg.channels]}
    if args.corpus:
        corpus, attacks = corpus_from_manifest(Path(args.corpus) / "manifest.json")
        programs = args.programs or corpus.programs()
        meta.update(source="corpus", split=args.split, programs=programs)
        for program in programs:
            if args.split == "corpus":
                examples += reid_dataset(corpus, program, mcfg, cfg.seed, cfg.hops)
                continue
            corpus.profile(program)
            for lw in attacks:
                if lw.claimed_id == program:
                    examples.append(build_example(lw.events, program, lw.window, mcfg.channels, mcfg.features,
                                                  lw.label, cfg.hops))
    else:
        if not args.programs:
            raise UsageError("--events needs at least one --program")
        events = read_event_stream(args.events, skip_bad=args.skip_bad)
        meta.update(source="events", window_len=cfg.window_len, programs=args.programs)
        for index, chunk in sorted(_windows_of(events, cfg.window_len).items()):
            window = (index * cfg.window_len, (index + 1) * cfg.window_len)
            for program in args.programs:
                try:
                    examples.append(build_example(chunk, program, window, mcfg.channels, mcfg.features,
                                                  args.label, cfg.hops))
                except (EmptyWindow, TargetAbsent):
                    logger.info("no %s activity in window %s", program, window)
    if not examples:
        raise EmptyDataset("no examples were produced")
    save_examples(examples, args.out, mcfg.features, meta)
    logger.info("wrote %d examples to %s", len(examples), args.out)
    return 0


def _load(path: str):
    examples = load_examples(path)
    if not examples:
        raise EmptyDataset(f"{path} holds no examples")
    return examples


def cmd_train(args, cfg: RunConfig) -> int:
    examples = _load(args.examples)
    ids = sorted({ex.claimed_id for ex in examples})
    program = args.program or (ids[0] if len(ids) == 1 else None)
    if program is None:
        raise UsageError(f"examples cover several programs ({', '.join(ids)}); pass --program")
    subset = [ex for ex in examples if ex.claimed_id == program]
    if not subset:
        raise EmptyDataset(f"no examples claim {program!r}")
    model = train(subset, cfg.model_config(), cfg.train_config(), program)
    save_model(model, args.model_out)
    last = model.history[-1]
    logger.info("trained %s: %d epochs, loss %.4f, acc %.4f", program, len(model.history), last["loss"], last["acc"])
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    examples = _load(args.examples)
    if args.models and (args.kfold or args.ablation):
        raise UsageError("--model evaluates a checkpoint; --kfold/--ablation cross-validate; pick one")
    if args.models:
        rows = []
        for path in args.models:
            model = load_model(path)
            subset = [ex for ex in examples if ex.claimed_id == model.claimed_id]
            if not subset:
                raise EmptyDataset(f"no examples claim {model.claimed_id!r}")
            rows.append((model.claimed_id, evaluate(model, subset)))
        if len(rows) > 1:
            rows.append(("macro-average", macro_average([r for _, r in rows])))
        meta = {"mode": "checkpoint", "seeds": [load_model(p).train_config.seed for p in args.models]}
    else:
        k = args.kfold or 5
        variants = [v.strip() for v in (args.ablation or "att").split(",") if v.strip()]
        kfold_split([ex.label for ex in examples], k, cfg.seed)
        rows = ablation_run(examples, variants, cfg.model_config(), cfg.train_config(), k, cfg.seed)
        meta = {"mode": "kfold", "k": k, "seed": cfg.seed, "config": cfg.model_config().to_dict()}
    _emit(format_table(rows) if args.format == "table" else format_json(rows, meta), args.out)
    return 0


def cmd_detect(args, cfg: RunConfig) -> int:
    model = load_model(args.model)
    examples = _load(args.examples)
    scores, _, _ = score_examples(model, examples)
    lines = []
    for i, (ex, s) in enumerate(zip(examples, scores)):
        window = list(ex.graph.window) if ex.graph is not None else None
        lines.append(json.dumps({"index": i, "claimed_id": ex.claimed_id, "model": model.claimed_id,
                                 "window": window, "score": float(s), "decision": decide(s)}))
    _emit("".join(line + "\n" for line in lines), args.out)
    return 0


def cmd_embed(args, cfg: RunConfig) -> int:
    model = load_model(args.model)
    examples = _load(args.examples)
    _, joint, _ = score_examples(model, examples)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "claimed_id", "label"] + [f"h{j}" for j in range(joint.shape[1])])
    for i, (ex, row) in enumerate(zip(examples, joint)):
        writer.writerow([i, ex.claimed_id, "" if ex.label is None else ex.label] + [repr(float(v)) for v in row])
    atomic_write_text(args.out, buf.getvalue())
    return 0


COMMANDS = {"gen": cmd_gen, "ingest": cmd_ingest, "train": cmd_train, "eval": cmd_eval, "detect": cmd_detect,
            "embed": cmd_embed}


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split())


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        file_values = load_config_file(args.config) if args.config else {}
        flags = {k: getattr(args, k) for k in _FIELDS if hasattr(args, k)}
        cfg = resolve_config(file_values, flags)
        return COMMANDS[args.command](args, cfg)
    except ReidError as exc:
        print(f"error: {exc.code}: {_one_line(exc)}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: IOError: {_one_line(exc)}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
