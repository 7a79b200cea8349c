"""Command-line interface: generate corpora, train, sweep, evaluate, report.

Configuration is one YAML document with ``data``, ``model``, ``objective``,
``train``, ``eval`` and (for sweeps) ``sweep`` sections; unknown sections or
keys are rejected.  Exit codes: 0 success, 1 runtime failure (for example a
diverging run), 2 validation failure (malformed config or arguments).
"""

from __future__ import annotations

import argparse
import itertools
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .evaluation import evaluate
from .losses import OBJECTIVE_ORDER
from .network import TrainingDiverged, load_checkpoint, save_checkpoint
from .sampling import MiningPolicy
from .synth import SynthSpec, export_corpus, generate, load_corpus
from .training import (
    CurriculumSchedule,
    SweepRow,
    TrainRunConfig,
    train,
    train_sweep,
    _cell_sort_key,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2


class ConfigError(ValueError):
    """Malformed configuration document or command arguments."""


_SCHEMA = {
    "data": {
        "train_speakers", "test_speakers", "utterances_per_speaker",
        "frames_min", "frames_max", "feature_dim", "within_noise",
        "frame_noise", "trial_pairs_per_class", "seed",
    },
    "model": {"hidden_dim", "embedding_dim"},
    "objective": {"name", "margin", "scale", "curriculum", "mining"},
    "train": {
        "epochs", "n_speakers", "n_utterances", "batch_size", "seed",
        "repeats", "learning_rate", "identity_cap", "train_segment",
        "max_steps",
    },
    "eval": {"crop_len", "num_crops", "metric", "normalize"},
    "sweep": None,  # list-valued; validated separately
}

_CURRICULUM_KEYS = {"start_margin", "final_margin", "switch_epoch"}
_MINING_KEYS = {"mode", "fraction", "activation_epoch"}
_SWEEP_KEYS = {"objective", "margin", "scale", "n_utterances", "n_speakers"}


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping of sections")
    for section, content in doc.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section {section!r}")
        if section == "sweep":
            if not isinstance(content, list):
                raise ConfigError("sweep section must be a list of grid entries")
            for entry in content:
                if not isinstance(entry, dict):
                    raise ConfigError("each sweep entry must be a mapping")
                unknown = set(entry) - _SWEEP_KEYS
                if unknown:
                    raise ConfigError(f"unknown sweep keys {sorted(unknown)}")
                if "objective" not in entry:
                    raise ConfigError("each sweep entry needs an objective")
            continue
        if content is None:
            continue
        if not isinstance(content, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        unknown = set(content) - _SCHEMA[section]
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)} in section {section!r}")
        if section == "objective":
            cur = content.get("curriculum")
            if cur is not None and set(cur) - _CURRICULUM_KEYS:
                raise ConfigError(
                    f"unknown curriculum keys {sorted(set(cur) - _CURRICULUM_KEYS)}"
                )
            mining = content.get("mining")
            if mining is not None and set(mining) - _MINING_KEYS:
                raise ConfigError(
                    f"unknown mining keys {sorted(set(mining) - _MINING_KEYS)}"
                )
    return doc


def synth_spec_from(doc: dict) -> SynthSpec:
    try:
        return SynthSpec(**doc.get("data", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid data section: {exc}")


def train_config_from(doc: dict, objective_override: str | None = None,
                      seed_override: int | None = None) -> tuple[TrainRunConfig, int]:
    """Build a TrainRunConfig plus the repeat count from the config document."""
    obj = dict(doc.get("objective", {}))
    name = objective_override or obj.get("name")
    if name is None:
        raise ConfigError("objective.name is required")
    tr = dict(doc.get("train", {}))
    repeats = int(tr.pop("repeats", 1))
    if repeats < 1:
        raise ConfigError("train.repeats must be >= 1")
    model = doc.get("model", {})
    kwargs = dict(objective=name)
    if "margin" in obj:
        kwargs["margin"] = float(obj["margin"])
    if "scale" in obj:
        kwargs["scale"] = float(obj["scale"])
    if obj.get("curriculum") is not None:
        try:
            kwargs["curriculum"] = CurriculumSchedule(**obj["curriculum"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid curriculum: {exc}")
    if obj.get("mining") is not None:
        try:
            kwargs["mining"] = MiningPolicy(**obj["mining"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid mining policy: {exc}")
    kwargs.update(tr)
    kwargs.update({k: int(v) for k, v in model.items()})
    if seed_override is not None:
        kwargs["seed"] = seed_override
    try:
        return TrainRunConfig(**kwargs), repeats
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train/objective section: {exc}")


def eval_kwargs_from(doc: dict) -> dict:
    ev = dict(doc.get("eval", {}))
    out = {
        "crop_len": int(ev.get("crop_len", 30)),
        "num_crops": int(ev.get("num_crops", 10)),
        "metric": str(ev.get("metric", "cosine")),
        "normalize": bool(ev.get("normalize", True)),
    }
    if out["metric"] not in ("cosine", "sqdist"):
        raise ConfigError(f"unknown eval metric {out['metric']!r}")
    return out


def sweep_cells_from(doc: dict, base: TrainRunConfig,
                     objective_filter: str | None = None) -> list[TrainRunConfig]:
    entries = doc.get("sweep")
    if not entries:
        raise ConfigError("config has no sweep section")
    cells = []
    for entry in entries:
        name = entry["objective"]
        if name not in OBJECTIVE_ORDER:
            raise ConfigError(f"unknown sweep objective {name!r}")
        if objective_filter and name != objective_filter:
            continue
        axes = {}
        for key in ("margin", "scale", "n_utterances", "n_speakers"):
            if key in entry:
                value = entry[key]
                axes[key] = list(value) if isinstance(value, (list, tuple)) else [value]
        keys = sorted(axes)
        for combo in itertools.product(*(axes[k] for k in keys)) if keys else [()]:
            overrides = dict(zip(keys, combo))
            try:
                cells.append(replace(base, objective=name, **overrides))
            except ValueError as exc:
                raise ConfigError(f"invalid sweep cell {name} {overrides}: {exc}")
    if not cells:
        raise ConfigError("sweep selection produced no cells")
    return cells


# ---------------------------------------------------------------------------
# result records and report rendering
# ---------------------------------------------------------------------------


def _hyper_slug(config: TrainRunConfig) -> str:
    parts = []
    for key, value in sorted(config.hyperparameter_summary().items()):
        parts.append(f"{key[0]}{value:g}" if isinstance(value, float) else f"{key[0]}{value}")
    return "_".join(parts) if parts else "base"


def _hyper_text(summary: dict) -> str:
    names = {"margin": "m", "scale": "s", "n_utterances": "M", "n_speakers": "N"}
    if not summary:
        return "-"
    return ", ".join(f"{names[k]}={summary[k]:g}" for k in sorted(summary, key=lambda k: names[k]))


def write_result(out_dir: Path, row: SweepRow) -> Path:
    record = {
        "objective": row.config.objective,
        "hyperparameters": row.config.hyperparameter_summary(),
        "repeats": len(row.eers),
        "eers": row.eers,
        "mean_eer": row.mean_eer,
        "std_eer": row.std_eer,
        "error": row.error,
        "seed": row.config.seed,
    }
    path = out_dir / f"result_{row.config.objective}_{_hyper_slug(row.config)}.json"
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2)
        fh.write("\n")
    return path


def read_results(results_dir: Path) -> list[dict]:
    rows = []
    for path in sorted(results_dir.glob("*.json")):
        with open(path) as fh:
            rows.append(json.load(fh))
    if not rows:
        raise ConfigError(f"no result files (*.json) found in {results_dir}")
    return rows


def _record_sort_key(rec: dict):
    h = rec.get("hyperparameters", {})
    return (
        OBJECTIVE_ORDER.index(rec["objective"]),
        h.get("margin", 0.0),
        h.get("scale", 0.0),
        h.get("n_utterances", 0),
        h.get("n_speakers", 0),
    )


def render_report(records: list[dict]) -> tuple[str, str]:
    """Text table (percent, two decimals) and numerically lossless CSV."""
    records = sorted(records, key=_record_sort_key)
    name_width = max(len(r["objective"]) for r in records) + 2
    lines = [f"{'objective':<{name_width}} {'hyperparameters':<20} {'EER%':>14} {'repeats':>8}"]
    csv_lines = ["objective,hyperparameters,repeats,mean_eer,std_eer,eers"]
    for rec in records:
        hyper = _hyper_text(rec.get("hyperparameters", {}))
        if rec.get("error"):
            cell = "diverged"
        else:
            cell = f"{100 * rec['mean_eer']:.2f}±{100 * rec['std_eer']:.2f}"
        lines.append(
            f"{rec['objective']:<{name_width}} {hyper:<20} {cell:>14} {rec['repeats']:>8}"
        )
        eers = ";".join(f"{e:.17g}" for e in rec.get("eers", []))
        csv_lines.append(
            f"{rec['objective']},{hyper.replace(', ', ' ')},{rec['repeats']},"
            f"{rec['mean_eer']:.17g},{rec['std_eer']:.17g},{eers}"
        )
    return "\n".join(lines) + "\n", "\n".join(csv_lines) + "\n"


def write_eval_report(out_dir: Path, report, trials) -> None:
    with open(out_dir / "report.txt", "w") as fh:
        fh.write(f"eer {report.eer:.17g}\n")
        fh.write(f"threshold {report.threshold:.17g}\n")
        fh.write(f"n_target {report.n_target}\n")
        fh.write(f"n_nontarget {report.n_nontarget}\n")
        for key, value in sorted(report.metadata.items()):
            fh.write(f"{key} {value}\n")
    with open(out_dir / "trial_scores.csv", "w") as fh:
        fh.write("handle_a,handle_b,label,score\n")
        for trial, score in zip(trials, report.metadata.get("_scores", [])):
            fh.write(f"{trial.handle_a},{trial.handle_b},{int(trial.is_same)},{score:.17g}\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    doc = load_config(args.config)
    spec = synth_spec_from(doc)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        train_index, test_index, trials = generate(spec)
        export_corpus(out, train_index, test_index, trials)
    except OSError as exc:
        print(f"error: cannot write corpus: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(
        f"wrote corpus to {out}: {train_index.num_speakers} train speakers, "
        f"{test_index.num_speakers} test speakers, {len(trials)} trials"
    )
    return EXIT_OK


def _load_corpus_checked(corpus_dir) -> tuple:
    path = Path(corpus_dir)
    if not (path / "manifest.txt").exists():
        raise ConfigError(f"corpus directory {path} has no manifest.txt")
    return load_corpus(path)


def cmd_train(args) -> int:
    doc = load_config(args.config)
    config, repeats = train_config_from(doc, args.objective, args.seed_override)
    eval_kwargs = eval_kwargs_from(doc)
    train_index, test_index, trials = _load_corpus_checked(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    eers = []
    for r in range(repeats):
        run_cfg = replace(config, seed=config.seed + r)
        try:
            result = train(run_cfg, train_index)
        except TrainingDiverged as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        stem = f"{run_cfg.objective}_seed{run_cfg.seed}"
        save_checkpoint(out / f"checkpoint_{stem}.bin", result.params)
        result.telemetry.write(out / f"telemetry_{stem}.txt")
        report = evaluate(result.params, test_index, trials, **eval_kwargs)
        eers.append(report.eer)
        if args.verbose:
            for rec in result.telemetry.records:
                print(
                    f"  epoch {rec.epoch}: loss {rec.mean_loss:.4f} lr {rec.learning_rate:.2e} "
                    f"margin {rec.margin} mining {rec.mining}"
                )
        print(f"repeat {r}: objective {run_cfg.objective} seed {run_cfg.seed} "
              f"steps {result.steps} EER {report.eer:.4f}")
    row = SweepRow(
        config=config,
        eers=eers,
        mean_eer=float(np.mean(eers)),
        std_eer=float(np.std(eers)),
    )
    write_result(out, row)
    print(f"mean EER {row.mean_eer:.4f} ± {row.std_eer:.4f} over {repeats} repeat(s)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    doc = load_config(args.config)
    base, repeats = train_config_from(doc, None, args.seed_override)
    cells = sweep_cells_from(doc, base, args.objective)
    eval_kwargs = eval_kwargs_from(doc)
    train_index, test_index, trials = _load_corpus_checked(args.corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = train_sweep(
        cells, train_index, test_index, trials,
        repeats=repeats, jobs=args.jobs,
        crop_len=eval_kwargs["crop_len"], num_crops=eval_kwargs["num_crops"],
        metric=eval_kwargs["metric"],
    )
    failed = 0
    for row in rows:
        write_result(out, row)
        if row.error:
            failed += 1
            print(f"cell {row.config.objective} {_hyper_text(row.config.hyperparameter_summary())}: "
                  f"aborted ({row.error})")
    text, _ = render_report(read_results(out))
    print(text, end="")
    print(f"{len(rows) - failed}/{len(rows)} cells completed")
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


def cmd_evaluate(args) -> int:
    doc = load_config(args.config) if args.config else {}
    eval_kwargs = eval_kwargs_from(doc)
    _, test_index, trials = _load_corpus_checked(args.corpus)
    try:
        params = load_checkpoint(args.checkpoint)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load checkpoint: {exc}")
    report = evaluate(params, test_index, trials, **eval_kwargs)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # keep per-trial scores for the CSV by rescoring through the cache
    from .evaluation import ScoredTrials, crop_embeddings, score_trial

    cache = {
        h: crop_embeddings(test_index.utterances[h], params, eval_kwargs["crop_len"],
                           eval_kwargs["num_crops"], eval_kwargs["normalize"])
        for h in {h for t in trials for h in (t.handle_a, t.handle_b)}
    }
    scores = [
        score_trial(cache[t.handle_a], cache[t.handle_b], eval_kwargs["metric"])
        for t in trials
    ]
    report.metadata["_scores"] = scores
    write_eval_report(out, report, trials)
    report.metadata.pop("_scores")
    print(f"EER {report.eer:.4f} at threshold {report.threshold:.4f} "
          f"({report.n_target} target / {report.n_nontarget} nontarget trials)")
    return EXIT_OK


def cmd_report(args) -> int:
    records = read_results(Path(args.results))
    text, csv_text = render_report(records)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text)
        (out / "report.csv").write_text(csv_text)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spklearn",
        description="Train and compare speaker-embedding objectives on synthetic corpora",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic corpus on disk")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one objective (optionally repeated)")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--objective", help="override the configured objective")
    p.add_argument("--seed-override", type=int, default=None)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train a hyperparameter grid")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--objective", help="only sweep cells of this objective")
    p.add_argument("--seed-override", type=int, default=None)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on corpus trials")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="optional config supplying the eval section")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render result tables from a results directory")
    p.add_argument("--results", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
