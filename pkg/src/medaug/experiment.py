"""Experiment configuration, cross-product runner, and result tables.

A run executes every configured cell for every seed. Within one seed the
corpus, the tuned generator (per balanced flag), the synthetic pool (per
prompt mode) and the teacher are shared by all strategies, so rows differ
only in how the generated notes are integrated. Smaller synthetic counts use
prefixes of the largest pool.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import os
import re
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

from .augment import (
    KL_SCOPES,
    NOISE_MODES,
    PROMPT_MODES,
    STRATEGIES,
    AugmentationPlan,
    docs_hash,
    generate_synthetic,
    inject_noise,
    strategy_base,
    strategy_confidence_filter,
)
from .checkpoint import param_hash
from .classifier import ClassifierConfig, fit, score_corpus
from .corpus import SynthBenchSpec, build_vocab, make_split, synth_benchmark
from .distill import KL_DIRECTIONS, DistillConfig, PipelineStageError, factory_for, pretrain_teacher, train_student
from .genlm import GeneratorConfig, GeneratorModel, lm_finetune
from .metrics import evaluate

METRICS = ("auroc", "auprc", "rp80")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = f"{path or '<config>'}:{line}: " if line else f"{path or '<config>'}: "
        super().__init__(where + message)
        self.line = line


# ------------------------------------------------------------------ config


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "yes", "y", "true", "on"):
        return True
    if v in ("0", "no", "n", "false", "off"):
        return False
    raise ValueError(f"expected yes/no, got {s!r}")


def _choice(options):
    def parse(s: str) -> str:
        s = s.strip()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s
    return parse


def _list(parse):
    def parse_list(s: str) -> list:
        items = [x.strip() for x in s.split(",") if x.strip()]
        if not items:
            raise ValueError("list must not be empty")
        return [parse(x) for x in items]
    return parse_list


# section -> key -> parser; values not given fall back to dataclass defaults
SCHEMA: dict[str, dict[str, Callable[[str], Any]]] = {
    "benchmark": {
        "n_docs": int, "n_content_words": int, "n_positive_phrases": int, "n_negative_phrases": int,
        "min_len": int, "max_len": int, "positive_fraction": float, "label_noise": float,
        "cross_rate": float, "phrase_geom_p": float, "seed": int,
    },
    "generator": {
        "d_model": int, "n_heads": int, "n_layers": int, "context_len": int, "epochs": int, "lr": float,
        "batch_size": int, "temperature": float, "top_k": int, "max_new_tokens": int, "sample_batch": int,
        "min_freq": int,
    },
    "classifier": {"embed_dim": int, "hidden_dim": int, "epochs": int, "lr": float, "batch_size": int},
    "augment": {
        "n_synthetic": _list(int), "prompt_mode": _list(_choice(PROMPT_MODES)), "balanced": _list(_bool),
        "dedup": _bool, "noise_rate": float, "noise_mode": _choice(NOISE_MODES),
    },
    "strategies": {
        "kinds": _list(_choice(STRATEGIES)), "keep_fraction": _list(float), "tau": _list(float),
        "kl_scope": _choice(KL_SCOPES), "kl_direction": _choice(KL_DIRECTIONS),
    },
    "experiment": {
        "name": str, "seeds": _list(int), "output_dir": str, "evaluate_test": _bool,
        "mode": _choice(("grid", "finetune_modes")),
    },
}


@dataclass
class ExperimentConfig:
    benchmark: SynthBenchSpec = field(default_factory=SynthBenchSpec)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    min_freq: int = 2
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    n_synthetic: list[int] = field(default_factory=lambda: [900])
    prompt_modes: list[str] = field(default_factory=lambda: ["with_context"])
    balanced: list[bool] = field(default_factory=lambda: [True])
    dedup: bool = True
    noise_rate: float = 0.0
    noise_mode: str = "relabel"
    strategies: list[str] = field(default_factory=lambda: ["none", "base", "confidence_filter", "medaug"])
    keep_fractions: list[float] = field(default_factory=lambda: [0.5])
    taus: list[float] = field(default_factory=lambda: [1.0])
    kl_scope: str = "all"
    kl_direction: str = "teacher_student"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    name: str = "experiment"
    output_dir: str = "runs/experiment"
    evaluate_test: bool = True
    mode: str = "grid"

    def validate(self) -> None:
        if not self.seeds:
            raise ValueError("at least one seed is required")
        for name in ("n_synthetic", "prompt_modes", "balanced", "strategies", "keep_fractions", "taus"):
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        if any(n < 0 for n in self.n_synthetic):
            raise ValueError("n_synthetic values must be nonnegative")
        if any(t < 0 for t in self.taus):
            raise ValueError("tau values must be nonnegative")
        if any(not 0 < k <= 1 for k in self.keep_fractions):
            raise ValueError("keep_fraction values must lie in (0, 1]")
        if not 0 <= self.noise_rate <= 1:
            raise ValueError("noise_rate must lie in [0, 1]")
        self.benchmark.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _key_lines(text: str) -> dict[tuple[str | None, str | None], int]:
    """(section, key) -> 1-based line number, (section, None) for headers."""
    lines: dict[tuple[str | None, str | None], int] = {}
    section = None
    for i, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), i)
        elif s and s[0] not in "#;":
            key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
            lines.setdefault((section, key), i)
    return lines


def parse_config(text: str, path: str | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text, source=path or "<config>")
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError(f"cannot parse: {exc.errors[0][1].strip() if exc.errors else exc}", line, path) from None
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(str(exc).splitlines()[0], line, path) from None
    lines = _key_lines(text)
    values: dict[str, dict[str, Any]] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, None)), path)
        values[section] = {}
        for key, raw in parser.items(section):
            line = lines.get((section, key))
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]", line, path)
            try:
                values[section][key] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for '{key}': {exc}", line, path) from None

    def anchor(section: str, key: str | None = None) -> int | None:
        return lines.get((section, key)) or lines.get((section, None))

    gen = dict(values.get("generator", {}))
    min_freq = gen.pop("min_freq", 2)
    aug = values.get("augment", {})
    strat = values.get("strategies", {})
    exp = values.get("experiment", {})
    try:
        bench = SynthBenchSpec(**values.get("benchmark", {}))
        generator = GeneratorConfig(**gen)
    except ValueError as exc:
        raise ConfigError(str(exc), anchor("generator" if "benchmark" not in str(exc) else "benchmark"), path) from None
    cfg = ExperimentConfig(
        benchmark=bench,
        generator=generator,
        min_freq=min_freq,
        classifier=ClassifierConfig(**values.get("classifier", {})),
        n_synthetic=aug.get("n_synthetic", [900]),
        prompt_modes=aug.get("prompt_mode", ["with_context"]),
        balanced=aug.get("balanced", [True]),
        dedup=aug.get("dedup", True),
        noise_rate=aug.get("noise_rate", 0.0),
        noise_mode=aug.get("noise_mode", "relabel"),
        strategies=strat.get("kinds", ["none", "base", "confidence_filter", "medaug"]),
        keep_fractions=strat.get("keep_fraction", [0.5]),
        taus=strat.get("tau", [1.0]),
        kl_scope=strat.get("kl_scope", "all"),
        kl_direction=strat.get("kl_direction", "teacher_student"),
        seeds=exp.get("seeds", [0, 1, 2, 3, 4]),
        name=exp.get("name", "experiment"),
        output_dir=exp.get("output_dir", "runs/experiment"),
        evaluate_test=exp.get("evaluate_test", True),
        mode=exp.get("mode", "grid"),
    )
    if cfg.mode == "finetune_modes":
        cfg = finetune_modes_config(cfg)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc), None, path) from None
    return cfg


def load_config(path) -> ExperimentConfig:
    path = str(path)
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), path)


def finetune_modes_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """The prompt x balanced grid, base strategy only, validation split only."""
    return replace(
        cfg,
        strategies=["base"],
        prompt_modes=["without_context", "with_context"],
        balanced=[False, True],
        evaluate_test=False,
        mode="finetune_modes",
    )


# ------------------------------------------------------------------- cells


@dataclass(frozen=True)
class Cell:
    strategy: str
    n_synthetic: int | None = None
    prompt_mode: str | None = None
    balanced: bool | None = None
    tau: float | None = None
    keep_fraction: float | None = None

    def key(self) -> tuple:
        return (self.strategy, self.n_synthetic, self.prompt_mode, self.balanced, self.tau, self.keep_fraction)


def enumerate_cells(cfg: ExperimentConfig) -> list[Cell]:
    cells = []
    for kind in cfg.strategies:
        if kind == "none":
            cells.append(Cell("none"))
            continue
        extras = {"base": [{}], "confidence_filter": [{"keep_fraction": k} for k in cfg.keep_fractions],
                  "medaug": [{"tau": t} for t in cfg.taus]}[kind]
        for bal in cfg.balanced:
            for mode in cfg.prompt_modes:
                for n in cfg.n_synthetic:
                    for extra in extras:
                        cells.append(Cell(kind, n, mode, bal, **extra))
    return cells


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineStageError:
        raise
    except Exception as exc:
        raise PipelineStageError(name, exc) from exc


def run_seed(cfg: ExperimentConfig, seed: int) -> list[dict]:
    """All cells for one seed; returns one run record per cell."""
    bench = replace(cfg.benchmark, seed=cfg.benchmark.seed + seed)
    split = _stage("corpus", lambda: make_split(synth_benchmark(bench), seed=seed))
    vocab = build_vocab(split.train, min_freq=cfg.min_freq)
    factory = factory_for(vocab)
    dcfg = DistillConfig(
        tau=0.0, kl_scope=cfg.kl_scope, direction=cfg.kl_direction,
        teacher=cfg.classifier, student=cfg.classifier, seed=seed,
    )
    negatives = [d for d in split.train if d.label == 0]
    cache: dict = {}

    def teacher():
        if "teacher" not in cache:
            cache["teacher"] = _stage("teacher", pretrain_teacher, factory, split.train, dcfg)
        return cache["teacher"]

    def pool(balanced: bool, mode: str):
        key = ("pool", balanced, mode)
        if key not in cache:
            gkey = ("gen", balanced)
            if gkey not in cache:
                g = GeneratorModel.init(vocab, cfg.generator, seed)
                cache[gkey] = _stage("finetune", lm_finetune, g, split.train, balanced, seed)[0]
            plan = AugmentationPlan(count=max(cfg.n_synthetic), prompt_mode=mode, dedup=cfg.dedup, seed=seed)
            syn = _stage("generate", generate_synthetic, cache[gkey], plan, split.train)
            cache[key] = inject_noise(syn, cfg.noise_rate, seed, cfg.noise_mode, negatives)
        return cache[key]

    records = []
    for cell in enumerate_cells(cfg):
        synthetic = [] if cell.strategy == "none" else pool(cell.balanced, cell.prompt_mode)[: cell.n_synthetic]
        if cell.strategy == "none":
            model, combined = teacher(), list(split.train)
        elif cell.strategy == "medaug":
            combined = strategy_base(split.train, synthetic)
            model = _stage(
                "student", train_student, factory, combined, teacher(), replace(dcfg, tau=cell.tau)
            )[0]
        else:
            if cell.strategy == "base":
                combined = strategy_base(split.train, synthetic)
            else:
                combined = strategy_confidence_filter(
                    split.train, synthetic, cell.keep_fraction, seed, scorer=teacher()
                )
            model = factory(cfg.classifier, seed)
            c = cfg.classifier
            _stage("student", fit, model, combined, c.epochs, c.lr, seed, c.batch_size)
        assert all(d.origin == "original" for d in split.valid + split.test)
        rec = {
            "config_hash": cfg.config_hash(),
            "seed": seed,
            "cell": asdict(cell),
            "n_train": len(split.train),
            "n_synthetic": len(synthetic),
            "n_kept": len(combined) - len(split.train),
            "synthetic_hash": docs_hash(synthetic),
            "model_hash": param_hash(model),
            "valid": evaluate(score_corpus(model, split.valid)),
        }
        if cfg.evaluate_test:
            rec["test"] = evaluate(score_corpus(model, split.test))
        records.append(rec)
    return records


# ------------------------------------------------------------------ tables


@dataclass
class ResultRow:
    cell: Cell
    n_seeds: int
    kept_mean: float
    stats: dict[str, tuple[float, float]]  # "valid_auroc" -> (mean, std)


@dataclass
class ResultTable:
    rows: list[ResultRow]

    COLUMNS = ("strategy", "n_synthetic", "prompt_mode", "balanced", "tau", "keep_fraction", "n_seeds", "n_kept")

    def metric_columns(self) -> list[str]:
        return [f"{split}_{m}_{s}" for split in ("valid", "test") for m in METRICS for s in ("mean", "std")]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([*self.COLUMNS, *self.metric_columns()])
        for r in self.rows:
            c = r.cell
            row = [c.strategy, _fmt(c.n_synthetic), _fmt(c.prompt_mode), _fmt(c.balanced), _fmt(c.tau),
                   _fmt(c.keep_fraction), r.n_seeds, f"{r.kept_mean:.1f}"]
            for split in ("valid", "test"):
                for m in METRICS:
                    mean_std = r.stats.get(f"{split}_{m}")
                    row += [f"{mean_std[0]:.6f}", f"{mean_std[1]:.6f}"] if mean_std else ["", ""]
            w.writerow(row)
        return buf.getvalue()

    def to_markdown(self, title: str = "Results") -> str:
        has_test = any("test_auroc" in r.stats for r in self.rows)
        splits = ("valid", "test") if has_test else ("valid",)
        head = ["strategy", "params", "seeds"] + [f"{s} {m.upper()}" for s in splits for m in METRICS]
        out = [f"# {title}", "", "| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for r in self.rows:
            c = r.cell
            params = ", ".join(
                f"{k}={_fmt(v)}" for k, v in asdict(c).items() if k != "strategy" and v is not None
            ) or "-"
            cells = [c.strategy, params, str(r.n_seeds)]
            for s in splits:
                for m in METRICS:
                    mu, sd = r.stats[f"{s}_{m}"]
                    cells.append(f"{mu:.3f} ± {sd:.3f}")
            out.append("| " + " | ".join(cells) + " |")
        return "\n".join(out) + "\n"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "Y" if v else "N"
    return str(v)


def aggregate(records: list[dict]) -> ResultTable:
    """Group run records by cell (first-seen order) into mean / sample-std rows."""
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        cell = Cell(**rec["cell"])
        groups.setdefault(cell.key(), []).append(rec)
    rows = []
    for recs in groups.values():
        cell = Cell(**recs[0]["cell"])
        stats = {}
        for split in ("valid", "test"):
            if all(split in r for r in recs):
                for m in METRICS:
                    xs = [r[split][m] for r in recs]
                    stats[f"{split}_{m}"] = (statistics.fmean(xs), statistics.stdev(xs) if len(xs) > 1 else 0.0)
        kept = statistics.fmean(r["n_kept"] for r in recs)
        rows.append(ResultRow(cell, len(recs), kept, stats))
    return ResultTable(rows)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MEDAUG_THREADS", "1")))
    except ValueError:
        return 1


def run_records(cfg: ExperimentConfig) -> list[dict]:
    workers = min(_threads(), len(cfg.seeds))
    if workers == 1:
        per_seed = [run_seed(cfg, s) for s in cfg.seeds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(run_seed, [cfg] * len(cfg.seeds), cfg.seeds))
    # cell-major order: all seeds of a cell are adjacent
    n_cells = len(per_seed[0])
    return [per_seed[s][c] for c in range(n_cells) for s in range(len(cfg.seeds))]


def write_outputs(cfg_name: str, records: list[dict], out_dir: Path) -> ResultTable:
    out_dir.mkdir(parents=True, exist_ok=True)
    table = aggregate(records)
    _atomic_write(out_dir / "runs.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    _atomic_write(out_dir / "results.csv", table.to_csv())
    _atomic_write(out_dir / "summary.md", table.to_markdown(cfg_name))
    return table


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> ResultTable:
    cfg.validate()
    out = Path(out_dir or cfg.output_dir)
    records = run_records(cfg)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "config.json", json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return write_outputs(cfg.name, records, out)


def compare_strategies(cfg: ExperimentConfig) -> ResultTable:
    if len(cfg.strategies) < 2:
        raise ValueError("compare_strategies needs at least two strategies")
    return aggregate(run_records(cfg))


def sweep_finetune_modes(cfg: ExperimentConfig) -> ResultTable:
    return aggregate(run_records(finetune_modes_config(cfg)))


def rebuild_report(run_dir: str | Path) -> ResultTable:
    """Regenerate results.csv and summary.md from an existing runs.jsonl."""
    run_dir = Path(run_dir)
    path = run_dir / "runs.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found")
    records = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    name = run_dir.name
    cfg_path = run_dir / "config.json"
    if cfg_path.exists():
        name = json.loads(cfg_path.read_text(encoding="utf-8")).get("name", name)
    return write_outputs(name, records, run_dir)
