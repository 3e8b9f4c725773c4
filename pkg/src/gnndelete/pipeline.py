"""Experiment configs, the seeded unlearning pipeline, persistence and reporting."""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .checkpoint import load_model, load_operator, save_model, save_operator
from .deletion import UnlearnedModel, param_count
from .errors import ConfigError, GnnDeleteError
from .graph import (
    IN,
    EdgeSplit,
    Graph,
    delete_edges,
    incident_edges,
    load_edge_list,
    sample_deletion,
    split_edges,
)
from .metrics import EvalReport, eval_deleted, link_scores, mi_ratio, sample_test_negatives
from .model import GnnModel, TrainConfig, derive_seed, train_base
from .synthetic import generate_synthetic, parse_spec
from .trainer import (
    UnlearnConfig,
    baseline_grad_ascent,
    baseline_noisy_finetune,
    baseline_retrain,
    unlearn,
)

log = logging.getLogger(__name__)

GNNDELETE = "gnndelete"
BASELINES = ("retrain", "grad_ascent", "noisy_finetune")
RESULTS_FILE = "results.json"


class RunExistsError(GnnDeleteError):
    """The output directory already holds results for this configuration."""


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def _names(text: str) -> list[str]:
    return [x for x in text.replace(",", " ").split()]


@dataclass
class DatasetConfig:
    """Either an edge-list file (``path``) or a synthetic generator (``synthetic``)."""

    path: str | None = None
    features: str | None = None
    labels: str | None = None
    synthetic: str | None = None
    synthetic_features: str = "degree"
    normalize_features: bool = False
    test_frac: float = 0.05
    val_frac: float = 0.05


@dataclass
class DeletionConfig:
    """Edge deletion by ``ratio``/``locality``, or node deletion when ``nodes`` is set."""

    ratio: float = 0.025
    locality: str = IN
    nodes: list[int] = field(default_factory=list)


@dataclass
class BaselineConfig:
    methods: list[str] = field(default_factory=lambda: list(BASELINES))
    grad_ascent_steps: int = 10
    grad_ascent_lr: float = 0.01
    noisy_steps: int = 10
    noisy_sigma: float = 0.01
    noisy_lr: float = 0.01


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig
    hidden_dims: list[int]
    train: TrainConfig
    unlearn: UnlearnConfig
    deletion: DeletionConfig
    baselines: BaselineConfig
    seeds: list[int]
    output_dir: str

    def validate(self) -> None:
        d = self.dataset
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.output_dir:
            raise ConfigError("output_dir is required")
        if (d.path is None) == (d.synthetic is None):
            raise ConfigError("dataset needs exactly one of path or synthetic")
        for p in (d.path, d.features, d.labels):
            if p is not None and not Path(p).exists():
                raise ConfigError(f"dataset file {p} does not exist")
        for m in self.baselines.methods:
            if m not in BASELINES:
                raise ConfigError(f"unknown baseline {m!r}")
        if self.deletion.locality.upper() not in ("IN", "OUT"):
            raise ConfigError("deletion locality must be IN or OUT")

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """Stable digest of everything except the output directory."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _get(sec: configparser.SectionProxy | None, key: str, default=None, conv=str):
    if sec is None or key not in sec or sec[key].strip() == "":
        return default
    raw = sec[key].strip()
    try:
        if conv is bool:
            return sec.getboolean(key)
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{sec.name}] {key}: {exc}") from None


def parse_config(text: str, base_dir: Path | str = ".") -> ExperimentConfig:
    """Parse INI-style text; relative file paths are resolved against ``base_dir``."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    sec = {name: (cp[name] if cp.has_section(name) else None)
           for name in ("dataset", "model", "train", "unlearn", "deletion", "baselines", "run")}
    base_dir = Path(base_dir)

    def path(key):
        p = _get(sec["dataset"], key)
        return None if p is None else str(base_dir / p)

    dataset = DatasetConfig(
        path=path("path"),
        features=path("features"),
        labels=path("labels"),
        synthetic=_get(sec["dataset"], "synthetic"),
        synthetic_features=_get(sec["dataset"], "synthetic_features", "degree"),
        normalize_features=_get(sec["dataset"], "normalize_features", False, bool),
        test_frac=_get(sec["dataset"], "test_frac", 0.05, float),
        val_frac=_get(sec["dataset"], "val_frac", 0.05, float),
    )
    hidden = _get(sec["model"], "hidden_dims", [128, 64], _ints)
    t, u, dl, b, r = sec["train"], sec["unlearn"], sec["deletion"], sec["baselines"], sec["run"]
    train = TrainConfig(
        hidden_dims=hidden,
        epochs=_get(t, "epochs", 300, int),
        lr=_get(t, "lr", 0.01, float),
        weight_decay=_get(t, "weight_decay", 0.0, float),
    )
    unl = UnlearnConfig(
        lam=_get(u, "lambda", 0.5, float),
        epochs=_get(u, "epochs", 200, int),
        lr=_get(u, "lr", 1e-3, float),
        optimizer=_get(u, "optimizer", "adam"),
        random_pair_seed=_get(u, "random_pair_seed", 0, int),
        pairs_per_deleted_edge=_get(u, "pairs_per_deleted_edge", 1, int),
        mode=_get(u, "mode", "layer-wise"),
        activation=_get(u, "activation", "linear"),
    )
    deletion = DeletionConfig(
        ratio=_get(dl, "ratio", 0.025, float),
        locality=_get(dl, "locality", IN).upper(),
        nodes=_get(dl, "nodes", [], _ints),
    )
    baselines = BaselineConfig(
        # an explicitly blank list means "no baselines"
        methods=_names(b["methods"]) if b is not None and "methods" in b else list(BASELINES),
        grad_ascent_steps=_get(b, "grad_ascent_steps", 10, int),
        grad_ascent_lr=_get(b, "grad_ascent_lr", 0.01, float),
        noisy_steps=_get(b, "noisy_steps", 10, int),
        noisy_sigma=_get(b, "noisy_sigma", 0.01, float),
        noisy_lr=_get(b, "noisy_lr", 0.01, float),
    )
    if r is None or "output_dir" not in r or "seeds" not in r:
        raise ConfigError("[run] needs seeds and output_dir")
    out = _get(r, "output_dir")
    cfg = ExperimentConfig(dataset, hidden, train, unl, deletion, baselines,
                           _get(r, "seeds", [], _ints),
                           None if out is None else str(base_dir / out))
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(), path.parent)


# -- records -----------------------------------------------------------------


@dataclass
class MethodReport:
    method: str
    seed: int
    report: EvalReport


@dataclass
class RunRecord:
    """Every report is tagged with its method name and seed."""

    config_hash: str
    base_reports: list[MethodReport] = field(default_factory=list)
    reports: list[MethodReport] = field(default_factory=list)
    started_at: str = ""
    finished_at: str = ""

    def to_dict(self) -> dict:
        def rows(items):
            return [{"method": r.method, "seed": r.seed, "report": r.report.to_dict()} for r in items]

        return {"config_hash": self.config_hash, "base_reports": rows(self.base_reports),
                "reports": rows(self.reports), "started_at": self.started_at,
                "finished_at": self.finished_at}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> RunRecord:
        def rows(items):
            return [MethodReport(r["method"], int(r["seed"]), EvalReport.from_dict(r["report"]))
                    for r in items]

        return cls(d["config_hash"], rows(d.get("base_reports", [])), rows(d.get("reports", [])),
                   d.get("started_at", ""), d.get("finished_at", ""))

    @classmethod
    def from_json(cls, text: str) -> RunRecord:
        return cls.from_dict(json.loads(text))


# -- stages ----------------------------------------------------------------


def load_dataset(cfg: DatasetConfig, seed: int) -> Graph:
    if cfg.synthetic is not None:
        g = generate_synthetic(parse_spec(cfg.synthetic, cfg.synthetic_features), seed)
    else:
        g = load_edge_list(cfg.path, features_path=cfg.features, labels_path=cfg.labels)
    if cfg.normalize_features:
        g = g.with_features(g.features / np.maximum(np.abs(g.features).sum(1, keepdims=True), 1e-12))
    return g


def save_split(split: EdgeSplit, path) -> None:
    np.savez(path, train=split.train, validation=split.validation, test=split.test,
             deleted=split.deleted)


def load_split(path) -> EdgeSplit:
    with np.load(path) as z:
        return EdgeSplit(z["train"], z["validation"], z["test"], z["deleted"])


def _stage(path: Path, resume: bool, compute, save, load):
    """Reuse the artifact at ``path`` when resuming, else compute and persist it."""
    if resume and path.exists():
        return load(path), 0.0
    t0 = time.perf_counter()
    value = compute()
    elapsed = time.perf_counter() - t0
    save(value, path)
    return value, elapsed


def _evaluate(model, base, g, g_r, split: EdgeSplit, test_neg, seed: int) -> EvalReport:
    e_d = split.deleted
    auc_t, ap_t = link_scores(model, g_r, split.test, test_neg)
    rep = EvalReport(auroc_test=auc_t, auprc_test=ap_t)
    if len(e_d):
        rep.auroc_deleted, rep.auprc_deleted = eval_deleted(model, g_r, e_d, derive_seed(seed, 8))
        rep.mi_ratio = mi_ratio(base, model, g, g_r, e_d)
    return rep


@dataclass
class SeedState:
    """Everything one seed's stages produce; fields fill in as stages run."""

    seed: int
    out: Path
    g_full: Graph
    split: EdgeSplit
    train_cfg: TrainConfig
    base: GnnModel | None = None
    t_base: float = 0.0
    g: Graph | None = None
    g_r: Graph | None = None
    test_neg: np.ndarray | None = None


def stage_base(cfg: ExperimentConfig, seed: int, out: Path, resume: bool = False) -> SeedState:
    """Load the graph, split it and train (or reload) the base model."""
    out.mkdir(parents=True, exist_ok=True)
    g_full = load_dataset(cfg.dataset, seed)
    split = split_edges(g_full, cfg.dataset.test_frac, cfg.dataset.val_frac, seed)
    train_cfg = TrainConfig(cfg.hidden_dims, cfg.train.epochs, cfg.train.lr,
                            cfg.train.weight_decay, seed)
    st = SeedState(seed, out, g_full, split, train_cfg)
    st.base, st.t_base = _stage(out / "base.gnnd", resume,
                                lambda: train_base(g_full, split, train_cfg), save_model, load_model)
    # G: the training graph the base model was fit on
    st.g = g_full.with_edges(split.train)
    return st


def stage_deletion(cfg: ExperimentConfig, st: SeedState, resume: bool = False) -> SeedState:
    """Choose E_d (sampled edges or the listed nodes' incident edges) and build G_r."""
    def pick():
        if cfg.deletion.nodes:
            return st.split.with_deleted(incident_edges(st.g, cfg.deletion.nodes))
        return sample_deletion(st.g, st.split, cfg.deletion.ratio, cfg.deletion.locality,
                               derive_seed(st.seed, 6))

    st.split, _ = _stage(st.out / "split.npz", resume, pick, save_split, load_split)
    st.g_r = delete_edges(st.g, st.split.deleted)
    st.test_neg = sample_test_negatives(st.g_full, st.split, derive_seed(st.seed, 7))
    return st


def unlearn_config_for(cfg: ExperimentConfig, seed: int) -> UnlearnConfig:
    rps = derive_seed(seed, 5, cfg.unlearn.random_pair_seed)
    return UnlearnConfig(**{**asdict(cfg.unlearn), "random_pair_seed": rps})


def stage_gnndelete(cfg: ExperimentConfig, st: SeedState, resume: bool = False) -> MethodReport:
    ucfg = unlearn_config_for(cfg, st.seed)
    op, t_op = _stage(st.out / "gnndelete.gnnd", resume,
                      lambda: unlearn(st.base, st.g, st.split.deleted, ucfg)[0],
                      save_operator, load_operator)
    um = UnlearnedModel(st.base, op, st.g_r)
    rep = _evaluate(um, st.base, st.g, st.g_r, st.split, st.test_neg, st.seed)
    rep.wall_time_seconds, rep.delop_params = t_op, param_count(op)
    return MethodReport(GNNDELETE, st.seed, rep)


def stage_baseline(cfg: ExperimentConfig, st: SeedState, name: str,
                   resume: bool = False) -> MethodReport:
    b = cfg.baselines
    runners = {
        "retrain": lambda: baseline_retrain(st.g_r, st.split, st.train_cfg),
        "grad_ascent": lambda: baseline_grad_ascent(st.base, st.g, st.split.deleted,
                                                    b.grad_ascent_steps, b.grad_ascent_lr),
        "noisy_finetune": lambda: baseline_noisy_finetune(st.base, st.g_r, st.split, b.noisy_steps,
                                                          b.noisy_sigma, b.noisy_lr,
                                                          derive_seed(st.seed, 9)),
    }
    if name not in runners:
        raise ConfigError(f"unknown baseline {name!r}")
    model, t = _stage(st.out / f"{name}.gnnd", resume, runners[name], save_model, load_model)
    rep = _evaluate(model, st.base, st.g, st.g_r, st.split, st.test_neg, st.seed)
    rep.wall_time_seconds = t
    return MethodReport(name, st.seed, rep)


def base_report(st: SeedState) -> MethodReport:
    rep = _evaluate(st.base, st.base, st.g, st.g_r, st.split, st.test_neg, st.seed)
    rep.wall_time_seconds = st.t_base
    return MethodReport("base", st.seed, rep)


def run_seed(cfg: ExperimentConfig, seed: int, out: Path, resume: bool = False):
    """One seed of the protocol; returns ``(base_report, [MethodReport, ...])``.

    Artifacts land in ``out``.  With ``resume`` set, existing artifacts are
    loaded instead of recomputed, so the pipeline can re-enter at any stage.
    """
    st = stage_base(cfg, seed, out, resume)
    stage_deletion(cfg, st, resume)
    reports = [stage_gnndelete(cfg, st, resume)]
    reports += [stage_baseline(cfg, st, name, resume) for name in cfg.baselines.methods]
    return base_report(st), reports


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_pipeline(cfg: ExperimentConfig, force: bool = False, resume: bool = False) -> RunRecord:
    """Run every seed and write ``results.json`` to ``cfg.output_dir``.

    Refuses to overwrite results of the same configuration unless ``force``.
    """
    cfg.validate()
    out = Path(cfg.output_dir)
    digest = cfg.config_hash()
    results = out / RESULTS_FILE
    if results.exists() and not (force or resume):
        try:
            old = json.loads(results.read_text()).get("config_hash")
        except (OSError, ValueError):
            old = None
        if old == digest:
            raise RunExistsError(f"{results} already holds run {digest}; pass --force to rerun")
    record = RunRecord(digest, started_at=_now())
    for seed in cfg.seeds:
        log.info("seed %d", seed)
        base_rep, reps = run_seed(cfg, seed, out / f"seed_{seed}", resume)
        record.base_reports.append(base_rep)
        record.reports.extend(reps)
    record.finished_at = _now()
    out.mkdir(parents=True, exist_ok=True)
    results.write_text(record.to_json())
    return record


# -- reporting ---------------------------------------------------------------

METRICS = ("auroc_test", "auprc_test", "auroc_deleted", "auprc_deleted", "mi_ratio",
           "node_accuracy", "node_f1", "wall_time_seconds")


def mean_stderr(values) -> tuple[float, float]:
    """Mean and standard error (sample std with ddof=1 over sqrt(n)); one value gives 0."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("no values")
    if x.size == 1:
        return float(x[0]), 0.0
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


def summarize(record: RunRecord) -> dict:
    """``{method: {metric: {"mean", "stderr", "n"}}}`` over seeds, base model first."""
    groups: dict[str, list[EvalReport]] = {}
    for r in record.base_reports + record.reports:
        groups.setdefault(r.method, []).append(r.report)
    summary = {}
    for method, reps in groups.items():
        cols = {}
        for m in METRICS:
            vals = [getattr(r, m) for r in reps if getattr(r, m) is not None]
            if vals:
                mean, se = mean_stderr(vals)
                cols[m] = {"mean": mean, "stderr": se, "n": len(vals)}
        summary[method] = cols
    return summary


def report(record: RunRecord) -> tuple[str, str]:
    """Plain-text table and JSON of mean ± standard error per method and metric."""
    summary = summarize(record)
    metrics = [m for m in METRICS if any(m in cols for cols in summary.values())]
    header = ["method"] + metrics
    rows = [header]
    for method, cols in summary.items():
        rows.append([method] + [f"{cols[m]['mean']:.4f} ± {cols[m]['stderr']:.4f}" if m in cols
                                else "-" for m in metrics])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    payload = {"config_hash": record.config_hash, "summary": summary}
    return "\n".join(lines), json.dumps(payload, sort_keys=True, indent=2)
