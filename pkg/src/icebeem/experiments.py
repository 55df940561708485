"""Config-driven experiments on synthetic data and their JSON reports.

Four experiment families are supported:

``simulation``
    ICE-BeeM and the TCL baseline on ICA/IMCA data, scored by MCC against
    the true latents on held-out rows.
``consistency``
    Pairwise MCC between representations learned from different seeds, for
    the conditional model and the unconditional (``g`` frozen at ones) model.
``transfer``
    Reusing a trained ``f`` on unseen segments by fitting only new ``g``
    vectors, compared with training from scratch.
``semisup``
    Logistic-regression classification of unseen segments from learned
    features.

Each experiment writes ``<output_dir>/<run-id>/report.json`` plus CSV and
model artifacts.  The run id is a hash of the resolved configuration, so
re-running a config overwrites its own directory.  Files are first written
to a sibling ``.tmp`` directory which is renamed into place once complete.
"""
from __future__ import annotations

import concurrent.futures
import contextlib
import csv
import hashlib
import json
import math
import os
import shutil
import time
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .ebm import ConditionEmbedding, IceBeemModel, build_model, condition_rank, feature
from .errors import ConfigError, IceBeemError, NumericalError
from .estimator import (
    CdsmConfig,
    CfceConfig,
    TclConfig,
    cdsm_eval_score,
    fit_g_new_segment,
    tcl_spec,
    train_cdsm,
    train_cfce,
    train_tcl,
)
from .idevel import consistency_matrix, logreg_accuracy, logreg_fit, mcc_strong, mcc_weak, offdiag_mean
from .imcagen import ImcaConfig, LabeledDataset, generate_dataset
from .netcore import MlpSpec, forward
from .numerics import make_rng
from .serialize import save_model

REPORT_VERSION = 1
EXPERIMENTS = ("simulation", "consistency", "transfer", "semisup")


def load_schema() -> dict:
    text = resources.files("icebeem").joinpath("schema/experiment.schema.json").read_text()
    return json.loads(text)


# --------------------------------------------------------------------------- configuration


@dataclass(frozen=True)
class ModelSection:
    d_z: int | None = None  # defaults to the data dimension
    mode: str = "augmented"
    hidden: tuple | None = None  # defaults to mixing_layers hidden layers of width 32
    leaky_slope: float = 0.1
    g_init: str = "ones"


@dataclass(frozen=True)
class TrainingSection:
    objective: str = "cdsm"
    sigma: float = 0.01
    batch_size: int = 63
    iterations: int = 5000
    lr: float = 1e-3
    antithetic: bool = True


@dataclass(frozen=True)
class BaselineSection:
    batch_size: int = 63
    iterations: int = 5000
    lr: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    lr_decay: float = 0.1


@dataclass(frozen=True)
class EvalSection:
    mcc_modes: tuple = ("weak", "strong")
    n_seeds: int = 3
    held_out_segments: tuple = ()
    test_fraction: float = 0.2
    probe_test_fraction: float = 0.15
    transfer_fit_fraction: float = 0.5
    sample_sizes: tuple = ()
    self_transfer: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    data: ImcaConfig = field(default_factory=ImcaConfig)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0
    seeds: tuple | None = None  # explicit run seeds; otherwise seed, seed + 1, ...
    output_dir: str = "runs"
    workers: int = 1

    def __post_init__(self):
        _validate(self)

    @property
    def run_seeds(self) -> list:
        if self.seeds is not None:
            return list(self.seeds)
        return [self.seed + r for r in range(self.eval.n_seeds)]

    @property
    def d_z(self) -> int:
        return self.model.d_z if self.model.d_z is not None else self.data.d

    @property
    def f_spec(self) -> MlpSpec:
        hidden = self.model.hidden if self.model.hidden is not None else (32,) * self.data.mixing_layers
        # Hidden width 32 around a width-5 input and output is not monotone,
        # so the width rule is switched off for this family of specs.
        return MlpSpec((self.data.d, *hidden, self.d_z), leaky_slope=self.model.leaky_slope, unchecked=True)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "data": self.data.to_dict(),
            "model": {**asdict(self.model), "hidden": None if self.model.hidden is None else list(self.model.hidden)},
            "training": asdict(self.training),
            "baseline": asdict(self.baseline),
            "eval": {
                **asdict(self.eval),
                "mcc_modes": list(self.eval.mcc_modes),
                "held_out_segments": list(self.eval.held_out_segments),
                "sample_sizes": list(self.eval.sample_sizes),
            },
            "seed": self.seed,
            "seeds": None if self.seeds is None else list(self.seeds),
            "output_dir": self.output_dir,
            "workers": self.workers,
        }

    def run_id(self) -> str:
        """Stable identifier derived from everything except output location and worker count."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("workers")
        digest = hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]
        return f"{self.experiment}-{digest}"


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}")
    M = cfg.data.M
    held = list(cfg.eval.held_out_segments)
    if any(not 0 <= h < M for h in held):
        raise ConfigError(f"held_out_segments must lie in 0..{M - 1}")
    if len(set(held)) != len(held):
        raise ConfigError("held_out_segments contains duplicates")
    if cfg.experiment in ("transfer", "semisup"):
        if not held:
            raise ConfigError(f"{cfg.experiment} needs nonempty held_out_segments")
        if not cfg.eval.self_transfer and len(held) >= M:
            raise ConfigError("at least one segment must remain for training")
    if cfg.experiment == "semisup" and len(held) < 2:
        raise ConfigError("semisup needs at least two held-out segments")
    if cfg.experiment == "consistency" and len(cfg.run_seeds) < 2:
        raise ConfigError("consistency needs at least two seeds")
    if cfg.d_z != cfg.data.d and cfg.experiment in ("simulation", "consistency"):
        raise ConfigError("MCC experiments need d_z equal to the data dimension")
    if cfg.model.mode == "positive":
        raise ConfigError("positive mode needs a ReLU output layer, which the experiment specs do not build")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate against the JSON schema, then build the typed configuration."""
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {where}: {exc.message}") from None
    try:
        data = ImcaConfig(**raw.get("data", {}))
        model_raw = dict(raw.get("model", {}))
        if model_raw.get("hidden") is not None:
            model_raw["hidden"] = tuple(model_raw["hidden"])
        ev = dict(raw.get("eval", {}))
        for key in ("mcc_modes", "held_out_segments", "sample_sizes"):
            if key in ev:
                ev[key] = tuple(ev[key])
        seeds = raw.get("seeds")
        return ExperimentConfig(
            experiment=raw["experiment"],
            data=data,
            model=ModelSection(**model_raw),
            training=TrainingSection(**raw.get("training", {})),
            baseline=BaselineSection(**raw.get("baseline", {})),
            eval=EvalSection(**ev),
            seed=raw.get("seed", 0),
            seeds=None if seeds is None else tuple(seeds),
            output_dir=raw.get("output_dir", "runs"),
            workers=raw.get("workers", 1),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(raw)


# --------------------------------------------------------------------------- shared pieces


@contextlib.contextmanager
def _stage(name: str):
    """Prefix errors raised inside the block with the pipeline stage."""
    try:
        yield
    except IceBeemError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise NumericalError(f"[{name}] {exc}") from exc


def _train_model(cfg: ExperimentConfig, data: LabeledDataset, seed: int, conditional: bool = True):
    """Train an ICE-BeeM model; ``conditional=False`` freezes ``g`` at ones."""
    tr = cfg.training
    g_init = cfg.model.g_init if conditional else "ones"
    model = build_model(cfg.f_spec, data.n_segments, cfg.model.mode, make_rng(seed, 1), g_init=g_init)
    if tr.objective == "cdsm":
        ccfg = CdsmConfig(tr.sigma, tr.batch_size, tr.iterations, tr.lr, seed, freeze_g=not conditional, antithetic=tr.antithetic)
        return train_cdsm(model, data, ccfg)
    fcfg = CfceConfig(tr.batch_size, tr.iterations, tr.lr, seed, freeze_g=not conditional)
    trained, history, _ = train_cfce(model, data, fcfg)
    return trained, history


def _cdsm_cfg(cfg: ExperimentConfig, seed: int, **kw) -> CdsmConfig:
    tr = cfg.training
    return CdsmConfig(tr.sigma, tr.batch_size, tr.iterations, tr.lr, seed, antithetic=tr.antithetic, **kw)


def _split(n: int, test_fraction: float, rng: np.random.Generator):
    order = rng.permutation(n)
    n_test = max(1, int(round(test_fraction * n)))
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def _mcc_block(prefix: str, F: np.ndarray, Z: np.ndarray, modes, seed: int) -> dict:
    out = {}
    if "weak" in modes:
        out[f"{prefix}_mcc"] = mcc_weak(F, Z, seed=seed).mcc
    if "strong" in modes:
        out[f"{prefix}_mcc_strong"] = mcc_strong(F, Z).mcc
    return out


def _loss_summary(history: np.ndarray, chunks: int = 10) -> list:
    if history.size == 0:
        return []
    return [float(c.mean()) for c in np.array_split(history, min(chunks, history.size))]


def _assert_unconditional(model: IceBeemModel) -> float:
    dev = float(np.max(np.abs(model.g.table - 1.0)))
    if dev != 0.0:
        raise AssertionError(f"unconditional baseline moved g away from ones (max deviation {dev})")
    return dev


# --------------------------------------------------------------------------- simulation


def _simulation_run(cfg: ExperimentConfig, index: int, seed: int) -> dict:
    data_cfg = replace(cfg.data, seed=cfg.data.seed + index)
    with _stage("generation"):
        data, gt = generate_dataset(data_cfg)
        train_rows, test_rows = _split(len(data), cfg.eval.test_fraction, make_rng(seed, 2))
        dtrain = data.subset(train_rows)
    with _stage("training"):
        model, history = _train_model(cfg, dtrain, seed)
        b = cfg.baseline
        tcl = train_tcl(
            dtrain,
            tcl_spec(data.d, cfg.data.mixing_layers, slope=cfg.model.leaky_slope),
            TclConfig(b.batch_size, b.iterations, b.lr, seed, b.optimizer, b.momentum, b.lr_decay),
        )
    with _stage("eval"):
        Z = gt.Z[test_rows]
        Xte = data.X[test_rows]
        modes = cfg.eval.mcc_modes
        metrics = {}
        metrics.update(_mcc_block("icebeem", forward(model.f, Xte).output, Z, modes, seed))
        metrics.update(_mcc_block("tcl", tcl.features(Xte), Z, modes, seed))
        metrics.update(_mcc_block("identity", Xte, Z, modes, seed))
        metrics["tcl_accuracy"] = tcl.accuracy(data.subset(test_rows))
        metrics["g_rank"] = float(condition_rank(model))
    return {
        "seeds": {"run": seed, "data": data_cfg.seed},
        "metrics": metrics,
        "histories": {"icebeem_loss": history, "tcl_batch_accuracy": tcl.history},
        "models": {"icebeem": model},
    }


def _simulation_summary(runs: list, cfg: ExperimentConfig) -> dict:
    keys = runs[0]["metrics"].keys()
    out = {f"mean_{k}": float(np.mean([r["metrics"][k] for r in runs])) for k in keys}
    primary = "mcc" if "weak" in cfg.eval.mcc_modes else "mcc_strong"
    out["icebeem_beats_tcl"] = bool(out[f"mean_icebeem_{primary}"] > out[f"mean_tcl_{primary}"])
    return out


# --------------------------------------------------------------------------- consistency


def _consistency_model_run(cfg: ExperimentConfig, index: int, seed: int) -> dict:
    data, _ = generate_dataset(cfg.data)
    train_rows, test_rows = _split(len(data), cfg.eval.test_fraction, make_rng(cfg.seed, 2))
    dtrain = data.subset(train_rows)
    Xte = data.X[test_rows]
    with _stage("training"):
        cond, h_cond = _train_model(cfg, dtrain, seed, conditional=True)
        uncond, h_uncond = _train_model(cfg, dtrain, seed, conditional=False)
        dev = _assert_unconditional(uncond)
    return {
        "seeds": {"run": seed, "data": cfg.data.seed},
        "metrics": {"unconditional_g_deviation": dev},
        "features": {"conditional": forward(cond.f, Xte).output, "unconditional": forward(uncond.f, Xte).output},
        "histories": {"conditional_loss": h_cond, "unconditional_loss": h_uncond},
        "models": {"conditional": cond, "unconditional": uncond},
    }


def _consistency_summary(runs: list, cfg: ExperimentConfig) -> dict:
    out = {}
    with _stage("eval"):
        for family in ("conditional", "unconditional"):
            dumps = [r["features"][family] for r in runs]
            for mode in cfg.eval.mcc_modes:
                M = consistency_matrix(dumps, mode, seed=cfg.seed)
                out[f"{family}_{mode}_matrix"] = M.tolist()
                out[f"{family}_{mode}_mean"] = offdiag_mean(M)
    for mode in cfg.eval.mcc_modes:
        out[f"{mode}_gap"] = out[f"conditional_{mode}_mean"] - out[f"unconditional_{mode}_mean"]
    return out


# --------------------------------------------------------------------------- transfer


def _held_split(cfg: ExperimentConfig, data: LabeledDataset, seed: int):
    """Per held-out segment: shuffled fit rows and eval rows (relabelled 0..K-1)."""
    held = list(cfg.eval.held_out_segments)
    rng = make_rng(seed, 3)
    fit_rows, eval_rows = {}, {}
    for k, h in enumerate(held):
        rows = rng.permutation(np.flatnonzero(data.Y == h))
        n_fit = int(round(cfg.eval.transfer_fit_fraction * rows.size))
        if n_fit < 1 or n_fit >= rows.size:
            raise ConfigError(f"segment {h} is too small to split into fit and eval rows")
        fit_rows[k], eval_rows[k] = rows[:n_fit], rows[n_fit:]
    return held, fit_rows, eval_rows


def _stack(data: LabeledDataset, rows_by_seg: dict, limit: int | None = None) -> LabeledDataset:
    X, Y = [], []
    for k, rows in rows_by_seg.items():
        rows = rows[:limit] if limit is not None else rows
        X.append(data.X[rows])
        Y.append(np.full(rows.size, k, dtype=np.int64))
    return LabeledDataset(np.vstack(X), np.concatenate(Y), len(rows_by_seg))


def _transfer_run(cfg: ExperimentConfig, index: int, seed: int) -> dict:
    with _stage("generation"):
        data, _ = generate_dataset(cfg.data)
        held, fit_rows, eval_rows = _held_split(cfg, data, seed)
        train_segs = list(range(cfg.data.M)) if cfg.eval.self_transfer else [s for s in range(cfg.data.M) if s not in held]
        source = data.segments(train_segs, relabel=True)
        eval_data = _stack(data, eval_rows)
    sigma = cfg.training.sigma
    with _stage("training"):
        base, history = _train_model(cfg, source, seed)
    max_fit = min(r.size for r in fit_rows.values())
    sizes = list(cfg.eval.sample_sizes) or [max_fit]
    if any(s > max_fit for s in sizes):
        raise ConfigError(f"sample_sizes may not exceed {max_fit} rows per held-out segment")
    sweep = []
    models = {"pretrained": base}
    for n_s in sizes:
        fit = _stack(data, fit_rows, n_s)
        with _stage("training"):
            table, fit_scores, init_scores = [], [], []
            for k in range(len(held)):
                g, s_fit, s_init = fit_g_new_segment(
                    base, fit.X[fit.Y == k], _cdsm_cfg(cfg, seed + 1000 * (k + 1)), eval_seed=seed
                )
                table.append(g)
                fit_scores.append(s_fit)
                init_scores.append(s_init)
            transfer = IceBeemModel(base.f, _lookup(np.array(table)), base.mode)
            ones = IceBeemModel(base.f, _lookup(np.ones((len(held), base.g.dim))), base.mode)
            fresh, _ = _train_model(cfg, fit, seed + 1, conditional=True)
            fresh_ones, _ = _train_model(cfg, fit, seed + 1, conditional=False)
            _assert_unconditional(fresh_ones)
        with _stage("eval"):
            entry = {
                "n_per_segment": int(n_s),
                "f.g_theta": cdsm_eval_score(transfer, eval_data, sigma, seed),
                "f.1": cdsm_eval_score(ones, eval_data, sigma, seed),
                "f_theta.g_theta": cdsm_eval_score(fresh, eval_data, sigma, seed),
                "f_theta.1": cdsm_eval_score(fresh_ones, eval_data, sigma, seed),
                "fit_score": float(np.mean(fit_scores)),
                "init_score": float(np.mean(init_scores)),
            }
            entry["descent"] = bool(all(a <= b for a, b in zip(fit_scores, init_scores)))
        sweep.append(entry)
        models[f"transfer_n{n_s}"] = transfer
        models[f"fresh_n{n_s}"] = fresh
    main = sweep[-1]
    metrics = {k: main[k] for k in ("f.g_theta", "f.1", "f_theta.g_theta", "f_theta.1")}
    return {
        "seeds": {"run": seed, "data": cfg.data.seed},
        "metrics": metrics,
        "sweep": sweep,
        "histories": {"pretrain_loss": history},
        "models": models,
    }


def _lookup(table: np.ndarray) -> ConditionEmbedding:
    return ConditionEmbedding(table.shape[0], table=table)


def _transfer_summary(runs: list, cfg: ExperimentConfig) -> dict:
    keys = ("f.g_theta", "f.1", "f_theta.g_theta", "f_theta.1")
    out = {f"mean_{k}": float(np.mean([r["metrics"][k] for r in runs])) for k in keys}
    out["transfer_beats_ones_every_run"] = bool(all(r["metrics"]["f.g_theta"] < r["metrics"]["f.1"] for r in runs))
    out["descent_every_run"] = bool(all(e["descent"] for r in runs for e in r["sweep"]))
    out["transfer_vs_fresh_rel_gap"] = float(
        np.max([abs(r["metrics"]["f.g_theta"] - r["metrics"]["f_theta.g_theta"]) / r["metrics"]["f_theta.g_theta"] for r in runs])
    )
    return out


# --------------------------------------------------------------------------- semi-supervised


def _semisup_run(cfg: ExperimentConfig, index: int, seed: int) -> dict:
    held = list(cfg.eval.held_out_segments)
    with _stage("generation"):
        data, _ = generate_dataset(cfg.data)
        source = data.segments([s for s in range(cfg.data.M) if s not in held], relabel=True)
        target = data.segments(held, relabel=True)
        tr_rows, te_rows = _split(len(target), cfg.eval.probe_test_fraction, make_rng(seed, 4))
    with _stage("training"):
        cond, h_cond = _train_model(cfg, source, seed, conditional=True)
        uncond, h_uncond = _train_model(cfg, source, seed, conditional=False)
        dev = _assert_unconditional(uncond)
    with _stage("eval"):
        arms = {
            "conditional": feature(cond, target.X),
            "unconditional": feature(uncond, target.X),
            "identity": target.X,
        }
        metrics = {}
        for name, F in arms.items():
            probe = logreg_fit(F[tr_rows], target.Y[tr_rows])
            metrics[f"{name}_accuracy"] = logreg_accuracy(probe, F[te_rows], target.Y[te_rows])
        metrics["unconditional_g_deviation"] = dev
    return {
        "seeds": {"run": seed, "data": cfg.data.seed},
        "metrics": metrics,
        "histories": {"conditional_loss": h_cond, "unconditional_loss": h_uncond},
        "models": {"conditional": cond, "unconditional": uncond},
    }


def _semisup_summary(runs: list, cfg: ExperimentConfig) -> dict:
    out = {
        f"mean_{arm}_accuracy": float(np.mean([r["metrics"][f"{arm}_accuracy"] for r in runs]))
        for arm in ("conditional", "unconditional", "identity")
    }
    out["conditional_at_least_unconditional"] = bool(
        out["mean_conditional_accuracy"] >= out["mean_unconditional_accuracy"]
    )
    return out


# --------------------------------------------------------------------------- driver


_RUNNERS = {
    "simulation": (_simulation_run, _simulation_summary),
    "consistency": (_consistency_model_run, _consistency_summary),
    "transfer": (_transfer_run, _transfer_summary),
    "semisup": (_semisup_run, _semisup_summary),
}


def _execute(cfg: ExperimentConfig) -> list:
    run_fn, _ = _RUNNERS[cfg.experiment]
    seeds = cfg.run_seeds
    if cfg.workers == 1 or len(seeds) == 1:
        return [run_fn(cfg, i, s) for i, s in enumerate(seeds)]
    with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        futures = [pool.submit(run_fn, cfg, i, s) for i, s in enumerate(seeds)]
        return [f.result() for f in futures]


def _check_finite(obj, path: str = "metrics") -> None:
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{path}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _check_finite(v, f"{path}[{i}]")
    elif isinstance(obj, float) and not math.isfinite(obj):
        raise NumericalError(f"non-finite metric {path}")


def _plain(obj):
    """JSON-ready copy with numpy scalars converted."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _write_csv(path: Path, header: list, rows: list) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_artifacts(tmp: Path, runs: list) -> list:
    artifacts = []
    metric_keys = list(runs[0]["metrics"].keys())
    _write_csv(
        tmp / "metrics.csv",
        ["run_seed", *metric_keys],
        [[r["seeds"]["run"], *(repr(float(r["metrics"][k])) for k in metric_keys)] for r in runs],
    )
    artifacts.append("metrics.csv")
    hist_rows = []
    for r in runs:
        for name, h in r["histories"].items():
            hist_rows.extend([r["seeds"]["run"], name, i, repr(float(v))] for i, v in enumerate(h))
    _write_csv(tmp / "histories.csv", ["run_seed", "series", "iteration", "value"], hist_rows)
    artifacts.append("histories.csv")
    if "sweep" in runs[0]:
        keys = list(runs[0]["sweep"][0].keys())
        _write_csv(
            tmp / "sweep.csv",
            ["run_seed", *keys],
            [[r["seeds"]["run"], *(e[k] for k in keys)] for r in runs for e in r["sweep"]],
        )
        artifacts.append("sweep.csv")
    (tmp / "models").mkdir()
    for r in runs:
        for name, model in r["models"].items():
            rel = f"models/seed{r['seeds']['run']}_{name}.icebeem"
            save_model(tmp / rel, model, text_dump=False)
            artifacts.append(rel)
    return artifacts


def run_experiment(cfg: ExperimentConfig, output_dir=None) -> dict:
    """Run ``cfg`` and write its report directory; returns the report dictionary."""
    out_root = Path(output_dir if output_dir is not None else cfg.output_dir)
    start = time.perf_counter()
    runs = _execute(cfg)
    _, summarize = _RUNNERS[cfg.experiment]
    summary = summarize(runs, cfg)
    report = {
        "report_version": REPORT_VERSION,
        "experiment": cfg.experiment,
        "run_id": cfg.run_id(),
        "config": cfg.to_dict(),
        "seeds": [r["seeds"] for r in runs],
        "metrics": _plain({"summary": summary, "runs": [r["metrics"] for r in runs]}),
    }
    if cfg.experiment == "simulation":
        report["metrics"]["loss_summaries"] = [_loss_summary(r["histories"]["icebeem_loss"]) for r in runs]
    if cfg.experiment == "transfer":
        report["metrics"]["sweep"] = _plain([r["sweep"] for r in runs])
    _check_finite(report["metrics"])

    out_root.mkdir(parents=True, exist_ok=True)
    final = out_root / report["run_id"]
    tmp = out_root / (report["run_id"] + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir()
    try:
        report["artifacts"] = _write_artifacts(tmp, runs)
        report["wall_clock_s"] = time.perf_counter() - start
        (tmp / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    report["path"] = str(final / "report.json")
    return report


def run_simulation(cfg: ExperimentConfig, output_dir=None) -> dict:
    _expect(cfg, "simulation")
    return run_experiment(cfg, output_dir)


def run_consistency(cfg: ExperimentConfig, output_dir=None) -> dict:
    _expect(cfg, "consistency")
    return run_experiment(cfg, output_dir)


def run_transfer(cfg: ExperimentConfig, output_dir=None) -> dict:
    _expect(cfg, "transfer")
    return run_experiment(cfg, output_dir)


def run_semisup(cfg: ExperimentConfig, output_dir=None) -> dict:
    _expect(cfg, "semisup")
    return run_experiment(cfg, output_dir)


def _expect(cfg: ExperimentConfig, name: str) -> None:
    if cfg.experiment != name:
        raise ConfigError(f"config is for {cfg.experiment!r}, not {name!r}")


def load_report(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def rerun_from_report(report: dict, output_dir) -> dict:
    """Re-run the experiment recorded in ``report`` from its echoed configuration."""
    return run_experiment(config_from_dict(report["config"]), output_dir)
