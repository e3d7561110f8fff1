"""Experiment runners: build data and nets from a config, run, write artifacts.

Every run directory receives a manifest (config digest, seeds, checkpoint
digests, dataset provenance) sufficient to reproduce it bit-exactly, plus
metrics.csv per run and a summary.json with per-seed and median metrics.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .analysis import concentration_report, consistency_curve, spectral_report
from .config import ConfigError, DistillConfig, config_digest
from .datasets import (
    DataSplit,
    Dataset,
    gen_gaussian_mixture,
    gen_two_arcs,
    load_idx,
    split_dataset,
)
from .graphs import GraphParams, build_similarity_graph, dump_graph_csv
from .models import (
    BlockNet,
    build_blocknet,
    checkpoint_digest,
    forward_with_taps,
    load_checkpoint,
    save_checkpoint,
)
from .training import TrainResult, train

__all__ = [
    "ExperimentResult",
    "aggregate_median",
    "build_split",
    "build_net",
    "run_train_teacher",
    "run_distill",
    "run_sweep",
    "run_analyze",
    "run_spectral",
    "run_dump_graph",
    "SWEEPABLE_PARAMS",
]

METRIC_COLUMNS = ("epoch", "lr", "train_error", "test_error", "task_loss", "kd_loss", "total_loss")
FINAL_METRICS = ("test_error", "train_error", "task_loss", "kd_loss", "total_loss")
SWEEPABLE_PARAMS = ("k", "p", "mask_mode", "lambda_kd")


@dataclass
class ExperimentResult:
    seeds: tuple[int, ...]
    per_seed: dict[int, dict[str, float]]
    median: dict[str, float]


def aggregate_median(per_seed: dict[int, dict[str, float]]) -> dict[str, float]:
    """Elementwise median of per-seed scalar metrics (midpoint for even counts)."""
    if not per_seed:
        raise ValueError("aggregate_median: need results for at least one seed")
    keys = sorted(next(iter(per_seed.values())))
    return {key: float(np.median([m[key] for m in per_seed.values()])) for key in keys}


# ---------------------------------------------------------------------------
# config realization


def build_split(config: DistillConfig) -> DataSplit:
    spec = config.dataset
    params = spec.params
    if spec.name == "two_arcs":
        full = gen_two_arcs(params["n"], params["noise"], params["seed"])
    elif spec.name == "gaussian_mixture":
        full = gen_gaussian_mixture(
            params["n"], params["classes"], params["dim"], params["separation"], params["seed"]
        )
    elif spec.name == "idx":
        full = load_idx(params["images"], params["labels"], params["limit"])
    else:  # pragma: no cover - parse_config rejects unknown names
        raise ConfigError(f"unknown dataset {spec.name!r}")
    return split_dataset(full, params["test_fraction"], params["seed"])


def build_net(config: DistillConfig, which: str, split: DataSplit, seed: int) -> BlockNet:
    arch = config.teacher if which == "teacher" else config.student
    return build_blocknet(
        arch.depths, arch.widths, split.train.dim, split.train.num_classes, seed=seed
    )


# ---------------------------------------------------------------------------
# artifact writers


def write_metrics_csv(path: Path, result: TrainResult) -> None:
    lines = [",".join(METRIC_COLUMNS)]
    for m in result.metrics:
        lines.append(
            ",".join(
                [
                    str(m.epoch),
                    # repr of a Python float round-trips to the exact double
                    repr(float(m.lr)),
                    repr(float(m.train_error)),
                    repr(float(m.test_error)),
                    repr(float(m.task_loss)),
                    repr(float(m.kd_loss)),
                    repr(float(m.total_loss)),
                ]
            )
        )
    path.write_text("\n".join(lines) + "\n")


def _final_metrics(result: TrainResult) -> dict[str, float]:
    final = result.final
    return {key: float(getattr(final, key)) for key in FINAL_METRICS}


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_manifest(
    out_dir: Path,
    command: str,
    config: DistillConfig,
    seeds,
    split: DataSplit,
    checkpoints: dict[str, str],
) -> None:
    _write_json(
        out_dir / "manifest.json",
        {
            "command": command,
            "config": config.to_dict(),
            "config_digest": config_digest(config),
            "seeds": list(seeds),
            "dataset_provenance": split.train.provenance,
            "checkpoint_digests": checkpoints,
        },
    )


# ---------------------------------------------------------------------------
# runners


def run_train_teacher(config: DistillConfig, out_dir, seed: int | None = None) -> Path:
    """Train the teacher architecture on the task loss alone; returns the checkpoint path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = config.seeds[0] if seed is None else int(seed)
    split = build_split(config)
    teacher_cfg = replace(config, loss="vanilla", lambda_kd=0.0, graph=None)
    net = build_net(config, "teacher", split, seed)
    result = train(net, split, teacher_cfg, seed)
    ckpt = out_dir / "teacher.ckpt"
    save_checkpoint(net, ckpt)
    write_metrics_csv(out_dir / "teacher_metrics.csv", result)
    _write_manifest(
        out_dir, "train-teacher", config, [seed], split,
        {"teacher": checkpoint_digest(ckpt)},
    )
    _write_json(
        out_dir / "summary.json",
        {
            "command": "train-teacher",
            "seed": seed,
            "final": _final_metrics(result),
            "checkpoint": str(ckpt),
        },
    )
    return ckpt


def _load_teacher(config: DistillConfig, teacher_path, split: DataSplit) -> BlockNet | None:
    if config.loss == "vanilla":
        if teacher_path is not None:
            raise ConfigError("a teacher checkpoint was given but loss is 'vanilla'")
        return None
    if teacher_path is None:
        raise ConfigError(f"loss {config.loss!r} requires --teacher")
    teacher_path = Path(teacher_path)
    if not teacher_path.exists():
        raise ConfigError(f"teacher checkpoint not found: {teacher_path}")
    teacher = load_checkpoint(teacher_path)
    if teacher.input_dim != split.train.dim:
        raise ConfigError(
            f"teacher checkpoint input_dim {teacher.input_dim} does not match "
            f"dataset dim {split.train.dim}"
        )
    return teacher


def run_distill(
    config: DistillConfig,
    out_dir,
    teacher_path=None,
    seeds=None,
) -> ExperimentResult:
    """Train one student per seed under the configured loss; aggregate medians."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = tuple(int(s) for s in (seeds if seeds is not None else config.seeds))
    split = build_split(config)
    teacher = _load_teacher(config, teacher_path, split)

    per_seed: dict[int, dict[str, float]] = {}
    checkpoints: dict[str, str] = {}
    for seed in seeds:
        seed_dir = out_dir / f"seed{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        net = build_net(config, "student", split, seed)
        result = train(net, split, config, seed, teacher=teacher)
        ckpt = seed_dir / "student.ckpt"
        save_checkpoint(net, ckpt)
        write_metrics_csv(seed_dir / "metrics.csv", result)
        per_seed[seed] = _final_metrics(result)
        checkpoints[f"student_seed{seed}"] = checkpoint_digest(ckpt)

    median = aggregate_median(per_seed)
    experiment = ExperimentResult(seeds=seeds, per_seed=per_seed, median=median)
    _write_manifest(out_dir, "distill", config, seeds, split, checkpoints)
    _write_json(
        out_dir / "summary.json",
        {
            "command": "distill",
            "loss": config.loss,
            "seeds": list(seeds),
            "per_seed": {str(s): m for s, m in per_seed.items()},
            "median": median,
        },
    )
    return experiment


def _sweep_value(param: str, raw: str):
    if param in ("k", "p"):
        return int(raw)
    if param == "lambda_kd":
        return float(raw)
    return raw  # mask_mode


def _apply_sweep(config: DistillConfig, param: str, value) -> DistillConfig:
    if param == "lambda_kd":
        return replace(config, lambda_kd=float(value))
    if config.loss != "gkd" or config.graph is None:
        raise ConfigError(f"sweeping {param!r} requires loss='gkd' with graph parameters")
    return replace(config, graph=replace(config.graph, **{param: value}))


def run_sweep(config: DistillConfig, out_dir, param: str, values, teacher_path=None) -> Path:
    """Run one distillation per parameter value; emit one sweep.csv row per value."""
    if param not in SWEEPABLE_PARAMS:
        raise ConfigError(f"cannot sweep {param!r}; choose from {SWEEPABLE_PARAMS}")
    if not values:
        raise ConfigError("sweep requires at least one value")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = ["param,value,seeds,per_seed_test_errors,median_test_error"]
    for raw in values:
        value = _sweep_value(param, str(raw))
        sub_config = _apply_sweep(config, param, value)
        sub_dir = out_dir / f"{param}_{value}"
        experiment = run_distill(sub_config, sub_dir, teacher_path=teacher_path)
        errors = [experiment.per_seed[s]["test_error"] for s in experiment.seeds]
        rows.append(
            ",".join(
                [
                    param,
                    str(value),
                    ";".join(str(s) for s in experiment.seeds),
                    ";".join(repr(e) for e in errors),
                    repr(experiment.median["test_error"]),
                ]
            )
        )
    sweep_path = out_dir / "sweep.csv"
    sweep_path.write_text("\n".join(rows) + "\n")
    return sweep_path


def _require_checkpoint(path, role: str) -> BlockNet:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{role} checkpoint not found: {path}")
    return load_checkpoint(path)


def run_analyze(
    config: DistillConfig,
    out_dir,
    teacher_path,
    student_path,
    n_batches: int = 20,
    batch_size: int = 256,
    seed: int = 0,
) -> Path:
    """Loss-concentration and probe-consistency report for one student."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split = build_split(config)
    teacher = _require_checkpoint(teacher_path, "teacher")
    student = _require_checkpoint(student_path, "student")

    graph = config.graph if config.graph is not None else GraphParams(k=batch_size - 1)
    conc_rows = ["loss,tap,median_concentration_pct"]
    for loss_name in ("gkd", "rkdd"):
        report = concentration_report(
            teacher,
            student,
            split.train,
            loss_name,
            graph=GraphParams(k=min(graph.k, batch_size - 1), p=graph.p, mask_mode=graph.mask_mode),
            n_batches=n_batches,
            batch_size=batch_size,
            seed=seed,
        )
        for tap, pct in report.per_tap.items():
            conc_rows.append(f"{loss_name},{tap},{'' if pct is None else repr(pct)}")
    (out_dir / "concentration.csv").write_text("\n".join(conc_rows) + "\n")

    curve = consistency_curve(teacher, student, split.train, split.test)
    cons_rows = ["tap,consistency"]
    for tap, frac in zip(curve.taps, curve.fractions):
        cons_rows.append(f"{tap},{repr(frac)}")
    (out_dir / "consistency.csv").write_text("\n".join(cons_rows) + "\n")

    _write_json(
        out_dir / "analysis_summary.json",
        {
            "command": "analyze",
            "config_digest": config_digest(config),
            "teacher": str(teacher_path),
            "student": str(student_path),
            "consistency": dict(zip(curve.taps, curve.fractions)),
        },
    )
    return out_dir


def run_spectral(
    config: DistillConfig,
    out_dir,
    teacher_path,
    student_paths: dict[str, str],
    sample_size: int = 1000,
    k: int | None = None,
    seed: int = 0,
) -> Path:
    """Smoothness curves for one or more students against a common teacher."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split = build_split(config)
    teacher = _require_checkpoint(teacher_path, "teacher")
    students = {
        name: _require_checkpoint(path, f"student {name!r}")
        for name, path in student_paths.items()
    }
    report = spectral_report(
        teacher, students, split.train, sample_size=sample_size, k=k, seed=seed
    )
    rows = ["student,signal,tap,smoothness"]
    payload: dict = {}
    for student_name, curves in report.items():
        payload[student_name] = {}
        for curve in curves:
            payload[student_name][curve.signal] = dict(zip(curve.taps, curve.values))
            for tap, value in zip(curve.taps, curve.values):
                rows.append(f"{student_name},{curve.signal},{tap},{repr(value)}")
    (out_dir / "smoothness.csv").write_text("\n".join(rows) + "\n")
    _write_json(
        out_dir / "spectral_summary.json",
        {"command": "spectral", "config_digest": config_digest(config), "curves": payload},
    )
    return out_dir


def run_dump_graph(
    config: DistillConfig,
    out_dir,
    checkpoint_path,
    block,
    sample_size: int = 128,
    k: int | None = None,
    p: int | None = None,
    mask_mode: str | None = None,
    seed: int = 0,
) -> Path:
    """Build one tap's similarity graph on a sample and write its edge list."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split = build_split(config)
    net = _require_checkpoint(checkpoint_path, "network")
    n = min(int(sample_size), len(split.train))
    idx = np.random.default_rng(seed).choice(len(split.train), size=n, replace=False)
    xb, yb = split.train.features[idx], split.train.labels[idx]

    base = config.graph if config.graph is not None else GraphParams(k=n - 1)
    params = GraphParams(
        k=min(base.k if k is None else int(k), n - 1),
        p=base.p if p is None else int(p),
        mask_mode=base.mask_mode if mask_mode is None else str(mask_mode),
    )
    net.set_requires_grad(False)
    taps = forward_with_taps(net, xb).for_taps(net.tap_set)
    tap_names = [("output" if t == "output" else f"block{t}") for t in net.tap_set]
    if block not in tap_names:
        raise ConfigError(f"unknown tap {block!r}; available: {tap_names}")
    reps = taps[tap_names.index(block)].data
    graph = build_similarity_graph(
        reps, k=params.k, p=params.p, mask_mode=params.mask_mode, labels=yb
    )
    dump_graph_csv(graph, out_dir / "graph_edges.csv", out_dir / "graph_params.json")
    return out_dir
