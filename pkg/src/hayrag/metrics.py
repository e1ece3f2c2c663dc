"""Scoring, bootstrap statistics, positional-bias grids, and reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._seeds import derive_seed
from .adapters import Transcript, dispatch
from .corpus import Corpus
from .errors import GenerationError
from .haystack import BenchmarkSet, generate, place_needle
from .plots import svg_heatmap, svg_line_chart

DEFAULT_BOOTSTRAP_RESAMPLES = 1000
DEFAULT_DEPTH_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


def per_index_depths(size: int) -> list[float]:
    """Depth fractions that hit every needle index of an N-image
    haystack exactly once (exhaustive per-index mode, sensible N <= 10)."""
    if size < 1:
        raise ValueError("size must be positive")
    if size == 1:
        return [0.0]
    return [i / (size - 1) for i in range(size)]


@dataclass
class BootstrapStats:
    mean: float
    std: float


@dataclass
class EvalResult:
    rows: list[dict]  # {"question_id", "correct", "compliant", "latency"}
    accuracy: float
    compliance_rate: float
    n: int
    size: int | None = None
    bootstrap_mean: float | None = None
    bootstrap_std: float | None = None

    def correct_vector(self) -> np.ndarray:
        return np.array([r["correct"] for r in self.rows], dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "compliance_rate": self.compliance_rate,
            "n": self.n,
            "size": self.size,
            "bootstrap_mean": self.bootstrap_mean,
            "bootstrap_std": self.bootstrap_std,
            "rows": self.rows,
        }


def score(transcript: Transcript, benchmark: BenchmarkSet) -> EvalResult:
    """Correct iff the normalized verdict equals the recorded answer;
    noncompliant verdicts count as incorrect."""
    missing = [s.question_id for s in benchmark.specs if s.question_id not in transcript.verdicts]
    if missing:
        raise ValueError(f"transcript missing {len(missing)} questions: {missing[:5]}")
    rows = []
    for spec in sorted(benchmark.specs, key=lambda s: s.question_id):
        v = transcript.verdicts[spec.question_id]
        compliant = int(v.normalized in ("yes", "no"))
        correct = int(compliant and v.normalized == spec.answer)
        rows.append(
            {
                "question_id": spec.question_id,
                "correct": correct,
                "compliant": compliant,
                "latency": v.latency,
            }
        )
    n = len(rows)
    accuracy = sum(r["correct"] for r in rows) / n if n else 0.0
    compliance = sum(r["compliant"] for r in rows) / n if n else 0.0
    sizes = {s.haystack_size for s in benchmark.specs}
    return EvalResult(
        rows=rows,
        accuracy=accuracy,
        compliance_rate=compliance,
        n=n,
        size=sizes.pop() if len(sizes) == 1 else None,
    )


def bootstrap(values, b: int = DEFAULT_BOOTSTRAP_RESAMPLES, seed: int = 0) -> BootstrapStats:
    """Mean and standard deviation of `b` resample means."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot bootstrap an empty vector")
    if b < 1:
        raise ValueError("b must be >= 1")
    rng = np.random.default_rng(derive_seed(seed, "bootstrap", arr.size, b))
    idx = rng.integers(0, arr.size, size=(b, arr.size))
    means = arr[idx].mean(axis=1)
    return BootstrapStats(mean=float(means.mean()), std=float(means.std()))


def with_bootstrap(result: EvalResult, b: int = DEFAULT_BOOTSTRAP_RESAMPLES, seed: int = 0) -> EvalResult:
    stats = bootstrap(result.correct_vector(), b=b, seed=seed)
    return replace(result, bootstrap_mean=stats.mean, bootstrap_std=stats.std)


# ---------------------------------------------------------------------------
# positional bias


@dataclass
class BiasCell:
    mean: float
    std: float
    n: int
    compliance: float


@dataclass
class BiasGrid:
    sizes: list[int]
    depths: list[float]
    cells: list[list[BiasCell | None]]  # rows follow sizes, cols follow depths
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        rows = []
        for r, size in enumerate(self.sizes):
            for c, depth in enumerate(self.depths):
                cell = self.cells[r][c]
                rows.append(
                    {
                        "size": size,
                        "depth": depth,
                        "evaluated": cell is not None,
                        "mean": None if cell is None else cell.mean,
                        "std": None if cell is None else cell.std,
                        "n": None if cell is None else cell.n,
                        "compliance": None if cell is None else cell.compliance,
                    }
                )
        return {"meta": dict(self.meta), "sizes": self.sizes, "depths": self.depths, "cells": rows}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BiasGrid":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        sizes, depths = doc["sizes"], doc["depths"]
        cells: list[list[BiasCell | None]] = [[None] * len(depths) for _ in sizes]
        for entry in doc["cells"]:
            r, c = sizes.index(entry["size"]), depths.index(entry["depth"])
            if entry["evaluated"]:
                cells[r][c] = BiasCell(
                    mean=entry["mean"],
                    std=entry["std"],
                    n=entry["n"],
                    compliance=entry["compliance"],
                )
        return cls(sizes=sizes, depths=depths, cells=cells, meta=doc.get("meta", {}))


def positional_bias_run(
    corpus: Corpus,
    adapter,
    sizes=None,
    depths=DEFAULT_DEPTH_GRID,
    n_per_cell: int = 100,
    seed: int = 0,
    b: int = DEFAULT_BOOTSTRAP_RESAMPLES,
    mode: str = "single",
    parallelism: int = 1,
    timeout: float | None = None,
) -> BiasGrid:
    """Evaluate a single-needle benchmark at every (size, depth) cell.

    The same per-size benchmark is reused across depths with the needle
    re-placed at floor(depth * (N-1)). Cells beyond the adapter's
    declared image capacity stay unevaluated.
    """
    if mode != "single":
        raise GenerationError("positional bias runs are defined for single-needle mode only")
    sizes = list(sizes or (5, 10, 20))
    depths = list(depths)
    capacity = getattr(adapter, "max_images", None)
    cells: list[list[BiasCell | None]] = []
    for size in sizes:
        row: list[BiasCell | None] = []
        if capacity is not None and size > capacity:
            cells.append([None] * len(depths))
            continue
        bench = generate(corpus, "single", n_per_cell, size, 1, seed=derive_seed(seed, "bias", size))
        for depth in depths:
            moved = []
            for spec in bench.specs:
                hay = place_needle(spec.haystack_ids, spec.needle_ids[0], depth)
                moved.append(replace(spec, haystack_ids=hay))
            cell_bench = BenchmarkSet(specs=moved, metadata=dict(bench.metadata))
            transcript = dispatch(
                cell_bench, adapter, corpus=corpus, parallelism=parallelism, timeout=timeout
            )
            result = score(transcript, cell_bench)
            stats = bootstrap(result.correct_vector(), b=b, seed=derive_seed(seed, "cell", size, depth))
            row.append(
                BiasCell(mean=result.accuracy, std=stats.std, n=result.n, compliance=result.compliance_rate)
            )
        cells.append(row)
    return BiasGrid(sizes=sizes, depths=depths, cells=cells, meta={"n_per_cell": n_per_cell, "seed": seed})


# ---------------------------------------------------------------------------
# reports


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def emit_report(obj, out_dir, stem: str | None = None) -> list[Path]:
    """Write CSV plus an SVG chart for an EvalResult, a list of
    (size, EvalResult), or a BiasGrid. Byte-stable for identical inputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if isinstance(obj, BiasGrid):
        stem = stem or "bias_grid"
        csv_path = out / f"{stem}.csv"
        lines = ["size,depth,mean,std,n,compliance"]
        values: list[list[float | None]] = []
        for r, size in enumerate(obj.sizes):
            vrow: list[float | None] = []
            for c, depth in enumerate(obj.depths):
                cell = obj.cells[r][c]
                if cell is None:
                    lines.append(f"{size},{_fmt(depth)},,,,")
                    vrow.append(None)
                else:
                    lines.append(
                        f"{size},{_fmt(depth)},{_fmt(cell.mean)},{_fmt(cell.std)},{cell.n},{_fmt(cell.compliance)}"
                    )
                    vrow.append(cell.mean)
            values.append(vrow)
        csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(csv_path)
        svg_path = out / f"{stem}.svg"
        svg_heatmap(
            [f"N={s}" for s in obj.sizes],
            [f"{d:.2f}" for d in obj.depths],
            values,
            svg_path,
            title="accuracy by needle depth",
        )
        written.append(svg_path)
        return written

    if isinstance(obj, EvalResult):
        obj = [(obj.size if obj.size is not None else 0, obj)]
    pairs = list(obj)
    stem = stem or "results"
    csv_path = out / f"{stem}.csv"
    lines = ["size,mean,std,n,compliance"]
    points = []
    for size, res in pairs:
        std = res.bootstrap_std if res.bootstrap_std is not None else 0.0
        lines.append(f"{size},{_fmt(res.accuracy)},{_fmt(std)},{res.n},{_fmt(res.compliance_rate)}")
        points.append((res.accuracy, std))
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(csv_path)
    svg_path = out / f"{stem}.svg"
    svg_line_chart(
        [str(size) for size, _ in pairs],
        {"accuracy": points},
        svg_path,
        title="accuracy by haystack size",
    )
    written.append(svg_path)
    return written
