"""Figure specifications and CSV/JSON input readers with schema checks."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path


class SchemaError(ValueError):
    """An input file is missing, malformed, or lacks a required column."""


class FigureKind(enum.Enum):
    GRADIENT_IMAGE = "gradient_image"
    USEFULNESS_ROBUSTNESS_SCATTER = "usefulness_robustness_scatter"
    COSINE_AND_ROBUST_ACC = "cosine_and_robust_acc"
    DISTANCE_HEATMAP = "distance_heatmap"
    POLAR_TRAJECTORY = "polar_trajectory"
    CONCENTRATION_CURVES = "concentration_curves"
    FILTER_SWEEP = "filter_sweep"
    KERNEL_MATRIX_IMAGE = "kernel_matrix_image"


@dataclass(frozen=True)
class FigureSpec:
    kind: FigureKind
    inputs: tuple[str, ...]
    output: str
    style: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.inputs:
            raise SchemaError("figure spec needs at least one input file")
        missing = [p for p in self.inputs if not Path(p).is_file()]
        if missing:
            raise SchemaError(f"input files do not exist: {missing}")


def load_spec(path) -> FigureSpec:
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    except OSError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    try:
        kind = FigureKind(raw["kind"])
    except KeyError:
        raise SchemaError(f"{path}: missing 'kind'") from None
    except ValueError:
        raise SchemaError(
            f"{path}: unknown figure kind {raw.get('kind')!r}; expected one "
            f"of {sorted(k.value for k in FigureKind)}") from None
    if "output" not in raw:
        raise SchemaError(f"{path}: missing 'output'")
    return FigureSpec(kind, tuple(raw.get("inputs", ())), raw["output"],
                      raw.get("style", {}))


def read_table(path, required: tuple[str, ...] = ()) -> dict[str, list[float]]:
    """Header-checked CSV as column name -> float list; body may be empty."""
    with open(path) as f:
        lines = [line.strip() for line in f if line.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty file, expected a header row")
    header = lines[0].split(",")
    for col in required:
        if col not in header:
            raise SchemaError(f"{path}: missing required column {col!r} "
                              f"(found {header})")
    columns: dict[str, list[float]] = {name: [] for name in header}
    for line in lines[1:]:
        cells = line.split(",")
        if len(cells) != len(header):
            raise SchemaError(f"{path}: row has {len(cells)} cells, "
                              f"header has {len(header)}")
        for name, cell in zip(header, cells):
            columns[name].append(float(cell))
    return columns


def read_matrix(path) -> list[list[float]]:
    """Headerless numeric CSV grid (distance heatmaps, kernel matrices)."""
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                try:
                    rows.append([float(v) for v in line.split(",")])
                except ValueError as exc:
                    raise SchemaError(f"{path}: non-numeric cell: {exc}") \
                        from exc
    return rows


def read_gradient_meta(path) -> dict:
    try:
        with open(path) as f:
            meta = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: bad gradient metadata: {exc}") from exc
    if "length" not in meta:
        raise SchemaError(f"{path}: missing required column 'length'")
    return meta
