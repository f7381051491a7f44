"""Per-kind figure renderers; pure readers of result files, writers of images."""

from __future__ import annotations

import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .spec import (  # noqa: E402
    FigureKind,
    FigureSpec,
    SchemaError,
    read_gradient_meta,
    read_matrix,
    read_table,
)


def _labels(spec: FigureSpec, count: int) -> list[str]:
    given = spec.style.get("labels")
    if given:
        return list(given) + [f"series {i}" for i in range(len(given), count)]
    return [Path(p).stem for p in spec.inputs[:count]]


def _warn_empty(path) -> None:
    warnings.warn(f"{path}: no data rows, rendering empty axes", stacklevel=3)


def _render_gradient_image(spec: FigureSpec):
    """Signed gradient grids on a diverging colormap centered at zero."""
    if len(spec.inputs) % 2:
        raise SchemaError("gradient_image expects (csv, json) input pairs")
    pairs = [(spec.inputs[i], spec.inputs[i + 1])
             for i in range(0, len(spec.inputs), 2)]
    fig, axes = plt.subplots(1, len(pairs), squeeze=False,
                             figsize=(3.2 * len(pairs), 3.2))
    for ax, (csv_path, meta_path) in zip(axes[0], pairs):
        grid = np.array(read_matrix(csv_path), dtype=float)
        meta = read_gradient_meta(meta_path)
        flat = grid.ravel()
        if flat.size != meta["length"]:
            raise SchemaError(f"{csv_path}: {flat.size} values but metadata "
                              f"declares length {meta['length']}")
        if "height" in meta and "width" in meta:
            grid = flat.reshape(meta["height"], meta["width"])
        vmax = float(np.max(np.abs(flat))) or 1.0
        im = ax.imshow(grid, cmap="RdBu_r", vmin=-vmax, vmax=vmax)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, shrink=0.8)
    for ax, label in zip(axes[0], _labels(spec, len(pairs))):
        ax.set_title(label)
    return fig


def _render_scatter(spec: FigureSpec):
    """Features in robustness (x) / usefulness (y) space; larger and darker
    markers carry larger eigenvalues."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    markers = ["o", "s", "^", "D", "v"]
    for i, path in enumerate(spec.inputs):
        cols = read_table(path, ("index", "eigenvalue", "usefulness",
                                 "robustness", "useful_flag"))
        eig = np.array(cols["eigenvalue"])
        if eig.size == 0:
            _warn_empty(path)
            continue
        order = eig.argsort().argsort()  # rank within the file
        rank = order / max(eig.size - 1, 1)
        ax.scatter(cols["robustness"], cols["usefulness"],
                   s=20.0 + 160.0 * rank, c=0.25 + 0.75 * rank,
                   cmap="Greys", vmin=0.0, vmax=1.0,
                   marker=markers[i % len(markers)], edgecolors="k",
                   linewidths=0.4, label=_labels(spec, len(spec.inputs))[i])
    ax.set_xlabel("robustness")
    ax.set_ylabel("usefulness")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    if len(spec.inputs) > 1:
        ax.legend()
    return fig


def _render_cosine_and_robust(spec: FigureSpec):
    """Two stacked panels: gradient cosine vs epoch; robust accuracy under
    the net's own (solid) and the kernel's (dashed) attacks."""
    if len(spec.inputs) % 2:
        raise SchemaError("cosine_and_robust_acc expects (cosine csv, "
                          "robust-accuracy csv) input pairs")
    pairs = [(spec.inputs[i], spec.inputs[i + 1])
             for i in range(0, len(spec.inputs), 2)]
    fig, (ax_cos, ax_acc) = plt.subplots(2, 1, sharex=True, figsize=(5, 5.5))
    for cos_path, acc_path in pairs:
        cos = read_table(cos_path, ("width", "epoch", "mean_cosine"))
        acc = read_table(acc_path, ("width", "epoch", "clean_acc",
                                    "own_fgsm_acc", "kernel_fgsm_acc"))
        if not cos["epoch"]:
            _warn_empty(cos_path)
            continue
        for width in sorted(set(cos["width"])):
            sel = [j for j, w in enumerate(cos["width"]) if w == width]
            ax_cos.plot([cos["epoch"][j] for j in sel],
                        [cos["mean_cosine"][j] for j in sel],
                        marker="o", label=f"width {int(width)}")
            sel = [j for j, w in enumerate(acc["width"]) if w == width]
            epochs = [acc["epoch"][j] for j in sel]
            ax_acc.plot(epochs, [acc["own_fgsm_acc"][j] for j in sel],
                        linestyle="-", marker="o",
                        label=f"own attack, width {int(width)}")
            ax_acc.plot(epochs, [acc["kernel_fgsm_acc"][j] for j in sel],
                        linestyle="--", marker="x",
                        label=f"kernel attack, width {int(width)}")
    ax_cos.set_ylabel("gradient cosine")
    ax_cos.set_ylim(0, 1.05)
    ax_acc.set_ylabel("robust accuracy")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_xscale("log")
    ax_cos.legend(fontsize=8)
    ax_acc.legend(fontsize=8)
    return fig


def _render_matrix_image(spec: FigureSpec, cmap: str):
    fig, axes = plt.subplots(1, len(spec.inputs), squeeze=False,
                             figsize=(3.6 * len(spec.inputs), 3.2))
    for ax, path, label in zip(axes[0], spec.inputs,
                               _labels(spec, len(spec.inputs))):
        rows = read_matrix(path)
        if not rows:
            _warn_empty(path)
            ax.set_title(label)
            continue
        mat = np.array(rows, dtype=float)
        if mat.shape[0] != mat.shape[1]:
            raise SchemaError(f"{path}: expected a square matrix, "
                              f"got {mat.shape}")
        im = ax.imshow(mat, cmap=cmap)
        fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_title(label)
    return fig


def _render_polar(spec: FigureSpec):
    """Kernel trajectory in (r, theta); darker colors mark earlier epochs."""
    fig = plt.figure(figsize=(4.5, 4.5))
    ax = fig.add_subplot(projection="polar")
    for path, label in zip(spec.inputs, _labels(spec, len(spec.inputs))):
        cols = read_table(path, ("epoch", "r", "theta"))
        if not cols["epoch"]:
            _warn_empty(path)
            continue
        shade = np.linspace(0.1, 0.9, len(cols["epoch"]))
        ax.plot(cols["theta"], cols["r"], color="0.6", linewidth=0.8,
                zorder=1)
        ax.scatter(cols["theta"], cols["r"], c=shade, cmap="viridis",
                   vmin=0.0, vmax=1.0, s=40, zorder=2, label=label)
    ax.set_thetamin(0)
    ax.set_thetamax(90)
    if len(spec.inputs) > 1:
        ax.legend(fontsize=8)
    return fig


def _render_concentration(spec: FigureSpec):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    styles = ["-", "--", "-.", ":"]
    for i, (path, label) in enumerate(zip(spec.inputs,
                                          _labels(spec, len(spec.inputs)))):
        cols = read_table(path, ("epoch",))
        conc_cols = [c for c in cols if c.startswith("conc_p")]
        if not conc_cols:
            raise SchemaError(f"{path}: missing required column 'conc_p*'")
        if not cols["epoch"]:
            _warn_empty(path)
            continue
        for col in conc_cols:
            ax.plot(cols["epoch"], cols[col], linestyle=styles[i % 4],
                    marker="o", markersize=3,
                    label=f"{label} {col.replace('conc_p', 'top-')}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("spectral concentration")
    ax.legend(fontsize=8)
    return fig


def _render_filter_sweep(spec: FigureSpec):
    """Accuracy of the r-most-robust-features kernel machine as r grows."""
    series = [("clean_acc", "tab:blue", "-", "clean"),
              ("fgsm_full_acc", "tab:red", "-", "FGSM (full kernel)"),
              ("pgd_full_acc", "tab:purple", "--", "PGD (full kernel)"),
              ("fgsm_self_acc", "tab:orange", "-", "FGSM (self)"),
              ("pgd_self_acc", "tab:green", "--", "PGD (self)")]
    fig, axes = plt.subplots(1, len(spec.inputs), squeeze=False, sharey=True,
                             figsize=(4.5 * len(spec.inputs), 3.6))
    for ax, path, label in zip(axes[0], spec.inputs,
                               _labels(spec, len(spec.inputs))):
        cols = read_table(path, ("r",) + tuple(s[0] for s in series))
        if not cols["r"]:
            _warn_empty(path)
            continue
        for col, color, style, name in series:
            ax.plot(cols["r"], cols[col], color=color, linestyle=style,
                    marker=".", label=name)
        ax.set_xlabel("retained robust features r")
        ax.set_title(label)
        ax.set_ylim(0, 1.05)
    axes[0][0].set_ylabel("accuracy")
    axes[0][0].legend(fontsize=8)
    return fig


_RENDERERS = {
    FigureKind.GRADIENT_IMAGE: _render_gradient_image,
    FigureKind.USEFULNESS_ROBUSTNESS_SCATTER: _render_scatter,
    FigureKind.COSINE_AND_ROBUST_ACC: _render_cosine_and_robust,
    FigureKind.DISTANCE_HEATMAP:
        lambda spec: _render_matrix_image(spec, "magma"),
    FigureKind.POLAR_TRAJECTORY: _render_polar,
    FigureKind.CONCENTRATION_CURVES: _render_concentration,
    FigureKind.FILTER_SWEEP: _render_filter_sweep,
    FigureKind.KERNEL_MATRIX_IMAGE:
        lambda spec: _render_matrix_image(spec, "viridis"),
}


def render(spec: FigureSpec):
    """Render one figure and write it to spec.output; returns the Figure.

    Inputs are read once and never modified; output bytes are deterministic
    for identical inputs (no timestamps are embedded).
    """
    fig = _RENDERERS[spec.kind](spec)
    title = spec.style.get("title")
    if title:
        fig.suptitle(title)
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=int(spec.style.get("dpi", 110)),
                bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return fig
