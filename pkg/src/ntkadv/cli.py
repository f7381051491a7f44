"""Experiment driver: one JSON config per run, CSV/JSON artifacts out.

Subcommands: gram, transfer, attack, features, filter, dynamics, lin-adv.
Flags override config-file fields, which override built-in defaults. Every run
writes a manifest.json with the config hash, seed, library versions and wall
clock; rerunning with the same config and seed reproduces every CSV body
byte for byte (the manifest's wall clock is the only moving part).

All random streams derive from the root seed through named substreams
(dataset / split / init / attack / train), so individual components are
reproducible in isolation.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
import time
import zlib
from pathlib import Path

import numpy as np

from . import __version__, attacks, dynamics, features, nets, ntk, regression
from .attacks import AttackConfig
from .datasets import (
    Dataset,
    Normalization,
    SplitSpec,
    generate_gaussian_blobs,
    label_matrix,
    load_idx_images,
    split_dataset,
)
from .errors import (
    DataFormatError,
    DivergenceError,
    DomainError,
    NumericalError,
    ParameterError,
)
from .nets import TrainConfig, TrainMode
from .regression import INF_TIME, Predictor

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2

DEFAULTS = {
    "seed": 0,
    "dataset": {
        "type": "blobs",          # blobs | idx
        "n": 200, "d": 16, "k": 2, "separation": 8.0,
        "train_fraction": 0.5, "normalize": "none",
        "images": None, "labels": None, "limit": None, "classes": None,
    },
    "kernel": {"family": "two_layer", "depth": 1, "jitter_scale": 1e-8},
    "attack": {
        # epsilon null -> 0.1 * separation on blobs, 0.3 on [0,1] image data
        "epsilon": None, "steps": 10, "step_size": None, "clamp_box": None,
        "name": "fgsm",
    },
    "train": {
        "width": 10000, "hidden": [64, 64], "learning_rate": 1e-2,
        "epochs": 300, "batch_size": None, "mode": "standard",
    },
    "transfer": {"widths": [1000, 10000], "log_epochs": [25, 50, 100, 200, 400]},
    "features": {"attack_steps": 1, "gradient_images": 3},
    "filter": {"r_values": None, "pgd_steps": 10},
    "dynamics": {
        "separation": 2.0, "epsilon": 1.0, "pgd_steps": 5, "batch_size": 50,
        "epochs": 300, "tracked_batch": 50, "checkpoints": [0, 50, 100, 200, 300],
        "cutoffs": [10, 20], "seeds": [0, 1, 2],
    },
    "lin_adv": {"t0_epochs": 50, "epochs": 50, "checkpoint_every": 10},
}

_KERNELS = {"two_layer": lambda d: ntk.two_layer_kernel(),
            "fully_connected": lambda d: ntk.fully_connected_kernel(d)}
_MODES = {"standard": TrainMode.STANDARD, "adv_fgsm": TrainMode.ADV_FGSM,
          "adv_pgd": TrainMode.ADV_PGD}
_NORMS = {"none": Normalization.NONE, "unit_norm": Normalization.UNIT_NORM,
          "pixel_scale": Normalization.PIXEL_SCALE}


class ConfigError(ParameterError):
    pass


def _deep_merge(base: dict, override: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in out:
            raise ConfigError(f"unknown config field: {where}")
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(out[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path: str | None, seed: int | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as f:
                cfg = _deep_merge(cfg, json.load(f))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def substream(root_seed: int, name: str) -> int:
    """Stable named child seed of the root seed."""
    return int(np.random.SeedSequence(
        [int(root_seed), zlib.crc32(name.encode())]).generate_state(1)[0])


def _enum_lookup(table: dict, value: str, field: str):
    if value not in table:
        raise ConfigError(f"invalid value {value!r} for {field}; "
                          f"expected one of {sorted(table)}")
    return table[value]


def build_dataset(cfg: dict) -> tuple[Dataset, Dataset, Dataset]:
    dcfg = cfg["dataset"]
    if dcfg["type"] == "blobs":
        full = generate_gaussian_blobs(dcfg["n"], dcfg["d"], dcfg["k"],
                                       dcfg["separation"],
                                       substream(cfg["seed"], "dataset"))
    elif dcfg["type"] == "idx":
        if not dcfg["images"] or not dcfg["labels"]:
            raise ConfigError("dataset.images and dataset.labels are required "
                              "for type 'idx'")
        full = load_idx_images(dcfg["images"], dcfg["labels"],
                               limit=dcfg["limit"], classes=dcfg["classes"])
    else:
        raise ConfigError(f"invalid value {dcfg['type']!r} for dataset.type; "
                          "expected one of ['blobs', 'idx']")
    spec = SplitSpec(dcfg["train_fraction"], substream(cfg["seed"], "split"),
                     _enum_lookup(_NORMS, dcfg["normalize"],
                                  "dataset.normalize"))
    train_ds, val_ds = split_dataset(full, spec)
    return full, train_ds, val_ds


def build_kernel(cfg: dict) -> ntk.KernelModel:
    kcfg = cfg["kernel"]
    maker = _enum_lookup(_KERNELS, kcfg["family"], "kernel.family")
    return maker(kcfg["depth"])


def default_epsilon(cfg: dict) -> float:
    acfg = cfg["attack"]
    if acfg["epsilon"] is not None:
        return float(acfg["epsilon"])
    if cfg["dataset"]["type"] == "blobs":
        return 0.1 * float(cfg["dataset"]["separation"])
    return 0.3  # [0,1]-scaled image data


def default_clamp_box(cfg: dict):
    box = cfg["attack"]["clamp_box"]
    if box is not None:
        return tuple(box)
    return (0.0, 1.0) if cfg["dataset"]["type"] == "idx" else None


def build_attack(cfg: dict, steps: int | None = None) -> AttackConfig:
    acfg = cfg["attack"]
    eps = default_epsilon(cfg)
    steps = acfg["steps"] if steps is None else steps
    step_size = acfg["step_size"]
    if steps > 1 and step_size is None:
        step_size = 2.5 * eps / steps
    return AttackConfig(eps, steps, step_size if steps > 1 else None,
                        default_clamp_box(cfg))


def fit_predictor(cfg: dict, train_ds: Dataset,
                  learning_rate: float | None = None) -> Predictor:
    lr = learning_rate
    if lr is None:
        # Matches one epoch of mean-loss full-batch GD per unit kernel time.
        lr = cfg["train"]["learning_rate"] / train_ds.n
    return Predictor.fit(build_kernel(cfg), train_ds.inputs,
                         label_matrix(train_ds), learning_rate=lr,
                         jitter_scale=cfg["kernel"]["jitter_scale"])


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(
                str(v) if isinstance(v, (int, np.integer)) else repr(float(v))
                for v in row) + "\n")


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def run_gram(cfg: dict, out: Path) -> list[str]:
    _, train_ds, _ = build_dataset(cfg)
    g = ntk.gram(build_kernel(cfg), train_ds.inputs,
                 cfg["kernel"]["jitter_scale"])
    ntk.save_gram(g, out / "gram.ntkg")
    eig = regression.eigendecompose(g)
    _write_csv(out / "spectrum.csv", ["index", "eigenvalue"],
               [[i + 1, v] for i, v in enumerate(eig.eigenvalues)])
    return ["gram.ntkg", "spectrum.csv"]


def run_transfer(cfg: dict, out: Path) -> list[str]:
    _, train_ds, val_ds = build_dataset(cfg)
    lr = cfg["train"]["learning_rate"]
    pred = fit_predictor(cfg, train_ds)
    eps = default_epsilon(cfg)
    attack_cfg = AttackConfig(eps, 1, None, default_clamp_box(cfg))
    log_epochs = sorted(cfg["transfer"]["log_epochs"])
    cos_rows, acc_rows = [], []
    for width in cfg["transfer"]["widths"]:
        net = nets.init_net(width, train_ds.d, 1 if pred.is_binary
                            else pred.num_outputs,
                            substream(cfg["seed"], f"init_w{width}"))
        init = net.copy()
        prev = 0
        for epoch in log_epochs:
            nets.train(net, train_ds,
                       TrainConfig(lr, epoch - prev, seed=substream(
                           cfg["seed"], f"train_w{width}")), val_ds)
            prev = epoch
            cos = nets.gradient_cosine_similarity(net, init, pred, val_ds)
            clf = nets.net_classifier(net, init)
            own = nets.robust_accuracy_net(net, val_ds, attack_cfg,
                                           net_init=init)
            hits = clean = 0
            for x, lab in zip(val_ds.inputs, val_ds.labels):
                y = 2 * int(lab) - 1 if pred.is_binary else int(lab)
                if pred.is_binary:
                    delta = attacks.fgsm_kernel_binary(
                        pred, x, y, float(epoch), eps).delta
                else:
                    delta = attacks.fgsm_kernel_multiclass(
                        pred, x, y, float(epoch), eps).delta
                hits += clf.predict_class(x + delta) == lab
                clean += clf.predict_class(x) == lab
            cos_rows.append([width, epoch, float(np.nanmean(cos)),
                             int(np.sum(~np.isnan(cos)))])
            acc_rows.append([width, epoch, clean / val_ds.n, own,
                             hits / val_ds.n])
    _write_csv(out / "cosine.csv",
               ["width", "epoch", "mean_cosine", "n_valid"], cos_rows)
    _write_csv(out / "robust_accuracy.csv",
               ["width", "epoch", "clean_acc", "own_fgsm_acc",
                "kernel_fgsm_acc"], acc_rows)
    return ["cosine.csv", "robust_accuracy.csv"]


def run_attack(cfg: dict, out: Path) -> list[str]:
    _, train_ds, val_ds = build_dataset(cfg)
    pred = fit_predictor(cfg, train_ds)
    name = cfg["attack"]["name"]
    acfg = build_attack(cfg, steps=1 if name == "fgsm" else None)
    rows = attacks.attack_report(pred, val_ds, name, acfg)
    attacks.save_attack_report(rows, out / "attacks.csv")
    return ["attacks.csv"]


def run_features(cfg: dict, out: Path) -> list[str]:
    full, train_ds, val_ds = build_dataset(cfg)
    pred = fit_predictor(cfg, train_ds)
    steps = cfg["features"]["attack_steps"]
    eps = default_epsilon(cfg)
    scores = features.score_features(
        pred, val_ds, eps, attack_steps=steps,
        step_size=2.5 * eps / steps if steps > 1 else None,
        clamp_box=default_clamp_box(cfg))
    features.save_feature_scores(scores, out / "features.csv")
    written = ["features.csv"]
    feats = features.spectral_features(pred)
    x0 = val_ds.inputs[0]
    label0 = int(val_ds.labels[0])
    for f in feats[:cfg["features"]["gradient_images"]]:
        grad = features.feature_gradient_image(
            f, x0, class_index=None if pred.is_binary else label0)
        stem = f"gradient_image_feature{f.index}"
        features.save_gradient_image(grad, out / f"{stem}.csv",
                                     out / f"{stem}.json", full.image_shape)
        written += [f"{stem}.csv", f"{stem}.json"]
    return written


def run_filter(cfg: dict, out: Path) -> list[str]:
    _, train_ds, val_ds = build_dataset(cfg)
    pred = fit_predictor(cfg, train_ds)
    eps = default_epsilon(cfg)
    box = default_clamp_box(cfg)
    scores = features.score_features(pred, val_ds, eps, clamp_box=box)
    ranking = features.rank_by_robustness(scores)
    r_values = cfg["filter"]["r_values"] or list(range(1, pred.n + 1))
    pgd_steps = cfg["filter"]["pgd_steps"]
    fgsm_cfg = AttackConfig(eps, 1, None, box)
    pgd_cfg = AttackConfig(eps, pgd_steps, 2.5 * eps / pgd_steps, box)
    # Transfer deltas from the full kernel machine are independent of r.
    full_deltas = {}
    full_clf = attacks.kernel_classifier(pred)
    for j, (x, lab) in enumerate(zip(val_ds.inputs, val_ds.labels)):
        full_deltas[j] = (
            attacks.pgd_attack(full_clf, x, int(lab), fgsm_cfg).delta,
            attacks.pgd_attack(full_clf, x, int(lab), pgd_cfg).delta)
    rows = []
    for r in r_values:
        filt = features.filtered_predictor(pred, ranking, int(r))
        clf = attacks.kernel_classifier(filt)
        clean = attacks.clean_accuracy(filt, val_ds)
        self_fgsm = attacks.robust_accuracy(filt, val_ds, "fgsm", fgsm_cfg)
        self_pgd = attacks.robust_accuracy(filt, val_ds, "pgd", pgd_cfg)
        hits_f = hits_p = 0
        for j, (x, lab) in enumerate(zip(val_ds.inputs, val_ds.labels)):
            df, dp = full_deltas[j]
            hits_f += clf.predict_class(x + df) == lab
            hits_p += clf.predict_class(x + dp) == lab
        rows.append([int(r), clean, self_fgsm, self_pgd,
                     hits_f / val_ds.n, hits_p / val_ds.n])
    _write_csv(out / "filter_sweep.csv",
               ["r", "clean_acc", "fgsm_self_acc", "pgd_self_acc",
                "fgsm_full_acc", "pgd_full_acc"], rows)
    return ["filter_sweep.csv"]


def _dynamics_train_config(cfg: dict, mode: TrainMode, seed: int) -> TrainConfig:
    dcfg = cfg["dynamics"]
    attack = None
    if mode is not TrainMode.STANDARD:
        eps = dcfg["epsilon"]
        steps = dcfg["pgd_steps"] if mode is TrainMode.ADV_PGD else 1
        attack = AttackConfig(eps, steps,
                              eps / 3 if steps > 1 else None,
                              default_clamp_box(cfg))
    return TrainConfig(cfg["train"]["learning_rate"], dcfg["epochs"], mode,
                       attack, dcfg["batch_size"], seed)


def run_dynamics(cfg: dict, out: Path) -> list[str]:
    dcfg = cfg["dynamics"]
    cutoffs = tuple(dcfg["cutoffs"])
    top = cutoffs[-1]
    written = []
    summary_rows = []
    for run_seed in dcfg["seeds"]:
        ds = generate_gaussian_blobs(
            cfg["dataset"]["n"], cfg["dataset"]["d"], cfg["dataset"]["k"],
            dcfg["separation"], substream(cfg["seed"], f"dataset_{run_seed}"))
        tracked = np.arange(min(dcfg["tracked_batch"], ds.n))
        snaps_by_mode = {}
        for mode_name, mode in (("standard", TrainMode.STANDARD),
                                ("adversarial", TrainMode.ADV_PGD)):
            net = nets.MLPNet.create(
                ds.d, tuple(cfg["train"]["hidden"]), 1,
                substream(cfg["seed"], f"init_{run_seed}"))
            tcfg = _dynamics_train_config(
                cfg, mode, substream(cfg["seed"], f"train_{run_seed}"))
            snaps, kernels, trace = dynamics.record_dynamics(
                net, ds, tcfg, tracked, dcfg["checkpoints"], cutoffs)
            tag = f"{mode_name}_seed{run_seed}"
            dynamics.save_trajectory(snaps, out / f"trajectory_{tag}.csv",
                                     cutoffs)
            dynamics.save_distance_matrix(
                dynamics.pairwise_distance_matrix(kernels),
                out / f"distance_heatmap_{tag}.csv")
            nets.save_trace(trace, out / f"trace_{tag}.csv")
            written += [f"trajectory_{tag}.csv", f"distance_heatmap_{tag}.csv",
                        f"trace_{tag}.csv"]
            snaps_by_mode[mode_name] = snaps
            if mode is TrainMode.ADV_PGD:
                net2 = nets.MLPNet.create(
                    ds.d, tuple(cfg["train"]["hidden"]), 1,
                    substream(cfg["seed"], f"init_{run_seed}"))
                snaps_atk, _, _ = dynamics.record_dynamics(
                    net2, ds, tcfg, tracked, dcfg["checkpoints"], cutoffs,
                    track_attacked=True)
                dynamics.save_trajectory(
                    snaps_atk, out / f"trajectory_attacked_seed{run_seed}.csv",
                    cutoffs)
                written.append(f"trajectory_attacked_seed{run_seed}.csv")
        std, adv = snaps_by_mode["standard"], snaps_by_mode["adversarial"]
        summary_rows.append([
            run_seed, std[-1].frobenius_norm, adv[-1].frobenius_norm,
            std[-1].concentration[top], adv[-1].concentration[top]])
    _write_csv(out / "summary.csv",
               ["seed", "frob_standard", "frob_adversarial",
                f"conc{top}_standard", f"conc{top}_adversarial"], summary_rows)
    written.append("summary.csv")
    return written


def run_lin_adv(cfg: dict, out: Path) -> list[str]:
    dcfg = cfg["dynamics"]
    lcfg = cfg["lin_adv"]
    ds = generate_gaussian_blobs(
        cfg["dataset"]["n"], cfg["dataset"]["d"], cfg["dataset"]["k"],
        dcfg["separation"], substream(cfg["seed"], "dataset"))
    net = nets.MLPNet.create(ds.d, tuple(cfg["train"]["hidden"]), 1,
                             substream(cfg["seed"], "init"))
    warm = _dynamics_train_config(cfg, TrainMode.ADV_PGD,
                                  substream(cfg["seed"], "train_warm"))
    warm.epochs = lcfg["t0_epochs"]
    nets.train(net, ds, warm)
    cont = _dynamics_train_config(cfg, TrainMode.ADV_PGD,
                                  substream(cfg["seed"], "train_lin"))
    cont.epochs = lcfg["epochs"]
    every = lcfg["checkpoint_every"]
    cont.checkpoint_epochs = tuple(range(0, lcfg["epochs"] + 1, every))
    lin = nets.LinearizedNet(net)
    trace = nets.train(lin, ds, cont)
    nets.save_trace(trace, out / "trace_linearized.csv")
    tracked = ds.inputs[:min(dcfg["tracked_batch"], ds.n)]
    probe = lin.copy()
    kernels = []
    for epoch in cont.checkpoint_epochs:
        probe.set_weights(trace.checkpoints[epoch])
        kernels.append(probe.empirical_ntk(tracked))
    rows = [[int(b), dynamics.kernel_distance(kernels[i], kernels[i + 1])]
            for i, b in enumerate(cont.checkpoint_epochs[1:])]
    _write_csv(out / "kernel_drift.csv", ["epoch", "distance_to_previous"],
               rows)
    return ["trace_linearized.csv", "kernel_drift.csv"]


RUNNERS = {
    "gram": run_gram,
    "transfer": run_transfer,
    "attack": run_attack,
    "features": run_features,
    "filter": run_filter,
    "dynamics": run_dynamics,
    "lin-adv": run_lin_adv,
}


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def run(experiment: str, cfg: dict, out_dir: str | Path) -> Path:
    """Execute one experiment and write its artifacts plus manifest.json."""
    if experiment not in RUNNERS:
        raise ConfigError(f"unknown experiment {experiment!r}; "
                          f"expected one of {sorted(RUNNERS)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    files = RUNNERS[experiment](cfg, out)
    manifest = {
        "experiment": experiment,
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "seed": cfg["seed"],
        "files": files,
        "versions": {"ntkadv": __version__,
                     "numpy": np.__version__,
                     "python": sys.version.split()[0]},
        "wall_clock_s": round(time.time() - started, 3),
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return out


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ntkadv",
        description="Kernel-based adversarial example experiments")
    parser.add_argument("experiment", choices=sorted(RUNNERS))
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--out", default="results", help="output directory")
    parser.add_argument("--seed", type=int, help="root seed override")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        run(args.experiment, cfg, args.out)
    except (ConfigError, ParameterError, DataFormatError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, DivergenceError, DomainError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
