"""Study runners: static localisation, scaling laws, tracking, sensitivity.

Each runner takes a ScenarioConfig and an output directory, writes its
config, data tables, model containers, and report, and returns the
StudyReport.  Runners are pure functions of (config, seed): identical
inputs reproduce identical output bytes.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from ..errors import ConfigError
from ..inverse import LabelledDataset, LocalizationModel, build_model, train
from ..odmr import SweepProtocol
from ..sensitivity import (
    curve_to_csv,
    sensitivity_vs_field,
)
from ..tracking import Trajectory, mean_perpendicular_distance, run_tracking, s_trajectory
from .config import (
    ScenarioConfig,
    build_bias,
    build_protocol,
    build_sensors,
    build_source,
    default_area,
)
from .datasets import (
    derive_seed,
    features_for_sample,
    generate_dataset,
    pl_table,
    sample_poses,
)
from .report import StudyReport, finalize_study, write_long_csv

_EVAL_SAMPLES = 120


def _prepare_dir(out_dir: str | Path, config: ScenarioConfig) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    return out


def _evaluate(model: LocalizationModel, dataset: LabelledDataset) -> np.ndarray:
    """Euclidean position error per sample, metres."""
    pred = model.predict(dataset.features)
    return np.linalg.norm(pred[:, :2] - dataset.labels[:, :2], axis=1)


def study_static(
    config: ScenarioConfig,
    out_dir: str | Path,
    dataset: LabelledDataset | None = None,
) -> StudyReport:
    """Train on the configured scene and score the held-out test split."""
    out = _prepare_dir(out_dir, config)
    if dataset is None:
        dataset, gen_report = generate_dataset(config)
        dataset.save_csv(out / "dataset.csv")
        dropped = list(gen_report.dropped)
    else:
        dropped = []

    train_config = config.training.to_train_config(seed=config.seed)
    model = build_model(
        dataset.n_sensors, dataset.out_dim, seed=config.seed,
        dtype=np.dtype(config.training.dtype),
    )
    result = train(model, dataset, train_config)
    result.model.to_json(out / "model.json")
    result.history_to_csv(out / "history.csv")

    test = dataset.subset(result.test_indices)
    pred = result.model.predict(test.features)
    err = np.linalg.norm(pred[:, :2] - test.labels[:, :2], axis=1)
    residual_x = pred[:, 0] - test.labels[:, 0]
    residual_y = pred[:, 1] - test.labels[:, 1]

    write_long_csv(
        out / "residuals.csv",
        ["true_x_m", "true_y_m", "est_x_m", "est_y_m",
         "residual_x_m", "residual_y_m", "error_m"],
        [
            [float(test.labels[i, 0]), float(test.labels[i, 1]),
             float(pred[i, 0]), float(pred[i, 1]),
             float(residual_x[i]), float(residual_y[i]), float(err[i])]
            for i in range(len(err))
        ],
    )

    metrics = {
        "n_train_samples": int(dataset.n_samples),
        "n_test": int(len(err)),
        "dropped_samples": dropped,
        "best_epoch": result.best_epoch,
        "mean_error_m": float(err.mean()),
        "median_error_m": float(np.median(err)),
        "x_mean_abs_residual_m": float(np.abs(residual_x).mean()),
        "y_mean_abs_residual_m": float(np.abs(residual_y).mean()),
        "x_iqr_m": float(np.subtract(*np.percentile(residual_x, [75, 25]))),
        "y_iqr_m": float(np.subtract(*np.percentile(residual_y, [75, 25]))),
    }
    return finalize_study(out, config, "static", metrics)


# ----------------------------------------------------------------------
# scaling studies
# ----------------------------------------------------------------------


def _power_law_exponent(x: np.ndarray, y: np.ndarray) -> float:
    slope, _ = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope)


def _bootstrap_exponent(
    x: np.ndarray, errors: np.ndarray, n_boot: int = 200, seed: int = 0
) -> tuple[float, float, float]:
    """Exponent of mean error vs x with a bootstrap CI over repeats.

    `errors` has shape (n_points, n_repeats).
    """
    exponent = _power_law_exponent(x, errors.mean(axis=1))
    rng = np.random.default_rng(seed)
    n_rep = errors.shape[1]
    samples = []
    for _ in range(n_boot):
        pick = rng.integers(0, n_rep, n_rep)
        samples.append(_power_law_exponent(x, errors[:, pick].mean(axis=1)))
    lo, hi = np.percentile(samples, [2.5, 97.5])
    return exponent, float(lo), float(hi)


def _train_and_score(
    train_set: LabelledDataset,
    eval_set: LabelledDataset,
    config: ScenarioConfig,
    seed: int,
) -> float:
    scaling = config.scaling
    train_config = config.training.to_train_config(
        seed=seed, epochs=scaling.epochs
    )
    train_config = type(train_config)(
        **{**train_config.__dict__, "dtype": scaling.dtype}
    )
    model = build_model(
        train_set.n_sensors, train_set.out_dim, seed=seed,
        dtype=np.dtype(scaling.dtype),
    )
    result = train(model, train_set, train_config)
    return float(_evaluate(result.model, eval_set).mean())


def _scene_tables(config: ScenarioConfig, repeat: int, n_train: int):
    """Pose and noiseless-PL tables for one scaling repeat."""
    scene = config.scene
    sensors = build_sensors(scene)
    source = build_source(scene)
    bias = build_bias(scene)
    grid = build_protocol(scene).grid
    area = default_area(scene)

    seed_train = derive_seed(config.seed, f"scaling-train-{repeat}")
    seed_eval = derive_seed(config.seed, f"scaling-eval-{repeat}")
    poses_tr, _ = sample_poses(area, n_train, np.random.default_rng(seed_train))
    poses_ev, _ = sample_poses(
        area, _EVAL_SAMPLES, np.random.default_rng(seed_eval)
    )
    table_tr = pl_table(poses_tr, None, sensors, source, grid, bias)
    table_ev = pl_table(poses_ev, None, sensors, source, grid, bias)
    return sensors, poses_tr, table_tr, poses_ev, table_ev, seed_train, seed_eval


def _dataset_from_table(
    poses, table, sensors, protocol, seed
) -> LabelledDataset:
    features, labels = [], []
    for i in range(len(poses)):
        row = features_for_sample(table[i], sensors, protocol, seed, i)
        if row is None:
            continue
        features.append(row)
        labels.append(poses[i])
    return LabelledDataset(np.asarray(features), np.asarray(labels))


def study_scaling(
    config: ScenarioConfig, axis: str, out_dir: str | Path
) -> StudyReport:
    """Error scaling versus integration time, dataset size, or sensor count."""
    if axis not in ("time", "dataset", "sensors"):
        raise ConfigError(f"unknown scaling axis {axis!r}")
    out = _prepare_dir(out_dir, config)
    scene = config.scene
    scaling = config.scaling
    base_protocol = build_protocol(scene)
    rows = []

    if axis == "time":
        times = np.asarray(scaling.integration_times_s, dtype=float)
        errors = np.empty((len(times), scaling.repeats))
        for r in range(scaling.repeats):
            sensors, poses_tr, table_tr, poses_ev, table_ev, s_tr, s_ev = (
                _scene_tables(config, r, scene.n_samples)
            )
            for i, t in enumerate(times):
                protocol = SweepProtocol(
                    grid=base_protocol.grid, dwell=base_protocol.dwell,
                    integration_time=float(t),
                )
                train_set = _dataset_from_table(
                    poses_tr, table_tr, sensors, protocol, s_tr + i
                )
                eval_set = _dataset_from_table(
                    poses_ev, table_ev, sensors, protocol, s_ev + i
                )
                errors[i, r] = _train_and_score(
                    train_set, eval_set, config,
                    seed=derive_seed(config.seed, f"time-{t}-{r}"),
                )
                rows.append(["time", float(t), r, float(errors[i, r])])
        exponent, lo, hi = _bootstrap_exponent(times, errors)
        x_values = times

    elif axis == "dataset":
        sizes = np.asarray(scaling.dataset_sizes, dtype=int)
        errors = np.empty((len(sizes), scaling.repeats))
        for r in range(scaling.repeats):
            sensors, poses_tr, table_tr, poses_ev, table_ev, s_tr, s_ev = (
                _scene_tables(config, r, int(sizes.max()))
            )
            full_train = _dataset_from_table(
                poses_tr, table_tr, sensors, base_protocol, s_tr
            )
            eval_set = _dataset_from_table(
                poses_ev, table_ev, sensors, base_protocol, s_ev
            )
            for i, n in enumerate(sizes):
                subset = full_train.subset(np.arange(min(n, full_train.n_samples)))
                errors[i, r] = _train_and_score(
                    subset, eval_set, config,
                    seed=derive_seed(config.seed, f"size-{n}-{r}"),
                )
                rows.append(["dataset", int(n), r, float(errors[i, r])])
        exponent, lo, hi = _bootstrap_exponent(sizes.astype(float), errors)
        x_values = sizes

    else:  # sensors
        counts = np.asarray(scaling.sensor_counts, dtype=int)
        errors = np.empty((len(counts), scaling.repeats))
        for r in range(scaling.repeats):
            sensors, poses_tr, table_tr, poses_ev, table_ev, s_tr, s_ev = (
                _scene_tables(config, r, scene.n_samples)
            )
            full_train = _dataset_from_table(
                poses_tr, table_tr, sensors, base_protocol, s_tr
            )
            eval_set = _dataset_from_table(
                poses_ev, table_ev, sensors, base_protocol, s_ev
            )
            for i, k in enumerate(counts):
                keep = list(range(int(k)))
                errors[i, r] = _train_and_score(
                    full_train.with_sensors(keep), eval_set.with_sensors(keep),
                    config, seed=derive_seed(config.seed, f"sensors-{k}-{r}"),
                )
                rows.append(["sensors", int(k), r, float(errors[i, r])])
        exponent, lo, hi = _bootstrap_exponent(counts.astype(float), errors)
        x_values = counts

    write_long_csv(
        out / "scaling.csv", ["axis", "x", "repeat", "mean_error_m"], rows
    )
    means = errors.mean(axis=1)
    rho, rho_p = stats.spearmanr(x_values, means)
    linear_slope, linear_intercept = np.polyfit(x_values, means, 1)
    metrics = {
        "axis": axis,
        "x_values": [float(v) for v in x_values],
        "mean_errors_m": [float(v) for v in means],
        "power_law_exponent": exponent,
        "exponent_ci95": [lo, hi],
        "spearman_rho": float(rho),
        "spearman_p": float(rho_p),
        "linear_slope": float(linear_slope),
        "linear_intercept": float(linear_intercept),
        "repeats": scaling.repeats,
    }
    return finalize_study(out, config, f"scaling-{axis}", metrics)


# ----------------------------------------------------------------------
# tracking study
# ----------------------------------------------------------------------


def study_tracking(
    config: ScenarioConfig,
    out_dir: str | Path,
    model: LocalizationModel | str | Path | None = None,
) -> StudyReport:
    """MPD over the speed x frame-rate grid with seeded repeats."""
    out = _prepare_dir(out_dir, config)
    scene = config.scene
    tracking = config.tracking

    if model is None:
        dataset, _ = generate_dataset(config)
        train_config = config.training.to_train_config(seed=config.seed)
        net = build_model(
            dataset.n_sensors, dataset.out_dim, seed=config.seed,
            dtype=np.dtype(config.training.dtype),
        )
        net = train(net, dataset, train_config).model
        net.to_json(out / "model.json")
    elif isinstance(model, (str, Path)):
        net = LocalizationModel.from_json(model)
    else:
        net = model

    sensors = build_sensors(scene)
    source = build_source(scene)
    bias = build_bias(scene)
    protocol = build_protocol(scene)
    area = default_area(scene)
    trajectory = s_trajectory(
        n_steps=tracking.n_steps,
        step_size=tracking.step_size_m,
        area=area,
        z=scene.standoff_m,
    )
    trajectory.save_csv(out / "trajectory.csv")

    pl_cache: dict = {}
    rows = []
    medians = np.empty((len(tracking.dwells_s), len(tracking.frame_times_s)))
    fit_failures = 0
    for a, dwell in enumerate(tracking.dwells_s):
        traj = trajectory.with_dwell(float(dwell))
        for b, frame_time in enumerate(tracking.frame_times_s):
            mpds = []
            for r in range(tracking.n_seeds):
                seed = derive_seed(
                    config.seed, f"track-{dwell}-{frame_time}-{r}"
                )
                result = run_tracking(
                    traj, sensors, source, net, float(frame_time), seed,
                    protocol=protocol, bias=bias, pl_cache=pl_cache,
                )
                mpds.append(result.mpd)
                fit_failures += result.n_fit_failures
                rows.append(
                    [float(traj.speed), float(1.0 / frame_time), r,
                     float(result.mpd), result.n_fit_failures]
                )
            medians[a, b] = float(np.median(mpds))

    write_long_csv(
        out / "tracking.csv",
        ["speed_m_per_s", "frame_rate_hz", "seed_index", "mpd_m",
         "fit_failures"],
        rows,
    )

    # Ordered comparisons: MPD should not decrease when the source moves
    # faster at a fixed frame rate, nor when frames get shorter at a
    # fixed speed.  Speeds fall with dwell, frame rates rise as frame
    # time falls; orient both axes to "increasing difficulty".
    speed_order = np.argsort([-d for d in tracking.dwells_s])
    rate_order = np.argsort([-f for f in tracking.frame_times_s])
    ordered = medians[np.ix_(speed_order, rate_order)]
    comparisons = []
    for i in range(ordered.shape[0]):
        for j in range(ordered.shape[1] - 1):
            comparisons.append(ordered[i, j] <= ordered[i, j + 1])
    for j in range(ordered.shape[1]):
        for i in range(ordered.shape[0] - 1):
            comparisons.append(ordered[i, j] <= ordered[i + 1, j])

    metrics = {
        "dwells_s": [float(v) for v in tracking.dwells_s],
        "frame_times_s": [float(v) for v in tracking.frame_times_s],
        "speeds_m_per_s": [
            float(trajectory.with_dwell(float(d)).speed)
            for d in tracking.dwells_s
        ],
        "median_mpd_m": [[float(v) for v in row] for row in medians],
        "ordered_median_mpd_m": [[float(v) for v in row] for row in ordered],
        "n_ordered_comparisons": len(comparisons),
        "n_monotone": int(sum(comparisons)),
        "total_fit_failures": int(fit_failures),
        "n_seeds": tracking.n_seeds,
    }
    return finalize_study(out, config, "tracking", metrics)


# ----------------------------------------------------------------------
# sensitivity curve study
# ----------------------------------------------------------------------


def study_sensitivity_curve(
    config: ScenarioConfig,
    out_dir: str | Path,
    fields: Sequence[float] | None = None,
) -> StudyReport:
    """CW sensitivity versus field for the configured ensemble sensor."""
    out = _prepare_dir(out_dir, config)
    sensors = build_sensors(config.scene)
    if fields is None:
        fields = np.linspace(0.0, 2.2e-3, 23)
    points = sensitivity_vs_field(
        sensors[0], list(fields), build_protocol(config.scene).grid
    )
    curve_to_csv(points, out / "sensitivity_curve.csv")

    etas = np.array([p.eta for p in points])
    bs = np.array([p.field for p in points])
    window = (bs >= 0.2e-3) & (bs <= 2.2e-3)
    eta_window = etas[window]
    metrics = {
        "fields_T": [float(b) for b in bs],
        "eta_T_per_sqrtHz": [float(e) for e in etas],
        "eta_zero_field": float(etas[0]),
        "eta_1mT": float(np.interp(1.0e-3, bs, etas)),
        "eta_1p5mT": float(np.interp(1.5e-3, bs, etas)),
        "monotone_in_window": bool(np.all(np.diff(eta_window) >= -1e-12)),
        "all_fits_converged": bool(all(p.fit_converged for p in points)),
    }
    return finalize_study(out, config, "sensitivity-curve", metrics)
