"""Microrobot feasibility studies: error map, gradient threshold, single-NV.

The ensemble study maps the robot-position-dependent localisation error
over a square region laterally offset from the array and relates the
50 um error contour to the sensor-averaged field-gradient threshold.
Because a dipole's field magnitude and gradient at distance r are tied
by g ~ 3|B|/r, the gradient-threshold contour coincides with the radius
where the sensor field leaves the usable sweep window; inside it the
spectra stop carrying pose information and the error blows up, outside
it the error is small and rises gently as the gradient keeps falling
(the anti-correlated regime).

The single-NV study swaps in eight fixed randomly oriented single-NV
sensors at a smaller standoff and tracks both position and in-plane
orientation along a rotating trajectory.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import numpy as np

from ..fields import calibrate_dipole_moment, field_magnitude_gradient
from ..inverse import build_model, train
from ..specfit import extract_features, fit_spectrum
from ..tracking import run_tracking, s_trajectory
from .config import (
    ScenarioConfig,
    build_bias,
    build_layout,
    build_protocol,
    build_sensors,
    build_source,
)
from .datasets import derive_seed, features_for_sample, generate_dataset, pl_table
from .report import StudyReport, finalize_study, write_long_csv


def _robot_map_config(config: ScenarioConfig) -> ScenarioConfig:
    """Scenario for the ensemble error map, derived from the base scene."""
    mr = config.microrobot
    layout = build_layout(config.scene)
    y_centre = float(layout.centre[1])
    span_x, span_y = mr.map_span_m
    area = (
        (-(mr.map_gap_m + span_x), -mr.map_gap_m),
        (y_centre - span_y / 2, y_centre + span_y / 2),
    )
    moment = calibrate_dipole_moment(
        mr.gradient_threshold_T_per_m, mr.boundary_distance_m
    )
    scene = dataclasses.replace(
        config.scene,
        source_kind="microrobot",
        standoff_m=mr.standoff_m,
        source_direction=tuple(mr.moment_direction),
        moment_magnitude=moment,
        area_m=area,
        n_samples=mr.n_samples,
        estimate_orientation=False,
        max_fit_failure_rate=mr.max_fit_failure_rate,
    )
    return dataclasses.replace(config, scene=scene, name=f"{config.name}-robot-map")


def _single_nv_config(config: ScenarioConfig) -> ScenarioConfig:
    """Scenario for the single-NV pose+orientation study."""
    mr = config.microrobot
    layout = build_layout(config.scene)
    y_centre = float(layout.centre[1])
    size_x, size_y = mr.single_area_size_m
    x_centre = -mr.single_area_offset_m
    area = (
        (x_centre - size_x / 2, x_centre + size_x / 2),
        (y_centre - size_y / 2, y_centre + size_y / 2),
    )
    moment = calibrate_dipole_moment(
        mr.single_target_gradient_T_per_m, mr.single_calibration_distance_m
    )
    scene = dataclasses.replace(
        config.scene,
        sensor_mode="single",
        count_rate_cps=mr.single_count_rate_cps,
        contrast=mr.single_contrast,
        linewidth_hz=mr.single_linewidth_hz,
        source_kind="microrobot",
        standoff_m=mr.single_standoff_m,
        source_direction=tuple(mr.moment_direction),
        moment_magnitude=moment,
        area_m=area,
        n_samples=mr.single_n_samples,
        estimate_orientation=True,
        max_fit_failure_rate=mr.max_fit_failure_rate,
    )
    return dataclasses.replace(
        config, scene=scene, name=f"{config.name}-robot-single"
    )


def _crossing(x: np.ndarray, y: np.ndarray, threshold: float) -> float | None:
    """Interpolated |x| where y last crosses the threshold from above.

    Scans outward (increasing |x|); returns None without a crossing.
    """
    above = y > threshold
    for i in range(len(x) - 1):
        if above[i] and not above[i + 1]:
            frac = (y[i] - threshold) / (y[i] - y[i + 1])
            return float(x[i] + frac * (x[i + 1] - x[i]))
    return None


def study_microrobot(config: ScenarioConfig, out_dir: str | Path) -> StudyReport:
    """Ensemble error map, gradient-threshold analysis, single-NV tracking."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    mr = config.microrobot

    # ------------------------------------------------------------------
    # (i) ensemble error map
    # ------------------------------------------------------------------
    map_config = _robot_map_config(config)
    scene = map_config.scene
    sensors = build_sensors(scene)
    source = build_source(scene)
    bias = build_bias(scene)
    protocol = build_protocol(scene)

    dataset, gen_report = generate_dataset(map_config)
    dataset.save_csv(out / "map_dataset.csv")
    train_config = map_config.training.to_train_config(
        seed=map_config.seed, epochs=mr.epochs
    )
    train_config = dataclasses.replace(train_config, dtype=mr.dtype)
    model = build_model(
        dataset.n_sensors, dataset.out_dim, seed=map_config.seed,
        dtype=np.dtype(mr.dtype),
    )
    model = train(model, dataset, train_config).model
    model.to_json(out / "map_model.json")

    (x0, x1), (y0, y1) = scene.area_m
    n_cells = mr.map_cells
    cell = (x1 - x0) / n_cells
    xs = x0 + (np.arange(n_cells) + 0.5) * cell
    ys = y0 + (np.arange(n_cells) + 0.5) * ((y1 - y0) / n_cells)

    cells = np.array([[x, y] for x in xs for y in ys])
    table = pl_table(cells, None, sensors, source, protocol.grid, bias)
    eval_seed = derive_seed(map_config.seed, "robot-map-eval")

    error_map = np.full((n_cells, n_cells), np.nan)
    gradient_map = np.empty((n_cells, n_cells))
    rows = []
    for idx, (x, y) in enumerate(cells):
        i, j = divmod(idx, n_cells)
        moved = source.moved_to((x, y, scene.standoff_m))
        grads = [
            np.linalg.norm(field_magnitude_gradient([moved, *bias], s.position))
            for s in sensors
        ]
        gradient_map[i, j] = float(np.mean(grads))

        errs = []
        for rep in range(mr.eval_repeats):
            feats = features_for_sample(
                table[idx], sensors, protocol, eval_seed,
                idx * mr.eval_repeats + rep,
            )
            if feats is None:
                continue
            pred = model.predict(feats)
            errs.append(float(np.hypot(pred[0] - x, pred[1] - y)))
        if errs:
            error_map[i, j] = float(np.mean(errs))
        rows.append(
            [float(x), float(y), float(error_map[i, j]),
             float(gradient_map[i, j]), len(errs)]
        )

    write_long_csv(
        out / "error_map.csv",
        ["x_m", "y_m", "mean_error_m", "sensor_avg_gradient_T_per_m",
         "n_successful_reps"],
        rows,
    )

    # Column curves vs lateral distance from the array (|x|, outward).
    offsets = np.abs(xs)
    order = np.argsort(offsets)
    err_cols = np.nanmean(error_map, axis=1)[order]
    # Columns where nothing ever fits carry no estimate at all.
    err_cols = np.where(np.isnan(err_cols), np.inf, err_cols)
    grad_cols = gradient_map.mean(axis=1)[order]
    offsets = offsets[order]
    write_long_csv(
        out / "map_columns.csv",
        ["lateral_offset_m", "y_avg_error_m", "y_avg_gradient_T_per_m"],
        [
            [float(offsets[i]), float(err_cols[i]), float(grad_cols[i])]
            for i in range(n_cells)
        ],
    )

    x_err = _crossing(offsets, err_cols, mr.error_threshold_m)
    x_grad = _crossing(offsets, grad_cols, mr.gradient_threshold_T_per_m)
    good = err_cols <= mr.error_threshold_m
    span = float(np.count_nonzero(good) * cell)
    # Anti-correlation over the measurable region (beyond the wall).
    usable = np.isfinite(err_cols) & good
    if np.count_nonzero(usable) >= 3:
        corr = float(np.corrcoef(err_cols[usable], grad_cols[usable])[0, 1])
    else:
        corr = float("nan")

    map_metrics = {
        "moment_A_m2": float(source.moment_magnitude),
        "cell_m": float(cell),
        "good_region_span_x_m": span,
        "error_crossing_offset_m": x_err,
        "gradient_crossing_offset_m": x_grad,
        "contour_separation_m": (
            abs(x_err - x_grad) if x_err is not None and x_grad is not None
            else None
        ),
        "error_gradient_correlation_in_good_region": corr,
        "dataset_failure_rate": gen_report.failure_rate,
    }

    # ------------------------------------------------------------------
    # (iii) single-NV pose + orientation tracking
    # ------------------------------------------------------------------
    single_config = _single_nv_config(config)
    s_scene = single_config.scene
    s_sensors = build_sensors(s_scene)
    s_source = build_source(s_scene)
    s_protocol = build_protocol(s_scene)

    s_dataset, s_gen = generate_dataset(single_config)
    s_dataset.save_csv(out / "single_dataset.csv")
    s_train_config = dataclasses.replace(
        single_config.training.to_train_config(
            seed=single_config.seed, epochs=mr.single_epochs
        ),
        dtype=mr.dtype,
    )
    s_model = build_model(
        s_dataset.n_sensors, s_dataset.out_dim, seed=single_config.seed,
        dtype=np.dtype(mr.dtype),
    )
    s_model = train(s_model, s_dataset, s_train_config).model
    s_model.to_json(out / "single_model.json")

    trajectory = s_trajectory(
        n_steps=mr.single_traj_steps,
        step_size=mr.single_traj_step_m,
        area=s_scene.area_m,
        z=s_scene.standoff_m,
        dwell=s_scene.integration_time_s,
    ).with_rotation(mr.single_total_rotation_rad)
    trajectory.save_csv(out / "single_trajectory.csv")

    result = run_tracking(
        trajectory, s_sensors, s_source, s_model,
        frame_time=s_scene.integration_time_s,
        seed=derive_seed(single_config.seed, "robot-single-track"),
        protocol=s_protocol,
    )
    result.save_csv(out / "single_tracking.csv")

    # Frames align 1:1 with waypoints (frame time equals the dwell).
    pos_errs, ang_errs = [], []
    for k, frame in enumerate(result.frames):
        if not frame.fit_ok:
            continue
        truth = trajectory.waypoints[k]
        pos_errs.append(
            float(np.hypot(frame.pose[0] - truth[0], frame.pose[1] - truth[1]))
        )
        wrapped = (
            frame.pose[2] - trajectory.orientation[k] + math.pi
        ) % (2 * math.pi) - math.pi
        ang_errs.append(abs(float(wrapped)))

    single_metrics = {
        "moment_A_m2": float(s_source.moment_magnitude),
        "n_frames": len(result.frames),
        "n_fit_failures": result.n_fit_failures,
        "mean_position_error_m": float(np.mean(pos_errs)),
        "mean_orientation_error_rad": float(np.mean(ang_errs)),
        "mean_orientation_error_deg": float(np.degrees(np.mean(ang_errs))),
        "dataset_failure_rate": s_gen.failure_rate,
    }

    metrics = {"map": map_metrics, "single_nv": single_metrics}
    return finalize_study(out, config, "microrobot", metrics)
