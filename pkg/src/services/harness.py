"""
Monte Carlo sweeps over the fronthaul capacity.

A job is one (capacity, drop) pair: it draws the drop's channels once and runs
every scheme on them, so scheme comparisons are always paired. A drop that is
infeasible for any scheme is redrawn for all schemes with the next attempt
index of its seed sequence.
"""
import logging
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats
from tqdm import tqdm

from src.conf.config import config as settings
from src.database.db import DatabaseSessionManager
from src.repository import results as repository_results
from src.schemas.config import SimConfig
from src.schemas.scheme import Clustering, RsMode, SchemeSpec
from src.schemas.sweep import DropRow, MetricsRow, SweepSpec
from src.services.exceptions import InfeasibleDropError, RedrawLimitExceeded
from src.services.orchestrate import SolutionRecord, run_alternating
from src.services.scenario import ChannelSet, allocate_fronthaul, generate_channels, generate_topology

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"
FIGURES = (2, 3, 4, 5)


def drop_rng(seed: int, drop: int, attempt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, drop, attempt]))


def draw_channels(config: SimConfig, drop: int, attempt: int = 0) -> ChannelSet:
    """Channels of one drop; they depend on the seed, drop and attempt only."""
    rng = drop_rng(config.seed, drop, attempt)
    return generate_channels(generate_topology(config, rng), config, rng)


def run_single(config: SimConfig, scheme: SchemeSpec, C_total: float, drop: int = 0,
               attempt: int = 0) -> SolutionRecord:
    """
    One scheme on one drop.

    :raise InfeasibleAllocationError: When ``C_total`` is below N * r_min.
    :raise InfeasibleDropError: When the drop admits no QoS-feasible starting point.
    """
    ch = draw_channels(config, drop, attempt)
    alloc = allocate_fronthaul(C_total, config)
    return run_alternating(ch, alloc, scheme, config, seed=(config.seed, drop, attempt))


def drop_row(record: SolutionRecord, drop: int, attempt: int, channel_hash: str) -> DropRow:
    return DropRow(scheme=record.scheme.tag, C_total=record.C_total,
                   drop=drop, attempt=attempt, redraws=attempt, status=record.status, ee=record.EE,
                   rate_total=record.rates.total, rate_common=record.rates.common_total, p_tr=record.powers.P_tr,
                   p_fh=record.powers.P_fh, p_total=record.powers.total, losc=record.LoSC,
                   outer_iterations=record.outer_iterations, channel_hash=channel_hash)


def run_drop_job(config: SimConfig, C_total: float, drop: int, tags: list[str],
                 max_attempts: int) -> tuple[list[DropRow], int]:
    """
    Runs every scheme on one drop, redrawing the channels while any scheme finds the drop infeasible.

    :return: tuple[list[DropRow], int]: The rows (empty when the attempts ran out) and the redraws used.
    """
    alloc = allocate_fronthaul(C_total, config)
    schemes = [SchemeSpec.from_tag(tag) for tag in tags]
    for attempt in range(max_attempts + 1):
        ch = draw_channels(config, drop, attempt)
        fingerprint = ch.fingerprint()
        try:
            rows = [drop_row(run_alternating(ch, alloc, scheme, config, seed=(config.seed, drop, attempt)),
                             drop, attempt, fingerprint) for scheme in schemes]
        except InfeasibleDropError as err:
            logger.info("drop C=%s drop=%d attempt=%d status=redraw (%s)", C_total, drop, attempt, err)
            continue
        for row in rows:
            logger.info("drop C=%s drop=%d attempt=%d status=%s", C_total, drop, attempt, row.status)
        return rows, attempt
    return [], max_attempts + 1


def _jobs(spec: SweepSpec):
    return [(C, drop) for C in spec.capacities for drop in range(spec.drops)]


def execute_sweep(spec: SweepSpec, workers: int | None = None) -> list[DropRow]:
    """
    Runs every (capacity, drop) job, in a process pool when more than one worker is configured.

    :raise RedrawLimitExceeded: When the redraws at one capacity exceed the sweep's cap.
    """
    workers = workers or settings.SIM_WORKERS
    config = spec.config
    for C in spec.capacities:
        allocate_fronthaul(C, config)
    jobs = _jobs(spec)
    outcomes: dict[tuple[float, int], tuple[list[DropRow], int]] = {}

    if workers == 1:
        for C, drop in tqdm(jobs, desc="drops", unit="drop"):
            outcomes[(C, drop)] = run_drop_job(config, C, drop, spec.schemes, spec.redraw_cap)
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(run_drop_job, config, C, drop, spec.schemes, spec.redraw_cap): (C, drop)
                       for C, drop in jobs}
            for future in tqdm(as_completed(futures), total=len(futures), desc="drops", unit="drop"):
                outcomes[futures[future]] = future.result()

    redraws = defaultdict(int)
    for (C, _), (_, used) in outcomes.items():
        redraws[C] += used
    exceeded = {C: count for C, count in redraws.items() if count > spec.redraw_cap}
    if exceeded:
        raise RedrawLimitExceeded(f"redraw cap {spec.redraw_cap} exceeded at C_total={sorted(exceeded)}",
                                  {"cap": spec.redraw_cap, "redraws": dict(redraws)})
    rows = [row for key in sorted(outcomes) for row in outcomes[key][0]]
    return sorted(rows, key=lambda r: (r.C_total, r.scheme, r.drop))


def _paired_gain(frame: pd.DataFrame, C_total: float, tag: str, other: str) -> float | None:
    mine = frame[(frame.C_total == C_total) & (frame.scheme == tag)].set_index("drop")["ee"]
    theirs = frame[(frame.C_total == C_total) & (frame.scheme == other)].set_index("drop")["ee"]
    paired = mine.index.intersection(theirs.index)
    if not len(paired) or theirs.loc[paired].mean() <= 0:
        return None
    return float(mine.loc[paired].mean() / theirs.loc[paired].mean() - 1.0)


def compute_metrics(rows: list[DropRow]) -> list[MetricsRow]:
    """
    Aggregates per (capacity, scheme) with paired gains against the static and TIN counterparts.

    Dynamic schemes get a gain over their static counterpart and RS schemes a gain over their TIN
    counterpart; a gain whose counterpart is missing is left empty and the row is marked incomplete.
    """
    if not rows:
        return []
    frame = pd.DataFrame([row.model_dump() for row in rows])
    metrics = []
    for (C_total, tag), group in frame.groupby(["C_total", "scheme"], sort=True):
        scheme = SchemeSpec.from_tag(tag)
        complete = True
        gain_dynamic = gain_rs = None
        if scheme.clustering is Clustering.dynamic:
            gain_dynamic = _paired_gain(frame, C_total, tag, scheme.counterpart(clustering=Clustering.static).tag)
            complete &= gain_dynamic is not None
        if scheme.rs_mode is RsMode.rs:
            gain_rs = _paired_gain(frame, C_total, tag, scheme.counterpart(rs_mode=RsMode.tin).tag)
            complete &= gain_rs is not None
        total_rate = group.rate_total.sum()
        metrics.append(MetricsRow(
            scheme=tag, C_total=float(C_total), drops=len(group), ee_mean=float(group.ee.mean()),
            ee_stderr=float(stats.sem(group.ee)) if len(group) > 1 else 0.0, losc_mean=float(group.losc.mean()),
            common_proportion=float(group.rate_common.sum() / total_rate) if total_rate > 0 else 0.0,
            gain_dynamic=gain_dynamic, gain_rs=gain_rs, complete=complete,
        ))
    return metrics


def write_csv(models: list, path: Path, columns: list[str]):
    frame = pd.DataFrame([m.model_dump() for m in models], columns=columns)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def run_montecarlo(spec: SweepSpec, out_dir: str | Path, workers: int | None = None) -> list[MetricsRow]:
    """
    Runs a sweep and writes ``drops.csv``, ``metrics.csv`` and the SQLite results store into ``out_dir``.

    :param spec: SweepSpec: Capacities, schemes, drops and the base config.
    :param out_dir: str | Path: Output directory, created when missing.
    :param workers: int | None: Process count, ``SIM_WORKERS`` when None.
    :return: list[MetricsRow]: One row per (capacity, scheme).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = execute_sweep(spec, workers)
    metrics = compute_metrics(rows)

    write_csv(rows, out / "drops.csv", list(DropRow.model_fields))
    write_csv(metrics, out / "metrics.csv", list(MetricsRow.model_fields))
    (out / "spec.json").write_text(spec.model_dump_json(indent=2), encoding="utf-8")

    manager = DatabaseSessionManager.for_sweep(out, settings.RESULTS_DB)
    try:
        with manager.session() as db:
            sweep = repository_results.create_sweep(spec, db)
            repository_results.add_drop_results(sweep.id, rows, db)
    finally:
        manager.close()
    logger.info("sweep finished: %d drop rows, %d metric rows in %s", len(rows), len(metrics), out)
    return metrics


def load_metrics(sweep_dir: str | Path) -> pd.DataFrame:
    """Metrics of a finished sweep, recomputed from the results store when ``metrics.csv`` is missing."""
    sweep_dir = Path(sweep_dir)
    path = sweep_dir / "metrics.csv"
    if path.exists():
        return pd.read_csv(path)
    manager = DatabaseSessionManager.for_sweep(sweep_dir, settings.RESULTS_DB)
    try:
        with manager.session() as db:
            sweep = repository_results.get_latest_sweep(db)
            if sweep is None:
                raise FileNotFoundError(f"no metrics.csv and no stored sweep in {sweep_dir}")
            rows = [DropRow.model_validate(r) for r in repository_results.get_drop_results(sweep.id, db)]
    finally:
        manager.close()
    return pd.DataFrame([m.model_dump() for m in compute_metrics(rows)], columns=list(MetricsRow.model_fields))


def gain_crossings(frame: pd.DataFrame) -> pd.DataFrame:
    """Interpolated capacities at which the RS gain curve crosses the dynamic-clustering gain curve."""
    crossings = []
    for tag, group in frame.groupby("scheme", sort=True):
        group = group[np.isfinite(group.C_total)].dropna(subset=["gain_dynamic", "gain_rs"]).sort_values("C_total")
        C, diff = group.C_total.to_numpy(), (group.gain_rs - group.gain_dynamic).to_numpy()
        gains = group.gain_rs.to_numpy()
        for i in range(len(C) - 1):
            if diff[i] == 0:
                crossings.append((tag, C[i], "crossing", gains[i]))
            elif diff[i] * diff[i + 1] < 0:
                share = diff[i] / (diff[i] - diff[i + 1])
                crossings.append((tag, C[i] + share * (C[i + 1] - C[i]), "crossing",
                                  gains[i] + share * (gains[i + 1] - gains[i])))
    return pd.DataFrame(crossings, columns=["scheme", "C_total", "series", "value"])


def common_rate_peaks(frame: pd.DataFrame) -> pd.Series:
    """Marks interior local maxima of the common-rate proportion along finite capacities."""
    peaks = pd.Series(False, index=frame.index)
    for _, group in frame[np.isfinite(frame.C_total)].groupby("scheme", sort=True):
        group = group.sort_values("C_total")
        values = group.common_proportion.to_numpy()
        for i in range(1, len(values) - 1):
            if values[i] > values[i - 1] and values[i] > values[i + 1]:
                peaks.loc[group.index[i]] = True
    return peaks


def plot_data(sweep_dir: str | Path, figure: int) -> pd.DataFrame:
    """
    Long-format data behind one figure of a sweep.

    2: mean EE and its standard error; 3: normalized gains with their crossing points; 4: mean LoSC;
    5: common-rate proportion with its local peaks.

    :raise ValueError: For an unknown figure number.
    """
    if figure not in FIGURES:
        raise ValueError(f"figure must be one of {FIGURES}")
    metrics = load_metrics(sweep_dir).sort_values(["scheme", "C_total"]).reset_index(drop=True)
    if figure == 2:
        return metrics[["scheme", "C_total", "ee_mean", "ee_stderr", "drops"]]
    if figure == 3:
        series = metrics.melt(id_vars=["scheme", "C_total"], value_vars=["gain_dynamic", "gain_rs"],
                              var_name="series", value_name="value").dropna(subset=["value"])
        frame = pd.concat([series, gain_crossings(metrics)], ignore_index=True)
        return frame.sort_values(["scheme", "series", "C_total"]).reset_index(drop=True)
    if figure == 4:
        return metrics[["scheme", "C_total", "losc_mean"]]
    frame = metrics[["scheme", "C_total", "common_proportion"]].copy()
    frame["is_peak"] = common_rate_peaks(metrics)
    return frame
