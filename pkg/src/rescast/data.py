"""File-based ingestion and dataset assembly.

Reads hourly energy and weather CSVs, aligns them on a common timeline,
cuts sliding history/forecast windows into samples, splits chronologically,
and normalizes inputs.  For solar tasks, cyclical time-of-day/season
features are appended to each weather location's variable columns.

CSV schemas:
    energy:  timestamp,site_id,value          (one row per site-hour)
    weather: timestamp,location_id,var_1,...  (one row per location-hour)
Timestamps are ISO-8601, interpreted as UTC.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

__all__ = [
    "IngestError",
    "EnergySeries",
    "WeatherSeries",
    "ForecastSample",
    "NormalizationStats",
    "DatasetSplit",
    "ingest",
    "count_windows",
    "build_windows",
    "encode_cyclical",
    "cyclical_feature_names",
    "append_time_features",
    "normalize",
    "denormalize",
    "build_split",
]

HOUR = pd.Timedelta(hours=1)

ENERGY_COLUMNS = ["timestamp", "site_id", "value"]
WEATHER_KEY_COLUMNS = ["timestamp", "location_id"]


class IngestError(ValueError):
    """Raised when input files violate the ingestion contract."""


@dataclass
class EnergySeries:
    """Hourly generation for one site, gap-free after ingestion."""

    site_id: str
    timestamps: pd.DatetimeIndex
    values: np.ndarray  # [T]


@dataclass
class WeatherSeries:
    """Hourly weather variables for one location."""

    location_id: str
    timestamps: pd.DatetimeIndex
    variables: np.ndarray  # [T, D_W]
    variable_names: list[str]


@dataclass
class ForecastSample:
    """One training/evaluation instance cut from the aligned series."""

    e_h: np.ndarray  # [L_E, T_h, 1]
    w_h: np.ndarray  # [L_W, T_h, D_W]
    w_f: np.ndarray  # [L_W, T_f, D_W]
    target: np.ndarray | None  # [L_E, T_f, 1]; absent for pure prediction
    issue_time: pd.Timestamp


@dataclass
class NormalizationStats:
    """Train-split statistics recorded for inversion."""

    weather_mean: np.ndarray  # [L_W, D_W]
    weather_std: np.ndarray  # [L_W, D_W]
    energy_scale: np.ndarray  # [L_E]; 1.0 where values were already in [0, 1]


@dataclass
class DatasetSplit:
    """Chronologically disjoint sample sets plus site metadata."""

    train: list[ForecastSample]
    validation: list[ForecastSample]
    test: list[ForecastSample]
    site_ids: list[str]
    location_ids: list[str]
    capacities: np.ndarray | None = None  # [L_E] MW, when declared
    stats: NormalizationStats | None = None

    def all_samples(self) -> list[ForecastSample]:
        return self.train + self.validation + self.test


def _check_hourly(timestamps: pd.DatetimeIndex, what: str) -> None:
    if len(timestamps) < 2:
        return
    deltas = timestamps[1:] - timestamps[:-1]
    if (deltas <= pd.Timedelta(0)).any():
        raise IngestError(f"{what}: timestamps not strictly increasing")
    if (deltas != HOUR).any():
        bad = timestamps[1:][deltas != HOUR][0]
        raise IngestError(f"{what}: non-hourly spacing around {bad}")


def _fill_gaps(frame: pd.DataFrame, what: str, interpolate_gaps: bool, max_gap_hours: int) -> pd.DataFrame:
    """Reindex to a full hourly range; impute short gaps or reject."""
    full = pd.date_range(frame.index[0], frame.index[-1], freq="h")
    frame = frame.reindex(full)
    missing = frame.isna().any(axis=1)
    if not missing.any():
        return frame
    if not interpolate_gaps:
        raise IngestError(
            f"{what}: {int(missing.sum())} missing hour(s), first at "
            f"{frame.index[missing][0]} (gap imputation disabled)"
        )
    # Measure each contiguous gap before interpolating.
    run = missing.astype(int).groupby((~missing).cumsum()).cumsum()
    longest = int(run.max())
    if longest > max_gap_hours:
        raise IngestError(f"{what}: gap of {longest} hours exceeds the {max_gap_hours}-hour limit")
    filled = frame.interpolate(method="linear", limit_area="inside")
    if filled.isna().any().any():
        raise IngestError(f"{what}: gap at series boundary cannot be interpolated")
    logger.warning("%s: linearly interpolated %d missing hour(s)", what, int(missing.sum()))
    return filled


def _read_csv(path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise IngestError(f"{path}: empty file") from None
    if frame.empty:
        raise IngestError(f"{path}: no data rows")
    return frame


def _parse_rows(frame: pd.DataFrame, value_columns: list[str], what: str) -> pd.DataFrame:
    """Coerce timestamps and values, dropping unparseable rows with a report."""
    before = len(frame)
    frame = frame.copy()
    frame["timestamp"] = pd.to_datetime(frame["timestamp"], errors="coerce", utc=True)
    for col in value_columns:
        frame[col] = pd.to_numeric(frame[col], errors="coerce")
    frame.loc[~np.isfinite(frame[value_columns]).all(axis=1), value_columns] = np.nan
    good = frame["timestamp"].notna() & frame[value_columns].notna().all(axis=1)
    rejected = before - int(good.sum())
    if rejected:
        logger.warning("%s: rejected %d unparseable row(s) of %d", what, rejected, before)
    frame = frame[good]
    if frame.empty:
        raise IngestError(f"{what}: no parseable rows")
    return frame


def ingest(
    energy_files,
    weather_files,
    *,
    expected_variables: list[str] | None = None,
    interpolate_gaps: bool = False,
    max_gap_hours: int = 3,
) -> tuple[list[EnergySeries], list[WeatherSeries]]:
    """Read energy/weather CSVs into aligned hourly series.

    All sites and locations must end up on one identical hourly timeline;
    offsets or differing ranges raise IngestError, as do duplicate ids,
    duplicate site-hours, empty files, and (unless ``interpolate_gaps``)
    any missing hours.  Gaps of at most ``max_gap_hours`` are linearly
    interpolated when imputation is enabled.
    """
    energies: list[EnergySeries] = []
    for path in energy_files:
        frame = _read_csv(path)
        if list(frame.columns) != ENERGY_COLUMNS:
            raise IngestError(f"{path}: expected header {ENERGY_COLUMNS}, got {list(frame.columns)}")
        frame = _parse_rows(frame, ["value"], str(path))
        for site_id, group in frame.groupby("site_id", sort=False):
            what = f"{path}:{site_id}"
            if group["timestamp"].duplicated().any():
                raise IngestError(f"{what}: duplicate timestamps")
            series = group.set_index("timestamp").sort_index()[["value"]]
            series = _fill_gaps(series, what, interpolate_gaps, max_gap_hours)
            energies.append(
                EnergySeries(str(site_id), series.index, series["value"].to_numpy(dtype=np.float64))
            )

    weathers: list[WeatherSeries] = []
    variable_names: list[str] | None = None
    for path in weather_files:
        frame = _read_csv(path)
        if list(frame.columns[:2]) != WEATHER_KEY_COLUMNS or frame.shape[1] < 3:
            raise IngestError(
                f"{path}: expected header {WEATHER_KEY_COLUMNS} + variable columns, "
                f"got {list(frame.columns)}"
            )
        names = list(frame.columns[2:])
        if variable_names is None:
            variable_names = names
        elif names != variable_names:
            raise IngestError(f"{path}: weather variables {names} differ from {variable_names}")
        if expected_variables is not None and names != list(expected_variables):
            raise IngestError(f"{path}: weather variables {names}, config declares {expected_variables}")
        frame = _parse_rows(frame, names, str(path))
        for loc_id, group in frame.groupby("location_id", sort=False):
            what = f"{path}:{loc_id}"
            if group["timestamp"].duplicated().any():
                raise IngestError(f"{what}: duplicate timestamps")
            series = group.set_index("timestamp").sort_index()[names]
            series = _fill_gaps(series, what, interpolate_gaps, max_gap_hours)
            weathers.append(
                WeatherSeries(str(loc_id), series.index, series.to_numpy(dtype=np.float64), names)
            )

    if not energies:
        raise IngestError("no energy series ingested")
    if not weathers:
        raise IngestError("no weather series ingested")
    for group, label in ((energies, "site"), (weathers, "location")):
        ids = [s.site_id if label == "site" else s.location_id for s in group]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise IngestError(f"duplicate {label} id(s): {dupes}")

    reference = energies[0].timestamps
    _check_hourly(reference, f"site {energies[0].site_id}")
    for series in energies:
        if not series.timestamps.equals(reference):
            raise IngestError(
                f"timeline misalignment: site {series.site_id} does not match "
                f"site {energies[0].site_id}"
            )
    for series in weathers:
        if not series.timestamps.equals(reference):
            raise IngestError(
                f"timeline misalignment: location {series.location_id} does not "
                f"match site {energies[0].site_id}"
            )
    return energies, weathers


def count_windows(length: int, history: int, horizon: int, stride: int) -> int:
    """Number of windows a series of ``length`` hours yields."""
    if length < history + horizon:
        return 0
    return (length - history - horizon) // stride + 1


def build_windows(
    energies: list[EnergySeries],
    weathers: list[WeatherSeries],
    history: int,
    horizon: int,
    stride: int = 24,
    *,
    range_start: pd.Timestamp | None = None,
    range_end: pd.Timestamp | None = None,
) -> list[ForecastSample]:
    """Cut sliding-window samples from aligned series.

    Each sample issued at time t covers [t - history, t) for the history
    tensors and [t, t + horizon) for the weather forecast and target; no
    sample extends past the series end.  When given, ``range_start`` and
    ``range_end`` (inclusive) confine the forecast windows to a date range,
    e.g. one split's forecast period; histories may still reach back.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    timeline = energies[0].timestamps
    n = len(timeline)

    lo = history
    if range_start is not None:
        lo = max(lo, int(timeline.searchsorted(range_start, side="left")))
    hi = n - horizon  # last admissible issue index (inclusive)
    if range_end is not None:
        last_covered = int(timeline.searchsorted(range_end, side="right")) - 1
        hi = min(hi, last_covered - (horizon - 1))

    if lo > hi:
        logger.warning(
            "series too short for history=%d horizon=%d within the requested range; no samples",
            history, horizon,
        )
        return []

    energy_values = np.stack([s.values for s in energies])  # [L_E, T]
    weather_values = np.stack([w.variables for w in weathers])  # [L_W, T, D_W]

    samples = []
    for t in range(lo, hi + 1, stride):
        samples.append(
            ForecastSample(
                e_h=energy_values[:, t - history: t, None].copy(),
                w_h=weather_values[:, t - history: t].copy(),
                w_f=weather_values[:, t: t + horizon].copy(),
                target=energy_values[:, t: t + horizon, None].copy(),
                issue_time=timeline[t],
            )
        )
    return samples


def encode_cyclical(instant: pd.Timestamp) -> np.ndarray:
    """(cos, sin) pairs for hour of day, month of year, and season.

    Each feature with period p and phase k maps to
    (cos(2*pi*k/p), sin(2*pi*k/p)); season is the meteorological quarter
    (Dec-Feb = 0).  Output order: hour, month, season.
    """
    pairs = []
    for k, p in ((instant.hour, 24), (instant.month, 12), ((instant.month % 12) // 3, 4)):
        angle = 2.0 * math.pi * k / p
        pairs.extend((math.cos(angle), math.sin(angle)))
    return np.array(pairs, dtype=np.float64)


def cyclical_feature_names() -> list[str]:
    return ["hour_cos", "hour_sin", "month_cos", "month_sin", "season_cos", "season_sin"]


def append_time_features(weathers: list[WeatherSeries]) -> list[WeatherSeries]:
    """Append cyclical time features to every location's variable columns."""
    out = []
    for w in weathers:
        feats = np.stack([encode_cyclical(ts) for ts in w.timestamps])
        out.append(
            WeatherSeries(
                w.location_id,
                w.timestamps,
                np.hstack([w.variables, feats]),
                w.variable_names + cyclical_feature_names(),
            )
        )
    return out


def normalize(split: DatasetSplit) -> DatasetSplit:
    """Z-score weather per location/variable with train-split statistics.

    Energy is left untouched when already in [0, 1]; otherwise it is divided
    by the declared per-site capacity.  The statistics are recorded on the
    returned split for inversion.
    """
    if split.stats is not None:
        raise ValueError("split is already normalized")
    if not split.train:
        raise ValueError("cannot normalize a split with no training samples")

    weather = np.concatenate(
        [s.w_h for s in split.train] + [s.w_f for s in split.train], axis=1
    )  # [L_W, sum_T, D_W]
    mean = weather.mean(axis=1)
    std = weather.std(axis=1)
    zero_var = std <= 0.0
    if zero_var.any():
        logger.warning("%d zero-variance weather column(s); stddev clamped to 1", int(zero_var.sum()))
        std = np.where(zero_var, 1.0, std)

    energy = np.concatenate(
        [s.e_h for s in split.train]
        + [s.target for s in split.train if s.target is not None],
        axis=1,
    )
    if energy.min() >= -1e-9 and energy.max() <= 1.0 + 1e-9:
        scale = np.ones(energy.shape[0])
    elif split.capacities is not None:
        scale = np.asarray(split.capacities, dtype=np.float64)
        if (scale <= 0).any():
            raise ValueError("capacities must be positive")
    else:
        raise ValueError("energy values exceed [0, 1] and no capacities are declared")

    stats = NormalizationStats(weather_mean=mean, weather_std=std, energy_scale=scale)

    def transform(sample: ForecastSample) -> ForecastSample:
        return replace(
            sample,
            e_h=sample.e_h / scale[:, None, None],
            w_h=(sample.w_h - mean[:, None, :]) / std[:, None, :],
            w_f=(sample.w_f - mean[:, None, :]) / std[:, None, :],
            target=None if sample.target is None else sample.target / scale[:, None, None],
        )

    return replace(
        split,
        train=[transform(s) for s in split.train],
        validation=[transform(s) for s in split.validation],
        test=[transform(s) for s in split.test],
        stats=stats,
    )


def denormalize(split: DatasetSplit) -> DatasetSplit:
    """Invert ``normalize``; restores the original stored series."""
    if split.stats is None:
        raise ValueError("split carries no normalization stats")
    mean, std, scale = split.stats.weather_mean, split.stats.weather_std, split.stats.energy_scale

    def transform(sample: ForecastSample) -> ForecastSample:
        return replace(
            sample,
            e_h=sample.e_h * scale[:, None, None],
            w_h=sample.w_h * std[:, None, :] + mean[:, None, :],
            w_f=sample.w_f * std[:, None, :] + mean[:, None, :],
            target=None if sample.target is None else sample.target * scale[:, None, None],
        )

    return replace(
        split,
        train=[transform(s) for s in split.train],
        validation=[transform(s) for s in split.validation],
        test=[transform(s) for s in split.test],
        stats=None,
    )


def build_split(
    energies: list[EnergySeries],
    weathers: list[WeatherSeries],
    history: int,
    horizon: int,
    stride: int,
    train_range: tuple[pd.Timestamp, pd.Timestamp],
    validation_range: tuple[pd.Timestamp, pd.Timestamp],
    test_range: tuple[pd.Timestamp, pd.Timestamp],
    capacities: np.ndarray | None = None,
) -> DatasetSplit:
    """Window each chronological range into its sample set.

    A sample belongs to a range when its whole forecast window fits inside
    it; histories may reach back into earlier data, but no training sample
    ever touches validation/test hours.  Ranges must be in chronological
    order and non-overlapping.
    """
    ranges = [train_range, validation_range, test_range]
    for (a_start, a_end), (b_start, b_end) in zip(ranges, ranges[1:]):
        if a_end >= b_start:
            raise ValueError("split ranges must be chronologically ordered and disjoint")
        if a_start > a_end or b_start > b_end:
            raise ValueError("split range start must not exceed its end")

    def windows(rng):
        start, end = rng
        return build_windows(
            energies, weathers, history, horizon, stride,
            range_start=start, range_end=end,
        )

    return DatasetSplit(
        train=windows(train_range),
        validation=windows(validation_range),
        test=windows(test_range),
        site_ids=[s.site_id for s in energies],
        location_ids=[w.location_id for w in weathers],
        capacities=capacities,
    )
