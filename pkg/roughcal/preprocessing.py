import logging
from datetime import time
from typing import Optional

import numpy as np
import pandas as pd
from scipy.ndimage import median_filter

from .constants import PreprocessingConfig
from .errors import EmptyAfterScreening
from .models import MeasurementBook, MeasurementSeries

LOGGER = logging.getLogger(__name__)


def _local_index(index: pd.DatetimeIndex, timezone: Optional[str]) -> pd.DatetimeIndex:
    if timezone is None:
        return index
    if index.tz is None:
        return index.tz_localize("UTC").tz_convert(timezone)
    return index.tz_convert(timezone)


def _nocturnal(index: pd.DatetimeIndex, start: time, end: time) -> np.ndarray:
    """Mask of samples whose clock time lies in [start, end); the window may wrap midnight."""
    if start == end:
        return np.zeros(len(index), dtype=bool)
    seconds = index.hour * 3600 + index.minute * 60 + index.second
    lo = start.hour * 3600 + start.minute * 60 + start.second
    hi = end.hour * 3600 + end.minute * 60 + end.second
    seconds = np.asarray(seconds)
    if lo < hi:
        return (seconds >= lo) & (seconds < hi)
    return (seconds >= lo) | (seconds < hi)


def preprocess_measurements(
    series: MeasurementSeries,
    smoothing_window: int = 5,
    night_start: time = time(0, 0),
    night_end: time = time(5, 0),
    timezone: Optional[str] = None,
) -> MeasurementSeries:
    """
    Centred moving-median smoothing, then removal of nighttime samples.

    Clock times are read in `timezone` when given (naive timestamps are taken as UTC).

    Raises:
        EmptyAfterScreening: Every sample fell inside the night window
    """
    if smoothing_window < 1 or smoothing_window % 2 == 0:
        raise ValueError(f"Smoothing window must be odd and positive, got {smoothing_window}")
    samples = series.samples
    values = samples.to_numpy(dtype=float)
    if smoothing_window > 1 and len(values):
        values = median_filter(values, size=smoothing_window, mode="nearest")
    smoothed = pd.Series(values, index=samples.index, name=samples.name)

    night = _nocturnal(_local_index(samples.index, timezone), night_start, night_end)
    kept = smoothed[~night]
    if kept.empty:
        raise EmptyAfterScreening(f"Station '{series.station_node}' has no samples outside the night window")
    LOGGER.debug(f"Station '{series.station_node}': {int(night.sum())} nighttime samples removed")
    return series.with_samples(kept)


def preprocess_book(book: MeasurementBook, config: PreprocessingConfig) -> MeasurementBook:
    screened = MeasurementBook(
        {
            station: preprocess_measurements(
                series,
                smoothing_window=config.smoothing_window,
                night_start=config.night_start,
                night_end=config.night_end,
                timezone=config.timezone,
            )
            for station, series in book.items()
        }
    )
    LOGGER.info(f"Screening kept {screened.total_samples()} of {book.total_samples()} samples")
    return screened
