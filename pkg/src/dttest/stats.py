"""Online error distributions: fixed-width sparse histograms with exact moments."""

from __future__ import annotations

import csv
import math
from collections import Counter

import numpy as np

from .exceptions import (
    EmptyHistogramError,
    IncompatibleBinningError,
    InvalidParameterError,
    ReversedIntervalError,
)

TEMP_BIN_WIDTH = 0.5
POSITION_BIN_WIDTH = 0.1


class ErrorHistogram:
    """Sparse fixed-width histogram of one error channel.

    Bin ``k`` covers ``[origin + k*w, origin + (k+1)*w)``.  The CDF is the
    ogive of the histogram: exact at bin edges and linear inside a bin.
    Running mean and variance use Welford updates and Chan's merge, so they
    do not depend on the binning.
    """

    def __init__(self, bin_width=TEMP_BIN_WIDTH, origin=0.0):
        if not (math.isfinite(bin_width) and bin_width > 0):
            raise InvalidParameterError("bin_width must be finite and > 0")
        self.bin_width = float(bin_width)
        self.origin = float(origin)
        self.counts = Counter()
        self.total = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.min = math.inf
        self.max = -math.inf
        self._sorted = None

    def bin_index(self, value):
        return math.floor((value - self.origin) / self.bin_width)

    def record(self, value):
        value = float(value)
        if not math.isfinite(value):
            raise InvalidParameterError(f"cannot record non-finite error {value!r}")
        self.counts[self.bin_index(value)] += 1
        self.total += 1
        delta = value - self.mean
        self.mean += delta / self.total
        self.m2 += delta * (value - self.mean)
        if value < self.min:
            self.min = value
        if value > self.max:
            self.max = value
        self._sorted = None
        return self

    def record_many(self, values):
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.size == 0:
            return self
        if not np.all(np.isfinite(values)):
            raise InvalidParameterError("cannot record non-finite errors")
        batch = ErrorHistogram(self.bin_width, self.origin)
        idx = np.floor((values - self.origin) / self.bin_width).astype(np.int64)
        uniq, cnt = np.unique(idx, return_counts=True)
        batch.counts = Counter(dict(zip(uniq.tolist(), cnt.tolist())))
        batch.total = int(values.size)
        batch.mean = float(values.mean())
        batch.m2 = float(((values - batch.mean) ** 2).sum())
        batch.min = float(values.min())
        batch.max = float(values.max())
        self._absorb(batch)
        return self

    # -- moments -------------------------------------------------------

    @property
    def variance(self):
        return self.m2 / (self.total - 1) if self.total > 1 else 0.0

    @property
    def std(self):
        return math.sqrt(self.variance)

    # -- distribution queries ------------------------------------------

    def _require_data(self):
        if self.total == 0:
            raise EmptyHistogramError("histogram is empty")

    def _cumulative(self):
        if self._sorted is None:
            keys = np.array(sorted(self.counts), dtype=np.int64)
            counts = np.array([self.counts[k] for k in keys.tolist()], dtype=np.int64)
            self._sorted = (keys, np.concatenate(([0], np.cumsum(counts))))
        return self._sorted

    def _count_below(self, x):
        """Number of samples below ``x`` under the ogive (a float count)."""
        keys, cum = self._cumulative()
        pos = (x - self.origin) / self.bin_width
        if math.isinf(pos):
            return float(self.total) if pos > 0 else 0.0
        k = math.floor(pos)
        i = int(np.searchsorted(keys, k, side="left"))
        below = int(cum[i])
        if i < keys.shape[0] and keys[i] == k:
            frac = pos - k
            if frac:
                return below + frac * int(cum[i + 1] - cum[i])
        return float(below)

    def cdf_at(self, x):
        self._require_data()
        return self._count_below(float(x)) / self.total

    def prob_between(self, a, b):
        if a > b:
            raise ReversedIntervalError(f"interval [{a}, {b}] is reversed")
        self._require_data()
        return (self._count_below(float(b)) - self._count_below(float(a))) / self.total

    def pdf(self):
        """``[(bin_center, density), ...]`` for occupied bins, left to right."""
        self._require_data()
        w = self.bin_width
        norm = self.total * w
        return [(self.origin + (k + 0.5) * w, c / norm) for k, c in sorted(self.counts.items())]

    def quantile(self, q):
        """Inverse of the ogive CDF."""
        self._require_data()
        if not 0 <= q <= 1:
            raise InvalidParameterError("quantile must lie in [0, 1]")
        keys, cum = self._cumulative()
        target = q * self.total
        i = int(np.searchsorted(cum[1:], target, side="left"))
        i = min(i, keys.shape[0] - 1)
        in_bin = cum[i + 1] - cum[i]
        frac = (target - cum[i]) / in_bin if in_bin else 0.0
        x = self.origin + (keys[i] + frac) * self.bin_width
        return float(min(max(x, self.min), self.max))

    def rows(self):
        """CSV rows ``(bin_left, bin_right, count, pdf, cdf)`` over occupied bins."""
        self._require_data()
        w = self.bin_width
        running = 0
        out = []
        for k, c in sorted(self.counts.items()):
            running += c
            left = self.origin + k * w
            out.append((left, left + w, c, c / (self.total * w), running / self.total))
        return out

    def summary(self):
        self._require_data()
        return {
            "count": self.total,
            "mean": self.mean,
            "std": self.std,
            "min": self.min,
            "max": self.max,
            "q05": self.quantile(0.05),
            "q50": self.quantile(0.50),
            "q95": self.quantile(0.95),
        }

    # -- merging -------------------------------------------------------

    def compatible(self, other):
        return self.bin_width == other.bin_width and self.origin == other.origin

    def _absorb(self, other):
        if other.total == 0:
            return
        n1, n2 = self.total, other.total
        n = n1 + n2
        delta = other.mean - self.mean
        self.mean = (n1 * self.mean + n2 * other.mean) / n
        self.m2 = self.m2 + other.m2 + delta * delta * n1 * n2 / n
        self.total = n
        self.counts.update(other.counts)
        self.min = min(self.min, other.min)
        self.max = max(self.max, other.max)
        self._sorted = None

    def merge(self, other):
        """Return a new histogram holding the samples of both."""
        if not self.compatible(other):
            raise IncompatibleBinningError("histograms have different bin width or origin")
        out = ErrorHistogram(self.bin_width, self.origin)
        out._absorb(self)
        out._absorb(other)
        return out

    def __repr__(self):
        return f"ErrorHistogram(bin_width={self.bin_width}, origin={self.origin}, total={self.total})"


def merge(h1, h2):
    return h1.merge(h2)


class DeviationStats:
    """Stats sink fed with verdicts: one histogram per tracked field.

    Skipped verdicts are counted but never enter a histogram or a pass rate.
    """

    def __init__(self, temp_bin_width=TEMP_BIN_WIDTH, position_bin_width=POSITION_BIN_WIDTH):
        self.temp_bin_width = temp_bin_width
        self.position_bin_width = position_bin_width
        self.histograms = {}
        self.field_checks = Counter()
        self.field_failures = Counter()
        self.passed = 0
        self.failed = 0
        self.skipped = 0
        self.skip_reasons = Counter()

    def _hist(self, name):
        h = self.histograms.get(name)
        if h is None:
            width = self.position_bin_width if name == "position" else self.temp_bin_width
            h = self.histograms[name] = ErrorHistogram(width)
        return h

    def add(self, verdict):
        if verdict.skipped:
            self.skipped += 1
            self.skip_reasons[verdict.skipped] += 1
            return
        if verdict.passed:
            self.passed += 1
        else:
            self.failed += 1
        failing = set(verdict.failing_fields)
        for name, err in verdict.field_errors():
            self._hist(name).record(err)
            self.field_checks[name] += 1
            if name in failing:
                self.field_failures[name] += 1

    __call__ = add

    @property
    def evaluated(self):
        return self.passed + self.failed

    @property
    def pass_rate(self):
        return self.passed / self.evaluated if self.evaluated else math.nan

    def field_summary(self, name):
        h = self.histograms[name]
        out = h.summary()
        checks = self.field_checks[name]
        out["pass_rate"] = 1.0 - self.field_failures[name] / checks if checks else math.nan
        if name != "position":
            out["prob_between_-4_5"] = h.prob_between(-4.0, 5.0)
        return out

    def summary(self):
        return {
            "verdicts": self.evaluated + self.skipped,
            "passed": self.passed,
            "failed": self.failed,
            "skipped": self.skipped,
            "skip_reasons": dict(sorted(self.skip_reasons.items())),
            "pass_rate": self.pass_rate,
            "failing_fields": {k: v for k, v in sorted(self.field_failures.items()) if v},
            "fields": {name: self.field_summary(name) for name in sorted(self.histograms)},
        }


def write_histogram_csv(hist, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_left", "bin_right", "count", "pdf", "cdf"])
        for left, right, count, density, cum in hist.rows():
            writer.writerow([repr(left), repr(right), count, repr(density), repr(cum)])
