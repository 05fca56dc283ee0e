"""Statistical reducers, test reports, and reproducible replica seeding."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

MIN_BATCHES = 20


def replica_rng(master_seed: int, replica: int) -> np.random.Generator:
    """Generator for replica r: a counter-based split of the master seed.

    The stream depends only on (master_seed, r), never on scheduling order.
    """
    return np.random.default_rng([int(master_seed) & (2**64 - 1), int(replica)])


def run_replicas(fn, n: int, master_seed: int, jobs: int = 1) -> list:
    """Evaluate fn(rng, r) for r < n; results are returned in replica order."""
    if jobs <= 1 or n < 2:
        return [fn(replica_rng(master_seed, r), r) for r in range(n)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futs = [pool.submit(fn, replica_rng(master_seed, r), r) for r in range(n)]
        return [f.result() for f in futs]


@dataclass(frozen=True)
class Histogram:
    """Counts on a tensor grid of bins; ``edges`` holds one edge array per axis."""

    edges: tuple
    counts: np.ndarray

    def __post_init__(self):
        for e in self.edges:
            if np.any(np.diff(e) <= 0):
                raise ValueError("bin edges must be strictly increasing")
        if np.any(self.counts < 0):
            raise ValueError("negative counts")

    @classmethod
    def from_samples(cls, x: np.ndarray, bins: int, lo: float = 0.0, hi: float = 1.0
                     ) -> "Histogram":
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        edges = tuple(np.linspace(lo, hi, bins + 1) for _ in range(x.shape[1]))
        counts, _ = np.histogramdd(x, bins=edges)
        return cls(edges, counts)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def probabilities(self) -> np.ndarray:
        return self.counts / self.total


def tv_distance(h1: Histogram, h2: Histogram) -> float:
    """Total variation 1/2 sum |p - q| between two histograms on the same bins."""
    if len(h1.edges) != len(h2.edges) or any(
            not np.array_equal(a, b) for a, b in zip(h1.edges, h2.edges)):
        raise ValueError("histograms have different bins")
    return 0.5 * float(np.abs(h1.probabilities() - h2.probabilities()).sum())


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance sup |F_a - F_b|."""
    return float(sps.ks_2samp(np.ravel(a), np.ravel(b)).statistic)


def ks_two_sample_test(a, b) -> tuple[float, float]:
    r = sps.ks_2samp(np.ravel(a), np.ravel(b))
    return float(r.statistic), float(r.pvalue)


def ks_normal_test(x, sd: float, mean: float = 0.0) -> tuple[float, float]:
    r = sps.kstest(np.ravel(x), "norm", args=(mean, sd))
    return float(r.statistic), float(r.pvalue)


def chi2_statistic(observed, expected) -> float:
    observed = np.ravel(observed).astype(float)
    expected = np.ravel(expected).astype(float)
    return float(np.sum((observed - expected) ** 2 / expected))


def chi2_uniform_test(points: np.ndarray, bins: int = 8) -> tuple[float, float]:
    """Pearson chi^2 of points in [0,1)^d against the uniform law on bins^d cells."""
    h = Histogram.from_samples(points, bins)
    obs = h.counts.ravel()
    exp = np.full(obs.size, h.total / obs.size)
    stat = chi2_statistic(obs, exp)
    return stat, float(sps.chi2.sf(stat, obs.size - 1))


def binomial_interval_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 1.0 / n) / n)


@dataclass(frozen=True)
class MSDResult:
    lags: np.ndarray
    msd: np.ndarray
    std_error: np.ndarray
    slope: float
    slope_error: float
    intercept: float
    r_squared: float
    exponent: float
    diffusive: bool


def msd_with_batch_errors(displacements: np.ndarray, lags: np.ndarray,
                          n_batches: int = MIN_BATCHES,
                          fit_from: float | None = None) -> MSDResult:
    """Mean squared displacement from unwrapped displacements.

    ``displacements`` has shape (n_paths, n_lags, d): x(t0 + lag) - x(t0).
    Paths are split into ``n_batches`` contiguous batches; error bars are
    batch-means standard errors.  A straight line is fitted on lags >=
    ``fit_from``; the log-log exponent flags ballistic (non-diffusive) data.
    """
    disp = np.asarray(displacements, dtype=float)
    lags = np.asarray(lags, dtype=float)
    if n_batches < MIN_BATCHES:
        raise ValueError(f"need at least {MIN_BATCHES} batches")
    if disp.shape[0] < n_batches:
        raise ValueError(f"{disp.shape[0]} paths cannot fill {n_batches} batches")
    sq = np.sum(disp**2, axis=2)
    per_batch = np.array([b.mean(axis=0) for b in np.array_split(sq, n_batches)])
    msd = per_batch.mean(axis=0)
    se = per_batch.std(axis=0, ddof=1) / math.sqrt(n_batches)
    sel = lags >= (lags.min() if fit_from is None else fit_from)
    if sel.sum() < 2:
        raise ValueError("fewer than two lags in the fit window")
    fit = sps.linregress(lags[sel], msd[sel])
    slopes = [sps.linregress(lags[sel], pb[sel]).slope for pb in per_batch]
    pos = sel & (msd > 0) & (lags > 0)
    expo = float(np.polyfit(np.log(lags[pos]), np.log(msd[pos]), 1)[0]) if pos.sum() >= 2 \
        else math.nan
    return MSDResult(lags, msd, se, float(fit.slope),
                     float(np.std(slopes, ddof=1) / math.sqrt(n_batches)),
                     float(fit.intercept), float(fit.rvalue**2), expo,
                     bool(abs(expo - 1.0) < 0.2))


def autocorrelation(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Unnormalised autocovariance E[x(0).x(s)] of a stationary series, lags 0..max_lag.

    ``x`` is (n_steps,) or (n_steps, d) or a batch (n_series, n_steps, d);
    vector components are summed (dot product).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :, None]
    elif x.ndim == 2:
        x = x[None]
    n = x.shape[1]
    if max_lag >= n:
        raise ValueError("max_lag must be shorter than the series")
    size = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(x, n=size, axis=1)
    acf = np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, : max_lag + 1].sum(axis=2)
    acf /= (n - np.arange(max_lag + 1))
    return acf.mean(axis=0)


def excess_kurtosis_test(x: np.ndarray) -> tuple[float, float]:
    """Sample kurtosis (normal = 3) and its large-sample standard error sqrt(24/n)."""
    x = np.ravel(x)
    return float(sps.kurtosis(x, fisher=False, bias=False)), math.sqrt(24.0 / x.size)


def shapiro_test(x: np.ndarray, max_n: int = 5000) -> tuple[float, float]:
    x = np.ravel(x)[:max_n]
    r = sps.shapiro(x)
    return float(r.statistic), float(r.pvalue)


@dataclass
class Check:
    name: str
    value: float
    threshold: str
    passed: bool
    detail: str = ""


@dataclass
class TestReport:
    """Named statistics with explicit pass/fail thresholds and provenance."""

    title: str
    provenance: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    data: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def add_pvalue(self, name: str, stat: float, p: float, alpha: float) -> Check:
        c = Check(name, p, f"p > {alpha:g}", bool(p > alpha), f"stat={stat:.6g}")
        self.checks.append(c)
        return c

    def add_value(self, name: str, value: float, target: float, tol: float) -> Check:
        c = Check(name, value, f"|x - {target:.6g}| <= {tol:.3g}",
                  bool(abs(value - target) <= tol))
        self.checks.append(c)
        return c

    def add_range(self, name: str, value: float, lo: float, hi: float) -> Check:
        c = Check(name, value, f"{lo:.6g} <= x <= {hi:.6g}", bool(lo <= value <= hi))
        self.checks.append(c)
        return c

    def add_upper(self, name: str, value: float, hi: float) -> Check:
        c = Check(name, value, f"x < {hi:.6g}", bool(value < hi))
        self.checks.append(c)
        return c

    def add_flag(self, name: str, ok: bool, detail: str = "") -> Check:
        c = Check(name, float(ok), "true", bool(ok), detail)
        self.checks.append(c)
        return c

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def summary(self) -> str:
        lines = [f"== {self.title}: {'PASS' if self.passed else 'FAIL'} =="]
        for c in self.checks:
            mark = "ok  " if c.passed else "FAIL"
            extra = f" ({c.detail})" if c.detail else ""
            lines.append(f"  [{mark}] {c.name}: {c.value:.6g}  [{c.threshold}]{extra}")
        return "\n".join(lines)

    def to_csv(self, path, schema: str = "tagdiff.report/v1") -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema: {schema}\n")
            for k, v in self.provenance.items():
                fh.write(f"# {k} = {v}\n")
            w = csv.writer(fh)
            w.writerow(["check", "value", "threshold", "passed", "detail"])
            for c in self.checks:
                w.writerow([c.name, f"{c.value:.17g}", c.threshold, int(c.passed), c.detail])
