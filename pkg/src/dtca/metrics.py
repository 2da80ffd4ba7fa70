"""Forecast verification scores and report assembly.

Scores follow the usual nowcasting conventions: an event at threshold
``tau`` means ``value >= tau`` mm/h. All floating-point reductions go
through exact summation (``math.fsum``), which makes every score
independent of traversal order and lets a naive loop reference produce
bit-identical results.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import einops
import numpy as np

from .exceptions import DimensionError, ParameterError, UndefinedCorrelationError


def _fsum(arr) -> float:
    return math.fsum(np.asarray(arr, dtype=np.float64).ravel().tolist())


def _check_same_shape(pred, obs):
    pred = np.asarray(pred, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if pred.shape != obs.shape:
        raise DimensionError(
            f"forecast {pred.shape} and observation {obs.shape} differ"
        )
    return pred, obs


# ---------------------------------------------------------------------------
# categorical scores
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContingencyTable:
    """2x2 event counts at one threshold."""

    hits: int
    misses: int
    false_alarms: int
    correct_negatives: int

    @property
    def total(self) -> int:
        return self.hits + self.misses + self.false_alarms + self.correct_negatives


def contingency_table(pred, obs, tau: float) -> ContingencyTable:
    pred, obs = _check_same_shape(pred, obs)
    if tau <= 0:
        raise ParameterError(f"threshold must be positive, got {tau}")
    p = pred >= tau
    o = obs >= tau
    return ContingencyTable(
        hits=int(np.count_nonzero(p & o)),
        misses=int(np.count_nonzero(~p & o)),
        false_alarms=int(np.count_nonzero(p & ~o)),
        correct_negatives=int(np.count_nonzero(~p & ~o)),
    )


def csi(pred, obs, tau: float) -> float:
    """Critical success index; 0 by convention when no events occur."""
    table = contingency_table(pred, obs, tau)
    denom = table.hits + table.misses + table.false_alarms
    if denom == 0:
        return 0.0
    return table.hits / denom


def _neighborhood_fractions(binary: np.ndarray, window: int) -> np.ndarray:
    """Event fraction per pixel over a window x window box, reflected borders."""
    if window == 1:
        return binary.astype(np.float64)
    half = window // 2
    padded = np.pad(binary.astype(np.int64), half, mode="symmetric")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (window, window))
    return windows.sum(axis=(-2, -1)).astype(np.float64) / (window * window)


def _fss_parts(pred, obs, tau: float, window: int) -> tuple[float, float]:
    pred, obs = _check_same_shape(pred, obs)
    if window < 1 or window % 2 == 0:
        raise ParameterError(f"window must be odd and >= 1, got {window}")
    pf = _neighborhood_fractions(pred >= tau, window)
    po = _neighborhood_fractions(obs >= tau, window)
    num = _fsum((pf - po) ** 2)
    den = _fsum(pf**2) + _fsum(po**2)
    return num, den


def fss(pred, obs, tau: float, window: int = 3) -> float:
    """Fractions skill score over box neighborhoods.

    Returns 1.0 when both event-fraction fields are identically zero
    (a vacuously perfect agreement).
    """
    num, den = _fss_parts(pred, obs, tau, window)
    if den == 0.0:
        return 1.0
    return 1.0 - num / den


# ---------------------------------------------------------------------------
# probabilistic score
# ---------------------------------------------------------------------------

def crps_ensemble(members, obs) -> float:
    """Pixel-mean ensemble CRPS.

    ``(1/m) sum_i |x_i - y| - 1/(2 m^2) sum_ij |x_i - x_j|`` per pixel,
    then averaged over the field.
    """
    members = np.asarray(members, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if members.ndim != obs.ndim + 1:
        raise DimensionError(
            f"members {members.shape} must stack fields shaped {obs.shape}"
        )
    if members.shape[1:] != obs.shape:
        raise DimensionError(
            f"member fields {members.shape[1:]} and obs {obs.shape} differ"
        )
    m = members.shape[0]
    if m < 1:
        raise ParameterError("ensemble must have at least one member")
    accuracy = np.zeros(obs.shape, dtype=np.float64)
    for i in range(m):
        accuracy += np.abs(members[i] - obs)
    spread = np.zeros(obs.shape, dtype=np.float64)
    for i in range(m):
        for j in range(m):
            spread += np.abs(members[i] - members[j])
    per_pixel = accuracy / m - spread / (2.0 * m * m)
    return _fsum(per_pixel) / per_pixel.size


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadialSpectrum:
    """Ring-averaged 2-D power per integer wavenumber (DC at index 0)."""

    wavenumber: np.ndarray
    power: np.ndarray
    count: np.ndarray
    domain: int

    def wavelengths(self) -> np.ndarray:
        """Wavelength per nonzero wavenumber: domain size / wavenumber."""
        return self.domain / self.wavenumber[1:].astype(np.float64)

    def total_power(self) -> float:
        return math.fsum(
            float(p) * int(c) for p, c in zip(self.power, self.count)
        )


def radial_psd(field) -> RadialSpectrum:
    """Radially averaged power spectrum of a square field.

    Power is |FFT|^2 binned by the nearest-integer radial wavenumber and
    averaged within each ring.
    """
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2 or field.shape[0] != field.shape[1]:
        raise DimensionError(f"square field required, got {field.shape}")
    n = field.shape[0]
    power = np.abs(np.fft.fft2(field)) ** 2
    freq = np.fft.fftfreq(n, d=1.0 / n)
    radius = np.hypot(freq[:, None], freq[None, :])
    ring = np.rint(radius).astype(np.int64)
    kmax = int(ring.max())
    means = np.zeros(kmax + 1, dtype=np.float64)
    counts = np.zeros(kmax + 1, dtype=np.int64)
    for k in range(kmax + 1):
        mask = ring == k
        counts[k] = int(np.count_nonzero(mask))
        if counts[k]:
            means[k] = _fsum(power[mask]) / counts[k]
    return RadialSpectrum(
        wavenumber=np.arange(kmax + 1, dtype=np.int64),
        power=means,
        count=counts,
        domain=n,
    )


# ---------------------------------------------------------------------------
# Taylor statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaylorStats:
    """Correlation, sigma_pred/sigma_obs, and centered RMS difference."""

    correlation: float
    std_ratio: float
    centered_rms: float


def taylor_stats(pred_series, obs_series) -> TaylorStats:
    pred = np.asarray(pred_series, dtype=np.float64).ravel()
    obs = np.asarray(obs_series, dtype=np.float64).ravel()
    if pred.shape != obs.shape:
        raise DimensionError(
            f"series lengths differ: {pred.shape} vs {obs.shape}"
        )
    n = pred.size
    if n < 2:
        raise ParameterError("need at least two points for Taylor statistics")
    mp = _fsum(pred) / n
    mo = _fsum(obs) / n
    dp = pred - mp
    do = obs - mo
    var_p = _fsum(dp * dp) / n
    var_o = _fsum(do * do) / n
    if var_p == 0.0 or var_o == 0.0:
        raise UndefinedCorrelationError(
            "correlation undefined: a series has zero variance"
        )
    cov = _fsum(dp * do) / n
    corr = cov / math.sqrt(var_p * var_o)
    crms = math.sqrt(_fsum((dp - do) ** 2) / n)
    return TaylorStats(
        correlation=corr,
        std_ratio=math.sqrt(var_p) / math.sqrt(var_o),
        centered_rms=crms,
    )


# ---------------------------------------------------------------------------
# token cosine similarity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TokenSimilarity:
    """Pairwise cosine matrix and its global mean."""

    matrix: np.ndarray
    global_mean: float
    zero_norm_tokens: int

    def diagonal(self) -> np.ndarray:
        return np.diagonal(self.matrix).copy()


def token_similarity(tokens_a, tokens_b) -> TokenSimilarity:
    """Cosine similarity between two token sets of matching length.

    Zero-norm tokens contribute similarity 0 and are counted in
    ``zero_norm_tokens``.
    """
    a = np.asarray(tokens_a, dtype=np.float64)
    b = np.asarray(tokens_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(
            f"token sets must be 2-D with matching width: {a.shape} vs {b.shape}"
        )
    norm_a = np.array([math.sqrt(_fsum(row * row)) for row in a])
    norm_b = np.array([math.sqrt(_fsum(row * row)) for row in b])
    zero = int(np.count_nonzero(norm_a == 0.0) + np.count_nonzero(norm_b == 0.0))
    matrix = np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    for i in range(a.shape[0]):
        if norm_a[i] == 0.0:
            continue
        for j in range(b.shape[0]):
            if norm_b[j] == 0.0:
                continue
            matrix[i, j] = _fsum(a[i] * b[j]) / (norm_a[i] * norm_b[j])
    return TokenSimilarity(
        matrix=matrix,
        global_mean=_fsum(matrix) / matrix.size,
        zero_norm_tokens=zero,
    )


def spatial_tokens(values, patch: int) -> np.ndarray:
    """One token per patch channel: ``(F, H, W) -> (C, F * p * p)``."""
    return einops.rearrange(
        np.asarray(values), "f (gh p1) (gw p2) -> (gh gw) (f p1 p2)",
        p1=patch, p2=patch,
    )


def temporal_tokens(values, patch: int) -> np.ndarray:
    """One token per frame: ``(F, H, W) -> (F, C * p * p)``."""
    return einops.rearrange(
        np.asarray(values), "f (gh p1) (gw p2) -> f (gh gw p1 p2)",
        p1=patch, p2=patch,
    )


# ---------------------------------------------------------------------------
# report assembly
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    """Per-lead-time scores plus aggregate analyses for one forecast set."""

    thresholds: tuple[float, ...]
    fss_window: int
    timestep_minutes: float
    csi_by_lead: np.ndarray      # (n_thresholds, n_leads)
    fss_by_lead: np.ndarray      # (n_leads,)
    crps_by_lead: np.ndarray     # (n_leads,)
    taylor: TaylorStats | None
    spectrum_forecast: RadialSpectrum
    spectrum_observed: RadialSpectrum
    similarity: TokenSimilarity

    @property
    def leads(self) -> np.ndarray:
        return np.arange(1, self.fss_by_lead.size + 1)

    def csi_mean(self, idx: int) -> float:
        return _fsum(self.csi_by_lead[idx]) / self.csi_by_lead.shape[1]

    @property
    def fss_mean(self) -> float:
        return _fsum(self.fss_by_lead) / self.fss_by_lead.size

    @property
    def crps_mean(self) -> float:
        return _fsum(self.crps_by_lead) / self.crps_by_lead.size

    def summary(self) -> dict[str, str]:
        out: dict[str, str] = {
            "leads": str(self.fss_by_lead.size),
            "timestep_minutes": repr(self.timestep_minutes),
            "fss_window": str(self.fss_window),
            "fss_mean": repr(self.fss_mean),
            "crps_mean": repr(self.crps_mean),
            "similarity_global_mean": repr(self.similarity.global_mean),
            "similarity_zero_norm_tokens": str(self.similarity.zero_norm_tokens),
        }
        for i, tau in enumerate(self.thresholds):
            out[f"csi_mean_{tau:g}mmh"] = repr(self.csi_mean(i))
        if self.taylor is not None:
            out["taylor_correlation"] = repr(self.taylor.correlation)
            out["taylor_std_ratio"] = repr(self.taylor.std_ratio)
            out["taylor_centered_rms"] = repr(self.taylor.centered_rms)
        else:
            out["taylor_correlation"] = "undefined"
        return out

    def write(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        for i, tau in enumerate(self.thresholds):
            self._write_lead_csv(outdir / f"csi_{tau:g}mmh.csv", self.csi_by_lead[i])
        self._write_lead_csv(outdir / "fss.csv", self.fss_by_lead)
        self._write_lead_csv(outdir / "crps.csv", self.crps_by_lead)
        for name, spec in (
            ("spectrum_forecast.csv", self.spectrum_forecast),
            ("spectrum_observed.csv", self.spectrum_observed),
        ):
            with open(outdir / name, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["wavenumber", "wavelength", "power"])
                lengths = spec.wavelengths()
                for k in range(1, spec.wavenumber.size):
                    writer.writerow(
                        [int(spec.wavenumber[k]), repr(float(lengths[k - 1])),
                         repr(float(spec.power[k]))]
                    )
        np.savetxt(outdir / "similarity_pred_obs.csv", self.similarity.matrix,
                   delimiter=",")
        self._write_lead_csv(
            outdir / "similarity_diagonal.csv", self.similarity.diagonal()
        )
        with open(outdir / "summary.txt", "w") as fh:
            for key, value in self.summary().items():
                fh.write(f"{key}={value}\n")

    def _write_lead_csv(self, path, values) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lead_frames", "lead_minutes", "value"])
            for lead, value in zip(self.leads, values):
                writer.writerow(
                    [int(lead), repr(float(lead * self.timestep_minutes)),
                     repr(float(value))]
                )


def evaluate_forecasts(
    members: np.ndarray,
    truth: np.ndarray,
    thresholds=(1.0, 8.0),
    fss_window: int = 3,
    timestep_minutes: float = 5.0,
    patch: int = 2,
) -> MetricsReport:
    """Score an ensemble forecast set against observations.

    ``members`` is ``(n_samples, n_members, n_leads, H, W)`` and ``truth``
    ``(n_samples, n_leads, H, W)``, all in mm/h. Deterministic scores (CSI,
    FSS, Taylor, spectra, token similarity) use the ensemble mean; CSI
    pools pixels across samples per lead, FSS pools its numerator and
    denominator, CRPS averages per-sample scores.
    """
    members = np.asarray(members, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if members.ndim != 5 or truth.ndim != 4:
        raise DimensionError(
            f"members must be 5-D and truth 4-D, got {members.shape}, {truth.shape}"
        )
    if members.shape[0] != truth.shape[0] or members.shape[2:] != truth.shape[1:]:
        raise DimensionError(
            f"members {members.shape} and truth {truth.shape} are misaligned"
        )
    n_samples, _, n_leads = members.shape[:3]
    ens_mean = members.mean(axis=1)  # (n, leads, H, W)
    thresholds = tuple(float(t) for t in thresholds)

    csi_by_lead = np.zeros((len(thresholds), n_leads))
    fss_by_lead = np.zeros(n_leads)
    crps_by_lead = np.zeros(n_leads)
    for lead in range(n_leads):
        pred_stack = ens_mean[:, lead]
        obs_stack = truth[:, lead]
        for ti, tau in enumerate(thresholds):
            csi_by_lead[ti, lead] = csi(pred_stack, obs_stack, tau)
        num = den = 0.0
        for s in range(n_samples):
            part_num, part_den = _fss_parts(
                pred_stack[s], obs_stack[s], thresholds[0], fss_window
            )
            num += part_num
            den += part_den
        fss_by_lead[lead] = 1.0 - num / den if den > 0 else 1.0
        crps_by_lead[lead] = math.fsum(
            crps_ensemble(members[s, :, lead], truth[s, lead])
            for s in range(n_samples)
        ) / n_samples

    pred_series = ens_mean.mean(axis=(2, 3)).ravel()
    obs_series = truth.mean(axis=(2, 3)).ravel()
    try:
        taylor = taylor_stats(pred_series, obs_series)
    except UndefinedCorrelationError:
        taylor = None

    spec_fc = _mean_spectrum([ens_mean[s, -1] for s in range(n_samples)])
    spec_ob = _mean_spectrum([truth[s, -1] for s in range(n_samples)])

    sim_matrices = []
    zero_norm = 0
    for s in range(n_samples):
        sim = token_similarity(
            temporal_tokens(ens_mean[s], patch), temporal_tokens(truth[s], patch)
        )
        sim_matrices.append(sim.matrix)
        zero_norm += sim.zero_norm_tokens
    sim_matrix = np.mean(sim_matrices, axis=0)
    similarity = TokenSimilarity(
        matrix=sim_matrix,
        global_mean=_fsum(sim_matrix) / sim_matrix.size,
        zero_norm_tokens=zero_norm,
    )

    return MetricsReport(
        thresholds=thresholds,
        fss_window=fss_window,
        timestep_minutes=timestep_minutes,
        csi_by_lead=csi_by_lead,
        fss_by_lead=fss_by_lead,
        crps_by_lead=crps_by_lead,
        taylor=taylor,
        spectrum_forecast=spec_fc,
        spectrum_observed=spec_ob,
        similarity=similarity,
    )


def _mean_spectrum(fields) -> RadialSpectrum:
    spectra = [radial_psd(f) for f in fields]
    power = np.mean([s.power for s in spectra], axis=0)
    first = spectra[0]
    return RadialSpectrum(
        wavenumber=first.wavenumber, power=power, count=first.count,
        domain=first.domain,
    )
