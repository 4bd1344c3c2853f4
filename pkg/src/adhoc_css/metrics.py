"""Signal-level evaluation: SI-SNR, duplicate-speech leakage, and
window-level counting metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SNR_CAP_DB = 60.0


class MetricError(ValueError):
    pass


def si_snr(est: np.ndarray, ref: np.ndarray) -> float:
    """Scale-invariant SNR in dB, clipped to [-60, 60]."""
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise MetricError(f"length mismatch: {est.shape} vs {ref.shape}")
    ref_energy = np.dot(ref, ref)
    if ref_energy == 0:
        raise MetricError("reference signal is zero")
    target = (np.dot(est, ref) / ref_energy) * ref
    residual = est - target
    t_pow = np.dot(target, target)
    r_pow = np.dot(residual, residual)
    if t_pow == 0:
        return -SNR_CAP_DB
    if r_pow == 0:
        return SNR_CAP_DB
    return float(np.clip(10.0 * np.log10(t_pow / r_pow), -SNR_CAP_DB, SNR_CAP_DB))


def best_assignment_si_snr(streams, refs):
    """Max over the two stream/reference assignments of the mean SI-SNR.

    Returns (mean_db, permutation, per_ref_db)."""
    if len(streams) != 2 or len(refs) != 2:
        raise MetricError("expected two streams and two references")
    best = None
    for perm in ((0, 1), (1, 0)):
        vals = [si_snr(streams[perm[i]], refs[i]) for i in range(2)]
        mean = float(np.mean(vals))
        if best is None or mean > best[0]:
            best = (mean, perm, vals)
    return best


def duplication_leakage(streams, intervals) -> float:
    """Energy ratio (dB) of the weaker to the stronger output stream over
    oracle single-speaker intervals; clipped at -60 dB."""
    if len(streams) != 2:
        raise MetricError("expected two streams")
    if not intervals:
        raise MetricError("empty interval set")
    energies = np.zeros(2)
    n = len(streams[0])
    for start, end in intervals:
        if not 0 <= start < end <= n:
            raise MetricError(f"interval ({start}, {end}) outside session [0, {n})")
        for i in (0, 1):
            seg = np.asarray(streams[i][start:end], dtype=np.float64)
            energies[i] += np.dot(seg, seg)
    weaker, stronger = np.min(energies), np.max(energies)
    if stronger == 0 or weaker == 0:
        return -SNR_CAP_DB
    return float(max(10.0 * np.log10(weaker / stronger), -SNR_CAP_DB))


@dataclass
class CountingMetrics:
    accuracy: float
    false_multi_rate: float   # multi decided on a single-speaker window
    false_single_rate: float  # single decided on a multi-speaker window


def counting_metrics(decisions, labels) -> CountingMetrics:
    decisions = np.asarray(decisions, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if decisions.shape != labels.shape:
        raise MetricError(f"length mismatch: {decisions.shape} vs {labels.shape}")
    if decisions.size == 0:
        raise MetricError("no windows to score")
    accuracy = float(np.mean(decisions == labels))
    n_single = int(np.sum(~labels))
    n_multi = int(np.sum(labels))
    false_multi = float(np.sum(decisions & ~labels) / n_single) if n_single else 0.0
    false_single = float(np.sum(~decisions & labels) / n_multi) if n_multi else 0.0
    return CountingMetrics(accuracy, false_multi, false_single)
