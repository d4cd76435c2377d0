"""Trial-wise signal conditioning: causal low-pass filtering and exponential
moving standardization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .signal_core import Dataset, Trial


@dataclass(frozen=True)
class FilterSpec:
    sample_rate_hz: float
    cutoff_hz: float = 38.0
    order: int = 4

    def __post_init__(self):
        if not self.sample_rate_hz > 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not self.cutoff_hz > 0:
            raise ValueError(f"cutoff_hz must be positive, got {self.cutoff_hz}")
        if self.cutoff_hz >= self.sample_rate_hz / 2:
            raise ValueError(
                f"cutoff {self.cutoff_hz} Hz must be below Nyquist ({self.sample_rate_hz / 2} Hz)"
            )
        if int(self.order) != self.order or self.order < 2 or self.order % 2:
            raise ValueError(f"order must be an even positive integer, got {self.order}")

    def sos(self) -> np.ndarray:
        return butterworth_sos(self.cutoff_hz, int(self.order), self.sample_rate_hz)


@dataclass
class StandardizerState:
    """Running per-channel statistics of the moving standardizer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    alpha: float = 0.001
    eps: float = 1e-4

    def __post_init__(self):
        _check_standardizer_args(self.alpha, self.eps)


def _check_standardizer_args(alpha, eps):
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")


def butterworth_sos(cutoff_hz: float, order: int, sample_rate_hz: float) -> np.ndarray:
    """Impulse-invariant digital Butterworth low-pass as second-order sections.

    The analog prototype's impulse response is sampled, so the digital
    magnitude tracks ``1 / sqrt(1 + (f/fc)^(2n))`` well below Nyquist rather
    than the frequency-warped curve of the bilinear transform. DC gain is
    normalized to exactly 1.
    """
    dt = 1.0 / sample_rate_hz
    _, poles, gain = signal.butter(order, 2 * np.pi * cutoff_hz, analog=True, output="zpk")
    # partial fractions of k / prod(s - p_i): residue_i = k / prod_{j != i} (p_i - p_j)
    residues = [gain / np.prod([pi - pj for j, pj in enumerate(poles) if j != i]) for i, pi in enumerate(poles)]
    zpoles = np.exp(poles * dt)

    num = np.zeros(1, dtype=complex)
    den = np.ones(1, dtype=complex)
    for r, q in zip(residues, zpoles):
        term_den = np.array([1.0, -q])
        num = np.polyadd(np.polymul(num, term_den), dt * r * den)
        den = np.polymul(den, term_den)
    # the sampled impulse response starts at exactly 0, so the leading tap is dropped
    b = num.real[1:]
    a = den.real
    b = b * (a.sum() / b.sum())
    return signal.tf2sos(b, a)


def butterworth_gain(freq_hz, cutoff_hz: float, order: int):
    """Analytic magnitude response ``1 / sqrt(1 + (f/fc)^(2n))``."""
    return 1.0 / np.sqrt(1.0 + (np.asarray(freq_hz) / cutoff_hz) ** (2 * order))


def lowpass_filter(trial: Trial, spec: FilterSpec) -> Trial:
    """Causal Butterworth low-pass, applied to each channel independently."""
    out = signal.sosfilt(spec.sos(), trial.data, axis=1)
    return trial.replace_data(out)


def standardize_array(x: np.ndarray, alpha: float = 0.001, eps: float = 1e-4, return_state: bool = False):
    """Exponential moving standardization of a ``(C, T)`` array along time.

    Per channel::

        mean_t = (1 - alpha) * mean_{t-1} + alpha * x_t        (mean_0 = x_1)
        var_t  = (1 - alpha) * var_{t-1}  + alpha * (x_t - mean_t)^2   (var_0 = 0)
        out_t  = (x_t - mean_t) / sqrt(max(var_t, eps))

    Both recursions are first-order IIR filters, evaluated with ``lfilter``.
    """
    _check_standardizer_args(alpha, eps)
    x = np.asarray(x, dtype=np.float64)
    b = [alpha]
    a = [1.0, -(1.0 - alpha)]
    mean, _ = signal.lfilter(b, a, x, axis=1, zi=((1.0 - alpha) * x[:, :1]))
    dev = x - mean
    var = signal.lfilter(b, a, dev * dev, axis=1)
    out = dev / np.sqrt(np.maximum(var, eps))
    if return_state:
        return out, StandardizerState(mean[:, -1].copy(), var[:, -1].copy(), alpha, eps)
    return out


def exp_moving_standardize(trial: Trial, alpha: float = 0.001, eps: float = 1e-4) -> Trial:
    return trial.replace_data(standardize_array(trial.data, alpha, eps))


def preprocess_dataset(dataset: Dataset, spec: FilterSpec, alpha: float = 0.001, eps: float = 1e-4) -> Dataset:
    """Low-pass filter then standardize every trial, in that order."""
    _check_standardizer_args(alpha, eps)
    out = [exp_moving_standardize(lowpass_filter(tr, spec), alpha, eps) for tr in dataset.trials]
    return dataset.with_trials(out)
