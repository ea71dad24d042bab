"""Least-squares fits used by the experiment runners.

Every fit returns a :class:`FitResult`; a failed fit is flagged instead of
raising. Initial guesses: FFT peak for frequencies, max - min for
amplitudes, extrema for line centres.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit
from scipy.signal import find_peaks

log = logging.getLogger(__name__)


@dataclass
class FitResult:
    params: dict = field(default_factory=dict)
    stderr: dict = field(default_factory=dict)
    success: bool = False
    message: str = ""

    def to_dict(self):
        return {"params": self.params, "stderr": self.stderr,
                "success": self.success, "message": self.message}


def _fit(model, x, y, p0, names, bounds=(-np.inf, np.inf)):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, pcov = curve_fit(model, x, y, p0=p0, bounds=bounds, maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        log.warning("fit failed: %s", exc)
        return FitResult({n: float(v) for n, v in zip(names, p0)}, {}, False, str(exc))
    err = np.sqrt(np.clip(np.diag(pcov), 0.0, None)) if np.all(np.isfinite(pcov)) \
        else np.full(len(popt), np.nan)
    return FitResult({n: float(v) for n, v in zip(names, popt)},
                     {n: float(e) for n, e in zip(names, err)}, True, "")


def fft_frequency(x, y, skip=0):
    """Strongest nonzero frequency of ``y`` sampled on uniform ``x``.

    ``skip`` excludes that many of the strongest bins first, which gives the
    second line of a two-tone signal.
    """
    y = np.asarray(y) - np.mean(y)
    n = len(y)
    pad = 8 * n
    power = np.abs(np.fft.rfft(y, pad))
    freqs = np.fft.rfftfreq(pad, x[1] - x[0])
    power[0] = 0.0
    peaks, _ = find_peaks(power)
    if peaks.size == 0:
        return 0.0
    order = peaks[np.argsort(power[peaks])[::-1]]
    k = min(skip, order.size - 1)
    return float(freqs[order[k]])


def lorentzian_dips(x, *p):
    """Unit baseline minus a sum of Lorentzians; ``p`` = (centre, depth, fwhm) * n."""
    out = np.ones_like(x, dtype=float)
    for c, d, w in zip(p[0::3], p[1::3], p[2::3]):
        hw2 = (0.5 * w) ** 2
        out -= d * hw2 / ((x - c) ** 2 + hw2)
    return out


def fit_lorentzian_dips(x, y, n_lines=None, width_guess=None):
    """Fit dips in a normalized spectrum; returns centres in ascending order."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    depth = 1.0 - y
    span = float(np.ptp(depth))
    if span <= 0:
        return FitResult({}, {}, False, "flat spectrum")
    peaks, props = find_peaks(depth, prominence=0.2 * span)
    if n_lines is not None:
        peaks = peaks[np.argsort(props["prominences"])[::-1][:n_lines]]
    peaks = np.sort(peaks)
    if peaks.size == 0:
        return FitResult({}, {}, False, "no dips found")
    w0 = width_guess if width_guess else 10 * (x[1] - x[0])
    p0, names = [], []
    for i, k in enumerate(peaks):
        p0 += [x[k], depth[k], w0]
        names += [f"center_{i}", f"depth_{i}", f"fwhm_{i}"]
    res = _fit(lorentzian_dips, x, y, p0, names)
    if res.success:
        centres = sorted(res.params[f"center_{i}"] for i in range(peaks.size))
        res.params["centers"] = centres
        res.params["n_lines"] = int(peaks.size)
    return res


def rabi_model(t, amp, freq, offset):
    return offset + 0.5 * amp * (1.0 - np.cos(2 * np.pi * freq * t))


def fit_rabi(t, p):
    """Flip probability ``offset + amp (1 - cos 2 pi f t) / 2``; reports the pi time."""
    t, p = np.asarray(t, float), np.asarray(p, float)
    amp = float(np.ptp(p))
    if amp < 1e-6:
        return FitResult({"amp": 0.0, "offset": float(np.mean(p))}, {}, False, "flat curve")
    f0 = fft_frequency(t, p)
    res = _fit(rabi_model, t, p, [amp, f0, float(np.min(p))], ["amp", "freq", "offset"],
               bounds=([0, 0, -1], [2, np.inf, 2]))
    if res.success and res.params["freq"] > 0:
        res.params["t_pi"] = 0.5 / res.params["freq"]
        res.stderr["t_pi"] = res.stderr.get("freq", np.nan) * 0.5 / res.params["freq"] ** 2
    return res


def ramsey_model(t, offset, inv_t2sq, a1, f1, p1, a2, f2, p2):
    env = np.exp(-inv_t2sq * t * t)
    return offset + env * (a1 * np.cos(2 * np.pi * f1 * t + p1)
                           + a2 * np.cos(2 * np.pi * f2 * t + p2))


def _ramsey_candidates(t, y, scan_max):
    names = ["offset", "inv_t2sq", "a1", "f1", "p1", "a2", "f2", "p2"]
    lo = [-np.inf, 0.0, -np.inf, 0.0, -np.inf, -np.inf, 0.0, -np.inf]
    amp = 0.5 * float(np.ptp(y))
    f1 = fft_frequency(t, y)
    f2 = fft_frequency(t, y, skip=1)
    g = 1.0 / (0.5 * scan_max) ** 2
    resolution = 1.0 / scan_max
    out = []
    for two in (False, True):
        if two and abs(f2 - f1) < resolution:
            continue
        for phase in (0.0, np.pi):
            p0 = [float(np.mean(y)), g, amp, f1, phase, 0.1 * amp if two else 0.0, f2, 0.0]
            if two:
                res = _fit(ramsey_model, t, y, p0, names, bounds=(lo, np.inf))
            else:
                def one(x, offset, inv_t2sq, a1, f, p):
                    return ramsey_model(x, offset, inv_t2sq, a1, f, p, 0.0, 0.0, 0.0)
                res = _fit(one, t, y, p0[:5], names[:5], bounds=(lo[:5], np.inf))
                if res.success:
                    res.params.update(a2=0.0, f2=0.0, p2=0.0)
            if not res.success:
                continue
            if two and abs(res.params["f2"] - res.params["f1"]) < resolution:
                continue
            rss = float(np.sum((ramsey_model(t, *[res.params[n] for n in names]) - y) ** 2))
            k = 8 if two else 5
            bic = len(t) * np.log(max(rss, 1e-300) / len(t)) + k * np.log(len(t))
            out.append((bic, res))
    return out


def fit_ramsey(t, y, scan_max=None):
    """One or two cosines under a Gaussian envelope ``exp(-(t/T2*)^2)``.

    The second cosine is kept only if its frequency is resolvable within the
    scan and it lowers the BIC. The envelope is fitted through
    ``1/T2*^2 >= 0``; when it is consistent with no decay, T2* is reported as
    a lower bound equal to the scan length.
    """
    t, y = np.asarray(t, float), np.asarray(y, float)
    scan_max = float(t[-1]) if scan_max is None else scan_max
    cands = _ramsey_candidates(t, y, scan_max)
    if not cands:
        return FitResult({}, {}, False, "ramsey fit failed")
    res = min(cands, key=lambda c: c[0])[1]
    k, dk = res.params["inv_t2sq"], res.stderr.get("inv_t2sq", np.nan)
    t2 = np.inf if k <= 0 else 1.0 / np.sqrt(k)
    if not np.isfinite(t2) or t2 > scan_max * 10 or (np.isfinite(dk) and dk >= k):
        res.params["t2star"] = scan_max
        res.params["t2star_lower_bound"] = True
        res.stderr["t2star"] = np.nan
    else:
        res.params["t2star"] = float(t2)
        res.params["t2star_lower_bound"] = False
        res.stderr["t2star"] = float(0.5 * dk / k ** 1.5) if np.isfinite(dk) else np.nan
    return res


def stretched_decay(t, amp, t2, power):
    return amp * np.exp(-(t / t2) ** power)


def fit_decay(t, c):
    """Coherence ``amp exp(-(t/T2)^p)``, ``1 <= p <= 4``; T2 is the 1/e time."""
    t, c = np.asarray(t, float), np.asarray(c, float)
    amp = float(np.max(c))
    below = np.flatnonzero(c < amp / np.e)
    t2 = float(t[below[0]]) if below.size else float(t[-1])
    res = _fit(stretched_decay, t, c, [amp, max(t2, 1e-3), 2.0], ["amp", "t2", "power"],
               bounds=([0, 1e-6, 1.0], [1.5, np.inf, 4.0]))
    return res
