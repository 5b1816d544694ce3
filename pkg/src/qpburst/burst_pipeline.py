"""Burst detection and characterization on per-qubit error records.

Chain: per-cycle error sum -> moving-average background subtraction ->
exponential matched filter -> thresholded peak picking.  Detected sections
are then sized, fitted (relaxation bursts), and screened for box-like
single-qubit artifacts.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize, signal

from .impact_synthesizer import GridSeries

SIZE_BIN = 1            # qubits
SHIFT_BIN = 250e3       # Hz


@dataclass(frozen=True)
class FilterConfig:
    ma_window: float = 25e-3
    tau_MF: float = 1.5e-3
    threshold: float = 4.0
    refractory: float | None = None   # default 10 tau_MF

    def __post_init__(self):
        if not (self.ma_window > 0 and self.tau_MF > 0 and self.threshold > 0):
            raise ValueError("filter parameters must be positive")
        if not self.tau_MF < self.ma_window:
            raise ValueError("tau_MF must be shorter than the moving-average window")

    @classmethod
    def scan(cls, **kw):
        return cls(25e-3, 1.5e-3, 4.0, **kw)

    @classmethod
    def interleaved(cls, **kw):
        return cls(25e-3, 250e-6, 1.0, **kw)

    @property
    def refractory_time(self) -> float:
        return 10 * self.tau_MF if self.refractory is None else self.refractory


@dataclass
class BurstReport:
    t_start: float
    mf_peak: float
    size: int | None = None
    duration: float | None = None
    shifts: list | None = None
    classification: str = "impact"

    def __post_init__(self):
        if self.classification not in ("impact", "box_false_positive"):
            raise ValueError(f"unknown classification {self.classification!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "BurstReport":
        return cls(**d)


def reports_to_json(reports, **meta) -> str:
    return json.dumps({"meta": meta, "reports": [r.to_dict() for r in reports]}, indent=1)


def reports_from_json(text: str) -> list:
    return [BurstReport.from_dict(d) for d in json.loads(text)["reports"]]


# ---------------------------------------------------------------------------
# signal chain


def error_count_series(series: GridSeries, kind: str):
    """Per-sample error sum across qubits, all slots of ``kind`` merged in time order.

    Returns (times, counts).
    """
    slots = series.slots_of(kind)
    if not slots:
        raise ValueError(f"kind {kind!r} not present in series")
    counts = np.stack([series.outcomes[s][series.masks[s]].sum(axis=0) for s in slots], axis=1)
    times = series.times[:, None] + series.offsets[slots][None, :]
    return times.ravel(), counts.ravel().astype(np.int64)


def subtract_moving_average(sigma, half_window: int):
    """sigma minus its centred mean over [i - w, i + w], truncated at the edges."""
    x = np.asarray(sigma, dtype=float)
    w = int(half_window)
    if w < 10:
        raise ValueError("moving-average window must span at least 10 cycles")
    n = x.size
    cs = np.concatenate([[0.0], np.cumsum(x)])
    i = np.arange(n)
    lo = np.maximum(i - w, 0)
    hi = np.minimum(i + w + 1, n)
    return x - (cs[hi] - cs[lo]) / (hi - lo)


def matched_filter(delta_sigma, tau_MF: float, dt: float):
    """MF[i] = sum_k x[i+k] (2 dt / tau) exp(-k dt / tau): forward-looking exponential template."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(delta_sigma, dtype=float)
    a = np.exp(-dt / tau_MF)
    c = 2 * dt / tau_MF
    return signal.lfilter([c], [1.0, -a], x[::-1])[::-1]


def detect_bursts(mf, threshold: float, refractory: int):
    """Indices of local MF maxima above ``threshold`` separated by >= ``refractory`` samples."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    mf = np.asarray(mf, dtype=float)
    if mf.size < 3:
        return np.array([], dtype=int)
    peaks, _ = signal.find_peaks(mf, height=threshold, distance=max(1, int(refractory)))
    return peaks


def detect_series(sigma, dt: float, config: FilterConfig):
    """Full chain on an in-memory count series; returns (peak indices, mf)."""
    d = subtract_moving_average(sigma, int(round(config.ma_window / dt)))
    mf = matched_filter(d, config.tau_MF, dt)
    return detect_bursts(mf, config.threshold, int(round(config.refractory_time / dt))), mf


def detect_stream(blocks, dt: float, config: FilterConfig, thresholds=None):
    """Streaming version of :func:`detect_series` for long campaigns.

    ``blocks`` yields (first_cycle, counts); each block must be longer than the
    moving-average half window plus ten template lengths.  Returns a dict
    threshold -> list of (cycle, mf_peak).
    """
    thresholds = [config.threshold] if thresholds is None else list(thresholds)
    w = int(round(config.ma_window / dt))
    refr = int(round(config.refractory_time / dt))
    out = {th: [] for th in thresholds}
    last = {th: -10**18 for th in thresholds}
    prev_tail = np.zeros(0)
    prev_mf_last = -np.inf
    it = iter(blocks)
    cur = next(it, None)
    while cur is not None:
        nxt = next(it, None)
        c0, x = cur[0], np.asarray(cur[1], dtype=float)
        ahead = np.asarray(nxt[1], dtype=float) if nxt is not None else np.zeros(0)
        seg = np.concatenate([prev_tail, x, ahead])
        # truncated-window mean matches the global edge policy because
        # prev_tail/ahead carry all of the window that exists
        d = subtract_moving_average(seg, w)
        mf = matched_filter(d[prev_tail.size:], config.tau_MF, dt)
        n = x.size
        nxt_mf = mf[n] if mf.size > n else -np.inf
        ext = np.concatenate([[prev_mf_last], mf[:n], [nxt_mf]])
        for th in thresholds:
            pk, _ = signal.find_peaks(ext, height=th, distance=max(1, refr))
            for p in pk:
                if 1 <= p <= n:
                    cyc = c0 + p - 1
                    if cyc - last[th] >= refr:
                        out[th].append((cyc, float(ext[p])))
                        last[th] = cyc
                    elif out[th] and ext[p] > out[th][-1][1]:
                        out[th][-1] = (cyc, float(ext[p]))
                        last[th] = cyc
        prev_tail = x[-w:] if x.size >= w else np.concatenate([prev_tail, x])[-w:]
        prev_mf_last = mf[n - 1]
        cur = nxt
    return out


# ---------------------------------------------------------------------------
# burst metrics


def burst_size(shift_map, sigma_f: float) -> int:
    """Number of qubits with |delta_f(0)| strictly above 3 sigma_f."""
    if not sigma_f > 0:
        raise ValueError("sigma_f must be positive")
    return int(np.sum(np.abs(np.asarray(shift_map, dtype=float)) > 3 * sigma_f))


@dataclass
class T1BurstFit:
    c: float
    t0: float
    t_T1: float | None
    size: float
    residual: float


def _exp_step(t, c, t0, tau, b):
    dt = t - t0
    return np.where(dt >= 0, c * np.exp(-np.clip(dt, 0, None) / tau), 0.0) + b


def fit_t1_burst(times, sigma_t1, b: float = 1.9, expected_t1: float = 35e-6,
                 min_size: float = 12.0) -> T1BurstFit:
    """Fit c exp(-(t - t0)/t_T1) Theta(t - t0) + b with b held fixed.

    t0 is scanned over the samples around the rising edge; c and t_T1 are fitted
    by least squares at each candidate.  t_T1 is withheld when the burst
    peak above background is below ``min_size``.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(sigma_t1, dtype=float)
    if t.size < 5 or t[-1] - t[0] < 5 * expected_t1:
        raise ValueError("series must span at least five expected burst durations")
    imax = int(np.argmax(y))
    size = float(y[imax] - b)
    best = None
    dt = float(np.median(np.diff(t)))
    # a saturated burst has its maximum anywhere on the plateau; start at the rise
    first = int(np.argmax(y - b > 0.5 * size))
    for i0 in range(max(0, first - 2), min(imax, first + 3) + 1):
        for frac in np.linspace(0.0, 1.0, 5, endpoint=False):
            t0 = t[i0] - frac * dt

            def resid(p):
                return _exp_step(t, p[0], t0, np.exp(p[1]), b) - y

            res = optimize.least_squares(resid, [max(size, 1.0), np.log(expected_t1)],
                                         x_scale=[max(abs(size), 1.0), 1.0])
            if best is None or res.cost < best[0]:
                best = (res.cost, res.x, t0)
    cost, p, t0 = best
    rms = float(np.sqrt(2 * cost / t.size))
    t_t1 = float(np.exp(p[1])) if size >= min_size else None
    return T1BurstFit(float(p[0]), float(t0), t_t1, size, rms)


def box_convolve(trace, box: int):
    """Running mean of a binary trace over ``box`` samples (valid part only)."""
    x = np.asarray(trace, dtype=float)
    if x.size < box:
        return np.zeros(0)
    cs = np.concatenate([[0.0], np.cumsum(x)])
    return (cs[box:] - cs[:-box]) / box


def box_slope(conv, background: float, sigma: float):
    """Slope of n(p_th)/n(p_first) against p_th for thresholds bg + 3 sigma ... 1 in steps of 0.1.

    Only thresholds that some sample still exceeds enter the linear fit, so
    the slope measures how fast the count falls while the signal is present.
    """
    p0 = background + 3 * sigma
    ths = p0 + 0.1 * np.arange(int(np.floor((1.0 - p0) / 0.1 + 1e-9)) + 1)
    n = np.array([(conv > th).sum() for th in ths], dtype=float)
    keep = n > 0
    if keep.sum() < 2:
        return np.nan
    return float(np.polyfit(ths[keep], n[keep] / n[0], 1)[0])


def classify_box_event(traces, dt: float, pre_traces=None, box_time: float = 50e-6,
                       min_steps: int = 20, slope_limit: float = 2.0):
    """Classify a flagged section as 'impact' or 'box_false_positive'.

    ``traces`` is (qubits, samples) binary errors (or detections) covering
    the section; ``pre_traces`` (qubits, samples) is quiet context used for
    the per-qubit background level and standard deviation of the convolved
    signal (defaults to the section itself).  A qubit whose convolved rate
    exceeds 1/2 for more than ``min_steps`` samples is tested; a flat
    threshold curve (|slope| < slope_limit) marks it box-like.
    """
    traces = np.atleast_2d(np.asarray(traces, dtype=float))
    box = max(1, int(round(box_time / dt)))
    ctx = traces if pre_traces is None else np.atleast_2d(np.asarray(pre_traces, dtype=float))
    details = []
    for q in range(traces.shape[0]):
        conv = box_convolve(traces[q], box)
        if conv.size == 0 or (conv > 0.5).sum() <= min_steps:
            continue
        cc = box_convolve(ctx[q], box)
        bg = float(cc.mean()) if cc.size else 0.0
        sd = float(cc.std()) if cc.size else 0.0
        s = box_slope(conv, bg, sd)
        details.append((q, s))
        if np.isfinite(s) and abs(s) < slope_limit:
            return "box_false_positive", details
    return "impact", details


# ---------------------------------------------------------------------------
# ensembles and campaign scoring


def ensemble_stats(reports, duration: float | None = None) -> dict:
    imp = [r for r in reports if r.classification == "impact"]
    sizes = np.array([r.size for r in imp if r.size is not None], dtype=float)
    peaks = np.array([np.max(np.abs(r.shifts)) for r in imp if r.shifts], dtype=float)
    out = {"count": len(imp), "rate": (len(imp) / duration) if duration else 0.0,
           "size_bins": [], "size_hist": [], "shift_bins": [], "shift_hist": [],
           "median_size": float(np.median(sizes)) if sizes.size else None,
           "median_peak_shift": float(np.median(peaks)) if peaks.size else None,
           "large_rate": (float(np.sum(sizes > 30)) / duration) if duration else 0.0}
    if sizes.size:
        edges = np.arange(0, sizes.max() + 2, SIZE_BIN) - 0.5
        h, e = np.histogram(sizes, edges)
        out["size_bins"], out["size_hist"] = (e[:-1] + 0.5).tolist(), h.tolist()
    if peaks.size:
        edges = np.arange(0, peaks.max() + SHIFT_BIN, SHIFT_BIN)
        if edges.size < 2:
            edges = np.array([0.0, SHIFT_BIN])
        h, e = np.histogram(peaks, edges)
        out["shift_bins"], out["shift_hist"] = e[:-1].tolist(), h.tolist()
    return out


@dataclass
class CampaignScore:
    n_events: int
    n_detections: int
    recall: float
    false_positive_fraction: float
    missed: list = field(default_factory=list)


def score_detections(det_times, event_times, before: float = 2e-3, after: float = 20e-3) -> CampaignScore:
    """Match detections to injected events; a detection within [t0 - before, t0 + after] is a hit."""
    det = np.sort(np.asarray(det_times, dtype=float))
    ev = np.sort(np.asarray(event_times, dtype=float))
    hit_ev = np.zeros(ev.size, dtype=bool)
    fp = 0
    for t in det:
        j = np.nonzero((ev - before <= t) & (t <= ev + after))[0]
        if j.size:
            hit_ev[j] = True
        else:
            fp += 1
    recall = float(hit_ev.mean()) if ev.size else 1.0
    fpf = fp / det.size if det.size else 0.0
    return CampaignScore(int(ev.size), int(det.size), recall, fpf, ev[~hit_ev].tolist())


def scan_campaign(profile, duration: float, seed: int = 0, thresholds=(4.0, 3.0),
                  config: FilterConfig | None = None, block_duration: float = 4.0):
    """Synthesize a long R-scan campaign, detect at each threshold and score.

    Returns (events, {threshold: (detection_times, CampaignScore)}).
    """
    from .impact_synthesizer import campaign_counts, lattice_neighbours, sample_episodes, sample_impacts
    cfg = config or FilterConfig.scan()
    period = 5e-6
    events = sample_impacts(profile.impacts.rate, duration, profile.impacts, seed, profile)
    episodes = sample_episodes(profile.noise, profile.n_qubits, duration, seed,
                               lattice_neighbours(profile.grid))
    blocks = campaign_counts(profile, duration, seed, "R", events, episodes, block_duration, period)
    found = detect_stream(blocks, period, cfg, thresholds)
    res = {}
    for th, lst in found.items():
        times = np.array([c for c, _ in lst], dtype=float) * period
        res[th] = (times, score_detections(times, [e.t0 for e in events]))
    return events, res


def fit_burst_decay(times, y, t0: float, baseline: float | None = None) -> float:
    """Decay time tau of a burst's excess over ``baseline``.

    Model: A (1 - exp(-G exp(-(t - t0)/tau))) for t >= t0, the error
    probability under a rate that fades exponentially; G -> 0 is a plain
    exponential, large G describes a burst saturated near its start.
    ``baseline`` defaults to the mean of the samples before ``t0``.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(y, dtype=float)
    pre = y[t < t0]
    b = float(pre.mean()) if baseline is None and pre.size else float(baseline or 0.0)
    sel = t >= t0
    tt, yy = t[sel] - t0, y[sel] - b
    if tt.size < 4:
        raise ValueError("need at least four samples after t0")
    amp = max(float(np.max(yy[: max(4, tt.size // 4)])), 1e-9)
    span = max(float(tt[-1]), 1e-12)

    def resid(p):
        return np.exp(p[0]) * -np.expm1(-np.exp(p[1]) * np.exp(-tt / np.exp(p[2]))) - yy

    best = None
    for g in (0.1, 1.0, 5.0):
        for frac in (0.01, 0.1):
            p0 = [np.log(amp / -np.expm1(-g)), np.log(g), np.log(frac * span)]
            res = optimize.least_squares(resid, p0, bounds=([-np.inf, np.log(1e-12), -np.inf],
                                                            [np.inf, np.log(50.0), np.inf]))
            if best is None or res.cost < best.cost:
                best = res
    return float(np.exp(best.x[2]))
