"""Detected-count model for the shelving readout and its calibrated inverse.

The readout block shelves both central sublevels on the 1140 nm lines,
detects the ground manifolds destructively (background counts), returns the
shelved population and detects again (central-sublevel counts).  Three
systematic effects tie raw counts to the true populations:

* probe crosstalk: the F=4 probe weakly repumps F=3 atoms, adding a signal
  that grows quadratically with probe duration and depleting the subsequent
  F=3 count;
* imperfect shelving pulses (transfer probability < 1);
* metastable decay over the readout timeline, which leaks shelved
  population back into the ground manifolds between detections.

All three are linear in the populations at fixed timings, so the forward
model is a matrix and calibration is its inverse.  Camera noise is additive
Gaussian with a configurable floor; counts below the floor are flagged, not
clipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .atom import (
    BASIS,
    DIM,
    Manifold,
    STATE_INDEX,
    SublevelRef,
    metastable_branching_table,
)

__all__ = [
    "READOUT_LABELS",
    "ReadoutRecord",
    "CrosstalkCalibration",
    "CalibrationError",
    "pump_rate",
    "pump_depletion",
    "crosstalk_fraction",
    "probe_signal_scale",
    "decay_fraction_matrix",
    "simulate_readout",
    "forward_matrix",
    "calibrate",
]

READOUT_LABELS = ("N4", "N3", "N4_mf0", "N3_mf0")

_G4 = [STATE_INDEX[s] for s in BASIS if s.manifold is Manifold.GROUND and s.F == 4]
_G3 = [STATE_INDEX[s] for s in BASIS if s.manifold is Manifold.GROUND and s.F == 3]
_I_G40 = STATE_INDEX[SublevelRef.from_token("g40")]
_I_G30 = STATE_INDEX[SublevelRef.from_token("g30")]
_I_M30 = STATE_INDEX[SublevelRef.from_token("m30")]
_I_M20 = STATE_INDEX[SublevelRef.from_token("m20")]


class CalibrationError(ValueError):
    pass


@dataclass
class ReadoutRecord:
    """Raw and calibrated counts of one shot, keyed by measurement label."""

    shot_index: int = 0
    raw: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    calibrated: dict = field(default_factory=dict)
    low_confidence: set = field(default_factory=set)
    scan_vars: dict = field(default_factory=dict)

    def add(self, label: str, value: float, t: float, floor: float = 0.0) -> None:
        self.raw[label] = float(value)
        self.timings[label] = float(t)
        if value < floor:
            self.low_confidence.add(label)

    @property
    def complete(self) -> bool:
        return all(label in self.raw for label in READOUT_LABELS)

    def calibrate_with(self, calib: "CrosstalkCalibration") -> None:
        if self.complete:
            self.calibrated = calibrate(self.raw, calib)

    def eta4(self) -> float:
        """Relative central-sublevel population N40 / (N40 + N30)."""
        src = self.calibrated if self.calibrated else self.raw
        n40, n30 = src["N4_mf0"], src["N3_mf0"]
        return n40 / (n40 + n30)

    def eta3(self) -> float:
        return 1.0 - self.eta4()


@dataclass(frozen=True)
class CrosstalkCalibration:
    """Everything needed to map raw counts to true populations.

    ``eps_43``/``dep_3`` are the crosstalk signal fraction and F=3 depletion
    per reference probe pulse; ``clock_pi_efficiency`` is the shelving
    transfer probability of the averaged 1140 nm rotation (lifetime decay is
    carried separately by the decay matrix built from ``tau_c``).
    """

    eps_43: float = 0.015
    dep_3: float = 0.085
    clock_pi_efficiency: float = 1.0
    camera_floor: float = 20.0
    tau_c: float = 0.112
    branch_to_f4: float = 0.5
    probe_reference: float = 0.4e-3
    probe_duration: float = 0.4e-3
    dead_time: float = 4e-3
    clock_pi_time: float = 1e-3

    def __post_init__(self):
        for name in ("eps_43", "dep_3", "clock_pi_efficiency", "branch_to_f4"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.camera_floor < 0:
            raise ValueError("camera_floor must be >= 0")

    @property
    def readout_duration(self) -> float:
        """Total duration of the standard four-detection readout block."""
        return 4 * self.clock_pi_time + 4 * (self.probe_duration + self.dead_time)

    @property
    def decay_matrix(self) -> np.ndarray:
        """Population-flow matrix of metastable decay over the full block."""
        return decay_fraction_matrix(self.readout_duration, self.tau_c,
                                     metastable_branching_table(self.branch_to_f4))

    # ------------------------------------------------------------ persistence

    _FIELDS = ("eps_43", "dep_3", "clock_pi_efficiency", "camera_floor", "tau_c",
               "branch_to_f4", "probe_reference", "probe_duration", "dead_time",
               "clock_pi_time")

    def save(self, path) -> None:
        lines = ["# tmqubit readout calibration v1"]
        lines += [f"{name} = {getattr(self, name)!r}" for name in self._FIELDS]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "CrosstalkCalibration":
        values = {}
        with open(path) as fh:
            for raw_line in fh:
                line = raw_line.split("#", 1)[0].strip()
                if not line:
                    continue
                key, _, value = line.partition("=")
                key = key.strip()
                if key not in cls._FIELDS:
                    raise CalibrationError(f"unknown calibration field {key!r}")
                values[key] = float(value)
        return cls(**values)


# ------------------------------------------------------------- rate formulas


def pump_rate(calib: CrosstalkCalibration) -> float:
    """Constant repump rate P (1/s) implied by the reference depletion."""
    return -math.log(1.0 - calib.dep_3) / calib.probe_reference


def pump_depletion(tau: float, calib: CrosstalkCalibration) -> float:
    """F=3 fraction removed by a probe pulse of duration tau."""
    if tau <= 0:
        return 0.0
    return -math.expm1(-pump_rate(calib) * tau)


def probe_signal_scale(tau: float, calib: CrosstalkCalibration) -> float:
    """Integrated per-atom signal of a probe of length tau, in units of the
    reference-length probe (counts are converted to atom numbers with the
    reference normalization, so raw counts scale linearly with tau)."""
    return max(tau, 0.0) / calib.probe_reference


def _pumped_signal_integral(tau: float, p: float) -> float:
    """Integrated signal of atoms pumped into the bright state at rate p
    during the probe: int_0^tau (1 - e^{-p t}) dt; grows as p tau^2 / 2."""
    if tau <= 0:
        return 0.0
    x = p * tau
    if x < 1e-6:
        return 0.5 * p * tau * tau
    return tau - (1.0 - math.exp(-x)) / p


def crosstalk_fraction(tau: float, calib: CrosstalkCalibration) -> float:
    """Signal contributed per F=3 atom during an F=4 probe of length tau, in
    reference-probe atom-number units (parabolic growth for short pulses)."""
    if calib.eps_43 <= 0.0 or tau <= 0.0:
        return 0.0
    p = pump_rate(calib)
    kappa = calib.eps_43 / _pumped_signal_integral(calib.probe_reference, p)
    return kappa * _pumped_signal_integral(tau, p)


# ------------------------------------------------------------ decay transport


def decay_fraction_matrix(t: float, tau_c: float, branching) -> np.ndarray:
    """Exact population flow of metastable decay over time t (28x28).

    Column j holds the final distribution of population that started in
    state j; columns sum to one (the decay lands in tracked ground states).
    """
    m = np.eye(DIM)
    if t <= 0 or not math.isfinite(tau_c):
        return m
    surv = math.exp(-t / tau_c)
    for src, targets in branching.items():
        m[src, src] = surv
        for dst, w in targets:
            m[dst, src] += (1.0 - surv) * w
    return m


# --------------------------------------------------------- linear block model

# Aggregate bins of the linear model; ground manifolds split into the central
# sublevel and the mF != 0 remainder, which the probes cannot distinguish.
_BINS = ("n4x", "n40", "n3x", "n30", "m30", "m20")
_NB = len(_BINS)


_BIN_MEMBERS = {
    "n4x": [i for i in _G4 if i != _I_G40],
    "n40": [_I_G40],
    "n3x": [i for i in _G3 if i != _I_G30],
    "n30": [_I_G30],
    "m30": [_I_M30],
    "m20": [_I_M20],
}


def _aggregate_decay(dt: float, calib: CrosstalkCalibration) -> np.ndarray:
    """Decay flow on the aggregate bins; exact because every member of a
    ground background bin behaves identically under decay."""
    full = decay_fraction_matrix(dt, calib.tau_c,
                                 metastable_branching_table(calib.branch_to_f4))
    m = np.zeros((_NB, _NB))
    for cj, src_bin in enumerate(_BINS):
        src = _BIN_MEMBERS[src_bin][0]
        for ci, dst_bin in enumerate(_BINS):
            m[ci, cj] = full[_BIN_MEMBERS[dst_bin], src].sum()
    return m


def _swap(p: np.ndarray, i: int, j: int, eta: float) -> None:
    a, b = p[i], p[j]
    p[i] = (1 - eta) * a + eta * b
    p[j] = eta * a + (1 - eta) * b


def _forward_signals(p0: np.ndarray, calib: CrosstalkCalibration) -> np.ndarray:
    """Push a 6-bin population vector through the readout block; returns the
    four detected signals."""
    eta = calib.clock_pi_efficiency
    eps = crosstalk_fraction(calib.probe_duration, calib)
    dep = pump_depletion(calib.probe_duration, calib)
    d_pulse = _aggregate_decay(calib.clock_pi_time, calib)
    d_meas = _aggregate_decay(calib.probe_duration + calib.dead_time, calib)
    i4x, i40, i3x, i30, im30, im20 = range(6)

    p = p0.astype(float).copy()
    signals = []
    _swap(p, i40, im30, eta)
    p = d_pulse @ p
    _swap(p, i30, im20, eta)
    p = d_pulse @ p

    def measure_f4():
        s = p[i4x] + p[i40] + eps * (p[i3x] + p[i30])
        p[i4x] = p[i40] = 0.0
        p[i3x] *= 1.0 - dep
        p[i30] *= 1.0 - dep
        return s

    def measure_f3():
        s = p[i4x] + p[i40] + p[i3x] + p[i30]
        p[i4x] = p[i40] = p[i3x] = p[i30] = 0.0
        return s

    signals.append(measure_f4())
    p = d_meas @ p
    signals.append(measure_f3())
    p = d_meas @ p
    _swap(p, i40, im30, eta)
    p = d_pulse @ p
    _swap(p, i30, im20, eta)
    p = d_pulse @ p
    signals.append(measure_f4())
    p = d_meas @ p
    signals.append(measure_f3())
    return np.array(signals)


def forward_matrix(calib: CrosstalkCalibration) -> np.ndarray:
    """4x4 map from true populations [n4x, n40, n3x, n30] at readout start to
    the four raw counts [N4, N3, N4_mf0, N3_mf0]."""
    a = np.zeros((4, 4))
    for j in range(4):
        p0 = np.zeros(_NB)
        p0[j] = 1.0
        a[:, j] = _forward_signals(p0, calib)
    return a


def simulate_readout(populations, calib: CrosstalkCalibration,
                     rng: np.random.Generator | None = None) -> dict:
    """Forward model: raw counts from true populations at readout start.

    ``populations`` is either a 4-sequence [n4x, n40, n3x, n30] in atoms or
    an object with ``rho``/``n0`` attributes (an ensemble state), whose
    metastable content is assumed empty at this point.
    """
    if hasattr(populations, "rho"):
        rho, n0 = populations.rho, populations.n0
        diag = rho.diagonal().real
        vec = np.array([
            diag[[i for i in _G4 if i != _I_G40]].sum(),
            diag[_I_G40],
            diag[[i for i in _G3 if i != _I_G30]].sum(),
            diag[_I_G30],
        ]) * n0
    else:
        vec = np.asarray(populations, dtype=float)
    raw = forward_matrix(calib) @ vec
    if rng is not None and calib.camera_floor > 0:
        raw = raw + rng.normal(0.0, calib.camera_floor, size=4)
    return dict(zip(READOUT_LABELS, raw))


def calibrate(raw, calib: CrosstalkCalibration) -> dict:
    """Invert the linear readout model.

    Returns the recovered true populations keyed like the raw counts:
    ``N4``/``N3`` are the mF != 0 backgrounds, ``N4_mf0``/``N3_mf0`` the
    central sublevels, all referred to the start of the readout block.
    """
    if isinstance(raw, dict):
        vec = np.array([raw[label] for label in READOUT_LABELS], dtype=float)
    else:
        vec = np.asarray(raw, dtype=float)
    a = forward_matrix(calib)
    if abs(np.linalg.det(a)) < 1e-12:
        raise CalibrationError("singular calibration matrix")
    n4x, n40, n3x, n30 = np.linalg.solve(a, vec)
    return {"N4": float(n4x), "N3": float(n3x),
            "N4_mf0": float(n40), "N3_mf0": float(n30)}
