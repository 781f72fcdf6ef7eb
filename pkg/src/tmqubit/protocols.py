"""Named experiment protocols: complete schedules ending in the readout block.

Each protocol maps a handful of scalar parameters onto a validated Schedule,
so the batch front end and the figure runners can scan any parameter by
rebuilding the schedule per scan point.
"""

from __future__ import annotations

from .readout import READOUT_LABELS, ReadoutRecord
from .schedule import (
    BuilderConfig,
    Measure,
    Schedule,
    ScheduleMetadata,
    Wait,
    build_clock_coherence,
    build_cp,
    build_rabi_scan,
    build_ramsey,
    build_shelving_readout,
    build_state_prep,
)

__all__ = ["PROTOCOLS", "build_protocol", "builder_config_from_params",
           "record_quantity", "QUANTITIES"]

_BUILDER_KEYS = (
    "bias_field", "mw_pi_time", "clock_pi_time", "rf_sweep_time", "rf_f_start",
    "rf_f_stop", "clean_time", "clean_s", "clean_detuning", "probe_duration",
    "probe_s", "dead_time", "prep_theta",
)


def builder_config_from_params(params: dict) -> BuilderConfig:
    kwargs = {k: params[k] for k in _BUILDER_KEYS if k in params}
    return BuilderConfig(**kwargs)


def _with_readout(core: Schedule, cfg: BuilderConfig, initial: str) -> Schedule:
    full = core.followed_by(build_shelving_readout(cfg))
    meta = full.metadata
    if meta.initial_state is None:
        import dataclasses

        meta = dataclasses.replace(meta, initial_state=initial)
    return Schedule(full.events, meta)


def _ramsey(cfg: BuilderConfig, params: dict) -> Schedule:
    core = build_ramsey(params.get("t", 0.08), params.get("detuning", 0.0), cfg)
    return _with_readout(core, cfg, "g30")


def _cp(cfg: BuilderConfig, params: dict) -> Schedule:
    core = build_cp(int(params.get("n", 1)), params.get("t", 1.0),
                    params.get("detuning", 0.0), cfg)
    return _with_readout(core, cfg, "g40")


def _rabi(cfg: BuilderConfig, params: dict) -> Schedule:
    core = build_rabi_scan(params.get("t", 2e-3), params.get("detuning", 0.0), cfg)
    return _with_readout(core, cfg, "g30")


def _lifetime(cfg: BuilderConfig, params: dict) -> Schedule:
    state = str(params.get("state", "g30"))
    core = Schedule((Wait(params.get("t", 1.0)),),
                    ScheduleMetadata(name="lifetime", bias_field=cfg.bias_field,
                                     initial_state=state,
                                     scan_vars=(("t", params.get("t", 1.0)),)))
    return _with_readout(core, cfg, state)


def _prep(cfg: BuilderConfig, params: dict) -> Schedule:
    core = build_state_prep(cfg, theta=params.get("theta", cfg.prep_theta))
    return _with_readout(core, cfg, "g4m4")


def _clock_coherence(cfg: BuilderConfig, params: dict) -> Schedule:
    return build_clock_coherence(str(params.get("mode", "double")),
                                 params.get("t", 0.05), cfg)


def _clock_rabi(cfg: BuilderConfig, params: dict) -> Schedule:
    sched = build_shelving_readout(cfg, first_pulse_duration=params.get("t", 1e-3))
    import dataclasses

    meta = dataclasses.replace(sched.metadata, name="clock_rabi",
                               initial_state="g40",
                               scan_vars=(("t", params.get("t", 1e-3)),))
    return Schedule(sched.events, meta)


def _probe_scan(cfg: BuilderConfig, params: dict) -> Schedule:
    # t scans the first probe length; the second probe stays at the
    # reference length so only the first pulse's back-action is measured
    tau = params.get("t", cfg.probe_duration)
    events = (
        Measure(label="N4", target_F=4, probe_duration=tau,
                dead_time=cfg.dead_time, s=cfg.probe_s),
        Measure(label="N3", target_F=3, probe_duration=cfg.probe_duration,
                dead_time=cfg.dead_time, s=cfg.probe_s),
    )
    meta = ScheduleMetadata(name="probe_scan", bias_field=cfg.bias_field,
                            initial_state="g30",
                            scan_vars=(("t", tau),))
    return Schedule(events, meta)


PROTOCOLS = {
    "ramsey": _ramsey,
    "cp": _cp,
    "rabi": _rabi,
    "lifetime": _lifetime,
    "prep": _prep,
    "clock_coherence": _clock_coherence,
    "clock_rabi": _clock_rabi,
    "probe_scan": _probe_scan,
}


def build_protocol(name: str, params: dict | None = None) -> Schedule:
    """Build a named protocol; unknown names raise KeyError listing options."""
    if name not in PROTOCOLS:
        raise KeyError(f"unknown schedule name {name!r}; "
                       f"choose from {', '.join(sorted(PROTOCOLS))}")
    params = dict(params or {})
    cfg = builder_config_from_params(params)
    return PROTOCOLS[name](cfg, params)


QUANTITIES = ("eta4", "eta3", "total", "N4", "N3", "N4_mf0", "N3_mf0")


def record_quantity(record: ReadoutRecord, quantity: str) -> float:
    """Scalar observable of one shot, from calibrated counts when available."""
    src = record.calibrated if record.calibrated else record.raw
    if quantity in ("eta4", "eta3"):
        n40, n30 = src["N4_mf0"], src["N3_mf0"]
        eta4 = n40 / (n40 + n30)
        return eta4 if quantity == "eta4" else 1.0 - eta4
    if quantity == "total":
        return float(sum(src[label] for label in READOUT_LABELS if label in src))
    if quantity in src:
        return float(src[quantity])
    raise KeyError(f"quantity {quantity!r} not available; have {sorted(src)}")
