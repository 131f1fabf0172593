"""Scenario description: geometry, radio constants and service requirements.

A scenario is built from a JSON key/value tree. Missing keys fall back to the
``paper-default`` preset shipped in ``cfisac/data``. Powers are stored in watts
and all ratios linear; ``*_dbm`` and ``*_db`` keys in the document are
converted on load.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .channel import UmiParams
from .energy import PowerModelParams
from .rng import substream

PRESETS = {"paper-default": "paper-default.json"}

RX_RING_RADIUS = 50.0
MIN_SEPARATION = 1e-9


class ScenarioError(ValueError):
    """Config parse failure or invariant violation."""

    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = violations or []


@dataclass(frozen=True)
class RadioConfig:
    carrier_frequency: float = 1.9e9
    bandwidth: float = 2.0e5
    noise_power: float = 10 ** (-114 / 10) * 1e-3
    pilot_length: int = 10
    num_tx_aps: int = 16
    num_rx_aps: int = 2
    antennas_per_ap: int = 4
    num_ues: int = 8
    max_tx_power: float = 0.1
    pilot_power: float = 0.05
    rzf_regularization: float | None = None  # None means the noise power
    rcs_variance: float = 1.0
    clutter_scaling: float = 0.3

    @property
    def wavelength(self) -> float:
        return 299_792_458.0 / self.carrier_frequency

    @property
    def delta(self) -> float:
        return self.noise_power if self.rzf_regularization is None else self.rzf_regularization


@dataclass(frozen=True)
class UrllcRequirement:
    packet_bits: int = 256
    dep_threshold: float = 1e-5
    delay_threshold: float = 1e-3


@dataclass(frozen=True)
class SensingRequirement:
    sinr_threshold: float = 1.0
    refresh_rate_threshold: float = 10.0
    false_alarm_prob: float = 0.03


@dataclass(frozen=True, eq=False)
class Geometry:
    """AP, UE and target coordinates in meters, each row ``(x, y, z)``."""

    tx_ap_positions: np.ndarray
    rx_ap_positions: np.ndarray
    ue_positions: np.ndarray
    target_position: np.ndarray
    area_side: float = 500.0

    def __post_init__(self):
        for name in ("tx_ap_positions", "rx_ap_positions", "ue_positions", "target_position"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __eq__(self, other):
        if not isinstance(other, Geometry):
            return NotImplemented
        return self.area_side == other.area_side and all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n in ("tx_ap_positions", "rx_ap_positions", "ue_positions", "target_position"))

    __hash__ = None


@dataclass(frozen=True)
class Scenario:
    radio: RadioConfig
    urllc: tuple[UrllcRequirement, ...]
    sensing: SensingRequirement
    geometry: Geometry
    power_model: PowerModelParams = field(default_factory=PowerModelParams)
    master_seed: int = 42
    drop: int = 0
    channel_model: UmiParams = field(default_factory=UmiParams)

    @property
    def M(self) -> int:
        return self.radio.antennas_per_ap

    @property
    def N_tx(self) -> int:
        return self.radio.num_tx_aps

    @property
    def N_rx(self) -> int:
        return self.radio.num_rx_aps

    @property
    def N_ue(self) -> int:
        return self.radio.num_ues

    @property
    def sigma2(self) -> float:
        return self.radio.noise_power


def direction(src, dst) -> tuple[float, float, float]:
    """Azimuth, elevation (radians) and 3D distance of ``dst`` seen from ``src``."""
    d = np.asarray(dst, dtype=float) - np.asarray(src, dtype=float)
    horiz = math.hypot(d[0], d[1])
    return math.atan2(d[1], d[0]), math.atan2(d[2], horiz), math.sqrt(horiz ** 2 + d[2] ** 2)


def grid_positions(n: int, side: float) -> np.ndarray:
    """Cell centres of the smallest near-square grid holding ``n`` points."""
    cols = int(math.ceil(math.sqrt(n)))
    rows = int(math.ceil(n / cols))
    xs = (np.arange(cols) + 0.5) * side / cols
    ys = (np.arange(rows) + 0.5) * side / rows
    pts = [(x, y) for y in ys for x in xs]
    return np.array(pts[:n], dtype=float)


def ring_positions(n: int, center: np.ndarray, radius: float = RX_RING_RADIUS) -> np.ndarray:
    """``n`` points on a circle, the first at the western side."""
    ang = math.pi + 2 * math.pi * np.arange(n) / n
    return np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])


def load_preset(name: str) -> dict:
    try:
        fname = PRESETS[name]
    except KeyError:
        raise ScenarioError(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None
    text = resources.files("cfisac").joinpath("data").joinpath(fname).read_text()
    return json.loads(text)


def load_channel_model(path: str | Path | None = None) -> UmiParams:
    if path is None:
        text = resources.files("cfisac").joinpath("data").joinpath("umi.json").read_text()
    else:
        text = Path(path).read_text()
    return UmiParams.from_dict(json.loads(text))


def deep_merge(base: dict, override: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(document: str | Path | Mapping | None = None) -> dict:
    """Parse a config document and fill gaps from its preset.

    ``document`` may be a mapping, a JSON string, a file path or a preset name.
    The key ``"preset"`` selects the base (default ``paper-default``).
    """
    if document is None:
        doc: dict = {}
    elif isinstance(document, Mapping):
        doc = dict(document)
    else:
        text = str(document)
        if text in PRESETS:
            doc = {"preset": text}
        elif text.lstrip().startswith("{"):
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as e:
                raise ScenarioError(f"config parse failure: {e}") from e
        else:
            p = Path(text)
            if not p.exists():
                raise ScenarioError(f"config file not found: {p}")
            try:
                doc = json.loads(p.read_text())
            except json.JSONDecodeError as e:
                raise ScenarioError(f"config parse failure in {p}: {e}") from e
    if not isinstance(doc, dict):
        raise ScenarioError("config root must be an object")
    base = load_preset(doc.get("preset", "paper-default"))
    return deep_merge(base, {k: v for k, v in doc.items() if k != "preset"})


def _num(tree: Mapping, key: str, path: str, kind=float):
    v = tree[key]
    try:
        if kind is int:
            if isinstance(v, bool) or float(v) != int(v):
                raise ValueError
            return int(v)
        return float(v)
    except (TypeError, ValueError):
        raise ScenarioError(f"{path}.{key}: expected a number, got {v!r}") from None


def _radio(tree: Mapping) -> RadioConfig:
    t = dict(tree)
    if "noise_power" in t and t["noise_power"] is not None:
        noise = _num(t, "noise_power", "radio")
    else:
        noise = 10 ** (_num(t, "noise_power_dbm", "radio") / 10) * 1e-3
    reg = t.get("rzf_regularization")
    ints = ("pilot_length", "num_tx_aps", "num_rx_aps", "antennas_per_ap", "num_ues")
    floats = ("carrier_frequency", "bandwidth", "max_tx_power", "pilot_power",
              "rcs_variance", "clutter_scaling")
    kw: dict[str, Any] = {k: _num(t, k, "radio", int) for k in ints}
    kw.update({k: _num(t, k, "radio") for k in floats})
    return RadioConfig(noise_power=noise, rzf_regularization=None if reg is None else float(reg), **kw)


def _urllc(tree, n_ue: int) -> tuple[UrllcRequirement, ...]:
    items = tree if isinstance(tree, list) else [tree] * n_ue
    out = []
    for i, t in enumerate(items):
        out.append(UrllcRequirement(
            packet_bits=_num(t, "packet_bits", f"urllc[{i}]", int),
            dep_threshold=_num(t, "dep_threshold", f"urllc[{i}]"),
            delay_threshold=_num(t, "delay_threshold", f"urllc[{i}]"),
        ))
    return tuple(out)


def _sensing(t: Mapping) -> SensingRequirement:
    if t.get("sinr_threshold") is not None:
        gamma = _num(t, "sinr_threshold", "sensing")
    else:
        gamma = 10 ** (_num(t, "sinr_threshold_db", "sensing") / 10)
    return SensingRequirement(
        sinr_threshold=gamma,
        refresh_rate_threshold=_num(t, "refresh_rate_threshold", "sensing"),
        false_alarm_prob=_num(t, "false_alarm_prob", "sensing"),
    )


def _power_model(t: Mapping, M: int) -> PowerModelParams:
    per_ant = t.get("ap_static_per_antenna")
    p_tx = t.get("p_ap0_tx", None if per_ant is None else per_ant * M)
    p_rx = t.get("p_ap0_rx", None if per_ant is None else per_ant * M)
    kw = {k: float(t[k]) for k in ("delta_tr", "p_fixed", "p_cloud0_proc", "delta_cloud_proc",
                                   "sigma_cool", "c_max")}
    if p_tx is None or p_rx is None:
        raise ScenarioError("power_model: need p_ap0_tx/p_ap0_rx or ap_static_per_antenna")
    return PowerModelParams(p_ap0_tx=float(p_tx), p_ap0_rx=float(p_rx), **kw)


def _with_height(pts, h: float, path: str) -> np.ndarray:
    arr = np.asarray(pts, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise ScenarioError(f"{path}: expected 2D or 3D coordinates")
    if arr.shape[1] == 2:
        arr = np.column_stack([arr, np.full(len(arr), h)])
    return arr


def _geometry(t: Mapping, radio: RadioConfig, seed: int, drop: int) -> Geometry:
    side = float(t["area_side"])
    h_ap, h_ue, h_tg = float(t["ap_height"]), float(t["ue_height"]), float(t["target_height"])
    center = np.array([side / 2, side / 2])
    placement = t.get("tx_placement", "grid")
    if t.get("tx_ap_positions") is not None:
        tx = _with_height(t["tx_ap_positions"], h_ap, "geometry.tx_ap_positions")
    elif placement == "grid":
        tx = _with_height(grid_positions(radio.num_tx_aps, side), h_ap, "")
    elif placement == "random":
        rng = substream(seed, "ap_positions", drop=drop)
        tx = _with_height(rng.uniform(0, side, size=(radio.num_tx_aps, 2)), h_ap, "")
    else:
        raise ScenarioError(f"geometry.tx_placement: unknown placement {placement!r}")
    if t.get("rx_ap_positions") is not None:
        rx = _with_height(t["rx_ap_positions"], h_ap, "geometry.rx_ap_positions")
    else:
        rx = _with_height(ring_positions(radio.num_rx_aps, center), h_ap, "")
    if t.get("ue_positions") is not None:
        ue = _with_height(t["ue_positions"], h_ue, "geometry.ue_positions")
    else:
        rng = substream(seed, "ue_positions", drop=drop)
        ue = _with_height(rng.uniform(0, side, size=(radio.num_ues, 2)), h_ue, "")
    target = t.get("target_position")
    tg = _with_height(center if target is None else target, h_tg, "geometry.target_position")[0]
    return Geometry(tx, rx, ue, tg, side)


def build_scenario(document: str | Path | Mapping | None = None, *, master_seed: int | None = None,
                   drop: int = 0, channel_model: UmiParams | None = None) -> Scenario:
    """Build and validate a :class:`Scenario`.

    Raises
    ------
    ScenarioError
        On a parse failure or when :func:`validate` reports violations.
    """
    cfg = load_config(document)
    try:
        seed = int(cfg.get("master_seed", 42) if master_seed is None else master_seed)
        radio = _radio(cfg["radio"])
        urllc = _urllc(cfg["urllc"], radio.num_ues)
        sensing = _sensing(cfg["sensing"])
        pm = _power_model(cfg["power_model"], radio.antennas_per_ap)
        geom = _geometry(cfg["geometry"], radio, seed, drop)
    except KeyError as e:
        raise ScenarioError(f"missing config field {e}") from None
    if channel_model is None:
        cm = cfg.get("channel_model")
        channel_model = load_channel_model(cm) if isinstance(cm, str) else (
            UmiParams.from_dict(cm) if isinstance(cm, Mapping) else load_channel_model())
    sc = Scenario(radio, urllc, sensing, geom, pm, seed, drop, channel_model)
    problems = validate(sc)
    if problems:
        raise ScenarioError("invalid scenario: " + "; ".join(problems), problems)
    return sc


def _positive(out: list, path: str, v, strict=True):
    ok = np.isfinite(v) and (v > 0 if strict else v >= 0)
    if not ok:
        out.append(f"{path}: must be {'positive' if strict else 'nonnegative'} (got {v})")


def validate(scenario: Scenario) -> list[str]:
    """List every violated invariant as ``"field.path: rule"``; never raises."""
    out: list[str] = []
    try:
        r = scenario.radio
        for name in ("carrier_frequency", "bandwidth", "noise_power", "max_tx_power", "pilot_power"):
            _positive(out, f"radio.{name}", getattr(r, name))
        for name in ("pilot_length", "num_tx_aps", "num_rx_aps", "antennas_per_ap", "num_ues"):
            v = getattr(r, name)
            if not (isinstance(v, (int, np.integer)) and v >= 1):
                out.append(f"radio.{name}: must be an integer >= 1 (got {v})")
        if r.rzf_regularization is not None:
            _positive(out, "radio.rzf_regularization", r.rzf_regularization)
        _positive(out, "radio.rcs_variance", r.rcs_variance, strict=False)
        if not (0 < r.clutter_scaling <= 1):
            out.append(f"radio.clutter_scaling: must lie in (0, 1] (got {r.clutter_scaling})")
        if isinstance(r.num_ues, int) and isinstance(r.pilot_length, int) and r.pilot_length < r.num_ues:
            out.append(f"radio.pilot_length: orthogonal pilots need L_p >= N_ue "
                       f"(got L_p={r.pilot_length}, N_ue={r.num_ues})")
        if len(scenario.urllc) != r.num_ues:
            out.append(f"urllc: expected {r.num_ues} entries (got {len(scenario.urllc)})")
        for i, u in enumerate(scenario.urllc):
            if not u.packet_bits >= 1:
                out.append(f"urllc[{i}].packet_bits: must be >= 1 (got {u.packet_bits})")
            if not 0 < u.dep_threshold < 0.5:
                out.append(f"urllc[{i}].dep_threshold: must lie in (0, 0.5) (got {u.dep_threshold})")
            _positive(out, f"urllc[{i}].delay_threshold", u.delay_threshold)
        s = scenario.sensing
        _positive(out, "sensing.sinr_threshold", s.sinr_threshold)
        _positive(out, "sensing.refresh_rate_threshold", s.refresh_rate_threshold)
        if not 0 < s.false_alarm_prob < 1:
            out.append(f"sensing.false_alarm_prob: must lie in (0, 1) (got {s.false_alarm_prob})")
        out.extend(scenario.power_model.violations())
        out.extend(_geometry_violations(scenario.geometry, r))
    except Exception as e:  # validation reports, it does not throw
        out.append(f"scenario: could not be checked ({e})")
    return out


def _geometry_violations(g: Geometry, r: RadioConfig) -> list[str]:
    out = []
    _positive(out, "geometry.area_side", g.area_side)
    counts = {"tx_ap_positions": r.num_tx_aps, "rx_ap_positions": r.num_rx_aps,
              "ue_positions": r.num_ues}
    for name, n in counts.items():
        arr = getattr(g, name)
        if arr.shape != (n, 3):
            out.append(f"geometry.{name}: expected {n} points (got {arr.shape[0]})")
    for name in ("tx_ap_positions", "rx_ap_positions", "ue_positions"):
        arr = getattr(g, name)
        bad = np.flatnonzero(np.any((arr[:, :2] < 0) | (arr[:, :2] > g.area_side), axis=1))
        for j in bad:
            out.append(f"geometry.{name}[{j}]: outside the {g.area_side} m area")
    t = g.target_position
    if np.any(t[:2] < 0) or np.any(t[:2] > g.area_side):
        out.append("geometry.target_position: outside the area")
    for name in ("tx_ap_positions", "rx_ap_positions"):
        d = np.hypot(*(getattr(g, name)[:, :2] - t[:2]).T)
        for j in np.flatnonzero(d < MIN_SEPARATION):
            out.append(f"geometry.target_position: coincides with {name}[{j}]")
    return out
