"""
Small-signal analysis of the closed system.

- numerical linearization (central differences of the simulator right-hand side)
- eigenvalues, mode shapes and mode classification
- beta sweeps with nearest-neighbour mode tracking
- the stabilizer loop transfer function H(jw) and its delayed form
- gamma coefficients of the output row and their ratio classes
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy import linalg
from tqdm import tqdm

from backend.Common import config
from backend.Common.errors import EigenSolveError, InputError, NonEquilibriumError, UndefinedRatioError
from backend.Models.generalized_pss import PssConfig, uncompensated_config
from backend.Models.grid_model import NetworkCase
from backend.Models.wams_channel import WamsConfig
from backend.sim_engine import DynamicSystem, initialize

logger = logging.getLogger(__name__)

EQUILIBRIUM_TOL = 1e-7
PERTURBATION = 1e-6
LINEARIZE_NETWORK_TOL = 1e-11
RESIDUAL_LIMIT = 1e-8
ELECTROMECHANICAL_BAND = (0.1, 3.0)
IN_PHASE_DEG = 30.0
SHAPE_SIGNIFICANCE = 0.1
AREA_SIGNIFICANCE = 0.3

MODE_CLASSES = ("frequency_regulation", "inter_area", "local", "control", "other")


@dataclass
class LinearModel:
    a_matrix: np.ndarray
    b_p: Optional[np.ndarray]
    c_nu: Optional[np.ndarray]
    state_labels: List[str]
    speed_index: np.ndarray
    machine_ids: List[int]
    machine_areas: List[int]
    studied_unit: Optional[int] = None
    sensor_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta1: float = 0.0
    beta2: float = 0.0
    local_speed_index: Optional[int] = None


@dataclass
class ModalResult:
    eigenvalue: complex
    frequency: float
    damping_ratio: float
    mode_shape: np.ndarray
    classification: str = "other"
    machine_ids: List[int] = field(default_factory=list)
    machine_areas: List[int] = field(default_factory=list)
    residual: float = 0.0
    vector: Optional[np.ndarray] = None

    def to_dict(self):
        return {
            "real": float(self.eigenvalue.real),
            "imag": float(self.eigenvalue.imag),
            "frequency_hz": self.frequency,
            "damping_ratio": self.damping_ratio,
            "classification": self.classification,
            "mode_shape": [{"machine": gid, "magnitude": float(abs(s)), "phase_deg": float(np.degrees(np.angle(s)))}
                           for gid, s in zip(self.machine_ids, self.mode_shape)],
        }


@dataclass(frozen=True)
class ResponsePoint:
    omega_rad: float
    gain_db: float
    phase_deg: float
    complex_value: complex

    @classmethod
    def from_complex(cls, omega_rad, value):
        magnitude = abs(value)
        gain = 20.0 * np.log10(magnitude) if magnitude > 0 else -np.inf
        return cls(float(omega_rad), float(gain), float(np.degrees(np.angle(value))), complex(value))

    @property
    def freq_hz(self):
        return self.omega_rad / (2.0 * np.pi)


def log_frequency_grid(f_min=0.01, f_max=10.0, points=400):
    """Logarithmic grid in rad/s."""
    return 2.0 * np.pi * np.logspace(np.log10(f_min), np.log10(f_max), points)


# -----------------------------------------------------------------------------
# Linearization
# -----------------------------------------------------------------------------

def linearize(system: DynamicSystem, operating_point=None, perturbation=PERTURBATION, studied_unit=None):
    """
    Central-difference state matrix of the closed system.

    Args:
        system: initialized DynamicSystem (continuous sensor path is used)
        operating_point: state vector, defaults to system.x0
        perturbation: absolute step on every state
        studied_unit: generator whose stabilizer loop is opened; adds B_p
            (input to its filter chain) and C_nu (y = -nu)

    Raises:
        NonEquilibriumError: derivative norm above 1e-7 at the operating point
    """
    x0 = np.array(system.x0 if operating_point is None else operating_point, dtype=float)
    u0 = None
    unit = None
    if studied_unit is not None:
        unit = next((u for u in system.pss_units if u.gen_id == studied_unit), None)
        if unit is None:
            raise InputError(f"Generator {studied_unit} carries no stabilizer. "
                             f"Available: {[u.gen_id for u in system.pss_units]}")
        u0 = {studied_unit: 0.0}

    saved_tol = system.network_tol
    system.network_tol = LINEARIZE_NETWORK_TOL
    try:
        residual = system.derivatives(x0, u_open=u0)
        worst = int(np.argmax(np.abs(residual)))
        if abs(residual[worst]) > EQUILIBRIUM_TOL:
            raise NonEquilibriumError(f"not an equilibrium: d{system.labels[worst]}/dt = {residual[worst]:.3e}",
                                      residual=float(abs(residual[worst])), state_label=system.labels[worst])
        n = x0.size
        a = np.empty((n, n))
        for j in range(n):
            xp = x0.copy()
            xm = x0.copy()
            xp[j] += perturbation
            xm[j] -= perturbation
            a[:, j] = (system.derivatives(xp, u_open=u0) - system.derivatives(xm, u_open=u0)) / (2.0 * perturbation)
        b = None
        if studied_unit is not None:
            b = (system.derivatives(x0, u_open={studied_unit: perturbation})
                 - system.derivatives(x0, u_open={studied_unit: -perturbation})) / (2.0 * perturbation)
    finally:
        system.network_tol = saved_tol

    online = np.flatnonzero(system.online)
    model = LinearModel(
        a_matrix=a, b_p=b, c_nu=None, state_labels=list(system.labels),
        speed_index=system.i_omega[online],
        machine_ids=[system.gen_ids[m] for m in online],
        machine_areas=[int(system.area[m]) for m in online],
        studied_unit=studied_unit,
    )
    if unit is not None:
        _attach_output_row(model, system, unit)
    logger.debug(f"linearized {n} states (studied unit {studied_unit})")
    return model


def _attach_output_row(model: LinearModel, system: DynamicSystem, unit):
    """y = -nu: -beta1 on the local speed, gamma_k on the sensor frequencies."""
    cfg = unit.cfg
    c = np.zeros(len(system.labels))
    local = int(system.i_omega[unit.pos])
    c[local] = -cfg.beta1
    if system.coi_source == "sensors":
        gamma = system.sensor_weights * (cfg.beta1 - cfg.beta2) / system.f0
        c[system.i_freq] += gamma
        model.sensor_index = system.i_freq.copy()
        model.gamma = gamma
    else:
        live = np.flatnonzero(system.online)
        share = system.h[live] / system.h[live].sum()
        c[system.i_omega[live]] += (cfg.beta1 - cfg.beta2) * share
    model.c_nu = c
    model.beta1, model.beta2 = cfg.beta1, cfg.beta2
    model.local_speed_index = local


# -----------------------------------------------------------------------------
# Eigen-analysis
# -----------------------------------------------------------------------------

def eigensolve(model: LinearModel):
    """
    All eigenpairs of A, sorted by descending real part.

    Raises:
        EigenSolveError: non-finite matrix, LAPACK failure, or a residual
            ||Av - lv|| / ||v|| above 1e-8
    """
    a = model.a_matrix
    if not np.all(np.isfinite(a)):
        raise EigenSolveError("state matrix has non-finite entries")
    try:
        values, vectors = linalg.eig(a)
    except (linalg.LinAlgError, ValueError) as e:
        cond = float(np.linalg.cond(a))
        raise EigenSolveError(f"eigensolver failed: {e} (condition estimate {cond:.3e})", condition=cond)

    order = np.lexsort((values.imag, -values.real))
    results = []
    for i in order:
        lam, v = values[i], vectors[:, i]
        residual = float(np.linalg.norm(a @ v - lam * v) / np.linalg.norm(v))
        if residual > RESIDUAL_LIMIT:
            cond = float(np.linalg.cond(a))
            raise EigenSolveError(f"eigenpair residual {residual:.3e} at {lam:.4f} (condition {cond:.3e})",
                                  condition=cond)
        shape = v[model.speed_index] if len(model.speed_index) else np.zeros(0, dtype=complex)
        if shape.size and np.max(np.abs(shape)) > 0:
            shape = shape / shape[int(np.argmax(np.abs(shape)))]
        magnitude = abs(lam)
        results.append(ModalResult(
            eigenvalue=complex(lam),
            frequency=float(abs(lam.imag) / (2.0 * np.pi)),
            damping_ratio=float(-lam.real / magnitude) if magnitude > 0 else 1.0,
            mode_shape=shape,
            machine_ids=list(model.machine_ids),
            machine_areas=list(model.machine_areas),
            residual=residual,
            vector=v,
        ))
    return results


def phase_spread(shape, significance=SHAPE_SIGNIFICANCE):
    """Largest pairwise phase difference (deg) among the components of at least ``significance``."""
    shape = np.asarray(shape, dtype=complex)
    parts = shape[np.abs(shape) >= significance]
    if parts.size < 2:
        return 0.0
    diff = np.angle(parts[:, None] * np.conj(parts[None, :]))
    return float(np.degrees(np.max(np.abs(diff))))


def _classify(result: ModalResult):
    if result.frequency < 1e-6:
        return "other"
    shape = result.mode_shape
    if shape.size == 0:
        return "control"
    in_phase = phase_spread(shape) <= IN_PHASE_DEG
    lo, hi = ELECTROMECHANICAL_BAND
    if result.frequency < lo:
        return "frequency_regulation" if in_phase else "control"
    if result.frequency > hi:
        return "control"
    areas = np.asarray(result.machine_areas)
    sums = [shape[areas == a].sum() for a in sorted(set(result.machine_areas))]
    strong = [s for s in sums if abs(s) >= AREA_SIGNIFICANCE]
    for i in range(len(strong)):
        for j in range(i + 1, len(strong)):
            if (strong[i] * np.conj(strong[j])).real < 0:
                return "inter_area"
    return "local"


def classify_modes(results: List[ModalResult]):
    """Annotate each mode in place and return the list."""
    for r in results:
        r.classification = _classify(r)
    return results


def find_mode(results, classification):
    """Least damped oscillatory mode (Im > 0) with the given class, or None."""
    candidates = [r for r in results if r.classification == classification and r.eigenvalue.imag > 0]
    return max(candidates, key=lambda r: r.eigenvalue.real) if candidates else None


def mode_shapes(results, classes=("inter_area", "frequency_regulation")):
    report = {}
    for cls in classes:
        mode = find_mode(results, cls)
        if mode is not None:
            report[cls] = mode.to_dict()
    return report


# -----------------------------------------------------------------------------
# Beta sweeps
# -----------------------------------------------------------------------------

@dataclass
class SweepResult:
    param: str
    grid: List[float]
    fixed_other: float
    gain_k: float
    points: List[List[ModalResult]]
    tracks: Dict[str, dict]

    def to_dict(self):
        return {
            "param": self.param,
            "grid": list(self.grid),
            "fixed_other": self.fixed_other,
            "gain_k": self.gain_k,
            "points": [[r.to_dict() for r in modes if r.eigenvalue.imag >= 0] for modes in self.points],
            "tracks": {
                name: {
                    "label": tr["label"],
                    "values": [None if v is None else {"real": v.real, "imag": v.imag} for v in tr["values"]],
                    "ambiguous": tr["ambiguous"],
                }
                for name, tr in self.tracks.items()
            },
        }

    def track_of(self, label):
        for tr in self.tracks.values():
            if tr["label"] == label:
                return tr
        return None


def modal_point(case: NetworkCase, beta1, beta2, gain_k, units=None, template: PssConfig = None,
                wams: WamsConfig = None):
    """Initialize, linearize and classify one (beta1, beta2) tuning applied to ``units``."""
    template = template or PssConfig()
    units = [g.id for g in case.online_generators()] if units is None else list(units)
    cfg = template.model_copy(update={"beta1": beta1, "beta2": beta2, "gain_k": gain_k})
    system = initialize(case, pss={u: cfg for u in units}, wams=wams)
    return classify_modes(eigensolve(linearize(system)))


def track_modes(points: List[List[ModalResult]]):
    """
    Nearest-neighbour continuation of the oscillatory electromechanical
    modes of the first grid point. A step is flagged (value None) when the
    nearest eigenvalue lies beyond half the distance from the previous value
    to its closest neighbour, or when two tracks claim the same eigenvalue.
    """
    if not points:
        return {}
    tracks = {}
    counters = {}
    for r in points[0]:
        if r.eigenvalue.imag > 0 and r.classification in ("inter_area", "local", "frequency_regulation"):
            counters[r.classification] = counters.get(r.classification, 0) + 1
            name = f"{r.classification}_{counters[r.classification]}"
            tracks[name] = {"label": r.classification, "values": [r.eigenvalue], "ambiguous": [False],
                            "last": r.eigenvalue, "last_point": 0}

    for p in range(1, len(points)):
        current = np.array([r.eigenvalue for r in points[p]])
        claims = {}
        for name, tr in tracks.items():
            prev_values = np.array([r.eigenvalue for r in points[tr["last_point"]]])
            others = np.abs(prev_values - tr["last"])
            others = others[others > 1e-12]
            radius = 0.5 * float(others.min()) if others.size else np.inf
            dist = np.abs(current - tr["last"])
            k = int(np.argmin(dist))
            if dist[k] > radius:
                claims[name] = None
            else:
                claims[name] = k
        taken = {}
        for name, k in claims.items():
            if k is not None:
                taken.setdefault(k, []).append(name)
        for name, tr in tracks.items():
            k = claims[name]
            if k is None or len(taken[k]) > 1:
                tr["values"].append(None)
                tr["ambiguous"].append(True)
                logger.warning(f"mode track {name} ambiguous at grid point {p}")
            else:
                tr["values"].append(complex(current[k]))
                tr["ambiguous"].append(False)
                tr["last"], tr["last_point"] = complex(current[k]), p

    for tr in tracks.values():
        tr.pop("last")
        tr.pop("last_point")
    return tracks


def beta_sweep(case: NetworkCase, sweep_param, grid, fixed_other=0.0, gain_k=25.0, units=None,
               template: PssConfig = None, wams: WamsConfig = None, max_workers=None):
    """
    Sweep beta1 or beta2 for all stabilizers in unison and track the modes.

    Grid points are independent and run on a thread pool; results are merged
    by index.
    """
    if sweep_param not in ("beta1", "beta2"):
        raise InputError(f"Unknown sweep parameter: {sweep_param}. Available: ['beta1', 'beta2']")
    grid = [float(v) for v in grid]
    for v in grid + [fixed_other]:
        if not 0.0 <= v <= 1.0:
            raise InputError(f"beta values must lie in [0, 1], got {v}")

    def point(value):
        b1, b2 = (value, fixed_other) if sweep_param == "beta1" else (fixed_other, value)
        return modal_point(case, b1, b2, gain_k, units=units, template=template, wams=wams)

    logger.info(f"\n{'=' * 80}")
    logger.info(f"SWEEP {sweep_param} over {len(grid)} points (other beta={fixed_other}, K={gain_k})")
    logger.info(f"{'=' * 80}")
    points = [None] * len(grid)
    with ThreadPoolExecutor(max_workers=max_workers or config.MAX_WORKERS) as pool:
        futures = [pool.submit(point, v) for v in grid]
        for i, fut in enumerate(tqdm(futures, desc=f"{sweep_param} sweep", disable=not config.SHOW_PROGRESS)):
            points[i] = fut.result()
    return SweepResult(sweep_param, grid, fixed_other, gain_k, points, track_modes(points))


# -----------------------------------------------------------------------------
# Gamma coefficients
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class GammaCoefficients:
    gamma: np.ndarray
    gamma_hat: Optional[np.ndarray]
    ratio_class: Optional[str]


def classify_gamma_ratio(beta1, beta2):
    """Ratio class of beta2/beta1: below_one, one, above_one."""
    if beta1 <= 0:
        raise UndefinedRatioError("beta2/beta1 is undefined for beta1 = 0")
    if beta2 < beta1:
        return "below_one"
    if beta2 == beta1:
        return "one"
    return "above_one"


def gamma_hat_interval(alpha, f0, ratio_class):
    """(low, high, low_closed, high_closed) for gamma_hat in a ratio class."""
    top = alpha / f0
    if ratio_class == "below_one":
        return 0.0, top, False, True
    if ratio_class == "one":
        return 0.0, 0.0, True, True
    if ratio_class == "above_one":
        return -np.inf, 0.0, False, False
    raise InputError(f"Unknown ratio class: {ratio_class}")


def in_interval(value, interval):
    low, high, low_closed, high_closed = interval
    above = value >= low if low_closed else value > low
    below = value <= high if high_closed else value < high
    return bool(above and below)


def gamma_coefficients(cfg: PssConfig, weights, f0=60.0, with_hat=True):
    """
    gamma_k = alpha_k (beta1 - beta2)/f0 and the scaled gamma_hat_k = gamma_k / beta1.

    Raises:
        UndefinedRatioError: with_hat and beta1 == 0
    """
    alpha = np.asarray(weights, dtype=float)
    gamma = alpha * (cfg.beta1 - cfg.beta2) / f0
    if not with_hat:
        return GammaCoefficients(gamma, None, None)
    ratio_class = classify_gamma_ratio(cfg.beta1, cfg.beta2)
    gamma_hat = alpha * ((cfg.beta1 - cfg.beta2) / cfg.beta1) / f0
    return GammaCoefficients(gamma, gamma_hat, ratio_class)


# -----------------------------------------------------------------------------
# Frequency response
# -----------------------------------------------------------------------------

def _check_loop(model: LinearModel):
    if model.b_p is None or model.c_nu is None:
        raise InputError("model has no open stabilizer loop; linearize with studied_unit")


def _frequency_response(model: LinearModel, omega_grid, delays):
    a = model.a_matrix
    n = a.shape[0]
    identity = np.eye(n)
    delays = np.broadcast_to(np.asarray(delays, dtype=float), model.gamma.shape)
    if np.any(delays < 0):
        raise InputError(f"delays must be non-negative, got {delays}")
    points, skipped = [], []
    for w in np.asarray(omega_grid, dtype=float):
        try:
            x = np.linalg.solve(1j * w * identity - a, model.b_p)
        except np.linalg.LinAlgError:
            skipped.append(float(w))
            continue
        if not np.all(np.isfinite(x)):
            skipped.append(float(w))
            continue
        row = model.c_nu.astype(complex)
        if model.sensor_index.size:
            row[model.sensor_index] = (row[model.sensor_index] - model.gamma) + model.gamma * np.exp(-1j * w * delays)
        points.append(ResponsePoint.from_complex(w, row @ x))
    if skipped:
        logger.warning(f"skipped {len(skipped)} frequency points with singular (jwI - A): {skipped[:5]}")
    return points


def open_loop_response(model: LinearModel, omega_grid):
    """H(jw) = C_nu (jwI - A)^-1 B_p."""
    _check_loop(model)
    return _frequency_response(model, omega_grid, 0.0)


def delayed_response(model: LinearModel, delays, omega_grid):
    """H_hat(jw) with each sensor term of C_nu delayed by its own tau_k."""
    _check_loop(model)
    return _frequency_response(model, omega_grid, delays)


def delayed_output_row(model: LinearModel, delays, omega):
    """
    Delayed output row at one frequency, plus its beta1-scaled form built from
    gamma_hat; the two must agree.
    """
    _check_loop(model)
    delays = np.broadcast_to(np.asarray(delays, dtype=float), model.gamma.shape)
    row = model.c_nu.astype(complex)
    factor = np.exp(-1j * omega * delays)
    if model.sensor_index.size:
        row[model.sensor_index] = (row[model.sensor_index] - model.gamma) + model.gamma * factor
    scaled = None
    if model.beta1 > 0:
        scaled = np.zeros_like(row)
        scaled[model.local_speed_index] = -1.0
        if model.sensor_index.size:
            scaled[model.sensor_index] += (model.gamma / model.beta1) * factor
        scaled = model.beta1 * scaled
    return row, scaled


def compensation(compensated: List[ResponsePoint], uncompensated: List[ResponsePoint]):
    """Per-frequency gain/phase added by the compensator and beta tuning."""
    out = []
    for c, u in zip(compensated, uncompensated):
        ratio = c.complex_value / u.complex_value if u.complex_value != 0 else np.nan
        out.append({"freq_hz": c.freq_hz, "gain_db": c.gain_db - u.gain_db,
                    "phase_deg": float(np.degrees(np.angle(ratio)))})
    return out


def phase_crossings(points: List[ResponsePoint], reference: List[ResponsePoint]):
    """
    Frequencies (Hz) where the phase of points relative to reference passes
    through +-180 deg, i.e. where the delayed signal reverses sign against
    the undelayed one. Each crossing is interpolated linearly between the
    two grid points that bracket it.
    """
    ratio = np.array([p.complex_value * np.conj(r.complex_value) for p, r in zip(points, reference)])
    freqs = np.array([p.freq_hz for p in points])
    crossings = []
    for i in range(len(ratio) - 1):
        a, b = ratio[i], ratio[i + 1]
        if a.imag * b.imag >= 0:
            continue
        s = a.imag / (a.imag - b.imag)
        if a.real + s * (b.real - a.real) < 0:
            crossings.append(float(freqs[i] + s * (freqs[i + 1] - freqs[i])))
    return crossings


def max_deviation(points: List[ResponsePoint], reference: List[ResponsePoint], f_low=0.0, f_high=np.inf):
    """Largest gain (dB) and wrapped phase (deg) difference inside a band."""
    gain, phase = 0.0, 0.0
    for p, r in zip(points, reference):
        if f_low <= p.freq_hz <= f_high:
            gain = max(gain, abs(p.gain_db - r.gain_db))
            diff = (p.phase_deg - r.phase_deg + 180.0) % 360.0 - 180.0
            phase = max(phase, abs(diff))
    return gain, phase


def build_open_loop_system(case: NetworkCase, unit, beta1, beta2, template: PssConfig = None,
                           uncompensated=False, others: Dict[int, PssConfig] = None,
                           wams: WamsConfig = None):
    """Initialized system with the studied unit's stabilizer ready to be opened."""
    case.generator(unit)
    template = template or PssConfig()
    cfg = uncompensated_config(template) if uncompensated else template.model_copy(
        update={"beta1": beta1, "beta2": beta2})
    pss = dict(others or {})
    pss[unit] = cfg
    return initialize(case, pss=pss, wams=wams)


# -----------------------------------------------------------------------------
# Time-domain probing
# -----------------------------------------------------------------------------

def probe_loop_response(system: DynamicSystem, unit, freqs_hz, amplitude=1e-3, ramp=10.0, settle=10.0,
                        periods=3, dt=0.005):
    """
    Measure the open stabilizer loop by sinusoidal injection on the nonlinear
    model, independent of the linearization.

    Each run starts from the equilibrium, fades the injection in with a
    raised-cosine envelope over ``ramp`` seconds, waits ``settle`` seconds and
    fits a sinusoid (plus offset and drift) to the simulated -nu over the last
    ``periods`` periods.
    """
    if not any(u.gen_id == unit for u in system.pss_units):
        raise InputError(f"Generator {unit} carries no stabilizer. "
                         f"Available: {[u.gen_id for u in system.pss_units]}")
    if system.x0 is None:
        raise InputError("system is not initialized")
    points = []
    for f in freqs_hz:
        w = 2.0 * np.pi * f
        window = periods / f
        t_end = ramp + settle + window
        t_fit = t_end - window - 1e-9

        def injection(t):
            envelope = 0.5 * (1.0 - np.cos(np.pi * t / ramp)) if t < ramp else 1.0
            return {unit: amplitude * envelope * np.sin(w * t)}

        times, outputs = [], []

        def collect(t, x):
            if t >= t_fit:
                times.append(t)
                outputs.append(system.loop_output(x, unit))

        system.reset()
        system.integrate(system.x0, t_end, dt, u_open=injection, callback=collect)
        t = np.array(times)
        basis = np.column_stack([np.sin(w * t), np.cos(w * t), np.ones_like(t), t - t[0]])
        coef, *_ = np.linalg.lstsq(basis, np.array(outputs), rcond=None)
        points.append(ResponsePoint.from_complex(w, complex(coef[0], coef[1]) / amplitude))
    system.reset()
    return points

