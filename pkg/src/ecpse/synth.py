"""Measurement synthesis: truth state -> noisy devices with interval bounds.

Every measured scalar x is perturbed multiplicatively, x_hat = x + s|x|(2k-1)
with k drawn on (0, 1), so the perturbation never exceeds one relative sigma.
Interval boxes are then built from measured data only (x_hat +/- 3 sigma), which
makes them certain to contain the truth. PMU devices report rectangular
voltage and injection-current components; RTU devices report voltage and
current magnitude plus power factor, mapped to an equivalent shunt admittance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .case_io import Bounded, CaseNetwork, MeasurementSet, PMUMeasurement, RTUMeasurement
from .powerflow import TruthState

# Injection current magnitude below which a bus counts as zero-injection.
ZERO_INJECTION_TOL = 1e-9

# Absolute floor on the power-factor interval half-width. The pf band is
# relative, which near quadrature (pf ~ machine epsilon) would shrink below
# the roundoff of the atan2/cos/acos mappings and void the containment
# guarantee; outward rounding by this floor keeps the box certain.
PF_BAND_FLOOR = 1e-12


class SynthesisError(ValueError):
    """Measurement synthesis was asked for something physically undefined."""


class ObservabilityError(SynthesisError):
    """A current-injecting bus carries no device, so its state is invisible."""


@dataclass
class NoiseProfile:
    """Relative standard deviations per measured scalar, plus device constants.

    bound_sigmas is the half-width of the interval boxes in units of the
    measured scalar's sigma; with the bounded multiplicative noise above,
    any value >= 1 guarantees truth containment.
    """

    rtu_v_sigma: float = 0.004
    rtu_i_sigma: float = 0.004
    rtu_pf_sigma: float = 0.006
    pmu_v_sigma: float = 0.0002
    pmu_i_sigma: float = 0.0002
    g_pmu: float = 10.0
    bound_sigmas: float = 3.0
    kappa_dist: str = "uniform"

    def zero_noise(self) -> "NoiseProfile":
        return replace(
            self, rtu_v_sigma=0.0, rtu_i_sigma=0.0, rtu_pf_sigma=0.0,
            pmu_v_sigma=0.0, pmu_i_sigma=0.0,
        )


@dataclass
class Placement:
    """Which buses carry which device; uncovered buses must be zero-injection."""

    pmu_buses: list[int] = field(default_factory=list)
    rtu_buses: list[int] = field(default_factory=list)

    @classmethod
    def choose(
        cls,
        net: CaseNetwork,
        truth: TruthState,
        n_pmu: int,
        seed: int | None = None,
    ) -> "Placement":
        """Place n_pmu PMUs on the highest-degree buses (ties broken by id,
        shuffled when seeded) and RTUs on every other bus that injects current.
        Remaining buses are zero-injection and get exact pseudo-measurements."""
        if not 0 <= n_pmu <= net.n_bus:
            raise SynthesisError(f"n_pmu must be in [0, {net.n_bus}], got {n_pmu}")
        degree: dict[int, int] = {b.bus_i: 0 for b in net.buses}
        for br in net.branches:
            degree[br.f_bus] += 1
            degree[br.t_bus] += 1
        ids = [b.bus_i for b in net.buses]
        if seed is not None:
            rng = np.random.default_rng(np.random.SeedSequence((seed, 0x9E37)))
            order = rng.permutation(len(ids))
            ids = [ids[k] for k in order]
            ids.sort(key=lambda b: -degree[b])
        else:
            ids.sort(key=lambda b: (-degree[b], b))
        pmu = sorted(ids[:n_pmu])

        inj_mag = np.hypot(truth.i_re, truth.i_im)
        idx = net.bus_index()
        rtu = [
            b.bus_i
            for b in net.buses
            if b.bus_i not in pmu and inj_mag[idx[b.bus_i]] > ZERO_INJECTION_TOL
        ]
        return cls(pmu_buses=pmu, rtu_buses=rtu)


def _draw_kappa(rng: np.random.Generator, size: int, dist: str) -> np.ndarray:
    if dist == "uniform":
        return rng.uniform(0.0, 1.0, size)
    if dist == "truncnorm":
        # Mean 0.5, sd 1/6; rejection keeps the draw strictly inside (0, 1).
        out = np.empty(size)
        filled = 0
        while filled < size:
            cand = rng.normal(0.5, 1.0 / 6.0, size - filled)
            keep = cand[(cand > 0.0) & (cand < 1.0)]
            out[filled : filled + keep.size] = keep
            filled += keep.size
        return out
    raise SynthesisError(f"unknown kappa distribution {dist!r}")


def apply_noise(
    values: np.ndarray | float,
    sigma_rel: float,
    rng: np.random.Generator,
    dist: str = "uniform",
) -> np.ndarray | float:
    """Perturb values by at most one relative sigma: x + sigma|x|(2 kappa - 1).

    kappa is drawn per element on (0, 1); sigma 0 returns the input unchanged
    (no draws consumed, so a zero-noise profile is stream-compatible with
    nothing)."""
    if sigma_rel < 0.0:
        raise SynthesisError(f"sigma must be >= 0, got {sigma_rel}")
    if sigma_rel == 0.0:
        return values
    arr = np.asarray(values, dtype=np.float64)
    kappa = _draw_kappa(rng, arr.size, dist).reshape(arr.shape)
    noisy = arr + sigma_rel * np.abs(arr) * (2.0 * kappa - 1.0)
    return float(noisy) if np.isscalar(values) else noisy


def rtu_from_phasors(v_mag: float, i_mag: float, phi: float) -> tuple[float, float]:
    """Equivalent shunt admittance of an RTU reading.

    phi is the angle by which the element current lags the bus voltage, so the
    element satisfies I = (g - jb) V with g = (i/v) cos phi, b = (i/v) sin phi.
    A zero current magnitude leaves phi undefined and is rejected; such buses
    are zero-injection and belong in the pseudo-measurement set instead.
    """
    if v_mag <= 0.0:
        raise SynthesisError(f"voltage magnitude must be positive, got {v_mag}")
    if i_mag < 0.0:
        raise SynthesisError(f"current magnitude must be >= 0, got {i_mag}")
    if i_mag == 0.0:
        raise SynthesisError("zero current magnitude leaves the power factor angle undefined")
    y = i_mag / v_mag
    return y * math.cos(phi), y * math.sin(phi)


def rtu_interval_bounds(
    v_hat: float,
    i_hat: float,
    phi_hat: float,
    profile: NoiseProfile,
) -> tuple[tuple[float, float], tuple[float, float]]:
    """Tightest (g, b) box consistent with the measured RTU scalars.

    The admittance magnitude ranges over [i(1-ks_i), i(1+ks_i)] /
    [v(1+ks_v), v(1-ks_v)] and the angle over the arccos image of the power
    factor interval (sign of phi_hat fixed; noise never flips it). cos is
    monotone there, so its range is the clamped pf interval itself; sin needs
    the interior extremum when the angle interval crosses pi/2. The box is the
    four-endpoint product hull of the two ranges.
    """
    if v_hat <= 0.0:
        raise SynthesisError(f"voltage magnitude must be positive, got {v_hat}")
    if i_hat <= 0.0:
        raise SynthesisError(f"current magnitude must be positive, got {i_hat}")
    k = profile.bound_sigmas
    for label, sig in (("rtu_v_sigma", profile.rtu_v_sigma), ("rtu_i_sigma", profile.rtu_i_sigma)):
        if k * sig >= 1.0:
            raise SynthesisError(f"bound_sigmas * {label} must be < 1, got {k * sig}")

    y_lo = i_hat * (1.0 - k * profile.rtu_i_sigma) / (v_hat * (1.0 + k * profile.rtu_v_sigma))
    y_hi = i_hat * (1.0 + k * profile.rtu_i_sigma) / (v_hat * (1.0 - k * profile.rtu_v_sigma))

    if profile.rtu_pf_sigma == 0.0:
        phi_lo = phi_hi = phi_hat
    else:
        pf = math.cos(phi_hat)
        pad = max(k * profile.rtu_pf_sigma * abs(pf), PF_BAND_FLOOR)
        pf_lo = max(-1.0, pf - pad)
        pf_hi = min(1.0, pf + pad)
        # copysign keeps the sign carried by -0.0, which is how a unity pf
        # measurement (angle clamped to zero) remembers its lag/lead side.
        sign = math.copysign(1.0, phi_hat)
        mag_lo, mag_hi = math.acos(pf_hi), math.acos(pf_lo)
        phi_lo, phi_hi = (sign * mag_lo, sign * mag_hi) if sign > 0 else (sign * mag_hi, sign * mag_lo)

    cos_vals = (math.cos(phi_lo), math.cos(phi_hi))
    cos_rng = (min(cos_vals), max(cos_vals))
    sin_vals = [math.sin(phi_lo), math.sin(phi_hi)]
    if phi_lo <= math.pi / 2.0 <= phi_hi:
        sin_vals.append(1.0)
    if phi_lo <= -math.pi / 2.0 <= phi_hi:
        sin_vals.append(-1.0)
    sin_rng = (min(sin_vals), max(sin_vals))

    def hull(lo1: float, hi1: float, lo2: float, hi2: float) -> tuple[float, float]:
        prods = (lo1 * lo2, lo1 * hi2, hi1 * lo2, hi1 * hi2)
        return min(prods), max(prods)

    return hull(y_lo, y_hi, *cos_rng), hull(y_lo, y_hi, *sin_rng)


def _component_box(x_hat: float, sigma: float, k: float) -> Bounded:
    half = k * sigma * abs(x_hat)
    return Bounded(value=x_hat, lo=x_hat - half, hi=x_hat + half)


def synthesize_measurements(
    net: CaseNetwork,
    truth: TruthState,
    placement: Placement,
    profile: NoiseProfile | None = None,
    seed: int | np.random.Generator = 0,
) -> MeasurementSet:
    """Build a noisy MeasurementSet from a solved operating point.

    Draw order is fixed (PMU buses in placement order, four scalars each, then
    RTU buses, three scalars each), so a given seed always yields the same set.
    Zero-injection buses without a device become exact g = b = 0 pseudo
    measurements. Errors: an RTU on a zero-injection bus (angle undefined), or
    an uncovered bus that does inject current (the estimator would wrongly pin
    it to zero).
    """
    profile = profile or NoiseProfile()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(
        np.random.SeedSequence((int(seed),))
    )
    seed_val = None if isinstance(seed, np.random.Generator) else int(seed)
    idx = net.bus_index()
    for label, buses in (("pmu", placement.pmu_buses), ("rtu", placement.rtu_buses)):
        unknown = [b for b in buses if b not in idx]
        if unknown:
            raise SynthesisError(f"{label} placement references unknown buses {unknown}")

    dist = profile.kappa_dist
    k = profile.bound_sigmas

    pmu: list[PMUMeasurement] = []
    for bus in placement.pmu_buses:
        p = idx[bus]
        comps = []
        for value, sigma in (
            (truth.v_re[p], profile.pmu_v_sigma),
            (truth.v_im[p], profile.pmu_v_sigma),
            (truth.i_re[p], profile.pmu_i_sigma),
            (truth.i_im[p], profile.pmu_i_sigma),
        ):
            x_hat = float(apply_noise(float(value), sigma, rng, dist))
            comps.append(_component_box(x_hat, sigma, k))
        pmu.append(
            PMUMeasurement(
                bus=bus, g_pmu=profile.g_pmu,
                v_re=comps[0], v_im=comps[1], i_re=comps[2], i_im=comps[3],
            )
        )

    rtu: list[RTUMeasurement] = []
    inj_mag = np.hypot(truth.i_re, truth.i_im)
    for bus in placement.rtu_buses:
        p = idx[bus]
        if inj_mag[p] <= ZERO_INJECTION_TOL:
            raise SynthesisError(
                f"rtu placed on zero-injection bus {bus}: power factor angle undefined"
            )
        # The RTU element absorbs the whole bus injection: I_elem = -I_inj.
        ie_re, ie_im = -truth.i_re[p], -truth.i_im[p]
        v_mag = float(np.hypot(truth.v_re[p], truth.v_im[p]))
        i_mag = float(np.hypot(ie_re, ie_im))
        phi = math.atan2(truth.v_im[p], truth.v_re[p]) - math.atan2(ie_im, ie_re)
        phi = math.atan2(math.sin(phi), math.cos(phi))

        v_hat = float(apply_noise(v_mag, profile.rtu_v_sigma, rng, dist))
        i_hat = float(apply_noise(i_mag, profile.rtu_i_sigma, rng, dist))
        if profile.rtu_pf_sigma == 0.0:
            phi_hat = phi
        else:
            pf_hat = float(apply_noise(math.cos(phi), profile.rtu_pf_sigma, rng, dist))
            pf_hat = max(-1.0, min(1.0, pf_hat))
            phi_hat = math.copysign(math.acos(pf_hat), phi)

        g_hat, b_hat = rtu_from_phasors(v_hat, i_hat, phi_hat)
        (g_lo, g_hi), (b_lo, b_hi) = rtu_interval_bounds(v_hat, i_hat, phi_hat, profile)
        rtu.append(
            RTUMeasurement(
                bus=bus,
                g=Bounded(value=g_hat, lo=min(g_lo, g_hat), hi=max(g_hi, g_hat)),
                b=Bounded(value=b_hat, lo=min(b_lo, b_hat), hi=max(b_hi, b_hat)),
            )
        )

    covered = set(placement.pmu_buses) | set(placement.rtu_buses)
    for bus in net.buses:
        if bus.bus_i in covered:
            continue
        p = idx[bus.bus_i]
        if inj_mag[p] > ZERO_INJECTION_TOL:
            raise ObservabilityError(
                f"bus {bus.bus_i} injects {inj_mag[p]:.3e} p.u. current but carries no device; "
                "the network is not observable as placed"
            )
        zero = Bounded(value=0.0, lo=0.0, hi=0.0)
        rtu.append(RTUMeasurement(bus=bus.bus_i, g=zero, b=zero))

    return MeasurementSet(
        pmu=pmu, rtu=rtu, case_name=net.name, base_mva=net.base_mva, seed=seed_val
    )
