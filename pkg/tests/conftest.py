import pytest

from qrsim.physics import DerivedParams, RepeaterParams, derive


@pytest.fixture
def fig5_params() -> RepeaterParams:
    """Four segments at 50.6569 km / 1.45271 ms: p = 0.1, per-step
    dephasing probability 0.08."""
    return RepeaterParams(n_segments=4, L0_km=50.6569, tau_c_ms=1.45271)


@pytest.fixture
def fig5_derived(fig5_params) -> DerivedParams:
    return derive(fig5_params)


def make_derived(p_gen=0.5, decay=0.9, tau0=1e-4) -> DerivedParams:
    """Hand-built derived parameters for unit tests that pin p/decay/tau0
    directly instead of going through km/ms."""
    return DerivedParams(tau0_s=tau0, eta=p_gen, p_gen=p_gen, decay_per_step=decay)


def params_for_pgen(n_segments: int, p_gen: float, tau_c_ms=1.0, tau0_s=1e-4) -> RepeaterParams:
    """RepeaterParams whose derived p_gen/tau0 equal the requested values
    exactly: lossless fiber (infinite attenuation length) makes eta = 1, so
    p_gen = p_x, and L0 = c*tau0 fixes the step duration."""
    c = 2e8
    return RepeaterParams(
        n_segments=n_segments,
        L0_km=tau0_s * c / 1e3,
        tau_c_ms=tau_c_ms,
        L_att_km=float("inf"),
        p_x=p_gen,
    )
