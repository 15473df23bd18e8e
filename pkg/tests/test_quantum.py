import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nqp.config import preset_spin_boson, preset_three_state
from nqp.dataset import sample_gue_state
from nqp.quantum import (
    BathChannel,
    FieldChannel,
    LiouvillianParts,
    SystemSpec,
    TimeGrid,
    ValidationError,
    build_h0,
    devectorize,
    dissipator_apply,
    hamiltonian_at,
    ketbra,
    liouvillian_matrix,
    qme_rhs,
    vectorize,
)

from conftest import random_hermitian, random_matrix

G, E = 0, 1
seeds = st.integers(0, 2**32 - 1)


def channels_of(cfg, values):
    return [f.channel(v) for f, v in zip(cfg.fields, values)]


def test_build_h0_spin_boson(sb):
    np.testing.assert_array_equal(build_h0(sb.spec), [[-0.5, 0.5], [0.5, 0.5]])


def test_build_h0_zero():
    np.testing.assert_array_equal(build_h0(SystemSpec(3, (0.0, 0.0, 0.0))), np.zeros((3, 3)))


def test_build_h0_three_state(three):
    np.testing.assert_array_equal(build_h0(three.spec), np.diag([0.0, 0.1, 1.0]))


def test_build_h0_rejects_non_hermitian():
    with pytest.raises(ValidationError):
        build_h0(SystemSpec(2, (0.0, 1.0), ((0, 1, 0.5),)))
    with pytest.raises(ValidationError):
        build_h0(SystemSpec(2, (0.0, 1.0), ((0, 1, 0.5j), (1, 0, 0.5j))))


def test_system_spec_validation():
    with pytest.raises(ValidationError):
        SystemSpec(1, (0.0,))
    with pytest.raises(ValidationError):
        SystemSpec(2, (0.0,))
    with pytest.raises(ValidationError):
        BathChannel(-0.1, np.eye(2))


def test_hamiltonian_field_at_zero_and_pi(sb):
    h0 = build_h0(sb.spec)
    ee = ketbra(2, E, E)
    field = FieldChannel(ee, "periodic", 1.0)
    np.testing.assert_allclose(hamiltonian_at(sb.spec, [field], 0.0), h0 + ee, atol=1e-15)
    np.testing.assert_allclose(hamiltonian_at(sb.spec, [field], np.pi), h0 - ee, atol=1e-15)


def test_hamiltonian_real_part_mode(sb):
    ee = ketbra(2, E, E)
    field = FieldChannel(ee, "periodic", 0.7, use_real_part=True)
    h = hamiltonian_at(sb.spec, [field], 1.3)
    np.testing.assert_allclose(h, h.conj().T, atol=0)
    np.testing.assert_allclose(h[E, E], 0.5 + np.cos(0.91), atol=1e-15)


def test_hamiltonian_three_state_constant_fields(three):
    h = hamiltonian_at(three.spec, channels_of(three, (0.3, 0.6)), 12.0)
    expected = np.array([[0.0, 0.3, 0.0], [0.3, 0.1, 0.6], [0.0, 0.6, 1.0]])
    np.testing.assert_array_equal(h, expected)
    np.testing.assert_array_equal(h, h.conj().T)


def test_hamiltonian_dimension_mismatch(sb):
    with pytest.raises(ValidationError):
        hamiltonian_at(sb.spec, [FieldChannel(np.eye(3), "constant", 1.0)], 0.0)


def test_dissipator_emission_of_excited_state():
    v = ketbra(2, G, E)
    out = dissipator_apply(v, ketbra(2, E, E))
    np.testing.assert_array_equal(out, 2 * ketbra(2, E, E) - 2 * ketbra(2, G, G))


def test_dissipator_zero_and_dark_state():
    rng = np.random.default_rng(3)
    np.testing.assert_array_equal(dissipator_apply(random_matrix(rng, 2), np.zeros((2, 2))), 0)
    np.testing.assert_array_equal(dissipator_apply(ketbra(2, G, E), ketbra(2, G, G)), 0)


def test_dissipator_shape_check():
    with pytest.raises(ValidationError):
        dissipator_apply(np.eye(2), np.eye(3))


def test_qme_rhs_maximally_mixed(sb):
    out = qme_rhs(sb.spec, sb.baths, [], 0.0, np.eye(2) / 2)
    np.testing.assert_allclose(out, np.diag([0.1, -0.1]), atol=1e-15)


def test_qme_rhs_closed_commutator(sb):
    out = qme_rhs(sb.spec, [], [], 0.0, ketbra(2, G, G))
    np.testing.assert_allclose(out, [[0, 0.5j], [-0.5j, 0]], atol=1e-15)


def test_qme_rhs_dark_state(decay):
    spec, baths = decay
    np.testing.assert_array_equal(qme_rhs(spec, baths, [], 0.0, ketbra(2, G, G)), 0)


def test_qme_rhs_dimension_mismatch(sb):
    with pytest.raises(ValidationError):
        qme_rhs(sb.spec, sb.baths, [], 0.0, np.eye(3))


def test_vectorize_order():
    a, b, c, e = 1 + 1j, 2.0, 3j, 4.0
    np.testing.assert_array_equal(vectorize(np.array([[a, b], [c, e]])), [a, b, c, e])
    v = vectorize(np.eye(3) / 3)
    np.testing.assert_array_equal(np.nonzero(v)[0], [0, 4, 8])
    np.testing.assert_array_equal(v[[0, 4, 8]], 1 / 3)


def test_devectorize_rejects_non_square():
    with pytest.raises(ValidationError):
        devectorize(np.zeros(5))


@given(seeds, st.integers(2, 5))
def test_vectorize_round_trip(seed, d):
    rng = np.random.default_rng(seed)
    rho = random_matrix(rng, d)
    np.testing.assert_array_equal(devectorize(vectorize(rho)), rho)
    v = rng.standard_normal(d * d) + 1j * rng.standard_normal(d * d)
    np.testing.assert_array_equal(vectorize(devectorize(v)), v)


def test_liouvillian_pure_decay_structure(decay):
    spec, baths = decay
    g = baths[0].gamma
    L = liouvillian_matrix(spec, baths, [], 0.0)
    # index order (gg, ge, eg, ee)
    np.testing.assert_allclose(np.diag(L), [0, -g, -g, -2 * g], atol=1e-15)
    expected = np.diag([0, -g, -g, -2 * g]).astype(complex)
    expected[0, 3] = 2 * g  # population feeding |g><g| from |e><e|
    np.testing.assert_allclose(L, expected, atol=1e-15)


@pytest.mark.parametrize("preset", [preset_spin_boson, preset_three_state])
def test_liouvillian_matches_rhs_on_random_states(preset):
    cfg = preset()
    rng = np.random.default_rng(11)
    channels = channels_of(cfg, [0.5 * (f.low + f.high) for f in cfg.fields])
    L = liouvillian_matrix(cfg.spec, cfg.baths, channels, 1.7)
    for _ in range(100):
        rho = random_matrix(rng, cfg.spec.dim)
        direct = vectorize(qme_rhs(cfg.spec, cfg.baths, channels, 1.7, rho))
        assert np.max(np.abs(L @ vectorize(rho) - direct)) < 1e-12


def test_liouvillian_trace_row(sb):
    channels = channels_of(sb, [0.6])
    L = liouvillian_matrix(sb.spec, sb.baths, channels, 0.9)
    assert np.max(np.abs(vectorize(np.eye(2)) @ L)) < 1e-13


def test_liouvillian_parts_recombine(three):
    parts = LiouvillianParts.build(three.spec, three.baths, [f.op for f in three.fields])
    channels = channels_of(three, (0.3, 0.6))
    direct = liouvillian_matrix(three.spec, three.baths, channels, 0.0)
    np.testing.assert_allclose(parts.at(np.array([0.3, 0.6])), direct, atol=1e-15)


def test_time_grid():
    g = TimeGrid.from_tmax(0.05, 20.0)
    assert g.n_steps == 400
    assert g.times()[-1] == pytest.approx(20.0)
    with pytest.raises(ValidationError):
        TimeGrid.from_tmax(0.05, 0.123)


# ---------------------------------------------------------------- properties

def _random_setup(seed, real_fields):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 5))
    energies = tuple(rng.standard_normal(d))
    couplings = []
    for j in range(d):
        for jp in range(j + 1, d):
            z = complex(rng.standard_normal(), rng.standard_normal())
            couplings += [(j, jp, z), (jp, j, z.conjugate())]
    spec = SystemSpec(d, energies, tuple(couplings))
    baths = [BathChannel(float(rng.uniform(0, 1)), random_matrix(rng, d)) for _ in range(2)]
    fields = [FieldChannel(random_hermitian(rng, d), "periodic", float(rng.uniform(0, 2)),
                           use_real_part=real_fields),
              FieldChannel(random_hermitian(rng, d), "constant", float(rng.standard_normal()))]
    return rng, spec, baths, fields, float(rng.uniform(0, 10))


@given(seeds, st.booleans())
def test_rhs_is_traceless(seed, real_fields):
    rng, spec, baths, fields, t = _random_setup(seed, real_fields)
    rho = random_matrix(rng, spec.dim)
    assert abs(np.trace(qme_rhs(spec, baths, fields, t, rho))) < 1e-13 * max(1, np.abs(rho).max() * 10)


@given(seeds)
def test_rhs_preserves_hermiticity_with_real_fields(seed):
    rng, spec, baths, fields, t = _random_setup(seed, True)
    out = qme_rhs(spec, baths, fields, t, random_hermitian(rng, spec.dim))
    assert np.max(np.abs(out - out.conj().T)) < 1e-13


@given(seeds)
def test_h0_exactly_hermitian(seed):
    _, spec, *_ = _random_setup(seed, True)
    h = build_h0(spec)
    assert np.array_equal(h, h.conj().T)


@given(seeds)
def test_dissipator_linear(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 5))
    v, r1, r2 = (random_matrix(rng, d) for _ in range(3))
    a, b = complex(*rng.standard_normal(2)), complex(*rng.standard_normal(2))
    lhs = dissipator_apply(v, a * r1 + b * r2)
    rhs = a * dissipator_apply(v, r1) + b * dissipator_apply(v, r2)
    assert np.max(np.abs(lhs - rhs)) < 1e-12


@settings(max_examples=20)
@given(seeds)
def test_liouvillian_agrees_on_gue_states(seed):
    rng, spec, baths, fields, t = _random_setup(seed, False)
    L = liouvillian_matrix(spec, baths, fields, t)
    for _ in range(5):
        rho = sample_gue_state(rng, spec.dim)
        direct = vectorize(qme_rhs(spec, baths, fields, t, rho))
        assert np.max(np.abs(L @ vectorize(rho) - direct)) < 1e-12 * max(1, np.abs(direct).max())
