
import numpy as np
import pytest

from nqp import engine as E
from nqp.dataset import field_grid, propagate, sample_gue_state
from nqp.model import (
    CHECKPOINT_VERSION,
    CheckpointError,
    ModelConfig,
    count_params,
    field_modes,
    forward,
    fourier_layer,
    init_params,
    lift_input,
    load_checkpoint,
    param_shapes,
    physical_input,
    predict,
    rk4_propagator,
    rollout,
    save_checkpoint,
)
from nqp.quantum import TimeGrid, ketbra


def tiny(**kw):
    base = dict(d=2, n_steps=8, k_channels=1, dt=0.05, latent_channels=4, proj_hidden=6,
                n_layers=1)
    base.update(kw)
    return ModelConfig(**base)


def random_field(rng, config):
    shape = (config.n_times, config.k_channels)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_physical_input_layout():
    config = tiny(n_steps=400)
    rho = np.array([[0.6, 0.1 + 0.2j], [0.1 - 0.2j, 0.4]])
    x = physical_input(rho, config)
    assert x.shape == (1, 401, 9)
    np.testing.assert_array_equal(x[0, :, :8], np.tile([0.6, 0, 0.1, 0.2, 0.1, -0.2, 0.4, 0], (401, 1)))
    assert x[0, 0, -1] == 0.0 and x[0, -1, -1] == 1.0


def test_lift_input_distinguishes_states():
    config = tiny()
    params = init_params(config, seed=1)
    a = lift_input(params, ketbra(2, 0, 0)).data
    b = lift_input(params, ketbra(2, 1, 1)).data
    assert a.shape == (1, 9, 8)
    assert not np.allclose(a, b)


def test_forward_shape_and_finiteness():
    config = tiny(n_steps=400, latent_channels=8, proj_hidden=16, n_layers=2)
    rng = np.random.default_rng(2)
    params = init_params(config, seed=2)
    rho = np.stack([sample_gue_state(rng, 2) for _ in range(3)])
    field = np.stack([random_field(rng, config) for _ in range(3)])
    out = forward(params, rho, field)
    assert out.shape == (3, 401, 8)
    assert np.all(np.isfinite(out.data))


def test_fourier_layer_collapses_without_spectral_branch():
    config = tiny()
    params = init_params(config, seed=3)
    for name, t in params.tensors.items():
        if name.startswith("layer0"):
            t.data = np.zeros_like(t.data)
    rng = np.random.default_rng(3)
    v = E.Tensor(rng.standard_normal((2, 9, 8)))
    hat = field_modes(np.zeros((2, 9, 1)), config)
    out = fourier_layer(params, 0, v, hat)
    np.testing.assert_array_equal(out.data, E.gelu(v).data)


def test_fourier_layer_identity_weights_doubles_input():
    config = tiny()
    params = init_params(config, seed=4)
    params.zero_field_maps()
    w = np.zeros((9, 4, 8))
    for c in range(4):
        w[:, c, 2 * c] = 1.0
    params["layer0.w"].data = w
    rng = np.random.default_rng(4)
    v = E.Tensor(rng.standard_normal((1, 9, 8)))
    out = fourier_layer(params, 0, v, field_modes(random_field(rng, config), config))
    assert np.max(np.abs(out.data - E.gelu(E.Tensor(2 * v.data)).data)) < 1e-10


def test_zero_field_maps_remove_field_dependence():
    config = tiny(n_layers=2)
    params = init_params(config, seed=5)
    rng = np.random.default_rng(5)
    rho = sample_gue_state(rng, 2)
    a = forward(params, rho, random_field(rng, config)).data
    b = forward(params, rho, random_field(rng, config)).data
    assert not np.allclose(a, b)
    params.zero_field_maps()
    a = forward(params, rho, random_field(rng, config)).data
    b = forward(params, rho, random_field(rng, config)).data
    np.testing.assert_array_equal(a, b)


def test_forward_affine_in_rho_without_activations():
    # biases and the time channel make the plumbing affine, so test
    # G[rho] - G[0], which must be linear
    config = tiny(n_layers=2)
    params = init_params(config, seed=6)
    rng = np.random.default_rng(6)
    field = random_field(rng, config)
    G = lambda r: forward(params, r, field, act=E.identity).data  # noqa: E731
    r1, r2 = sample_gue_state(rng, 2), sample_gue_state(rng, 2)
    a, b = 0.7, -1.9
    g0 = G(np.zeros((2, 2)))
    lhs = G(a * r1 + b * r2) - g0
    rhs = a * (G(r1) - g0) + b * (G(r2) - g0)
    assert np.max(np.abs(lhs - rhs)) < 1e-10
    # convex combinations need no offset
    assert np.max(np.abs(G(0.3 * r1 + 0.7 * r2) - 0.3 * G(r1) - 0.7 * G(r2))) < 1e-10


def test_param_count_matches_allocation():
    rng = np.random.default_rng(7)
    for _ in range(5):
        n = int(rng.integers(2, 30))
        config = ModelConfig(d=int(rng.integers(2, 5)), n_steps=n, k_channels=int(rng.integers(1, 4)),
                             latent_channels=int(rng.integers(1, 9)),
                             proj_hidden=int(rng.integers(1, 17)), n_layers=int(rng.integers(1, 4)),
                             modes=int(rng.integers(1, n + 2)))
        params = init_params(config)
        assert params.size() == count_params(config)
        assert [tuple(t.shape) for t in params] == [s for _, s in param_shapes(config)]


def test_mode_truncation():
    config = tiny(modes=3)
    np.testing.assert_array_equal(config.mode_index(), [0, 1, 8])
    params = init_params(config, seed=8)
    assert params["layer0.w"].shape == (3, 4, 8)
    rng = np.random.default_rng(8)
    out = forward(params, sample_gue_state(rng, 2), random_field(rng, config))
    assert out.shape == (1, 9, 8)
    with pytest.raises(ValueError):
        tiny(modes=10)


def test_forward_deterministic():
    config = tiny()
    rng = np.random.default_rng(9)
    rho, field = sample_gue_state(rng, 2), random_field(rng, config)
    a = forward(init_params(config, seed=9), rho, field).data
    b = forward(init_params(config, seed=9), rho, field).data
    assert np.array_equal(a, b)


def test_forward_rejects_bad_shapes():
    config = tiny()
    params = init_params(config)
    with pytest.raises(ValueError):
        forward(params, np.eye(3), np.zeros((9, 1)))
    with pytest.raises(ValueError):
        forward(params, np.eye(2), np.zeros((7, 1)))


def test_rollout_single_window_equals_forward(sb):
    config = tiny(n_steps=20)
    params = init_params(config, seed=10)
    channels = [sb.fields[0].channel(0.6)]
    from nqp.model import model_propagator
    fg = field_grid(channels, TimeGrid(0.05, 20))
    direct = predict(params, sb.rho0, fg.values)
    rolled = rollout(model_propagator(params, channels), sb.rho0, 20, 20)
    np.testing.assert_array_equal(direct, rolled)
    longer = rollout(model_propagator(params, channels), sb.rho0, 20, 47)
    assert longer.shape == (48, 4)
    np.testing.assert_array_equal(longer[:21], direct)


def test_rollout_with_exact_propagator(sb):
    channels = [sb.fields[0].channel(0.3)]
    rho0 = sample_gue_state(np.random.default_rng(11), 2)
    window = TimeGrid(0.05, 40)
    rolled = rollout(rk4_propagator(sb.spec, sb.baths, channels, window), rho0, 40, 170)
    single = propagate(sb.spec, sb.baths, channels, rho0, TimeGrid(0.05, 170)).states
    assert np.max(np.abs(rolled - single)) < 1e-12


def test_rollout_projection_renormalizes(sb):
    def prop(rho, w):
        # a deliberately lossy propagator: shrinks the state by half per window
        return np.stack([rho.reshape(-1), 0.5 * rho.reshape(-1)])
    out = rollout(prop, sb.rho0, 1, 3, project=True)
    np.testing.assert_allclose(out[:, 0].real, [1, 0.5, 0.5, 0.5])


def test_checkpoint_round_trip(tmp_path):
    config = tiny(n_layers=2, modes=5)
    params = init_params(config, seed=12)
    rng = np.random.default_rng(12)
    rho, field = sample_gue_state(rng, 2), random_field(rng, config)
    save_checkpoint(params, tmp_path / "m.nqpm", {"seed": 12, "epoch": 3, "loss": 0.5})
    back, meta = load_checkpoint(tmp_path / "m.nqpm")
    assert back.config == config
    assert meta == {"seed": 12, "epoch": 3, "loss": 0.5}
    assert np.array_equal(forward(params, rho, field).data, forward(back, rho, field).data)


def test_checkpoint_errors(tmp_path):
    params = init_params(tiny())
    path = tmp_path / "m.nqpm"
    save_checkpoint(params, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-3])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    path.write_bytes(b"NQPX" + blob[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)
    bumped = (CHECKPOINT_VERSION + 1).to_bytes(4, "little")
    path.write_bytes(blob[:4] + bumped + blob[8:])
    with pytest.raises(CheckpointError, match="incompatible"):
        load_checkpoint(path)
