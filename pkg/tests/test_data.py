import numpy as np
import pytest

from pded.data import (
    Axis,
    add_noise,
    generate,
    read_dataset,
    sample_collocation,
    sample_observations,
    solve_burgers,
    solve_fisher_kpp,
    write_dataset,
)
from pded.errors import DatasetFormatError, TooManyRequested


@pytest.fixture(scope="module")
def burgers():
    return generate("burgers")


def fd_residual(data, rhs):
    U = data.fields["u"]
    dx, dt = data.axes[0].step, data.axes[1].step
    ut = (U[1:-1, 2:] - U[1:-1, :-2]) / (2 * dt)
    u = U[1:-1, 1:-1]
    ux = (U[2:, 1:-1] - U[:-2, 1:-1]) / (2 * dx)
    uxx = (U[2:, 1:-1] - 2 * u + U[:-2, 1:-1]) / dx**2
    r = ut - rhs(u, ux, uxx)
    return np.sqrt(np.mean(r**2)) / np.sqrt(np.mean(ut**2))


def test_burgers_grid_and_residual(burgers):
    assert burgers.shape == (256, 101)
    assert fd_residual(burgers, lambda u, ux, uxx: -u * ux + 0.1 * uxx) < 0.02


def test_fisher_residual_and_equilibria():
    f = generate("fisher_kpp")
    assert fd_residual(f, lambda u, ux, uxx: 0.02 * uxx + 10 * u - 10 * u**2) < 0.05
    ones = solve_fisher_kpp(ic=lambda x: np.ones_like(x))
    np.testing.assert_allclose(ones.fields["u"], 1.0, atol=1e-12)
    zeros = solve_fisher_kpp(ic=lambda x: np.zeros_like(x))
    assert np.all(zeros.fields["u"] == 0)


def test_nonlinear_fisher_residual():
    f = generate("fisher_kpp_nonlinear")
    res = fd_residual(f, lambda u, ux, uxx: 0.02 * (u * uxx + ux**2) + 10 * u - 10 * u**2)
    assert res < 0.05


def test_zero_ic_burgers():
    z = solve_burgers(ic=lambda x: np.zeros_like(x))
    assert np.all(z.fields["u"] == 0)


def test_inviscid_characteristics():
    # u(x, t) = u0(x - u t) before shock formation; solve the implicit relation by fixed point
    x_axis = Axis("x", -8.0, 8.0, 1024)
    t_axis = Axis("t", 0.0, 0.5, 11)
    ic = lambda x: 0.5 * np.exp(-(x**2))  # noqa: E731
    data = solve_burgers(nu=0.0, x_axis=x_axis, t_axis=t_axis, ic=ic)
    x = x_axis.values
    for xi in (-1.0, 0.0, 1.0):
        i = int(np.argmin(np.abs(x - xi)))
        t = t_axis.values[-1]
        u = ic(x[i])
        for _ in range(100):
            u = ic(x[i] - u * t)
        assert data.fields["u"][i, -1] == pytest.approx(u, rel=0.05)


def test_noise_statistics(burgers):
    noisy = add_noise(burgers, 1.0, seed=0)
    diff = noisy.fields["u"] - burgers.fields["u"]
    assert np.std(diff) == pytest.approx(np.std(burgers.fields["u"]), rel=0.02)
    again = add_noise(burgers, 1.0, seed=0)
    np.testing.assert_array_equal(again.fields["u"], noisy.fields["u"])
    clean = add_noise(burgers, 0.0, seed=3)
    np.testing.assert_array_equal(clean.fields["u"], burgers.fields["u"])
    with pytest.raises(ValueError):
        add_noise(burgers, -0.1)


def test_observation_sampling(burgers):
    obs = sample_observations(burgers, 5000, seed=1)
    assert len(np.unique(obs.indices)) == 5000
    everything = sample_observations(burgers, burgers.size, seed=0)
    np.testing.assert_array_equal(np.sort(everything.indices), np.arange(burgers.size))
    with pytest.raises(TooManyRequested):
        sample_observations(burgers, burgers.size + 1)
    tr, va = obs.split(0.8, seed=0)
    assert len(tr) == 4000 and len(va) == 1000
    assert not set(tr.indices) & set(va.indices)


def test_collocation_uniform():
    from scipy import stats

    pts = sample_collocation([-8, 0], [8, 10], 20000, seed=0)
    assert np.all((pts > [-8, 0]) & (pts < [8, 10]))
    for j, (lo, hi) in enumerate([(-8, 8), (0, 10)]):
        counts, _ = np.histogram(pts[:, j], bins=10, range=(lo, hi))
        assert stats.chisquare(counts).pvalue > 1e-3


@pytest.mark.parametrize("suffix", [".csv", ".bin"])
def test_file_roundtrip(tmp_path, suffix):
    data = add_noise(solve_burgers(x_axis=Axis("x", -8, 8, 32), t_axis=Axis("t", 0, 1, 5)), 0.5, seed=2)
    path = write_dataset(data, tmp_path / f"d{suffix}")
    back = read_dataset(path)
    assert back.axes == data.axes
    np.testing.assert_array_equal(back.fields["u"], data.fields["u"])
    assert back.provenance["sigma"] == 0.5


def test_truncated_file(tmp_path):
    data = solve_burgers(x_axis=Axis("x", -8, 8, 16), t_axis=Axis("t", 0, 1, 3))
    path = write_dataset(data, tmp_path / "d.bin")
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(DatasetFormatError):
        read_dataset(path)
