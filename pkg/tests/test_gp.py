import math

import numpy as np
import pytest
from scipy.stats import norm

from gpplatoon.gp import (
    Dataset,
    GpModel,
    IllConditionedKernelError,
    KernelHyper,
    SparseGpModel,
    SparseOpts,
    build_sparse,
    fic_log_marginal_likelihood,
    kernel_eval,
    load_dataset_csv,
    load_model,
    log_marginal_likelihood,
    normal_quantile,
    save_dataset_csv,
    save_model,
    train_exact,
)


def _hyper(sv=1.0, ls=(1.0, 1.0), nv=0.1):
    return KernelHyper(signal_variance=sv, length_scales=np.array(ls), noise_variance=nv)


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------


def test_kernel_zero_distance():
    h = _hyper(sv=2.5)
    assert kernel_eval([3.0, -1.0], [3.0, -1.0], h) == pytest.approx(2.5, abs=1e-15)


def test_kernel_hand_values():
    h = _hyper(sv=1.0, ls=(1.0, 1.0))
    v = kernel_eval([1.0, 1.0], [0.0, 0.0], h)
    assert v == pytest.approx(math.exp(-1.0), abs=1e-12)
    h2 = _hyper(sv=1.0, ls=(4.0, 1.0))
    v2 = kernel_eval([2.0, 0.0], [0.0, 0.0], h2)
    assert v2 == pytest.approx(math.exp(-0.5), abs=1e-12)


def test_kernel_symmetry():
    rng = np.random.default_rng(0)
    h = _hyper(sv=1.7, ls=(0.5, 3.0), nv=0.01)
    for _ in range(20):
        x, y = rng.normal(size=2), rng.normal(size=2)
        assert kernel_eval(x, y, h) == pytest.approx(kernel_eval(y, x, h), rel=1e-15)
        assert 0.0 < kernel_eval(x, y, h) <= h.signal_variance


def test_kernel_dimension_mismatch():
    with pytest.raises(ValueError):
        kernel_eval([1.0], [1.0, 2.0], _hyper())
    with pytest.raises(ValueError):
        kernel_eval([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], _hyper(ls=(1.0, 1.0)))


def test_hyper_validation():
    with pytest.raises(ValueError):
        KernelHyper(signal_variance=-1.0, length_scales=np.ones(2), noise_variance=0.1)
    with pytest.raises(ValueError):
        KernelHyper(signal_variance=1.0, length_scales=np.array([1.0, 0.0]),
                    noise_variance=0.1)
    with pytest.raises(ValueError):
        KernelHyper(signal_variance=1.0, length_scales=np.ones(2), noise_variance=0.0)


# ---------------------------------------------------------------------------
# log marginal likelihood
# ---------------------------------------------------------------------------


def test_lml_scalar_closed_form():
    # n = 1: value = -0.5 g^2 / (sv + nv) - 0.5 log(sv + nv) - 0.5 log(2 pi)
    data0 = Dataset(inputs=np.zeros((1, 1)), targets=np.array([0.0]))
    h = KernelHyper(signal_variance=0.6, length_scales=np.ones(1), noise_variance=0.4)
    v0, _ = log_marginal_likelihood(data0, h)
    assert v0 == pytest.approx(-0.9189385332046727, abs=1e-9)
    data1 = Dataset(inputs=np.zeros((1, 1)), targets=np.array([1.0]))
    v1, _ = log_marginal_likelihood(data1, h)
    assert v1 == pytest.approx(-1.4189385332046727, abs=1e-9)


def _fd_gradient(data, hyper, step=1e-5):
    theta = hyper.to_log_vector()
    fd = np.empty_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += step
        tm[i] -= step
        vp, _ = log_marginal_likelihood(data, KernelHyper.from_log_vector(tp))
        vm, _ = log_marginal_likelihood(data, KernelHyper.from_log_vector(tm))
        fd[i] = (vp - vm) / (2.0 * step)
    return fd


def test_lml_gradient_matches_finite_differences():
    rng = np.random.default_rng(42)
    for _ in range(20):
        n = rng.integers(3, 31)
        d = rng.integers(1, 3)
        data = Dataset(inputs=rng.normal(size=(n, d)) * 2.0,
                       targets=rng.normal(size=n))
        hyper = KernelHyper(
            signal_variance=float(rng.uniform(0.2, 3.0)),
            length_scales=rng.uniform(0.3, 4.0, size=d),
            noise_variance=float(rng.uniform(0.01, 0.5)),
        )
        _, grad = log_marginal_likelihood(data, hyper)
        fd = _fd_gradient(data, hyper)
        denom = np.maximum.reduce([np.abs(grad), np.abs(fd), np.full_like(fd, 1e-3)])
        assert np.max(np.abs(grad - fd) / denom) <= 1e-4


def test_lml_ill_conditioned_error_names_hyper():
    # duplicate rows and venomously small noise slip past the jitter guard
    x = np.zeros((40, 1))
    data = Dataset(inputs=x, targets=np.zeros(40))
    bad = KernelHyper(signal_variance=1e18, length_scales=np.ones(1),
                      noise_variance=1e-10)
    with pytest.raises(IllConditionedKernelError) as exc:
        log_marginal_likelihood(data, bad)
    assert "noise_variance" in str(exc.value)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def test_train_interpolates_noise_free_constant():
    x = np.linspace(0.0, 1.0, 8).reshape(-1, 1)
    data = Dataset(inputs=x, targets=np.full(8, 1.3))
    init = KernelHyper(signal_variance=1.0, length_scales=np.array([0.5]),
                       noise_variance=0.1)
    model = train_exact(data, init)
    means, _ = model.predict_batch(x)
    np.testing.assert_allclose(means, data.targets, atol=1e-6)


def test_train_fixed_point_when_init_optimal():
    rng = np.random.default_rng(3)
    x = np.linspace(0.0, 6.0, 25).reshape(-1, 1)
    y = np.sin(x[:, 0]) + 0.05 * rng.standard_normal(25)
    data = Dataset(inputs=x, targets=y)
    init = KernelHyper(signal_variance=1.0, length_scales=np.array([1.0]),
                       noise_variance=0.05)
    first = train_exact(data, init)
    again = train_exact(data, first.hyper)
    np.testing.assert_allclose(again.hyper.to_log_vector(),
                               first.hyper.to_log_vector(), atol=1e-4)


def test_train_never_worse_than_init():
    rng = np.random.default_rng(11)
    data = Dataset(inputs=rng.normal(size=(15, 2)), targets=rng.normal(size=15))
    init = KernelHyper(signal_variance=0.5, length_scales=np.array([1.0, 2.0]),
                       noise_variance=0.2)
    v_init, _ = log_marginal_likelihood(data, init)
    model = train_exact(data, init)
    v_final, _ = log_marginal_likelihood(data, model.hyper)
    assert v_final >= v_init - 1e-9


def test_train_beats_linear_fit_on_sine():
    rng = np.random.default_rng(7)
    x = rng.uniform(0.0, 2.0 * np.pi, size=50)
    y = np.sin(x) + 0.01 * rng.standard_normal(50)
    x_tr, y_tr = x[:40], y[:40]
    x_te, y_te = x[40:], y[40:]
    data = Dataset(inputs=x_tr.reshape(-1, 1), targets=y_tr)
    init = KernelHyper(signal_variance=1.0, length_scales=np.array([1.0]),
                       noise_variance=0.1)
    model = train_exact(data, init)
    gp_pred, _ = model.predict_batch(x_te.reshape(-1, 1))
    gp_rmse = np.sqrt(np.mean((gp_pred - y_te) ** 2))
    # least-squares line oracle
    coef = np.polyfit(x_tr, y_tr, 1)
    line_rmse = np.sqrt(np.mean((np.polyval(coef, x_te) - y_te) ** 2))
    assert gp_rmse < line_rmse


# ---------------------------------------------------------------------------
# exact prediction
# ---------------------------------------------------------------------------


def test_predict_interpolates_training_point():
    rng = np.random.default_rng(1)
    x = rng.uniform(-2, 2, size=(10, 2))
    y = rng.normal(size=10)
    h = KernelHyper(signal_variance=1.0, length_scales=np.array([1.0, 1.0]),
                    noise_variance=1e-10)
    model = GpModel.from_data(Dataset(inputs=x, targets=y), h)
    mean, var = model.predict(x[3])
    assert mean == pytest.approx(y[3], abs=1e-5)
    assert 0.0 <= var <= 1e-6


def test_predict_prior_reversion_far_from_data():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, size=(12, 2))
    y = rng.normal(size=12)
    h = _hyper(sv=1.8, ls=(1.0, 2.0), nv=0.05)
    model = GpModel.from_data(Dataset(inputs=x, targets=y), h)
    mean, var = model.predict([80.0, -90.0])
    assert mean == pytest.approx(0.0, abs=1e-6)
    assert var == pytest.approx(1.8, abs=1e-6)


def test_predict_matches_explicit_two_point_inverse():
    from gpplatoon.gp import JITTER, _kernel_matrix

    x = np.array([[0.3, -0.2], [1.1, 0.7]])
    y = np.array([0.5, -1.2])
    h = _hyper(sv=1.4, ls=(0.8, 1.9), nv=0.1)
    model = GpModel.from_data(Dataset(inputs=x, targets=y), h)
    xq = np.array([0.6, 0.1])
    k = _kernel_matrix(x, x, h) + (h.noise_variance + JITTER) * np.eye(2)
    kinv = np.linalg.inv(k)
    kq = _kernel_matrix(xq.reshape(1, -1), x, h)[0]
    mean_o = kq @ kinv @ y
    var_o = h.signal_variance - kq @ kinv @ kq
    mean, var = model.predict(xq)
    assert mean == pytest.approx(mean_o, abs=1e-10)
    assert var == pytest.approx(var_o, abs=1e-10)


def test_predict_variance_within_prior_bounds():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(30, 2))
    y = rng.normal(size=30)
    h = _hyper(sv=2.2, ls=(0.7, 1.3), nv=0.02)
    model = GpModel.from_data(Dataset(inputs=x, targets=y), h)
    _, variances = model.predict_batch(rng.normal(size=(200, 2)) * 3.0)
    assert np.all(variances >= 0.0)
    assert np.all(variances <= h.signal_variance + 1e-9)


def test_adding_data_never_increases_variance():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(15, 2))
    y = rng.normal(size=15)
    extra_x = rng.normal(size=(1, 2))
    extra_y = rng.normal(size=1)
    h = _hyper(sv=1.0, ls=(1.0, 1.0), nv=0.05)
    small = GpModel.from_data(Dataset(inputs=x, targets=y), h)
    big = GpModel.from_data(
        Dataset(inputs=np.vstack([x, extra_x]), targets=np.append(y, extra_y)), h
    )
    queries = rng.normal(size=(50, 2)) * 2.0
    _, var_small = small.predict_batch(queries)
    _, var_big = big.predict_batch(queries)
    assert np.all(var_big <= var_small + 1e-9)


def test_gram_plus_noise_is_spd():
    rng = np.random.default_rng(13)
    for _ in range(5):
        x = rng.normal(size=(25, 2))
        h = KernelHyper(signal_variance=1.0, length_scales=np.array([1.0, 1.0]),
                        noise_variance=1e-10)
        model = GpModel.from_data(Dataset(inputs=x, targets=rng.normal(size=25)), h)
        assert np.all(np.diag(model.chol_factor) > 0)


# ---------------------------------------------------------------------------
# FIC sparse approximation
# ---------------------------------------------------------------------------


def _random_model(rng, n=40, nv=0.05):
    x = rng.uniform(-3, 3, size=(n, 2))
    y = np.sin(x[:, 0]) * np.cos(0.5 * x[:, 1]) + 0.1 * rng.standard_normal(n)
    h = _hyper(sv=1.0, ls=(1.0, 1.5), nv=nv)
    return GpModel.from_data(Dataset(inputs=x, targets=y), h)


def test_sparse_full_inducing_matches_exact():
    rng = np.random.default_rng(21)
    for trial in range(2):
        model = _random_model(rng)
        sparse = build_sparse(model, m=model.dataset.n,
                              opts=SparseOpts(optimize=False, init=model.dataset.inputs))
        grid = rng.uniform(-3, 3, size=(100, 2))
        m_e, v_e = model.predict_batch(grid)
        m_s, v_s = sparse.predict_batch(grid)
        np.testing.assert_allclose(m_s, m_e, atol=1e-6)
        np.testing.assert_allclose(v_s, v_e, atol=1e-6)


def test_sparse_prior_reversion_far_from_inducing():
    rng = np.random.default_rng(23)
    model = _random_model(rng)
    sparse = build_sparse(model, m=8, opts=SparseOpts(seed=1))
    mean, var = sparse.predict([500.0, -400.0])
    assert mean == pytest.approx(0.0, abs=1e-6)
    assert var == pytest.approx(model.hyper.signal_variance, abs=1e-6)


def test_sparse_inducing_count_bounds():
    rng = np.random.default_rng(25)
    model = _random_model(rng, n=10)
    with pytest.raises(ValueError):
        build_sparse(model, m=11)
    with pytest.raises(ValueError):
        build_sparse(model, m=0)


def test_sparse_single_inducing_converges_to_centroid():
    # symmetric 1-D data centered at the origin
    x = np.array([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0]).reshape(-1, 1)
    y = np.exp(-x[:, 0] ** 2)
    h = KernelHyper(signal_variance=0.5, length_scales=np.array([1.0]),
                    noise_variance=0.05)
    model = GpModel.from_data(Dataset(inputs=x, targets=y), h)
    sparse = build_sparse(model, m=1, opts=SparseOpts(seed=0, max_iter=200))
    grid = np.linspace(-2.5, 2.5, 501)
    vals = [fic_log_marginal_likelihood(model.dataset, h, np.array([[z]])) for z in grid]
    z_best = grid[int(np.argmax(vals))]
    z_opt = float(sparse.inducing[0, 0])
    assert abs(z_opt - z_best) < 0.05 or fic_log_marginal_likelihood(
        model.dataset, h, sparse.inducing
    ) >= max(vals) - 1e-6
    assert abs(z_opt) < 0.25


def test_sparse_default_inducing_count_is_20():
    import inspect

    from gpplatoon.gp import build_sparse as bs

    assert inspect.signature(bs).parameters["m"].default == 20


# ---------------------------------------------------------------------------
# normal quantile
# ---------------------------------------------------------------------------


def test_quantile_median_is_zero():
    assert normal_quantile(0.5) == pytest.approx(0.0, abs=1e-12)


def test_quantile_reference_values():
    assert normal_quantile(0.95) == pytest.approx(1.6448536269514722, abs=1e-8)
    assert normal_quantile(0.975) == pytest.approx(1.9599639845400545, abs=1e-8)


def test_quantile_against_scipy_oracle():
    ps = np.concatenate([
        np.array([1e-9, 1e-6, 1e-4, 0.02425, 0.5, 0.97575, 0.9999]),
        np.linspace(0.001, 0.999, 199),
    ])
    for p in ps:
        assert abs(normal_quantile(float(p)) - norm.ppf(p)) <= 1e-8


def test_quantile_domain_errors():
    for p in (0.0, 1.0, -0.1, 1.1):
        with pytest.raises(ValueError):
            normal_quantile(p)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_model_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(31)
    model = _random_model(rng, n=12)
    path = tmp_path / "exact.txt"
    save_model(model, path)
    loaded = load_model(path)
    q = rng.normal(size=(5, 2))
    np.testing.assert_array_equal(model.predict_batch(q)[0], loaded.predict_batch(q)[0])
    np.testing.assert_array_equal(model.predict_batch(q)[1], loaded.predict_batch(q)[1])
    # byte-stable rewrite
    path2 = tmp_path / "exact2.txt"
    save_model(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_model_roundtrip_sparse(tmp_path):
    rng = np.random.default_rng(33)
    model = _random_model(rng, n=30)
    sparse = build_sparse(model, m=6, opts=SparseOpts(seed=2))
    path = tmp_path / "sparse.txt"
    save_model(sparse, path)
    loaded = load_model(path)
    assert isinstance(loaded, SparseGpModel)
    q = rng.normal(size=(5, 2))
    np.testing.assert_array_equal(sparse.predict_batch(q)[0], loaded.predict_batch(q)[0])
    np.testing.assert_array_equal(sparse.predict_batch(q)[1], loaded.predict_batch(q)[1])


def test_dataset_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(35)
    data = Dataset(inputs=rng.normal(size=(7, 2)), targets=rng.normal(size=7))
    path = tmp_path / "data.csv"
    save_dataset_csv(data, path)
    assert path.read_text().splitlines()[0] == "a1,a2,g"
    loaded = load_dataset_csv(path)
    np.testing.assert_array_equal(loaded.inputs, data.inputs)
    np.testing.assert_array_equal(loaded.targets, data.targets)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(inputs=np.ones((3, 2)), targets=np.ones(4))
    with pytest.raises(ValueError):
        Dataset(inputs=np.array([[np.nan, 1.0]]), targets=np.array([1.0]))
