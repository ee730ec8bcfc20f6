import math

import numpy as np
import pytest

from proxobs.errors import ZeroDirection
from proxobs.scalar_prox import (KINDS, AffineForm, LossSpec, deadzone,
                                 prox_closed_form, prox_oracle_1d,
                                 prox_oracle_batch, psi0_conj_prox,
                                 psi0_conj_value, psi0_subgrad_interval,
                                 psi0_value, sat)


def random_loss(kind, rng):
    lam = float(rng.uniform(0.2, 3.0))
    alpha = float(rng.uniform(0.2, 3.0))
    if kind == "quadratic":
        return LossSpec.quadratic(lam, alpha=alpha)
    if kind == "absolute":
        return LossSpec.absolute(lam, alpha=alpha)
    if kind == "lasso":
        return LossSpec.lasso(lam, gamma=float(rng.uniform(0.2, 2.0)))
    if kind == "huber":
        return LossSpec.huber(lam, mu=float(rng.uniform(0.05, 2.0)), alpha=alpha)
    if kind == "ablog":
        return LossSpec.ablog(lam, mu=float(rng.uniform(0.05, 20.0)), alpha=alpha)
    return LossSpec.vapnik(lam, epsilon=float(rng.uniform(0.0, 1.5)), alpha=alpha)


def loss_term(loss, e):
    """Scalar loss of the residual e, written out from the definitions."""
    a, e = loss.alpha, float(e)
    if loss.kind == "quadratic":
        return a * 0.5 * e * e
    if loss.kind == "absolute":
        return a * abs(e)
    if loss.kind == "huber":
        m = loss.mu
        return a * (e * e / (2.0 * m) if abs(e) <= m else abs(e) - m / 2.0)
    if loss.kind == "ablog":
        m = loss.mu
        return a * (abs(e) - math.log1p(m * abs(e)) / m)
    if loss.kind == "vapnik":
        return a * max(abs(e) - loss.epsilon, 0.0)
    phi = math.copysign(max(abs(e) - loss.gamma / loss.lam, 0.0), e)
    return 0.5 * loss.lam * (e - phi) ** 2 + loss.gamma * abs(phi)


def objective(loss, form, x, z, phi=None):
    d = np.asarray(z) - np.asarray(x)
    e = float(form.a @ np.atleast_1d(z)) + form.b
    if loss.kind == "lasso" and phi is not None:
        return (0.5 * float(d @ d) + 0.5 * loss.lam * (e - phi) ** 2
                + loss.gamma * abs(phi))
    return 0.5 * float(d @ d) + loss_term(loss, e)


def test_sat_and_deadzone_values():
    assert sat(0.5, 1.0) == 0.5
    assert sat(3.0, 1.0) == 1.0
    assert sat(-2.0, 1.0) == -1.0
    assert deadzone(0.5) == 0.0
    assert deadzone(3.0) == 2.0
    assert deadzone(-3.0) == -2.0


def test_deadzone_plus_sat_recovers_input():
    rng = np.random.default_rng(3)
    for e in rng.uniform(-10.0, 10.0, size=300):
        assert deadzone(e) + sat(e, 1.0) == e


def test_loss_spec_rejects_bad_parameters():
    with pytest.raises(ValueError):
        LossSpec(kind="cubic")
    with pytest.raises(ValueError):
        LossSpec(kind="lasso", lam=1.0)
    with pytest.raises(ValueError):
        LossSpec(kind="huber", lam=1.0)
    with pytest.raises(ValueError):
        LossSpec(kind="vapnik", lam=1.0, epsilon=-0.1)
    with pytest.raises(ValueError):
        LossSpec(kind="absolute", lam=0.0)
    with pytest.raises(ValueError):
        LossSpec(kind="absolute", lam=1.0, mu=2.0)


def test_absolute_prox_examples():
    form = AffineForm(a=np.array([1.0]), b=0.0)
    loss = LossSpec.absolute(1.0)
    assert prox_closed_form(np.array([5.0]), form, loss).z_star[0] == pytest.approx(4.0)
    assert prox_closed_form(np.array([0.3]), form, loss).z_star[0] == pytest.approx(0.0)
    assert prox_closed_form(np.array([0.0]), form, loss).z_star[0] == 0.0


def test_lasso_prox_examples():
    form = AffineForm(a=np.array([1.0]), b=0.0)
    loss = LossSpec.lasso(1.0, gamma=1.0)
    res = prox_closed_form(np.array([6.0]), form, loss)
    assert res.z_star[0] == pytest.approx(5.0)
    assert res.phi_star == pytest.approx(4.0)
    res = prox_closed_form(np.array([1.0]), form, loss)
    assert res.z_star[0] == pytest.approx(0.5)
    assert res.phi_star == 0.0
    res = prox_closed_form(np.array([0.0]), form, loss)
    assert res.z_star[0] == 0.0
    assert res.phi_star == 0.0


def test_huber_prox_examples():
    form = AffineForm(a=np.array([1.0]), b=0.0)
    loss = LossSpec.huber(1.0, mu=1.0)
    assert prox_closed_form(np.array([4.0]), form, loss).z_star[0] == pytest.approx(3.0)
    assert prox_closed_form(np.array([1.0]), form, loss).z_star[0] == pytest.approx(0.5)
    assert prox_closed_form(np.array([0.0]), form, loss).z_star[0] == 0.0


def test_ablog_prox_examples():
    form = AffineForm(a=np.array([1.0]), b=0.0)
    loss = LossSpec.ablog(1.0, mu=1.0)
    assert prox_closed_form(np.array([0.0]), form, loss).z_star[0] == 0.0
    root = (3.0 + math.sqrt(29.0)) / 2.0  # z - 5 + z/(1+z) = 0
    assert prox_closed_form(np.array([5.0]), form, loss).z_star[0] == pytest.approx(root, abs=1e-9)
    assert prox_closed_form(np.array([-5.0]), form, loss).z_star[0] == pytest.approx(-root, abs=1e-9)


def test_vapnik_prox_examples():
    form = AffineForm(a=np.array([1.0]), b=0.0)
    loss = LossSpec.vapnik(1.0, epsilon=0.5)
    assert prox_closed_form(np.array([3.0]), form, loss).z_star[0] == pytest.approx(2.0)
    assert prox_closed_form(np.array([0.3]), form, loss).z_star[0] == 0.3
    assert prox_closed_form(np.array([1.0]), form, loss).z_star[0] == pytest.approx(0.5)


def test_vapnik_zero_tube_matches_absolute():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = rng.integers(1, 4)
        x = rng.normal(size=n)
        form = AffineForm(a=rng.normal(size=n) + 0.1, b=float(rng.normal()))
        alpha = float(rng.uniform(0.2, 3.0))
        zv = prox_closed_form(x, form, LossSpec.vapnik(1.0, 0.0, alpha=alpha)).z_star
        za = prox_closed_form(x, form, LossSpec.absolute(1.0, alpha=alpha)).z_star
        assert np.array_equal(zv, za)


def test_zero_direction_is_rejected():
    form = AffineForm(a=np.zeros(2), b=1.0)
    with pytest.raises(ZeroDirection):
        prox_closed_form(np.zeros(2), form, LossSpec.absolute(1.0))


def test_closed_forms_match_search_oracle():
    rng = np.random.default_rng(11)
    for kind in KINDS:
        for _ in range(60):
            n = int(rng.integers(1, 4))
            loss = random_loss(kind, rng)
            x = rng.normal(scale=3.0, size=n)
            a = rng.normal(size=n)
            if np.linalg.norm(a) < 1e-3:
                a = a + 1.0
            form = AffineForm(a=a, b=float(rng.normal()))
            res = prox_closed_form(x, form, loss)
            ref = prox_oracle_1d(x, form, loss)
            gap = objective(loss, form, x, res.z_star, res.phi_star) - \
                objective(loss, form, x, ref.z_star, ref.phi_star)
            assert gap <= 1e-6
            assert np.linalg.norm(res.z_star - ref.z_star) <= 1e-5


def test_batch_oracle_agrees_with_scalar_oracle():
    rng = np.random.default_rng(12)
    for kind in KINDS:
        loss = random_loss(kind, rng)
        m, n = 40, 3
        X = rng.normal(scale=3.0, size=(m, n))
        A = rng.normal(size=(m, n)) + 0.05
        b = rng.normal(size=m)
        Z, _ = prox_oracle_batch(X, A, b, loss)
        for i in range(m):
            ref = prox_oracle_1d(X[i], AffineForm(a=A[i], b=float(b[i])), loss)
            assert np.linalg.norm(Z[i] - ref.z_star) <= 1e-5


def test_prox_is_nonexpansive():
    rng = np.random.default_rng(13)
    for _ in range(1000):
        kind = KINDS[int(rng.integers(0, len(KINDS)))]
        loss = random_loss(kind, rng)
        n = int(rng.integers(1, 4))
        a = rng.normal(size=n) + 0.05
        form = AffineForm(a=a, b=float(rng.normal()))
        x1 = rng.normal(scale=3.0, size=n)
        x2 = rng.normal(scale=3.0, size=n)
        z1 = prox_closed_form(x1, form, loss).z_star
        z2 = prox_closed_form(x2, form, loss).z_star
        assert np.linalg.norm(z1 - z2) <= np.linalg.norm(x1 - x2) + 1e-12


def test_prox_is_identity_when_residual_already_optimal():
    rng = np.random.default_rng(14)
    for kind in ("quadratic", "absolute", "huber", "ablog"):
        for _ in range(20):
            loss = random_loss(kind, rng)
            a = rng.normal(size=3) + 0.05
            x = rng.normal(size=3)
            b = -float(a @ x)
            res = prox_closed_form(x, AffineForm(a=a, b=b), loss)
            assert np.allclose(res.z_star, x, atol=1e-12)
    loss = LossSpec.vapnik(1.0, epsilon=0.5, alpha=2.0)
    a = np.array([1.0, -2.0])
    x = np.array([0.2, 0.0])  # residual 0.2, inside the tube
    res = prox_closed_form(x, AffineForm(a=a, b=0.0), loss)
    assert np.array_equal(res.z_star, x)


def test_prox_is_odd_when_offset_is_zero():
    rng = np.random.default_rng(15)
    for kind in ("absolute", "huber", "ablog", "vapnik"):
        for _ in range(20):
            loss = random_loss(kind, rng)
            a = rng.normal(size=2) + 0.05
            form = AffineForm(a=a, b=0.0)
            x = rng.normal(scale=3.0, size=2)
            zp = prox_closed_form(x, form, loss).z_star
            zm = prox_closed_form(-x, form, loss).z_star
            assert np.allclose(zm, -zp, atol=1e-12)


def test_lasso_sparse_component_thresholds():
    rng = np.random.default_rng(16)
    for _ in range(200):
        loss = random_loss("lasso", rng)
        a = rng.normal(size=2) + 0.05
        form = AffineForm(a=a, b=float(rng.normal()))
        x = rng.normal(scale=3.0, size=2)
        res = prox_closed_form(x, form, loss)
        eta = loss.gamma * (1.0 / loss.lam + float(a @ a))
        rho = (float(a @ x) + form.b) / eta
        if abs(rho) <= 1.0:
            assert res.phi_star == 0.0
        else:
            assert math.copysign(1.0, res.phi_star) == math.copysign(1.0, rho)


def test_unit_loss_values_and_conjugates_are_fenchel_tight():
    rng = np.random.default_rng(17)
    kinds = ("quadratic", "absolute", "huber", "ablog", "vapnik")
    for kind in kinds:
        for _ in range(40):
            loss = random_loss(kind, rng)
            lam = rng.uniform(0.2, 3.0, size=5)
            u = rng.normal(scale=2.0, size=5)
            lo, hi = psi0_subgrad_interval(loss, u, lam=lam)
            for p in (lo, hi):
                lhs = psi0_value(loss, u, lam=lam) + psi0_conj_value(loss, p, lam=lam)
                assert np.all(np.abs(lhs - u * p) <= 1e-9)


def test_conjugate_prox_minimizes_over_grid():
    rng = np.random.default_rng(18)
    for kind in ("absolute", "huber", "vapnik", "ablog"):
        for _ in range(15):
            loss = random_loss(kind, rng)
            lam = rng.uniform(0.2, 3.0, size=1)
            w = float(rng.normal(scale=2.0))
            sigma = float(rng.uniform(0.1, 5.0))
            p_star = psi0_conj_prox(loss, np.array([w]), sigma, lam=lam)
            grid = np.linspace(-1.0 + 1e-9, 1.0 - 1e-9, 200001)
            f_grid = psi0_conj_value(loss, grid, lam=np.full_like(grid, lam[0])) \
                + 0.5 / sigma * (grid - w) ** 2
            f_star = float(psi0_conj_value(loss, p_star, lam=lam)[0]) \
                + 0.5 / sigma * float(p_star[0] - w) ** 2
            assert f_star <= float(f_grid.min()) + 1e-8


def test_quadratic_conjugate_prox_closed_form():
    loss = LossSpec.quadratic(1.0)
    for w, sigma in ((2.0, 1.0), (-3.0, 0.5), (0.7, 4.0)):
        p = psi0_conj_prox(loss, np.array([w]), sigma)
        assert p[0] == pytest.approx(w / (1.0 + sigma), abs=1e-12)
