import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from causalflow import scm as scm_lib
from causalflow.errors import DomainError, UnknownSCMError
from causalflow.graph import total_effects, transitive_closure

ALL = scm_lib.list_scms()
LINEAR = [n for n in ALL if scm_lib.get_scm(n).linear is not None]


def test_zoo_has_twelve_systems():
    assert len(ALL) == 12


def test_unknown_name():
    with pytest.raises(UnknownSCMError):
        scm_lib.get_scm("nope")


def test_chain3_lin_equations():
    scm = scm_lib.get_scm("chain3-lin")
    np.testing.assert_allclose(scm_lib.solve_recursive(scm, np.zeros(3)), 0.0)
    np.testing.assert_allclose(scm_lib.solve_recursive(scm, np.ones(3)), [1, 9, 4.25])
    np.testing.assert_allclose(scm_lib.abduct_true(scm, [1, 9, 4.25]), [1, 1, 1])


def test_triangle_nlin_third_equation():
    scm = scm_lib.get_scm("triangle-nlin")
    x1, x2, u3 = 0.3, -1.2, 0.7
    m = scm.mechanisms[2]
    got = m.forward(np.array([[x1, x2]]), np.array([u3]))[0]
    assert got == pytest.approx(20 / (1 + np.exp(-x2**2 + x1)) + u3)


def test_largebd_link_function():
    x, y = np.array([0.4, -2.0]), np.array([1.5, 0.1])
    expected = np.log1p(np.exp(x + 1)) + np.log1p(np.exp(0.5 + y)) - 3.0
    np.testing.assert_allclose(scm_lib._l(x, y), expected)
    assert scm_lib.get_scm("largebd-nlin").d == 9


def test_worked_chain():
    scm = scm_lib.get_scm("chain3-toy")
    np.testing.assert_allclose(scm_lib.solve_recursive(scm, np.ones(3)), [1, 3, 10])
    np.testing.assert_allclose(scm_lib.abduct_true(scm, [1, 3, 10]), [1, 1, 1])
    np.testing.assert_allclose(scm_lib.counterfactual_true(scm, [1, 3, 10], 1, 0.0), [1, 0, 1])


def test_worked_chain_intervention_moments():
    scm = scm_lib.get_scm("chain3-toy")
    x = scm_lib.intervene_true(scm, 1, 0.0, 20_000, seed=3)
    n = len(x)
    assert abs(x[:, 2].mean()) < 3 * x[:, 2].std() / np.sqrt(n)
    assert abs(np.corrcoef(x[:, 0], x[:, 2])[0, 1]) < 4 / np.sqrt(n)
    assert np.all(x[:, 1] == 0)


@pytest.mark.parametrize("name", ALL)
def test_round_trip(name):
    scm = scm_lib.get_scm(name)
    u = scm_lib.sample_exogenous(scm, 10_000, 0)
    x = scm_lib.solve_recursive(scm, u)
    np.testing.assert_allclose(scm_lib.abduct_true(scm, x), u, atol=1e-7, rtol=0)


@pytest.mark.parametrize("name", ALL)
def test_mechanisms_only_read_parents(name):
    scm = scm_lib.get_scm(name)
    u = scm_lib.sample_exogenous(scm, 64, 1)
    x = scm_lib.solve_recursive(scm, u)
    for i in range(scm.d):
        assert tuple(sorted(scm.mechanisms[i].parents)) == scm.graph.parents(i)
        for j in set(range(scm.d)) - set(scm.graph.parents(i)) - {i}:
            x2 = x.copy()
            x2[:, j] += 0.37
            m = scm.mechanisms[i]
            np.testing.assert_array_equal(m.forward(x2[:, list(m.parents)], u[:, i]),
                                          m.forward(x[:, list(m.parents)], u[:, i]))


def test_simpson_nlin_domain():
    scm = scm_lib.get_scm("simpson-nlin")
    x = scm_lib.sample(scm, 4, seed=0).x
    x[:, 2] += 50.0
    with pytest.raises(DomainError):
        scm_lib.abduct_true(scm, x)


@pytest.mark.parametrize("name", ALL)
def test_counterfactual_leaves_non_descendants_alone(name):
    scm = scm_lib.get_scm(name)
    x = scm_lib.sample(scm, 200, seed=2).x
    closure = transitive_closure(scm.graph)
    for i in range(scm.d):
        cf = scm_lib.counterfactual_true(scm, x, i, x[:, i] + 0.01)
        keep = [k for k in range(scm.d) if not closure[k, i]]
        np.testing.assert_array_equal(cf[:, keep], x[:, keep])


@pytest.mark.parametrize("name", ALL)
def test_null_counterfactual(name):
    scm = scm_lib.get_scm(name)
    x = scm_lib.sample(scm, 100, seed=5).x
    for i in range(scm.d):
        np.testing.assert_allclose(scm_lib.counterfactual_true(scm, x, i, x[:, i]), x, atol=1e-9)


def test_triangle_ratio_counterfactual():
    scm = scm_lib.get_scm("triangle-ratio")
    x = scm_lib.sample(scm, 50, seed=4).x
    u3 = scm_lib.abduct_true(scm, x)[:, 2]
    alpha = 0.8
    cf = scm_lib.counterfactual_true(scm, x, 1, alpha)
    x1 = x[:, 0]
    np.testing.assert_allclose(cf[:, 2], 2 * x1 + alpha / x1 + alpha / x1**2 + u3, rtol=1e-10)


def test_ate_examples():
    scm = scm_lib.get_scm("chain3-lin")
    np.testing.assert_allclose(scm_lib.ate_true(scm, 0, 1.0, 0.0, n=1000, seed=0), [1, 10, 2.5], atol=1e-10)
    np.testing.assert_array_equal(scm_lib.ate_true(scm, 1, 0.3, 0.3, n=100, seed=0), 0.0)
    np.testing.assert_allclose(scm_lib.ate_true(scm, 2, 2.0, 0.5, n=100, seed=0), [0, 0, 1.5], atol=1e-12)


@pytest.mark.parametrize("name", LINEAR)
def test_ate_matches_path_products(name):
    scm = scm_lib.get_scm(name)
    effects = total_effects(scm.linear.weights)
    for i in range(scm.d):
        got = scm_lib.ate_true(scm, i, 1.5, -0.5, n=4000, seed=i)
        np.testing.assert_allclose(got, 2.0 * effects[:, i], atol=1e-9)


@pytest.mark.parametrize("name", LINEAR)
def test_intervention_blocks_paths(name):
    scm = scm_lib.get_scm(name)
    g = scm.graph
    n = 20_000
    for i in range(scm.d):
        x = scm_lib.intervene_true(scm, i, 0.5, n, seed=10 + i)
        # ancestor/descendant pairs connected only through i
        adj = g.adjacency.copy()
        adj[i, :] = 0
        adj[:, i] = 0
        reach = np.linalg.matrix_power(np.eye(g.d, dtype=int) + adj, g.d) > 0
        for a in g.ancestors(i):
            for e in g.descendants(i):
                if not reach[e, a] and x[:, e].std() > 0:
                    assert abs(np.corrcoef(x[:, a], x[:, e])[0, 1]) < 4 / np.sqrt(n)


@pytest.mark.parametrize("name", LINEAR)
def test_intervention_moments_closed_form(name):
    scm = scm_lib.get_scm(name)
    n = 50_000
    for i in range(scm.d):
        mean, cov = scm_lib.linear_moments(scm, {i: 1.0})
        x = scm_lib.intervene_true(scm, i, 1.0, n, seed=i)
        se = np.sqrt(np.diag(cov) / n)
        assert np.all(np.abs(x.mean(axis=0) - mean) <= 4 * se + 1e-12)


def test_log_prob_chain3_at_zero():
    scm = scm_lib.get_scm("chain3-lin")
    expected = 3 * stats.norm.logpdf(0.0) - np.log(2.0)
    assert scm_lib.log_prob_true(scm, np.zeros(3)) == pytest.approx(expected)


def test_log_prob_identity_scm():
    scm = scm_lib._linear_scm("identity", 3, {}, [1.0, 1.0, 1.0])
    x = np.random.default_rng(0).normal(size=(10, 3))
    np.testing.assert_allclose(scm_lib.log_prob_true(scm, x), stats.norm.logpdf(x).sum(axis=1))


@pytest.mark.parametrize("name", LINEAR)
def test_log_prob_against_gaussian_density(name):
    scm = scm_lib.get_scm(name)
    mean, cov = scm_lib.linear_moments(scm)
    x = scm_lib.sample(scm, 500, seed=1).x
    np.testing.assert_allclose(scm_lib.log_prob_true(scm, x),
                               stats.multivariate_normal(mean, cov).logpdf(x), rtol=1e-9, atol=1e-9)


def test_log_prob_entropy_self_consistency():
    scm = scm_lib.get_scm("chain3-lin")
    _, cov = scm_lib.linear_moments(scm)
    entropy = 0.5 * np.linalg.slogdet(2 * np.pi * np.e * cov)[1]
    lp = scm_lib.log_prob_true(scm, scm_lib.sample(scm, 100_000, seed=9).x)
    assert abs(lp.mean() + entropy) < 4 * lp.std() / np.sqrt(len(lp))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(ALL), st.integers(0, 2**31 - 1))
def test_exogenous_factorizes(name, seed):
    # the joint log density of u is the sum of per-coordinate terms
    scm = scm_lib.get_scm(name)
    u = scm_lib.sample_exogenous(scm, 3, seed)
    joint = scm_lib._base_logpdf(scm, u).sum(axis=1)
    per = sum(scm_lib._base_logpdf(scm, u[:, [k]])[:, 0] for k in range(scm.d))
    np.testing.assert_allclose(joint, per)
