import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from philasso.decompose import (
    Decomposition,
    compose,
    partial_inverse,
    penalty_decomposed,
    penalty_weighted,
    weights,
    weights_from_decomposition,
)
from philasso.taxonomy import singleton_taxonomy

from conftest import group_taxonomy, levels_taxonomy, random_taxonomy


def fiber_minimum_slsqp(beta, levels, seed_count=25):
    """Independent oracle: minimize sum(d) + sum|alpha| over all (D, alpha)
    with compose = beta, by multi-start SLSQP on the raw constrained program."""
    from scipy.optimize import minimize

    p = len(beta)
    active = [j for j in range(p) if beta[j] != 0]
    taxa = []  # (level, order, member positions among active)
    memb = []
    for t, level in enumerate(levels):
        row = {}
        for k, g in enumerate(level):
            members = [active.index(j) for j in range(p) if j + 1 in g and beta[j] != 0]
            if members:
                row[k] = len(taxa)
                taxa.append(members)
        memb.append(row)
    n_d = len(taxa)
    n_a = len(active)

    def unpack(x):
        return x[:n_d], x[n_d:]

    def obj(x):
        d, a = unpack(x)
        return d.sum() + np.abs(a).sum()

    def constraints(x):
        d, a = unpack(x)
        out = []
        for ai, j in enumerate(active):
            prod = 1.0
            for t, level in enumerate(levels):
                for k, g in enumerate(level):
                    if j + 1 in g:
                        prod *= d[memb[t][k]]
            out.append(prod * a[ai] - beta[j])
        return np.array(out)

    best = None
    for s in range(seed_count):
        rng = np.random.default_rng(1000 + s)
        x0 = np.concatenate([
            np.abs(rng.normal(1.0, 0.4, n_d)) + 0.3,
            rng.normal(0.0, 1.0, n_a),
        ])
        res = minimize(
            obj, x0, method="SLSQP",
            bounds=[(1e-9, None)] * n_d + [(None, None)] * n_a,
            constraints=[{"type": "eq", "fun": constraints}],
            options={"maxiter": 1000, "ftol": 1e-14},
        )
        if res.success and (best is None or res.fun < best):
            best = res.fun
    return best


class TestCompose:
    def test_lineage_product(self, otu_taxonomy):
        # covariate 3 sits in taxa (Firmicutes, Bacilli, Lactobacillales,
        # Enterococcaceae); its composed value is alpha_3 times those scales
        d = tuple(np.arange(1.0, len(level) + 1.0) for level in otu_taxonomy.grouping_levels)
        alpha = np.zeros(13)
        alpha[2] = 0.5
        decomp = Decomposition(d=d, alpha=alpha)
        beta = compose(decomp, otu_taxonomy)
        memberships = [m[2] for m in otu_taxonomy.membership]
        expected = 0.5 * np.prod([d[t][k] for t, k in enumerate(memberships)])
        assert beta[2] == pytest.approx(expected, rel=1e-15)
        assert np.all(beta[np.arange(13) != 2] == 0)

    def test_all_ones_is_identity(self, otu_taxonomy):
        rng = np.random.default_rng(0)
        alpha = rng.normal(size=13)
        d = tuple(np.ones(len(level)) for level in otu_taxonomy.grouping_levels)
        np.testing.assert_array_equal(compose(Decomposition(d=d, alpha=alpha), otu_taxonomy), alpha)

    def test_zero_scale_annihilates_block(self, otu_taxonomy):
        rng = np.random.default_rng(1)
        alpha = rng.normal(size=13)
        d = tuple(np.ones(len(level)) for level in otu_taxonomy.grouping_levels)
        d[1][1] = 0.0  # Bacilli -> indices 3..8 vanish
        beta = compose(Decomposition(d=d, alpha=alpha), otu_taxonomy)
        assert np.all(beta[2:8] == 0)
        assert np.all(beta[[0, 1, 8, 9, 10, 11, 12]] != 0)

    def test_dimension_mismatch(self, otu_taxonomy):
        with pytest.raises(ValueError, match="grouping levels"):
            compose(Decomposition(d=(np.ones(2),), alpha=np.zeros(13)), otu_taxonomy)


class TestPartialInverse:
    def test_two_level_closed_form(self):
        tax = group_taxonomy([[1, 2]])
        dec = partial_inverse(np.array([3.0, 1.0]), tax)
        assert dec.d[0][0] == pytest.approx(2.0, abs=1e-13)
        np.testing.assert_allclose(dec.alpha, [1.5, 0.5], atol=1e-13)

    def test_zero_beta(self, otu_taxonomy):
        dec = partial_inverse(np.zeros(13), otu_taxonomy)
        assert all(np.all(arr == 0) for arr in dec.d)
        assert np.all(dec.alpha == 0)
        assert dec.residual == 0.0

    def test_singleton_chain(self):
        dec = partial_inverse(np.array([8.0]), singleton_taxonomy(1, 2))
        assert dec.alpha[0] == pytest.approx(2.0, abs=1e-10)
        assert dec.d[0][0] == pytest.approx(2.0, abs=1e-10)
        assert dec.d[1][0] == pytest.approx(2.0, abs=1e-10)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nested_matches_constrained_minimizer(self):
        # oracle-frozen optimum for beta=(4,0,1,1) on root + two pair blocks;
        # the SLSQP fiber minimum is re-derived below and must agree
        levels = [[[1, 2, 3, 4]], [[1, 2], [3, 4]]]
        tax = levels_taxonomy(levels, p=4)
        beta = np.array([4.0, 0.0, 1.0, 1.0])
        dec = partial_inverse(beta, tax)
        assert dec.d[0][0] == pytest.approx(2.2673946737293145, abs=1e-8)
        assert dec.d[1][0] == pytest.approx(1.3282090486175537, abs=1e-8)
        assert dec.d[1][1] == pytest.approx(0.9391856251108051, abs=1e-8)
        np.testing.assert_allclose(
            dec.alpha, [1.3282090486175537, 0.0, 0.4695928125554026, 0.4695928125554026],
            atol=1e-8,
        )
        pen_fp = penalty_decomposed(dec, 1.0)
        pen_oracle = fiber_minimum_slsqp(beta, levels)
        assert pen_fp <= pen_oracle + 1e-7

    def test_sign_convention(self):
        tax = group_taxonomy([[1, 2]])
        dec = partial_inverse(np.array([-3.0, 1.0]), tax)
        assert dec.alpha[0] < 0 < dec.alpha[1]
        assert dec.d[0][0] > 0

    def test_rejects_bad_input(self, otu_taxonomy):
        with pytest.raises(ValueError, match="finite"):
            partial_inverse(np.full(13, np.inf), otu_taxonomy)
        with pytest.raises(ValueError, match="shape"):
            partial_inverse(np.zeros(4), otu_taxonomy)

    @pytest.mark.parametrize("q", [1.0, 2.0, 0.5])
    def test_two_level_closed_form_general_exponent(self, q):
        rng = np.random.default_rng(17)
        for _ in range(20):
            groups, p = [[1, 2, 3], [4, 5], [6]], 6
            tax = group_taxonomy(groups, p)
            beta = rng.normal(size=p) * (rng.uniform(size=p) > 0.2)
            dec = partial_inverse(beta, tax, q=q)
            for k, g in enumerate(groups):
                block = beta[[j - 1 for j in g]]
                norm_q = float(np.sum(np.abs(block) ** q) ** (1 / q))
                if norm_q == 0:
                    assert dec.d[0][k] == 0
                else:
                    assert dec.d[0][k] == pytest.approx(np.sqrt(norm_q), abs=1e-12)
                    np.testing.assert_allclose(
                        dec.alpha[[j - 1 for j in g]], block / np.sqrt(norm_q), atol=1e-12
                    )


class TestRoundTripAndEquilibrium:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 64), st.integers(1, 3), st.booleans())
    def test_compose_partial_inverse_round_trip(self, seed, p, depth, nested):
        rng = np.random.default_rng(seed)
        tax = random_taxonomy(rng, p, depth, nested)
        beta = rng.normal(size=p) * (rng.uniform(size=p) > 0.3)
        dec = partial_inverse(beta, tax)
        back = compose(dec, tax)
        scale = max(1.0, float(np.abs(beta).max()))
        assert np.abs(back - beta).max() / scale < 1e-8

    def test_equilibrium_beats_fiber_perturbations(self, otu_taxonomy):
        rng = np.random.default_rng(5)
        beta = rng.normal(size=13) * (rng.uniform(size=13) > 0.25)
        dec = partial_inverse(beta, otu_taxonomy)
        base = penalty_decomposed(dec, 1.0)
        for _ in range(200):
            t = int(rng.integers(0, otu_taxonomy.depth))
            k = int(rng.integers(0, len(dec.d[t])))
            if dec.d[t][k] == 0:
                continue
            r = float(np.exp(rng.normal(0, 0.5)))
            d2 = tuple(arr.copy() for arr in dec.d)
            d2[t][k] *= r
            alpha2 = dec.alpha.copy()
            members = otu_taxonomy.membership[t] == k
            alpha2[members] /= r
            perturbed = Decomposition(d=d2, alpha=alpha2)
            np.testing.assert_allclose(compose(perturbed, otu_taxonomy), beta, atol=1e-12)
            assert base <= penalty_decomposed(perturbed, 1.0) + 1e-9

    def test_singleton_alpha_closed_form(self):
        rng = np.random.default_rng(23)
        for depth in (1, 2, 3):
            p = 7
            beta = rng.normal(size=p)
            dec = partial_inverse(beta, singleton_taxonomy(p, depth))
            np.testing.assert_allclose(
                np.abs(dec.alpha), np.abs(beta) ** (1 / (depth + 1)), atol=1e-10
            )

    def test_scale_equivariance_on_singletons(self):
        rng = np.random.default_rng(29)
        p, depth = 5, 2
        tax = singleton_taxonomy(p, depth)
        beta = rng.normal(size=p)
        c = 3.7
        dec1 = partial_inverse(beta, tax)
        dec2 = partial_inverse(c * beta, tax)
        f = c ** (1 / (depth + 1))
        np.testing.assert_allclose(dec2.alpha, np.sign(beta) * np.abs(dec1.alpha) * f, atol=1e-9)
        for t in range(depth):
            np.testing.assert_allclose(dec2.d[t], dec1.d[t] * f, atol=1e-9)


class TestWeights:
    def test_two_member_group(self):
        tax = group_taxonomy([[1, 2]])
        np.testing.assert_allclose(weights(np.array([3.0, 1.0]), tax), [2.0, 2.0], atol=1e-12)

    def test_zero_beta_gives_unit_weights(self, otu_taxonomy):
        np.testing.assert_array_equal(weights(np.zeros(13), otu_taxonomy), np.ones(13))

    def test_unit_weights_outside_active_lineage(self, otu_taxonomy):
        beta = np.zeros(13)
        beta[2:5] = (1.0, -2.0, 0.5)  # only the Enterococcaceae block
        w = weights(beta, otu_taxonomy)
        outside = np.ones(13, dtype=bool)
        outside[2:5] = False
        np.testing.assert_array_equal(w[outside], np.ones(outside.sum()))
        assert np.all(w[2:5] > 0)
        assert not np.allclose(w[2:5], 1.0)

    def test_sign_flip_invariance(self, otu_taxonomy):
        rng = np.random.default_rng(31)
        beta = rng.normal(size=13)
        flips = rng.choice([-1.0, 1.0], size=13)
        np.testing.assert_allclose(
            weights(beta, otu_taxonomy), weights(beta * flips, otu_taxonomy), atol=1e-12
        )


class TestPenalties:
    def test_decomposed_example(self):
        dec = Decomposition(d=(np.array([2.0]),), alpha=np.array([1.5, 0.5]))
        assert penalty_decomposed(dec, 1.0) == pytest.approx(4.0)
        # equals 2*sqrt(||beta||_1) for the group it decomposes
        assert penalty_decomposed(dec, 1.0) == pytest.approx(2 * np.sqrt(4.0))

    def test_zero_decomposition(self):
        dec = Decomposition(d=(np.zeros(3),), alpha=np.zeros(5))
        assert penalty_decomposed(dec, 2.0) == 0.0

    def test_singleton_power_form(self):
        rng = np.random.default_rng(37)
        for depth in (1, 2, 4):
            p = 6
            beta = rng.normal(size=p)
            dec = partial_inverse(beta, singleton_taxonomy(p, depth))
            expected = (depth + 1) * np.sum(np.abs(beta) ** (1 / (depth + 1)))
            assert penalty_decomposed(dec, 1.0) == pytest.approx(expected, rel=1e-9)

    def test_bridge_exponent_flag(self):
        dec = Decomposition(d=(np.array([2.0]),), alpha=np.array([1.5, 0.5]))
        expected = 2.0 + np.sqrt(1.5) + np.sqrt(0.5)
        assert penalty_decomposed(dec, 1.0, alpha_exponent=0.5) == pytest.approx(expected)

    def test_weighted_example(self):
        tax = group_taxonomy([[1, 2]])
        val = penalty_weighted(np.array([3.0, 1.0]), np.array([2.0, 2.0]), tax, n=1, lam=1.0)
        assert val == pytest.approx(2.0)

    def test_weighted_zero(self, otu_taxonomy):
        assert penalty_weighted(np.zeros(13), np.ones(13), otu_taxonomy, 5, 0.3) == 0.0

    def test_weighted_rejects_inconsistent_lineage_weights(self, otu_taxonomy):
        w = np.ones(13)
        w[3] = 2.0  # index 4 shares the Enterococcaceae lineage with 3 and 5
        with pytest.raises(ValueError, match="inconsistent"):
            penalty_weighted(np.ones(13), w, otu_taxonomy, 5, 0.3)

    def test_weighted_equals_alpha_mass_at_equilibrium(self, otu_taxonomy):
        rng = np.random.default_rng(41)
        beta = rng.normal(size=13) * (rng.uniform(size=13) > 0.3)
        dec = partial_inverse(beta, otu_taxonomy)
        w = weights_from_decomposition(dec, otu_taxonomy)
        n, lam = 17, 0.05
        val = penalty_weighted(beta, w, otu_taxonomy, n, lam)
        assert val == pytest.approx(n * lam * np.abs(dec.alpha).sum(), rel=1e-10)
        # and the scale-sum identity: sum of all d equals depth * ||alpha||_1
        total_d = sum(arr.sum() for arr in dec.d)
        assert total_d == pytest.approx(otu_taxonomy.depth * np.abs(dec.alpha).sum(), rel=1e-9)
