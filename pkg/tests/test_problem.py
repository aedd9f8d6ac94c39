import dataclasses
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import crandn, five_user_instance, full_instance, scalar_instance
from stiefel_tim import problem as problem_mod
from stiefel_tim.experiments import random_topology
from stiefel_tim.linalg import DimensionError
from stiefel_tim.manifold import FactorPoint, random_horizontal, random_point
from stiefel_tim.problem import (
    SUM_TO_IDENTITY,
    ZERO,
    InternalConsistencyError,
    MalformedInstanceError,
    NetworkInstance,
    ProblemHandle,
    apply_affine,
    balance_factors,
    build_affine_system,
    cost,
    euclidean_gradient,
    hessian_operator,
    recover_X,
    residual,
    riemannian_gradient,
    riemannian_hessian,
)
from stiefel_tim.rank_search import nuclear_norm_analytic_optimum


# ---------------------------------------------------------------- oracles


def block_constraints(inst, X):
    """Constraint values and targets by slicing the blocks of X directly."""
    m, off, d = inst.m, inst.offsets, inst.d
    rows = lambda k: slice(off[k], off[k] + d[k])
    cols = lambda j, i: slice(j * m + off[i], j * m + off[i] + d[i])
    vals, targets = [], []
    for k in range(inst.K):
        total = np.zeros((d[k], d[k]), dtype=complex)
        for j in range(inst.K):
            if (k, j) in inst.edges and k in inst.sharing[j]:
                total += X[rows(k), cols(j, k)]
        vals.extend(total.ravel())
        targets.extend(np.eye(d[k]).ravel())
    for k in range(inst.K):
        for j in range(inst.K):
            if (k, j) not in inst.edges:
                continue
            for i in sorted(inst.sharing[j] - {k}):
                vals.extend(X[rows(k), cols(j, i)].ravel())
                targets.extend([0.0] * (d[k] * d[i]))
    return np.array(vals), np.array(targets)


def count_constraints(inst):
    l = sum(dk * dk for dk in inst.d)
    for k, j in inst.edges:
        l += sum(inst.d[k] * inst.d[i] for i in inst.sharing[j] if i != k)
    return l


def dense_terms(p, Y):
    sys = p.system
    As = [sys.coefficient_matrix(i) for i in range(sys.l)]
    L, R = Y[: sys.m], Y[sys.m :]
    C = np.array([np.sum(A * (L @ R.conj().T)) for A in As]) - sys.b
    return As, C


def dense_gradient(p, Y):
    sys = p.system
    As, C = dense_terms(p, Y)
    out = np.zeros_like(Y, dtype=complex)
    for A, c in zip(As, C):
        B = np.zeros((sys.N, sys.N))
        B[: sys.m, sys.m :] = A
        out += (c * B + np.conj(c) * B.T) @ Y
    return out


def kron_projection(Y, v):
    """Horizontal projection by a vectorized Lyapunov solve."""
    r = Y.shape[1]
    G = Y.conj().T @ Y
    S = Y.conj().T @ v - v.conj().T @ Y
    op = np.kron(np.eye(r), G) + np.kron(G.T, np.eye(r))
    W = np.linalg.solve(op, S.reshape(-1, order="F")).reshape(r, r, order="F")
    return v - Y @ W


def dense_hessian(p, Y, eta):
    sys = p.system
    m = sys.m
    As, C = dense_terms(p, Y)
    L, R, eL, eR = Y[:m], Y[m:], eta[:m], eta[m:]
    dX = L @ eR.conj().T + eL @ R.conj().T
    S = sum(c * A for A, c in zip(As, C))
    S_eta = sum(np.sum(A * dX) * A for A in As)
    D = np.vstack([S_eta @ R + S @ eR, S_eta.conj().T @ L + S.conj().T @ eL])
    return kron_projection(Y, D)


def random_case(seed, K_max=4):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, K_max + 1))
    inst = random_topology(K, rng.random(), rng.random(), int(rng.integers(1, 3)), rng)
    sys = build_affine_system(inst)
    r = int(rng.integers(1, min(3, sys.N) + 1))
    Y = random_point(sys.N, r, rng)
    return rng, inst, ProblemHandle(sys, r), FactorPoint(Y.Y / np.sqrt(np.linalg.norm(Y.Y)))


# ---------------------------------------------------------------- instances


def test_instance_requires_direct_links():
    with pytest.raises(MalformedInstanceError, match=r"edges: direct link \[2, 2\]"):
        NetworkInstance.from_lists(2, 1, [(0, 0)], [{0}, {1}])


def test_instance_requires_own_message():
    with pytest.raises(MalformedInstanceError, match="sharing: transmitter 2"):
        NetworkInstance.from_lists(2, 1, [(0, 0), (1, 1)], [{0}, {0}])


def test_instance_rejects_out_of_range_edge():
    with pytest.raises(MalformedInstanceError, match="out of range"):
        NetworkInstance.from_lists(2, 1, [(0, 0), (1, 1), (0, 5)], [{0}, {1}])


def test_instance_rejects_bad_streams():
    with pytest.raises(MalformedInstanceError, match="d:"):
        NetworkInstance.from_lists(2, [1, 0], [(0, 0), (1, 1)], [{0}, {1}])


@pytest.mark.parametrize(
    "payload, field",
    [
        ({"edges": [], "sharing": []}, "K"),
        ({"K": 0, "edges": [], "sharing": []}, "K"),
        ({"K": 1, "sharing": [[1]]}, "edges"),
        ({"K": 1, "edges": [[1, 1]]}, "sharing"),
        ({"K": 1, "edges": [[1, "x"]], "sharing": [[1]]}, "edges"),
        ({"K": 1, "d": "two", "edges": [[1, 1]], "sharing": [[1]]}, "d"),
    ],
)
def test_from_dict_names_offending_field(payload, field):
    with pytest.raises(MalformedInstanceError, match=f"^{field}"):
        NetworkInstance.from_dict(payload)


def test_from_json_rejects_invalid_text():
    with pytest.raises(MalformedInstanceError, match="topology"):
        NetworkInstance.from_json("{not json")


def test_json_uses_one_based_indices():
    data = json.loads(full_instance(2, sharing=False).to_json())
    assert data == {"K": 2, "d": [1, 1], "edges": [[1, 1], [1, 2], [2, 1], [2, 2]], "sharing": [[1], [2]]}


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), K=st.integers(1, 6), p=st.floats(0, 1), q=st.floats(0, 1), d=st.integers(1, 3))
def test_json_round_trip(seed, K, p, q, d):
    inst = random_topology(K, p, q, d, seed)
    back = NetworkInstance.from_json(inst.to_json())
    assert (back.K, back.d, back.edges, back.sharing) == (inst.K, inst.d, inst.edges, inst.sharing)


def test_dimensions():
    inst = NetworkInstance.from_lists(3, [1, 2, 1], [(k, k) for k in range(3)], [{0}, {1}, {2}])
    assert (inst.m, inst.n, inst.N) == (4, 12, 16)
    assert list(inst.offsets) == [0, 1, 3]


# ---------------------------------------------------------------- affine system


def test_scalar_system():
    sys = build_affine_system(scalar_instance())
    assert (sys.m, sys.n, sys.l) == (1, 1, 1)
    assert np.array_equal(sys.coefficient_matrix(0), [[1.0]])
    assert list(sys.b) == [1.0]


def test_two_user_full_sharing_system():
    sys = build_affine_system(full_instance(2, sharing=True))
    assert sys.l == 6
    # columns: (tx1,msg1), (tx1,msg2), (tx2,msg1), (tx2,msg2)
    found = {(s, float(sys.b[i])) for i, s in enumerate(sys.supports())}
    assert found == {((0, 2), 1.0), ((5, 7), 1.0), ((1,), 0.0), ((3,), 0.0), ((4,), 0.0), ((6,), 0.0)}
    assert list(sys.kind).count(SUM_TO_IDENTITY) == 2


def test_five_user_constraint_pattern():
    inst = five_user_instance()
    sys = build_affine_system(inst)
    zero_entries = {s[0] for s, kind in zip(sys.supports(), sys.kind) if kind == ZERO}
    m, n = inst.m, inst.n
    # receiver 2 hears transmitter 3: its message block there must vanish
    assert 1 * n + 2 * m + 2 in zero_entries
    # receiver 3 does not hear transmitter 2: that entry is free
    assert 2 * n + 1 * m + 1 not in set(sys.flat_index)


def test_lifted_matrix_embeds_coefficients():
    sys = build_affine_system(full_instance(2))
    B = sys.lifted_matrix(0)
    assert np.array_equal(B[: sys.m, sys.m :], sys.coefficient_matrix(0))
    assert np.count_nonzero(B) == np.count_nonzero(sys.coefficient_matrix(0))


def test_system_invariants_and_count():
    rng = np.random.default_rng(11)
    for _ in range(20):
        K = int(rng.integers(1, 6))
        inst = random_topology(K, rng.random(), rng.random(), int(rng.integers(1, 3)), rng)
        sys = build_affine_system(inst)
        assert sys.l == count_constraints(inst)
        assert set(np.unique(sys.b)) <= {0.0, 1.0}
        assert set(np.unique(sys.kind)) <= {SUM_TO_IDENTITY, ZERO}
        assert len(set(sys.supports())) == sys.l
        assert np.unique(sys.flat_index).size == sys.flat_index.size
        for i in range(sys.l):
            assert set(np.unique(sys.coefficient_matrix(i))) == {0.0, 1.0} or sys.m * sys.n == 1


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_apply_affine_matches_block_oracle(seed):
    rng = np.random.default_rng(seed)
    inst = random_topology(int(rng.integers(1, 5)), rng.random(), rng.random(), int(rng.integers(1, 3)), rng)
    sys = build_affine_system(inst)
    X = crandn(rng, sys.m, sys.n)
    vals, targets = block_constraints(inst, X)
    assert np.allclose(apply_affine(sys, X), vals, atol=1e-12)
    assert np.array_equal(sys.b, targets)


def test_apply_affine_simple_cases():
    sys = build_affine_system(full_instance(3))
    assert np.array_equal(apply_affine(sys, np.zeros((sys.m, sys.n))), np.zeros(sys.l))
    assert np.array_equal(apply_affine(build_affine_system(scalar_instance()), [[1.0]]), [1.0])
    with pytest.raises(DimensionError):
        apply_affine(sys, np.zeros((2, 2)))


def test_nuclear_norm_optimum_is_exactly_feasible():
    rng = np.random.default_rng(5)
    for _ in range(10):
        inst = random_topology(int(rng.integers(1, 6)), rng.random(), rng.random(), 1, rng)
        sys = build_affine_system(inst)
        X, _ = nuclear_norm_analytic_optimum(sys, inst)
        assert np.allclose(apply_affine(sys, X), sys.b, rtol=0, atol=1e-15)
        # rational check of the same construction
        for s, target in zip(sys.supports(), sys.b):
            k = s[0] // sys.n
            D = [j for j in range(inst.K) if (k, j) in inst.edges and k in inst.sharing[j]]
            total = sum(Fraction(1, len(D)) if idx % sys.n in {j * inst.K + k for j in D} else Fraction(0) for idx in s)
            assert total == Fraction(int(target))


def test_residual_cases():
    K = 4
    sys = build_affine_system(full_instance(K, sharing=False))
    assert residual(sys, np.zeros((sys.m, sys.n))) == pytest.approx(1.0)
    X, _ = nuclear_norm_analytic_optimum(sys, full_instance(K, sharing=False))
    assert residual(sys, X) == 0.0


def test_recover_X(rng):
    Y = random_point(7, 2, rng)
    X = recover_X(Y, 3, 4)
    assert np.allclose(X, Y.Y[:3] @ Y.Y[3:].conj().T)
    assert np.linalg.matrix_rank(X) <= 2
    with pytest.raises(DimensionError):
        recover_X(Y, 3, 5)


def test_balance_factors_keeps_product(rng):
    Y = random_point(9, 2, rng)
    B = balance_factors(Y, 3).Y
    assert np.allclose(recover_X(B, 3, 6), recover_X(Y, 3, 6), atol=1e-12)
    assert np.allclose(B[:3].conj().T @ B[:3], B[3:].conj().T @ B[3:], atol=1e-12)


# ---------------------------------------------------------------- cost and derivatives


def test_cost_scalar_cases():
    p = ProblemHandle(build_affine_system(scalar_instance()), 1)
    assert cost(p, FactorPoint([[0.0], [1.0]])) == 0.5
    assert cost(p, FactorPoint([[1.0], [1.0]])) == 0.0


def test_cost_matches_dense_reconstruction(rng):
    inst = full_instance(2)
    p = ProblemHandle(build_affine_system(inst), 2)
    Y = random_point(p.system.N, 2, rng)
    vals, targets = block_constraints(inst, Y.Y[:2] @ Y.Y[2:].conj().T)
    assert cost(p, Y) == pytest.approx(0.5 * np.sum(np.abs(vals - targets) ** 2), rel=1e-12)


def test_cost_rejects_wrong_shape(rng):
    p = ProblemHandle(build_affine_system(full_instance(2)), 2)
    with pytest.raises(DimensionError):
        cost(p, random_point(p.system.N, 1, rng))


def test_problem_handle_rank_bounds():
    sys = build_affine_system(scalar_instance())
    with pytest.raises(DimensionError):
        ProblemHandle(sys, 3)


def test_gradient_hand_computed():
    p = ProblemHandle(build_affine_system(scalar_instance()), 1)
    assert np.allclose(euclidean_gradient(p, FactorPoint([[2.0], [1.0]])), [[1.0], [2.0]])


def test_gradient_zero_at_solution():
    p = ProblemHandle(build_affine_system(scalar_instance()), 1)
    Y = FactorPoint([[1.0], [1.0]])
    assert np.array_equal(euclidean_gradient(p, Y), np.zeros((2, 1)))
    assert riemannian_gradient(p, Y).norm() == 0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_gradient_matches_dense_and_finite_differences(seed):
    rng, inst, p, Y = random_case(seed)
    G = euclidean_gradient(p, Y)
    assert np.allclose(G, dense_gradient(p, Y.Y), atol=1e-10)
    h = 1e-5
    for _ in range(10):
        V = crandn(rng, *Y.shape)
        fd = (cost(p, FactorPoint(Y.Y + h * V)) - cost(p, FactorPoint(Y.Y - h * V))) / (2 * h)
        exact = np.vdot(G, V).real
        assert abs(fd - exact) <= 1e-6 * max(np.linalg.norm(G) * np.linalg.norm(V), 1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_riemannian_gradient_is_horizontal(seed):
    _, _, p, Y = random_case(seed)
    G = riemannian_gradient(p, Y)
    A = Y.Y.conj().T @ G.xi
    assert np.linalg.norm(A - A.conj().T) <= 1e-8 * max(np.linalg.norm(G.xi) * np.linalg.norm(Y.Y), 1e-12)


def test_riemannian_gradient_flags_inconsistency(monkeypatch, rng):
    p = ProblemHandle(build_affine_system(full_instance(2)), 2)
    Y = random_point(p.system.N, 2, rng)
    monkeypatch.setattr(problem_mod, "_lifted_product", lambda S, Y, m: 1j * np.ones_like(Y))
    with pytest.raises(InternalConsistencyError):
        riemannian_gradient(p, Y)


def test_gauge_invariance(rng):
    p = ProblemHandle(build_affine_system(full_instance(3)), 2)
    Y = random_point(p.system.N, 2, rng)
    Q, _ = np.linalg.qr(crandn(rng, 2, 2))
    YQ = FactorPoint(Y.Y @ Q)
    assert cost(p, YQ) == pytest.approx(cost(p, Y), rel=1e-12)
    assert np.allclose(riemannian_gradient(p, YQ).xi, riemannian_gradient(p, Y).xi @ Q, atol=1e-10)


def test_gradient_cubic_homogeneity_without_targets(rng):
    sys = build_affine_system(full_instance(2))
    p = ProblemHandle(dataclasses.replace(sys, b=np.zeros_like(sys.b)), 2)
    Y = random_point(sys.N, 2, rng)
    c = 1.7
    assert np.allclose(euclidean_gradient(p, FactorPoint(c * Y.Y)), c**3 * euclidean_gradient(p, Y), atol=1e-10)


def test_hessian_of_zero_direction(rng):
    _, _, p, Y = random_case(3)
    assert np.array_equal(hessian_operator(p, Y)(np.zeros(Y.shape, dtype=complex)), np.zeros(Y.shape))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_hessian_matches_dense_oracle(seed):
    rng, _, p, Y = random_case(seed)
    eta = random_horizontal(Y, rng)
    H = riemannian_hessian(p, Y, eta).xi
    ref = dense_hessian(p, Y.Y, eta.xi)
    assert np.linalg.norm(H - ref) <= 1e-8 * max(1.0, np.linalg.norm(ref)) * max(1.0, np.linalg.cond(Y.gram))


def test_hessian_symmetric():
    rng = np.random.default_rng(21)
    for seed in range(50):
        _, _, p, Y = random_case(seed)
        H = hessian_operator(p, Y)
        a, b = random_horizontal(Y, rng).xi, random_horizontal(Y, rng).xi
        Ha, Hb = H(a), H(b)
        err = abs(np.vdot(b, Ha).real - np.vdot(a, Hb).real)
        assert err <= 1e-8 * max(np.linalg.norm(Ha) + np.linalg.norm(Hb), 1e-12)


def test_hessian_linear(rng):
    _, _, p, Y = random_case(8)
    H = hessian_operator(p, Y)
    a, b = random_horizontal(Y, rng).xi, random_horizontal(Y, rng).xi
    assert np.allclose(H(2 * a - 3 * b), 2 * H(a) - 3 * H(b), atol=1e-10)


def test_hessian_first_order_decay():
    rng = np.random.default_rng(4)
    for seed in range(10):
        _, _, p, Y = random_case(seed + 100)
        eta = random_horizontal(Y, rng)
        He = riemannian_hessian(p, Y, eta).xi
        g0 = riemannian_gradient(p, Y).xi
        errs = []
        for t in (1e-3, 1e-4, 1e-5):
            gt = riemannian_gradient(p, FactorPoint(Y.Y + t * eta.xi)).xi
            errs.append(np.linalg.norm(kron_projection(Y.Y, (gt - g0) / t) - He))
        scale = max(np.linalg.norm(He), np.linalg.norm(g0))
        assert errs[-1] / scale < 1e-7 or (errs[1] < 0.2 * errs[0] and errs[2] < 0.2 * errs[1])
