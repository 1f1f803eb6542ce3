"""Spec construction, validation, interpolation, and the hat composites."""

import dataclasses

import numpy as np
import pytest

from regimelq import benchmarks
from regimelq.model import (
    Generator,
    GridRangeError,
    ProblemSpec,
    TimeGrid,
    coeff_at,
    hat_terms,
    validate,
)


def test_grid_rejects_degenerate():
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1.0, 10)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 1)


def test_grid_nodes_strictly_increasing():
    grid = TimeGrid(0.0, 2.0, 7)
    nodes = grid.nodes()
    assert nodes[0] == 0.0 and nodes[-1] == 2.0
    assert np.all(np.diff(nodes) > 0)


def test_validate_well_formed_two_regime():
    assert validate(benchmarks.two_regime_standard(steps=10)) == []


def test_validate_flags_generator_row_sum():
    grid = TimeGrid(0.0, 1.0, 4)
    gen = Generator.constant([[-1.0, 1.1], [0.5, -0.5]], grid)
    spec = benchmarks.two_regime_standard(steps=4)
    bad = dataclasses.replace(spec, gen=gen)
    problems = validate(bad)
    assert any("row sum" in p for p in problems)


def test_validate_flags_asymmetric_weight():
    spec = benchmarks.two_regime_standard(steps=4)
    q_bad = spec.Q.copy()
    q_bad[1, 0, 0, 1] += 1e-3
    bad = dataclasses.replace(spec, Q=q_bad)
    assert any("Q not symmetric" in p for p in validate(bad))


def test_validate_flags_nonfinite():
    spec = benchmarks.scalar_benchmark(steps=4)
    a_bad = spec.A.copy()
    a_bad[0, 0, 0, 0] = np.inf
    assert any("non-finite" in p for p in validate(dataclasses.replace(spec, A=a_bad)))


def test_coeff_at_exact_at_nodes_and_linear_between():
    grid = TimeGrid(0.0, 1.0, 4)
    gen = Generator.constant([[0.0]], grid)
    spec = benchmarks.scalar_benchmark(steps=4)
    a_var = spec.A.copy()
    a_var[:, 0, 0, 0] = np.arange(5, dtype=float)  # A(t_k) = k
    spec = dataclasses.replace(spec, A=a_var, gen=gen)
    for k in range(5):
        assert coeff_at(spec, grid.nodes()[k], 0).A[0, 0] == float(k)
    mid = coeff_at(spec, 0.125, 0)  # midpoint of cell 0
    assert mid.A[0, 0] == pytest.approx(0.5, abs=1e-14)


def test_coeff_at_constant_spec_everywhere():
    spec = benchmarks.two_regime_standard(steps=8)
    co = coeff_at(spec, 0.3777, 1)
    assert np.array_equal(co.A, spec.A[0, 1])
    assert np.array_equal(co.R, spec.R[0, 1])


def test_coeff_at_node_exact_for_every_field():
    spec = benchmarks.two_regime_inhomogeneous(steps=6)
    k = 4
    t_k = spec.grid.nodes()[k]
    co = coeff_at(spec, t_k, 1)
    for name in ("A", "B", "C", "D", "b", "sigma", "Q", "S", "R", "q", "rho"):
        assert np.array_equal(getattr(co, name), getattr(spec, name)[k, 1]), name


def test_coeff_at_out_of_range():
    spec = benchmarks.scalar_benchmark(steps=4)
    with pytest.raises(GridRangeError):
        coeff_at(spec, 1.5, 0)
    with pytest.raises(GridRangeError):
        coeff_at(spec, 0.5, 3)


def test_hat_terms_at_zero_p():
    spec = benchmarks.two_regime_standard(steps=4)
    co = coeff_at(spec, 0.0, 0)
    s_hat, r_hat = hat_terms(co, np.zeros((2, 2)))
    assert np.array_equal(s_hat, co.S)
    assert np.array_equal(r_hat, co.R)


def test_hat_terms_scalar_substitution():
    spec = benchmarks.scalar_benchmark(steps=4)
    co = coeff_at(spec, 0.0, 0)  # B=1, D=0, S=0, R=1
    s_hat, r_hat = hat_terms(co, np.array([[0.7]]))
    assert s_hat[0, 0] == pytest.approx(0.7)
    assert r_hat[0, 0] == pytest.approx(1.0)


def test_hat_terms_no_diffusion_gain():
    spec = benchmarks.two_regime_standard(steps=4)
    d_zero = dataclasses.replace(spec, D=np.zeros_like(spec.D))
    co = coeff_at(d_zero, 0.5, 1)
    rng = np.random.default_rng(1)
    p = rng.normal(size=(2, 2))
    p = p + p.T
    _, r_hat = hat_terms(co, p)
    assert np.array_equal(r_hat, co.R)


def test_hat_terms_symmetric_output():
    spec = benchmarks.two_regime_standard(steps=4)
    co = coeff_at(spec, 0.25, 0)
    rng = np.random.default_rng(5)
    p = rng.normal(size=(2, 2))
    _, r_hat = hat_terms(co, p + p.T)
    assert np.array_equal(r_hat, r_hat.T)


def test_validate_accepts_own_constructors():
    for build in (
        benchmarks.scalar_benchmark,
        benchmarks.two_regime_standard,
        benchmarks.two_regime_inhomogeneous,
        benchmarks.three_regime_decoupled,
        benchmarks.state_decoupled,
    ):
        assert validate(build(steps=6)) == []


def test_with_steps_resamples_exactly_for_constant_fields():
    spec = benchmarks.two_regime_inhomogeneous(steps=10)
    fine = spec.with_steps(20)
    assert fine.grid.steps == 20
    assert np.allclose(fine.A[0], spec.A[0])
    assert np.allclose(fine.gen.rates[7], spec.gen.rates[0])


def test_homogeneous_zeroes_affine_data():
    spec = benchmarks.two_regime_inhomogeneous(steps=6).homogeneous()
    for name in ("b", "sigma", "q", "rho", "g"):
        assert not np.any(getattr(spec, name))
    assert np.any(spec.A)
