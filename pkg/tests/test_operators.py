import math

import numpy as np
import pytest

from besselpoisson import (
    BesselParam,
    DiscreteMeasure1D,
    DiscreteMeasure2D,
    Interval,
    TwoWeightInstance,
    apply_adjoint,
    apply_forward,
    backward_testing,
    forward_testing,
    interval_family,
    operator_norm,
    run_testing,
)


def closed_form_lambda1(x, t, y):
    return 4.0 * t / (math.pi * ((x - y) ** 2 + t ** 2) * ((x + y) ** 2 + t ** 2))


def random_instance(seed, lam=1.0, n_sigma=8, n_mu=8):
    rng = np.random.default_rng(seed)
    ys = np.sort(rng.uniform(0.3, 9.0, n_sigma))
    sw = rng.uniform(0.2, 3.0, n_sigma)
    xs = rng.uniform(0.3, 9.0, n_mu)
    ts = rng.uniform(0.1, 2.0, n_mu)
    mw = rng.uniform(0.2, 3.0, n_mu)
    sigma = DiscreteMeasure1D(list(zip(ys, sw)))
    mu = DiscreteMeasure2D([((float(x), float(t)), float(w))
                            for x, t, w in zip(xs, ts, mw)])
    return TwoWeightInstance(BesselParam(lam), sigma, mu)


def single_atom_instance():
    sigma = DiscreteMeasure1D([(3.0, 2.0)])
    mu = DiscreteMeasure2D([((1.5, 0.75), 4.0)])
    return TwoWeightInstance(BesselParam(1.0), sigma, mu)


def test_single_atom_norm_and_half_ratio():
    inst = single_atom_instance()
    expected = closed_form_lambda1(1.5, 0.75, 3.0) * math.sqrt(2.0 * 4.0)
    res = run_testing(inst)
    assert res.norm == pytest.approx(expected, rel=1e-10)
    assert res.norm == pytest.approx(0.04614233772496882, rel=1e-12)
    # one atom each side: both testing suprema equal the norm itself
    assert res.forward == pytest.approx(res.norm, rel=1e-12)
    assert res.backward == pytest.approx(res.norm, rel=1e-12)
    assert abs(res.ratio - 0.5) < 1e-12
    assert res.converged
    assert res.forward_witness is not None and res.backward_witness is not None


def test_operator_norm_matches_svd():
    for seed, lam in ((0, 1.0), (1, 0.5), (2, 2.0)):
        inst = random_instance(seed, lam=lam)
        a = (np.sqrt(inst.mu.ws)[:, None] * inst.kernel_matrix()
             * np.sqrt(inst.sigma.ws)[None, :])
        want = float(np.linalg.svd(a, compute_uv=False)[0])
        res = operator_norm(inst)
        assert res.converged
        assert res.value == pytest.approx(want, rel=1e-9)


def test_duality_of_forward_and_adjoint():
    rng = np.random.default_rng(7)
    for seed in range(5):
        inst = random_instance(seed, lam=(0.5, 1.0, 2.0)[seed % 3])
        f = rng.standard_normal(inst.sigma.n)
        g = rng.standard_normal(inst.mu.n)
        lhs = float(np.sum(apply_forward(inst, f) * g * inst.mu.ws))
        rhs = float(np.sum(f * apply_adjoint(inst, g) * inst.sigma.ws))
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_apply_maps_at_explicit_targets():
    inst = single_atom_instance()
    k = closed_form_lambda1(2.0, 0.5, 3.0)
    out = apply_forward(inst, [5.0], targets=[(2.0, 0.5)])
    assert out[0] == pytest.approx(5.0 * 2.0 * k, rel=1e-10)
    k2 = closed_form_lambda1(1.5, 0.75, 7.0)
    out = apply_adjoint(inst, [3.0], targets=[7.0])
    assert out[0] == pytest.approx(3.0 * 4.0 * k2, rel=1e-10)
    with pytest.raises(ValueError):
        apply_forward(inst, [1.0, 2.0])
    with pytest.raises(ValueError):
        apply_adjoint(inst, [1.0, 2.0])


def test_testing_constants_never_exceed_norm():
    for seed in range(6):
        inst = random_instance(10 + seed, lam=(0.5, 1.0, 2.0)[seed % 3])
        res = run_testing(inst)
        bound = res.norm * (1.0 + 1e-10)
        assert res.forward <= bound
        assert res.backward <= bound
        assert 0.0 < res.ratio < math.inf


def test_interval_family_structure():
    inst = random_instance(4)
    fam = interval_family(inst)
    assert fam, "family must be nonempty"
    lengths = [iv.length for iv in fam]
    assert all(iv.a >= 0.0 and iv.b > iv.a for iv in fam)
    assert lengths == sorted(lengths)
    assert len({iv.as_tuple() for iv in fam}) == len(fam)
    # every atom position has some member whose closure contains it
    positions = np.concatenate([inst.sigma.ys, inst.mu.xs])
    for p in positions:
        assert any(iv.a <= p <= iv.b for iv in fam)
    rich = interval_family(inst, shift_thirds=True)
    assert set(iv.as_tuple() for iv in fam) <= set(iv.as_tuple() for iv in rich)


def test_family_enrichment_keeps_testing_stable():
    for seed in (3, 8):
        inst = random_instance(seed, lam=1.0)
        plain = interval_family(inst)
        rich = interval_family(inst, shift_thirds=True)
        f0, _ = forward_testing(inst, plain)
        f1, _ = forward_testing(inst, rich)
        b0, _ = backward_testing(inst, plain)
        b1, _ = backward_testing(inst, rich)
        assert f1 >= f0 - 1e-15 and b1 >= b0 - 1e-15
        assert (f1 + b1) <= 1.10 * (f0 + b0)


def test_weight_scaling_moves_everything_together():
    inst = random_instance(12)
    scaled = TwoWeightInstance(
        inst.param,
        DiscreteMeasure1D(list(zip(inst.sigma.ys, 4.0 * inst.sigma.ws))),
        DiscreteMeasure2D([((float(x), float(t)), 4.0 * float(w)) for x, t, w in
                           zip(inst.mu.xs, inst.mu.ts, inst.mu.ws)]))
    fam = interval_family(inst)
    r0 = run_testing(inst, family=fam)
    r1 = run_testing(scaled, family=fam)
    assert r1.norm == pytest.approx(4.0 * r0.norm, rel=1e-9)
    assert r1.forward == pytest.approx(4.0 * r0.forward, rel=1e-12)
    assert r1.backward == pytest.approx(4.0 * r0.backward, rel=1e-12)
    assert r1.ratio == pytest.approx(r0.ratio, rel=1e-9)


def test_instance_requires_atoms():
    with pytest.raises(ValueError):
        TwoWeightInstance(BesselParam(1.0),
                          DiscreteMeasure1D([(1.0, 1.0)]),
                          DiscreteMeasure2D([]))
