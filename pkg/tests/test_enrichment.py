import warnings

import numpy as np
import numpy.testing as npt
import pytest

from cutiga.assemble import (
    ProblemData,
    apply_mixing,
    assemble,
    cleanup_zero_rows,
    error_norms,
    recover_coefficients,
    scale_system,
    solve,
)
from cutiga.bspline import unit_square_space
from cutiga.enrich import (
    MethodVariant,
    apply_projection_T,
    build_enrichment,
    enrichment_at,
    mu_counts,
    orthogonalize_ldl,
    psi_point,
    theta_window,
    variant,
)
from cutiga.experiments import CIRCLE_CENTER, CIRCLE_RADIUS, circle_experiment
from cutiga.geometry import circle_interface, classify_elements, line_interface
from cutiga.quadrature import QuadOptions, RuleCache


def circle_setup(n, tag="sgiga2", **kw):
    iface = circle_interface(CIRCLE_CENTER, CIRCLE_RADIUS, positive="outside")
    sp = unit_square_space(n)
    cls = classify_elements(sp, iface, 3)
    enr = build_enrichment(variant(tag, **kw), sp, iface, cls)
    return sp, iface, cls, enr


def test_variant_tags_and_defaults():
    assert variant("sgiga2").project and variant("sgiga2").orthogonalize
    assert not variant("giga").project and not variant("giga").orthogonalize
    assert not variant("sgiga2", project=False).project
    with pytest.raises(ValueError):
        MethodVariant("nope")


def test_iga_variant_has_no_enrichment():
    sp, iface, cls, enr = circle_setup(6, tag="iga")
    assert enr.n_functions == 0


def test_empty_interface_warns():
    sp = unit_square_space(4)
    far = line_interface((0.0, 5.0), (0.0, 1.0))
    cls = classify_elements(sp, far, 1)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        enr = build_enrichment(variant("giga"), sp, far, cls)
    assert enr.n_functions == 0
    assert any("enrichment is empty" in str(w.message) for w in rec)


def test_mu_counts_far_basis_zero_and_brute_force():
    sp, iface, cls, _ = circle_setup(10)
    mu = mu_counts(cls, sp)
    assert mu[0, 0] == 0  # corner basis far from the interface
    enriched = cls.jf_plus(1)
    for bi in (3, 5, 8):
        for bj in (4, 6, 9):
            rs, rt = sp.basis_support_elements(bi, bj)
            want = sum(1 for ei in rs for ej in rt if enriched[ei, ej])
            assert mu[bi, bj] == want


def test_theta_partition_of_unity_and_positivity():
    sp, iface, cls, _ = circle_setup(10)
    mu = mu_counts(cls, sp)
    enriched = sorted((int(a), int(b)) for a, b in zip(*np.nonzero(cls.jf_plus(1))))
    rng = np.random.default_rng(9)
    from cutiga.enrich import _tensor_rows

    for e in enriched:
        s0, s1, t0, t1 = sp.element_box(*e)
        s = s0 + (s1 - s0) * rng.random(100)
        t = t0 + (t1 - t0) * rng.random(100)
        B, _, _ = _tensor_rows(sp, e, s, t)
        i0, j0 = sp.active_bases(*e)
        total = np.zeros(100)
        for e2 in enriched:
            bidx, wts = theta_window(cls, sp, e2, mu)
            W = np.zeros(9)
            for (bi, bj), wv in zip(bidx, wts):
                a, b = bi - i0, bj - j0
                if 0 <= a < 3 and 0 <= b < 3:
                    W[3 * a + b] = wv
            vals = B @ W
            assert vals.min() >= -1e-14  # nonnegative combination
            total += vals
        assert np.abs(total - 1).max() <= 1e-12


def test_theta_rejects_unenriched_element():
    sp, iface, cls, _ = circle_setup(10)
    with pytest.raises(ValueError):
        theta_window(cls, sp, (0, 0))


def test_dof_counts_circle_20():
    for tag, want in (("iga", 484), ("giga-star", 592), ("sgiga2", 808)):
        sp, iface, cls, enr = circle_setup(20, tag=tag)
        assert sp.num_basis + enr.n_functions == want


def test_giga_family_window_count_tracks_jf1():
    # at N=20 the dilated band stays clear of the domain boundary, where the
    # anchored-basis map is one to one with jf(1)
    sp, iface, cls, enr = circle_setup(20, tag="giga")
    assert enr.n_functions == int(cls.jf(1).sum())
    sp, iface, cls, enr = circle_setup(20, tag="sgiga-multi")
    assert enr.n_functions == 3 * int(cls.jf(1).sum())


def test_psi_vanishes_where_reproduction_holds():
    # straight interface, generator with a linear factor: the subtraction
    # reproduces it exactly on every element outside the enriched band
    iface = line_interface((0.0, 0.483), (0.0, 1.0))
    sp = unit_square_space(12)
    cls = classify_elements(sp, iface, 3)
    enr = build_enrichment(variant("sgiga2", project=False, orthogonalize=False),
                           sp, iface, cls)
    rng = np.random.default_rng(2)
    enriched = cls.jf_plus(1)
    checked = 0
    for _ in range(300):
        s, t = rng.random(2)
        ei = min(int(s * 12), 11)
        ej = min(int(t * 12), 11)
        if enriched[ei, ej]:
            continue
        _, vals, _, _ = enrichment_at(enr, (ei, ej), [s], [t])
        if vals.size:
            assert np.abs(vals).max() <= 1e-10
            checked += 1
    assert checked > 30  # the sampling actually hit the blending zone


def test_psi_support_is_window_support():
    sp, iface, cls, enr = circle_setup(8, tag="giga-star", project=False,
                                       orthogonalize=False)
    rng = np.random.default_rng(4)
    for l in (0, enr.n_functions // 2, enr.n_functions - 1):
        wid, _ = enr.functions[l]
        supp = enr.window_support_elements(wid)
        for _ in range(60):
            s, t = rng.random(2)
            ei = min(int(s * 8), 7)
            ej = min(int(t * 8), 7)
            if (ei, ej) in supp:
                continue
            v, gx, gy = psi_point(enr, l, s, t)
            assert v == 0.0 and gx == 0.0 and gy == 0.0


def test_weak_discontinuity_captured():
    # the normal derivative of each enrichment function jumps across the
    # interface somewhere inside its window
    sp, iface, cls, enr = circle_setup(10, tag="sgiga2", project=False,
                                       orthogonalize=False)
    cx, cy = CIRCLE_CENTER
    eps = 1e-7
    found = 0
    for l in range(0, enr.n_functions, 7):
        best = 0.0
        for th in np.linspace(0, 2 * np.pi, 60):
            gs = cx + CIRCLE_RADIUS * np.cos(th)
            gt = cy + CIRCLE_RADIUS * np.sin(th)
            if not (0 < gs < 1 and 0 < gt < 1):
                continue
            nx, ny = np.cos(th), np.sin(th)
            _, gxo, gyo = psi_point(enr, l, gs + eps * nx, gt + eps * ny)
            _, gxi, gyi = psi_point(enr, l, gs - eps * nx, gt - eps * ny)
            best = max(best, abs((gxo - gxi) * nx + (gyo - gyi) * ny))
        if best > 1e-3:
            found += 1
    assert found >= enr.n_functions // 14  # most sampled functions show a kink


def _pipeline(exp, tag, n, project, orthogonalize):
    sp = exp.make_space(n)
    cls = classify_elements(sp, exp.iface, 3)
    cache = RuleCache(sp, exp.iface, cls, QuadOptions())
    mv = variant(tag, project=project, orthogonalize=orthogonalize)
    enr = build_enrichment(mv, sp, exp.iface, cls)
    if mv.project and enr.n_functions:
        enr = apply_projection_T(enr, cache)
    sys = assemble(sp, enr, cls, exp.iface, exp.data, cache)
    sys, enr, _ = cleanup_zero_rows(sys)
    mixing = None
    if mv.orthogonalize and sys.n_enr:
        enr, _, piv = orthogonalize_ldl(sys.K_EE, enr)
        mixing = enr.mixing
        sys = apply_mixing(sys, mixing, piv)
    scaled = scale_system(sys)
    c, d = solve(scaled)
    c_eff, d_raw = recover_coefficients(enr, c, d, mixing)
    return error_norms(sp, enr, cls, exp.data, c_eff, d_raw, cache), sys


def test_span_preservation_under_transforms():
    # projection and orthogonalization change conditioning, not the solution
    exp = circle_experiment(10.0, 1.0)
    (l2a, h1a), _ = _pipeline(exp, "sgiga2", 10, False, False)
    (l2b, h1b), _ = _pipeline(exp, "sgiga2", 10, True, True)
    assert abs(h1a - h1b) <= 1e-8 * h1a
    assert abs(l2a - l2b) <= 1e-6 * l2a


def test_projection_annihilates_subspace_members():
    # a psi that already lies in the projection subspace becomes zero
    sp, iface, cls, enr = circle_setup(8, tag="giga-star", project=False,
                                       orthogonalize=False)
    cache = RuleCache(sp, iface, cls, QuadOptions())
    import cutiga.enrich as en

    class ProbeSpace(en.EnrichedSpace):
        # constant generator: each psi = theta_j, a spline inside V_IGA
        def generator_values(self, gid, s, t, B=None, Gs=None, Gt=None):
            z = np.zeros_like(np.asarray(s, float))
            return np.ones_like(z), z, z.copy()

    probe = ProbeSpace(sp, iface, enr.variant, enr.windows,
                       [(w, 0) for w in range(len(enr.windows))],
                       [en.Generator("one-sided", (0, 0))])
    probe2 = en.apply_projection_T(probe, cache)
    rng = np.random.default_rng(8)
    for _ in range(40):
        s, t = rng.random(2)
        for l in range(0, probe2.n_functions, 9):
            v, _, _ = en.psi_point(probe2, l, s, t)
            assert abs(v) <= 1e-10


def test_projection_leaves_orthogonal_psi_unchanged():
    # a window far from the enriched band (the lower-left corner at N=20 is
    # more than eight elements from the circle) has no overlap with the
    # projection subspace, so its function is already orthogonal and
    # survives the transform unchanged
    sp, iface, cls, enr = circle_setup(20, tag="giga-star", project=False,
                                       orthogonalize=False)
    cache = RuleCache(sp, iface, cls, QuadOptions())
    import cutiga.enrich as en

    corner = np.asarray([(0, 0)], dtype=int)
    windows = enr.windows + [(corner, np.ones(1))]
    probe = en.EnrichedSpace(sp, iface, enr.variant, windows,
                             enr.functions + [(len(windows) - 1, 0)],
                             enr.generators)
    probe2 = en.apply_projection_T(probe, cache)
    l = probe2.n_functions - 1
    assert np.abs(probe2.T[:, l]).max() <= 1e-12
    rng = np.random.default_rng(5)
    for _ in range(20):
        s, t = 0.1 * rng.random(2)
        before = psi_point(probe, l, s, t)[0]
        after = psi_point(probe2, l, s, t)[0]
        assert abs(after - before) <= 1e-12 * max(1.0, abs(before))


def test_projection_orthogonality_oracle():
    # after the transform, every enrichment function is L2-orthogonal to the
    # subspace splines (checked by independent quadrature)
    sp, iface, cls, enr0 = circle_setup(8, tag="sgiga2", project=False,
                                        orthogonalize=False)
    cache = RuleCache(sp, iface, cls, QuadOptions())
    enr = apply_projection_T(enr0, cache)
    from cutiga.enrich import _tensor_rows

    n_sub = len(enr.sub_idx)
    G = np.zeros((n_sub, enr.n_functions))
    norms = np.zeros(n_sub)
    pos = {(int(bi), int(bj)): p for p, (bi, bj) in enumerate(enr.sub_idx)}
    ns, nt = sp.n_elements
    for ei in range(ns):
        for ej in range(nt):
            pts, wts, _ = cache.element_rule((ei, ej))
            B, Gs, Gt = _tensor_rows(sp, (ei, ej), pts[:, 0], pts[:, 1])
            i0, j0 = sp.active_bases(ei, ej)
            loc = [(3 * a + b, pos.get((i0 + a, j0 + b)))
                   for a in range(3) for b in range(3)]
            funcs, raw, _, _ = enrichment_at(enr, (ei, ej), pts[:, 0], pts[:, 1], B, Gs, Gt)
            full = np.zeros((pts.shape[0], enr.n_functions))
            if funcs.size:
                full[:, funcs] = raw
            corr = np.zeros((pts.shape[0], enr.n_functions))
            for col, p in loc:
                if p is not None:
                    corr += B[:, [col]] * enr.T[p, :][None, :]
            psi_star = full - corr
            for col, p in loc:
                if p is not None:
                    G[p, :] += (B[:, col] * wts) @ psi_star
                    norms[p] += (B[:, col] * wts) @ B[:, col]
    scale = np.sqrt(norms)[:, None]
    assert np.abs(G / scale).max() <= 1e-10


def test_orthogonalize_examples():
    sp, iface, cls, enr = circle_setup(6, tag="giga-star", project=False,
                                       orthogonalize=False)
    k = enr.n_functions
    diag = np.diag(2.0 + np.arange(k, dtype=float))
    out, kept, piv = orthogonalize_ldl(diag, enr)
    npt.assert_allclose(out.mixing, np.eye(k))
    npt.assert_allclose(piv, np.diag(diag))

    two = circle_setup(6, tag="giga-star", project=False, orthogonalize=False)[3]
    two.functions = two.functions[:2]
    out2, _, piv2 = orthogonalize_ldl(np.array([[2.0, 1.0], [1.0, 2.0]]), two)
    npt.assert_allclose(piv2, [2.0, 1.5])


def test_orthogonalized_gram_is_diagonal_by_reassembly():
    # independent oracle: quadrature of the energy products of the re-based
    # functions, evaluated pointwise, must produce the pivot diagonal
    exp = circle_experiment(10.0, 1.0)
    sp = exp.make_space(6)
    cls = classify_elements(sp, exp.iface, 3)
    cache = RuleCache(sp, exp.iface, cls, QuadOptions(depth=3))
    enr = build_enrichment(variant("giga-star", project=False, orthogonalize=False),
                           sp, exp.iface, cls)
    sys = assemble(sp, enr, cls, exp.iface, exp.data, cache)
    sys, enr, _ = cleanup_zero_rows(sys)
    enr_m, kept, piv = orthogonalize_ldl(sys.K_EE, enr)
    n = enr_m.n_functions
    G = np.zeros((n, n))
    ns, nt = sp.n_elements
    for ei in range(ns):
        for ej in range(nt):
            pts, wts, side = cache.element_rule((ei, ej))
            a_pt = np.where(side > 0, exp.data.a_pos, exp.data.a_neg)
            grads = np.zeros((pts.shape[0], n, 2))
            for p, (s, t) in enumerate(pts):
                for l in range(n):
                    _, gx, gy = psi_point(enr_m, l, float(s), float(t))
                    grads[p, l] = (gx, gy)
            G += np.einsum("p,pld,pmd->lm", wts * a_pt, grads, grads)
    off = G - np.diag(np.diag(G))
    assert np.abs(off).max() <= 1e-10 * np.abs(np.diag(G)).max()
    npt.assert_allclose(np.diag(G), piv, rtol=1e-9)
