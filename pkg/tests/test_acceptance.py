"""Release acceptance gate.

Nine numbered criteria, one test each, run against the public API and the
installed CLI.  Every test prints a single summary line with the measured
quantities and enforces both the numeric tolerance and the runtime budget
for its criterion.  The desk protocol (criteria 6 and 7) is fully seeded,
so the measured RMSE values are reproducible bit-for-bit.
"""

import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

import mrst
from mrst import (
    DoseConfig,
    Ellipse,
    EpConfig,
    Geometry,
    Image,
    ImageGrid,
    PARALLEL,
    PatchConfig,
    PatchSet,
    Phantom,
    ReconConfig,
    SparseCodes,
    TrainConfig,
    TwoLayerModel,
    circular_roi,
    code_patches,
    data_majorizer,
    dct2_matrix,
    extract_patches,
    fbp,
    forward_project,
    back_project,
    hard_threshold,
    image_update,
    make_phantom,
    objective_p0,
    phantom_preset,
    pwls_objective,
    reconstruct_ep,
    reconstruct_transform,
    regularizer_gradient,
    regularizer_hessian_diag,
    rmse,
    simulate_sinogram,
    sparse_code_layer1,
    sparse_code_layer2,
    system_matrix,
    train,
    update_transform1,
    update_transform2,
)

HU_SCALE = mrst.MU_WATER / mrst.HU_WATER

# Desk protocol: 128x128 textured ellipse phantom at 1 mm, parallel beam,
# 180 views x 192 bins, transforms trained once on four sibling phantoms
# (1000 iterations, 25000 pooled training patches).  The EP baseline runs
# 50 OS-MM iterations with 6 subsets; the transform methods run 200
# exact-majorizer outer iterations (subsets=1) with 2 inner image updates,
# started from the best EP image.
DESK_DOSES = (1e4, 5e3, 3e3)
EP_ITERS, EP_SUBSETS = 50, 6
TR_OUTERS, TR_SUBSETS = 200, 1

# Per-method sweep grids (beta as log2, thresholds in HU).  Frozen after a
# wider exploratory scan; each method is scored at its own grid optimum.
EP_BETAS = (-24, -23, -22, -21, -20)
ST_GRID = [(lb, g1) for lb in (-17, -16, -15) for g1 in (20.0, 25.0, 35.0)]
MRST2_GRID = [
    (lb, g1, g2)
    for lb in (-17, -16)
    for g1 in (25.0, 35.0)
    for g2 in (7.0, 12.0)
]


def report(num, label, ok, detail):
    verdict = "PASS" if ok else "FAIL"
    line = f"[acceptance {num}] {label}: {verdict} ({detail})"
    print(line)
    assert ok, line


def random_unitary(p, rng):
    q, r = np.linalg.qr(rng.normal(size=(p, p)))
    return q * np.sign(np.diag(r))


def supports(p):
    for mask in range(1 << p):
        yield np.array([(mask >> i) & 1 for i in range(p)], dtype=bool)


# ---------------------------------------------------------------------------
# Shared desk-protocol state (built once, used by criteria 6 and 7)


def textured_phantom(seed, grid):
    """Seeded anatomy-like test scene: a water body, a few soft-tissue
    organs, two small bone-like inserts, and dense oriented low-contrast
    clutter that none of the regularizers can represent exactly.

    All placement draws use sqrt-uniform radius so the clutter covers the
    body roughly uniformly instead of bunching at the center.
    """
    rng = np.random.default_rng(seed)
    ells = [Ellipse(0.0, 0.0, 58.0, 50.0, 0.0, 1000.0)]
    for _ in range(int(rng.integers(3, 6))):
        t = rng.uniform(0.0, 2.0 * np.pi)
        u = np.sqrt(rng.uniform(0.0, 1.0))
        ells.append(Ellipse(
            42.0 * u * np.cos(t), 36.0 * u * np.sin(t),
            rng.uniform(8.0, 18.0), rng.uniform(8.0, 18.0),
            rng.uniform(0.0, np.pi),
            float(np.sign(rng.random() - 0.5)) * rng.uniform(40.0, 120.0)))
    for _ in range(2):
        t = rng.uniform(0.0, 2.0 * np.pi)
        u = np.sqrt(rng.uniform(0.0, 1.0))
        ells.append(Ellipse(
            44.0 * u * np.cos(t), 38.0 * u * np.sin(t),
            rng.uniform(4.5, 7.5), rng.uniform(4.0, 6.5),
            rng.uniform(0.0, np.pi),
            float(np.sign(rng.random() - 0.5)) * rng.uniform(500.0, 700.0)))
    for _ in range(120):
        t = rng.uniform(0.0, 2.0 * np.pi)
        u = np.sqrt(rng.uniform(0.0, 1.0))
        ells.append(Ellipse(
            50.0 * u * np.cos(t), 43.0 * u * np.sin(t),
            rng.uniform(1.5, 3.5), rng.uniform(4.0, 10.0),
            rng.uniform(0.0, np.pi),
            float(np.sign(rng.random() - 0.5)) * rng.uniform(20.0, 60.0)))
    return make_phantom(Phantom(tuple(ells), grid))


@pytest.fixture(scope="module")
def desk():
    grid = ImageGrid(128, 128, 1.0, 1.0)
    geom = Geometry(kind=PARALLEL, n_views=180, n_det=192, det_spacing=1.0)
    truth = textured_phantom(100, grid)
    roi = circular_roi((128, 128), 0.75)
    return {"grid": grid, "geom": geom, "truth": truth, "roi": roi}


@pytest.fixture(scope="module")
def desk_models(desk):
    # train on sibling scenes (disjoint seeds), test on seed 100
    patch = PatchConfig(8, 8)
    cols = [
        extract_patches(textured_phantom(s, desk["grid"]), patch).data
        for s in (101, 102, 103, 104)
    ]
    pool = PatchSet(np.hstack(cols), patch, (0, 0))
    sub = mrst.subsample_patches(pool, 25000, seed=0)
    m2, _ = train(sub, TrainConfig(eta1=80.0, eta2=60.0, iterations=1000, layers=2, seed=0))
    m1, _ = train(sub, TrainConfig(eta1=80.0, eta2=60.0, iterations=1000, layers=1, seed=0))
    return {"m1": m1, "m2": m2, "patch": patch}


# ---------------------------------------------------------------------------
# 1. Closed-form sparse coding matches brute-force support enumeration


def layer1_cost(u, w2, z1, z2, theta):
    e = u - z1
    return (
        np.sum(e * e)
        + np.sum((w2 @ e - z2) ** 2)
        + theta * theta * np.count_nonzero(z1)
    )


def layer2_cost(v, z2, theta):
    return np.sum((v - z2) ** 2) + theta * theta * np.count_nonzero(z2)


def test_1_sparse_coding_matches_brute_force():
    rng = np.random.default_rng(101)
    tol = 1e-10
    worst1 = worst2 = 0.0
    t0 = time.monotonic()
    for case in range(200):
        p = 2 + case % 2
        model = TwoLayerModel(
            w1=random_unitary(p, rng), w2=random_unitary(p, rng),
            eta1=1.0, eta2=1.0, layers=2,
        )
        r1 = rng.normal(size=(p, 1)) * 2.0
        z2_fixed = rng.normal(size=(p, 1)) * (rng.random(size=(p, 1)) < 0.6)
        theta1 = 0.2 + 2.0 * rng.random()
        theta2 = 0.2 + 2.0 * rng.random()
        u = model.w1 @ r1

        # layer 1: optimum on support S is u - (1/2) W2^T z2 restricted to S
        z1_hat = sparse_code_layer1(r1, z2_fixed, model, theta1)
        pull = 0.5 * (model.w2.T @ z2_fixed)
        best = math.inf
        for s in supports(p):
            z = np.where(s[:, None], u - pull, 0.0)
            best = min(best, layer1_cost(u, model.w2, z, z2_fixed, theta1))
        got = layer1_cost(u, model.w2, z1_hat, z2_fixed, theta1)
        worst1 = max(worst1, got - best)

        # layer 2: optimum on support S is W2 (W1 r1 - z1) restricted to S
        z1_fixed = rng.normal(size=(p, 1)) * (rng.random(size=(p, 1)) < 0.6)
        z2_hat = sparse_code_layer2(r1, z1_fixed, model, theta2)
        v = model.w2 @ (u - z1_fixed)
        best = math.inf
        for s in supports(p):
            best = min(best, layer2_cost(v, np.where(s[:, None], v, 0.0), theta2))
        got = layer2_cost(v, z2_hat, theta2)
        worst2 = max(worst2, got - best)
    elapsed = time.monotonic() - t0
    ok = worst1 <= tol and worst2 <= tol and elapsed < 5.0
    report(1, "closed-form coding vs brute force",
           ok, f"max excess layer1={worst1:.2e} layer2={worst2:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. Transform updates beat a dense 2x2 angle sweep


def rotation_candidates():
    ang = np.arange(0.0, 2.0 * np.pi, 1e-3)
    c, s = np.cos(ang), np.sin(ang)
    rots = np.empty((ang.size, 2, 2))
    rots[:, 0, 0], rots[:, 0, 1] = c, -s
    rots[:, 1, 0], rots[:, 1, 1] = s, c
    return np.concatenate([rots, rots @ np.diag([1.0, -1.0])])


def test_2_transform_updates_beat_angle_sweep():
    rng = np.random.default_rng(202)
    cands = rotation_candidates()
    tol = 1e-8
    worst1 = worst2 = -math.inf
    t0 = time.monotonic()
    for _ in range(100):
        n = int(rng.integers(1, 6))
        model = TwoLayerModel(
            w1=random_unitary(2, rng), w2=random_unitary(2, rng),
            eta1=1.0, eta2=1.0, layers=2,
        )
        r1 = rng.normal(size=(2, n))
        z1 = rng.normal(size=(2, n)) * (rng.random(size=(2, n)) < 0.7)
        z2 = rng.normal(size=(2, n)) * (rng.random(size=(2, n)) < 0.7)

        # first transform: || W r1 - z1 ||^2 + || w2 (W r1 - z1) - z2 ||^2
        e = np.einsum("kij,jn->kin", cands, r1) - z1
        f = np.einsum("ij,kjn->kin", model.w2, e) - z2
        sweep = (e * e).sum(axis=(1, 2)) + (f * f).sum(axis=(1, 2))
        w1_new = update_transform1(r1, z1, z2, model)
        e1 = w1_new @ r1 - z1
        cost = np.sum(e1 * e1) + np.sum((model.w2 @ e1 - z2) ** 2)
        worst1 = max(worst1, cost - sweep.min())

        # second transform: || W (w1 r1 - z1) - z2 ||^2
        u = model.w1 @ r1 - z1
        g = np.einsum("kij,jn->kin", cands, u) - z2
        sweep = (g * g).sum(axis=(1, 2))
        w2_new = update_transform2(r1, z1, z2, model)
        cost = np.sum((w2_new @ u - z2) ** 2)
        worst2 = max(worst2, cost - sweep.min())
    elapsed = time.monotonic() - t0
    ok = worst1 <= tol and worst2 <= tol and elapsed < 10.0
    report(2, "Procrustes updates vs angle sweep",
           ok, f"max excess w1={worst1:.2e} w2={worst2:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. Learning cost is monotone and transforms stay unitary for 1000 passes


def test_3_learning_monotone_unitary_1000_iters():
    rng = np.random.default_rng(303)
    r1 = rng.normal(0.0, 50.0, size=(64, 10_000))
    cfg = TrainConfig(eta1=80.0, eta2=60.0, iterations=1000, layers=2, seed=0)
    t0 = time.monotonic()
    model, rep = train(PatchSet(r1, PatchConfig(8, 8), (0, 0)), cfg)
    hist = rep.cost_history

    # replay the same pass sequence with the public single steps, checking
    # unitarity after every update
    from dataclasses import replace

    m = TwoLayerModel(w1=dct2_matrix(8, 8), w2=np.eye(64),
                      eta1=80.0, eta2=60.0, layers=2)
    z2 = np.zeros_like(r1)
    eye = np.eye(64)
    max_dev = 0.0
    replay = np.empty(cfg.iterations)
    for it in range(cfg.iterations):
        z1 = sparse_code_layer1(r1, z2, m, cfg.eta1)
        m = replace(m, w1=update_transform1(r1, z1, z2, m))
        z2 = sparse_code_layer2(r1, z1, m, cfg.eta2)
        m = replace(m, w2=update_transform2(r1, z1, z2, m))
        max_dev = max(
            max_dev,
            np.abs(m.w1.T @ m.w1 - eye).max(),
            np.abs(m.w2.T @ m.w2 - eye).max(),
        )
        replay[it] = objective_p0(r1, SparseCodes(z1, z2), m, cfg.eta1, cfg.eta2)
    elapsed = time.monotonic() - t0

    drops = np.diff(hist)
    mono = bool(np.all(drops <= 1e-9 * np.abs(hist[:-1])))
    same = bool(np.array_equal(replay, hist))
    ok = mono and same and max_dev <= 1e-8 and elapsed < 300.0
    report(3, "1000-pass training monotone + unitary",
           ok, f"monotone={mono} replay_match={same} "
               f"max_unitarity_dev={max_dev:.2e}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 4. Projector adjointness and data-majorizer domination on a dense instance


def test_4_projector_adjoint_and_majorizer():
    rng = np.random.default_rng(404)
    grid = ImageGrid(16, 16, 1.0, 1.0)
    geom = Geometry(kind=PARALLEL, n_views=30, n_det=24, det_spacing=1.0)
    t0 = time.monotonic()

    worst = 0.0
    for _ in range(5):
        x = rng.normal(size=(16, 16))
        u = rng.normal(size=(geom.n_views, geom.n_det))
        ax = forward_project(Image.from_grid(grid, x), geom)
        atu = back_project(u, geom, grid)
        lhs = float(np.sum(ax * u))
        rhs = float(np.sum(x * atu))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs)))

    w = rng.random(size=(geom.n_views, geom.n_det)) + 0.1
    a = system_matrix(geom, grid).toarray()
    hess = a.T @ (w.ravel()[:, None] * a)
    diag = data_majorizer(geom, w, grid).ravel()
    min_eig = float(np.linalg.eigvalsh(np.diag(diag) - hess).min())
    elapsed = time.monotonic() - t0
    ok = worst <= 1e-10 and min_eig >= -1e-8 and elapsed < 30.0
    report(4, "adjoint + majorizer domination",
           ok, f"adjoint_rel={worst:.2e} min_eig={min_eig:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 5. Smooth-part gradient of the reconstruction objective vs central FD


def test_5_objective_gradient_matches_fd():
    rng = np.random.default_rng(505)
    grid = ImageGrid(16, 16, 1.0, 1.0)
    geom = Geometry(kind=PARALLEL, n_views=20, n_det=24, det_spacing=1.0)
    truth = make_phantom(phantom_preset("disk", grid))
    sino = simulate_sinogram(truth, geom, DoseConfig(1e5, seed=0))
    patch = PatchConfig(4, 4)
    model = TwoLayerModel(w1=random_unitary(16, rng), w2=random_unitary(16, rng),
                          eta1=1.0, eta2=1.0, layers=2)
    cfg = ReconConfig(beta=3e-5, gamma1=25.0, gamma2=15.0, outer_iters=1,
                      inner_iters=1, subsets=1, solver="mm", patch=patch)
    t0 = time.monotonic()

    # strictly positive trial point so the nonnegativity projection is inert
    yy, xx = np.mgrid[0:16, 0:16]
    x = 600.0 + 150.0 * np.sin(0.7 * xx) * np.cos(0.5 * yy)
    img = Image.from_grid(grid, x)
    codes = code_patches(extract_patches(img, patch).data, model,
                         cfg.gamma1, cfg.gamma2)

    # analytic gradient assembled from the public pieces
    resid = HU_SCALE * forward_project(img, geom) - sino.y
    g_data = HU_SCALE * back_project(sino.weights * resid, geom, grid)
    g = g_data + regularizer_gradient(img, codes, model, cfg.beta, patch)

    # the same gradient implied by one unprojected diagonal-majorizer step
    d = (HU_SCALE ** 2) * data_majorizer(geom, sino.weights, grid) \
        + regularizer_hessian_diag(model, cfg.beta, patch, (16, 16))
    stepped = image_update(img, codes, model, sino, cfg)
    assert stepped.data.min() > 0.0, "projection active; trial point too low"
    g_implied = (x - stepped.data) * d

    # central finite differences of the full objective at fixed codes
    g_fd = np.empty_like(x)
    h = 1e-2
    for i in range(16):
        for j in range(16):
            for sign in (1.0, -1.0):
                x[i, j] += sign * h
                val = pwls_objective(Image.from_grid(grid, x), codes, model,
                                     sino, cfg)
                x[i, j] -= sign * h
                if sign > 0:
                    g_fd[i, j] = val
                else:
                    g_fd[i, j] = (g_fd[i, j] - val) / (2.0 * h)
    rel = np.linalg.norm(g_fd - g) / np.linalg.norm(g_fd)
    rel_implied = np.linalg.norm(g_fd - g_implied) / np.linalg.norm(g_fd)
    elapsed = time.monotonic() - t0
    ok = rel < 1e-6 and rel_implied < 1e-6 and elapsed < 60.0
    report(5, "smooth gradient vs central differences",
           ok, f"rel={rel:.2e} solver_step_rel={rel_implied:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 6. Full objective (counting terms included) monotone with subsets=1


def test_6_reconstruction_objective_monotone(desk, desk_models):
    sino = simulate_sinogram(desk["truth"], desk["geom"], DoseConfig(5e3, seed=0))
    x0 = fbp(sino, desk["grid"], window="hanning")
    t0 = time.monotonic()
    results = {}
    for label, model, cfg in (
        ("st", desk_models["m1"],
         ReconConfig(beta=2.0 ** -16, gamma1=25.0, outer_iters=50,
                     inner_iters=2, subsets=1, solver="mm",
                     patch=desk_models["patch"])),
        ("mrst2", desk_models["m2"],
         ReconConfig(beta=2.0 ** -16, gamma1=25.0, gamma2=7.0, outer_iters=50,
                     inner_iters=2, subsets=1, solver="mm",
                     patch=desk_models["patch"])),
    ):
        _, hist = reconstruct_transform(sino, model, cfg, desk["grid"], x0=x0)
        drops = np.diff(hist)
        results[label] = bool(np.all(drops <= 1e-9 * np.abs(hist[:-1])))
    elapsed = time.monotonic() - t0
    ok = results["st"] and results["mrst2"] and elapsed < 600.0
    report(6, "50-iteration objective descent (subsets=1)",
           ok, f"st={results['st']} mrst2={results['mrst2']}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 7. Method ordering at the swept optimum, three dose levels


def test_7_method_ordering_over_doses(desk, desk_models):
    grid, geom, roi = desk["grid"], desk["geom"], desk["roi"]
    patch = desk_models["patch"]
    t0 = time.monotonic()
    table = []
    strict_wins = 0
    ok = True
    for i0 in DESK_DOSES:
        sino = simulate_sinogram(desk["truth"], geom, DoseConfig(i0, seed=0))
        x_fbp = fbp(sino, grid, window="hanning")
        r_fbp = rmse(x_fbp, desk["truth"], roi)

        r_ep, x_ep = math.inf, None
        for lb in EP_BETAS:
            cfg = EpConfig(beta=2.0 ** lb, delta=10.0, iters=EP_ITERS,
                           subsets=EP_SUBSETS)
            x, _ = reconstruct_ep(sino, cfg, grid, x0=x_fbp)
            r = rmse(x, desk["truth"], roi)
            if r < r_ep:
                r_ep, x_ep = r, x

        r_st = math.inf
        for lb, g1 in ST_GRID:
            cfg = ReconConfig(beta=2.0 ** lb, gamma1=g1,
                              outer_iters=TR_OUTERS, inner_iters=2,
                              subsets=TR_SUBSETS, solver="mm", patch=patch)
            x, _ = reconstruct_transform(sino, desk_models["m1"], cfg, grid, x0=x_ep)
            r_st = min(r_st, rmse(x, desk["truth"], roi))

        r_m2 = math.inf
        for lb, g1, g2 in MRST2_GRID:
            cfg = ReconConfig(beta=2.0 ** lb, gamma1=g1, gamma2=g2,
                              outer_iters=TR_OUTERS, inner_iters=2,
                              subsets=TR_SUBSETS, solver="mm", patch=patch)
            x, _ = reconstruct_transform(sino, desk_models["m2"], cfg, grid, x0=x_ep)
            r_m2 = min(r_m2, rmse(x, desk["truth"], roi))

        table.append(f"I0={i0:g}: mrst2={r_m2:.3f} st={r_st:.3f} "
                     f"ep={r_ep:.3f} fbp={r_fbp:.3f}")
        ok = ok and (r_m2 <= r_st <= r_ep < r_fbp)
        if r_m2 < r_st:
            strict_wins += 1
    elapsed = time.monotonic() - t0
    for line in table:
        print("    " + line)
    ok = ok and strict_wins >= 2 and elapsed < 3600.0
    report(7, "dose-sweep ordering mrst2 <= st <= ep < fbp",
           ok, f"strict mrst2<st at {strict_wins}/3 doses, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 8. Two-layer path with a frozen zero second layer == one-layer path, bitwise


def test_8_layer_reduction_bit_exact():
    rng = np.random.default_rng(808)
    grid = ImageGrid(32, 32, 1.0, 1.0)
    geom = Geometry(kind=PARALLEL, n_views=24, n_det=48, det_spacing=1.0)
    truth = make_phantom(phantom_preset("ellipses", grid))
    sino = simulate_sinogram(truth, geom, DoseConfig(2e4, seed=3))
    q = random_unitary(64, rng)
    m1 = TwoLayerModel(w1=q, w2=None, eta1=1.0, eta2=0.0, layers=1)
    m2 = TwoLayerModel(w1=q, w2=np.eye(64), eta1=1.0, eta2=1.0, layers=2)
    x0 = fbp(sino, grid)
    t0 = time.monotonic()
    ok = True
    detail = []
    for solver, subsets in (("mm", 1), ("oslalm", 3)):
        beta, g1 = 2.0 ** -14, 30.0
        c1 = ReconConfig(beta=beta, gamma1=g1, outer_iters=6, inner_iters=2,
                         subsets=subsets, solver=solver, patch=PatchConfig(8, 8))
        # gamma2 so large that every second-layer coefficient thresholds to
        # zero; beta halves because the frozen layer doubles the residual term
        c2 = ReconConfig(beta=beta / 2.0, gamma1=g1 * math.sqrt(2.0),
                         gamma2=1e150, outer_iters=6, inner_iters=2,
                         subsets=subsets, solver=solver, patch=PatchConfig(8, 8))
        a, hist1 = reconstruct_transform(sino, m1, c1, grid, x0=x0)
        b, hist2 = reconstruct_transform(sino, m2, c2, grid, x0=x0)
        bitwise = a.data.tobytes() == b.data.tobytes()
        obj_match = bool(np.allclose(hist1, hist2, rtol=1e-12))
        ok = ok and bitwise and obj_match
        detail.append(f"{solver}/{subsets}: bitwise={bitwise} obj={obj_match}")
    elapsed = time.monotonic() - t0
    report(8, "single-layer == frozen two-layer",
           ok, "; ".join(detail) + f", {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 9. Byte-identical CLI outputs across reruns and thread counts


def run_cli(args, cwd):
    env = dict(os.environ)
    env.pop("MRST_THREADS", None)
    proc = subprocess.run([sys.executable, "-m", "mrst.cli", *args],
                          cwd=cwd, env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


def test_9_cli_byte_determinism(tmp_path):
    cwd = str(tmp_path)
    t0 = time.monotonic()
    run_cli(["phantom", "--preset", "ellipses", "--width", "32",
             "--height", "32", "--out", "truth.img"], cwd)

    stages = {
        "simulate": ["simulate", "--truth", "truth.img", "--i0", "2e4",
                     "--seed", "3", "--views", "24", "--dets", "48",
                     "--out", "stage.bin"],
        "train": ["train", "--images", "truth.img", "--iters", "5",
                  "--eta1", "60", "--eta2", "40", "--out", "stage.bin"],
        "reconstruct": None,  # filled in below once a sinogram + model exist
    }
    results = []
    ok = True
    for name in ("simulate", "train", "reconstruct"):
        if name == "simulate":
            args = stages["simulate"]
        elif name == "train":
            args = stages["train"]
        else:
            run_cli(["simulate", "--truth", "truth.img", "--i0", "2e4",
                     "--seed", "3", "--views", "24", "--dets", "48",
                     "--out", "s.sin"], cwd)
            run_cli(["train", "--images", "truth.img", "--iters", "5",
                     "--eta1", "60", "--eta2", "40", "--out", "m.bin"], cwd)
            args = ["reconstruct", "--method", "mrst2", "--sino", "s.sin",
                    "--model", "m.bin", "--beta", "3e-5", "--gamma1", "30",
                    "--gamma2", "20", "--outer-iters", "3", "--subsets", "2",
                    "--width", "32", "--height", "32", "--out", "stage.bin"]
        blobs = []
        for threads in ("1", "1", "4"):
            run_cli(args + ["--threads", threads], cwd)
            blobs.append((tmp_path / "stage.bin").read_bytes())
        rerun_same = blobs[0] == blobs[1]
        threads_same = blobs[0] == blobs[2]
        ok = ok and rerun_same and threads_same
        results.append(f"{name}: rerun={rerun_same} threads={threads_same}")
    elapsed = time.monotonic() - t0
    report(9, "CLI determinism (reruns, --threads 1 vs 4)",
           ok, "; ".join(results) + f", {elapsed:.0f}s")
