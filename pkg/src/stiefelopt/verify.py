"""Runnable property suite: every structural claim the library makes,
measured and compared against an explicit tolerance.

Each check is independent of the code path it audits: orthogonality and
identity checks recompute residuals from raw arrays in double precision,
gradients are compared against central finite differences, the optimizer
pipeline is compared against a standalone textbook implementation.

Two corruption hooks exist for negative controls.  Disabling the section
scrub makes the preservation checks fail loudly.  Disabling the velocity
re-skew is also supported but measured to be harmless: the second moment
of a skew block is exactly symmetric (squares kill the sign), so Adam's
elementwise cache math preserves skewness to roundoff on its own.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass

import numpy as np

from . import data as data_mod
from .linalg import householder_qr, matrix_exp, max_abs, skew_part
from .network import (
    TransformerConfig,
    init_params,
    model_backward,
    model_forward,
    multihead_forward,
    sample_losses,
    uniform_plateau,
)
from .optimizers import (
    Adam,
    EUCLIDEAN,
    GradientDescent,
    Hyperparameters,
    Momentum,
    STIEFEL,
    optimizer_step,
)
from .stiefel import (
    HorizontalElement,
    StiefelPoint,
    canonical_metric,
    geodesic_step,
    lift,
    random_stiefel,
    random_tangent,
    riemannian_gradient,
    section,
    skew_generator,
)

__all__ = ["CheckResult", "CorruptionHooks", "run_all",
           "finite_difference_grads", "reference_adam_trajectory"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    residual: float
    tolerance: float
    detail: str = ""


@dataclass(frozen=True)
class CorruptionHooks:
    """Negative-control switches; production behavior keeps both True."""

    reskew: bool = True
    section_scrub: bool = True


def _result(name, residual, tolerance, detail=""):
    return CheckResult(name=name, passed=residual <= tolerance,
                       residual=float(residual), tolerance=float(tolerance),
                       detail=detail)


# ----------------------------------------------------------------------
# independent oracles shared with the test suite


def finite_difference_grads(params, batch, targets, config: TransformerConfig,
                            step: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of the mean batch loss for every weight
    entry, in params.to_arrays() order.  Touches only the forward pass."""

    def total_loss() -> float:
        preds, _ = model_forward(batch, params, config)
        return float(sample_losses(preds, targets).mean())

    grads = []
    for array in params.to_arrays():
        g = np.zeros_like(array)
        flat = array.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = total_loss()
            flat[i] = orig - step
            down = total_loss()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def reference_adam_trajectory(weights: list[np.ndarray], grad_fn, hp: Hyperparameters,
                              n_steps: int) -> list[np.ndarray]:
    """Textbook Adam: raw moments with bias correction applied at use.

        m <- b1 m + (1-b1) g        v <- b2 v + (1-b2) g*g
        w <- w - eta (m / (1-b1^t)) / sqrt(v / (1-b2^t) + delta)
    """
    weights = [w.copy() for w in weights]
    m = [np.zeros_like(w) for w in weights]
    v = [np.zeros_like(w) for w in weights]
    for t in range(1, n_steps + 1):
        grads = grad_fn(weights)
        for i, g in enumerate(grads):
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g
            m_hat = m[i] / (1.0 - hp.beta1**t)
            v_hat = v[i] / (1.0 - hp.beta2**t)
            weights[i] = weights[i] - hp.eta * m_hat / np.sqrt(v_hat + hp.delta)
    return weights


# ----------------------------------------------------------------------
# checks


def _check_qr_orthogonality(dtype, rng, hooks):
    worst = 0.0
    tol = 0.0
    for n, m in [(40, 12), (40, 40), (16, 1), (49, 42)]:
        a = rng.standard_normal((n, m)).astype(dtype)
        q, _ = householder_qr(a)
        defect = max_abs(q.astype(np.float64).T @ q.astype(np.float64) - np.eye(n))
        bound = 64.0 * np.finfo(dtype).eps * n
        worst = max(worst, defect / bound)
        tol = 1.0
    return _result("qr_orthogonality", worst, tol, "residual is defect / (64 eps N)")


def _check_qr_reconstruction(dtype, rng, hooks):
    tol = 1e-12 if dtype == np.float64 else 1e-4
    worst = 0.0
    for n, m in [(8, 3), (30, 30), (50, 10)]:
        a = rng.standard_normal((n, m)).astype(dtype)
        q, r = householder_qr(a)
        worst = max(worst, max_abs(q @ r - a))
    return _result("qr_reconstruction", worst, tol)


def _check_exp_inverse(dtype, rng, hooks):
    worst = 0.0
    for k in [1, 3, 6, 8]:
        m = rng.standard_normal((k, k))
        m *= 5.0 / np.linalg.norm(m, 2)
        prod = matrix_exp(m) @ matrix_exp(-m)
        worst = max(worst, max_abs(prod - np.eye(k)))
    return _result("exp_inverse", worst, 1e-10)


def _check_skew_projection(dtype, rng, hooks):
    eps = np.finfo(dtype).eps
    worst = 0.0
    for _ in range(5):
        m = rng.uniform(-1, 1, (9, 9)).astype(dtype)
        once = skew_part(m)
        worst = max(worst, max_abs(skew_part(once) - once))
    return _result("skew_projection", worst, 2.0 * eps)


def _check_omega_identity(dtype, rng, hooks):
    tol = 1e-11 if dtype == np.float64 else 1e-4
    worst = 0.0
    for _ in range(20):
        y = random_stiefel(30, 5, rng, dtype=dtype)
        d = random_tangent(y, rng)
        z = skew_generator(y, d)
        worst = max(worst, max_abs(z @ y.matrix - d.matrix))
    return _result("omega_identity", worst, tol)


def _check_metric_duality(dtype, rng, hooks):
    worst = 0.0
    for _ in range(20):
        y = random_stiefel(25, 6, rng, dtype=dtype)
        g = rng.standard_normal(y.matrix.shape)
        v = random_tangent(y, rng)
        lhs = float(np.sum(g * v.matrix))
        rhs = canonical_metric(y, riemannian_gradient(y, g), v)
        scale = 1.0 + float(np.linalg.norm(g) * np.linalg.norm(v.matrix))
        worst = max(worst, abs(lhs - rhs) / scale)
    return _result("metric_duality", worst, 1e-10)


def _check_metric_positivity(dtype, rng, hooks):
    smallest = np.inf
    for _ in range(20):
        y = random_stiefel(20, 4, rng, dtype=dtype)
        v = random_tangent(y, rng)
        smallest = min(smallest, canonical_metric(y, v, v))
    return _result("metric_positivity", -smallest, 0.0,
                   f"smallest metric(V, V) = {smallest:.3e}")


def _check_canonical_metric_consistency(dtype, rng, hooks):
    worst = 0.0
    for _ in range(20):
        y = random_stiefel(18, 4, rng, dtype=dtype)
        v1 = random_tangent(y, rng)
        v2 = random_tangent(y, rng)
        lhs = canonical_metric(y, v1, v2)
        rhs = 0.5 * float(np.sum(skew_generator(y, v1) * skew_generator(y, v2)))
        worst = max(worst, abs(lhs - rhs))
    return _result("canonical_metric_consistency", worst, 1e-10)


def _bounded_horizontal(n_amb, n_sub, rng, dtype, norm=1.0):
    a = skew_part(rng.standard_normal((n_sub, n_sub)))
    b = rng.standard_normal((n_amb - n_sub, n_sub))
    h = HorizontalElement(a=a.astype(dtype), b=b.astype(dtype))
    scale = norm / max(max_abs(h.to_dense()), 1e-12)
    return h.scaled(scale)


def _check_geodesic_dense_oracle(dtype, rng, hooks):
    worst = 0.0
    for _ in range(10):
        n_amb = int(rng.integers(6, 33))
        n_sub = int(rng.integers(1, min(7, n_amb) + 1))
        y = random_stiefel(n_amb, n_sub, rng, dtype=dtype)
        sec = section(y, rng)
        w = _bounded_horizontal(n_amb, n_sub, rng, dtype, norm=2.0)
        moved = geodesic_step(y, sec, w)
        dense = sec.matrix @ w.to_dense() @ sec.matrix.T
        oracle = matrix_exp(dense) @ y.matrix
        worst = max(worst, max_abs(moved.matrix - oracle))
    return _result("geodesic_dense_oracle", worst, 1e-9)


def _check_geodesic_section_invariance(dtype, rng, hooks):
    tol = 1e-9 if dtype == np.float64 else 2e-4
    worst = 0.0
    for k in range(10):
        y = random_stiefel(21, 4, rng, dtype=dtype)
        d = random_tangent(y, rng)
        moved = []
        for seed in (1000 + k, 2000 + k):
            sec, horiz = lift(y, d, np.random.default_rng(seed))
            moved.append(geodesic_step(y, sec, horiz.scaled(-0.01)).matrix)
        worst = max(worst, max_abs(moved[0] - moved[1]))
    return _result("geodesic_section_invariance", worst, tol)


def _check_retraction_zero(dtype, rng, hooks):
    worst = 0.0
    for _ in range(5):
        y = random_stiefel(15, 3, rng, dtype=dtype)
        sec = section(y, rng)
        zero = HorizontalElement.zero(15, 3, dtype=dtype)
        moved = geodesic_step(y, sec, zero)
        worst = max(worst, max_abs(moved.matrix - y.matrix))
    return _result("retraction_zero", worst, 0.0)


def _check_retraction_taylor(dtype, rng, hooks):
    y = random_stiefel(16, 3, rng, dtype=dtype)
    sec = section(y, rng)
    w = _bounded_horizontal(16, 3, rng, dtype, norm=1.0)
    delta = sec.matrix @ w.to_dense() @ sec.matrix.T @ y.matrix
    ts = np.array([1e-2, 1e-3, 1e-4])
    errs = []
    for t in ts:
        moved = geodesic_step(y, sec, w.scaled(t))
        errs.append(max_abs(moved.matrix - y.matrix - t * delta))
    slope = np.polyfit(np.log(ts), np.log(errs), 1)[0]
    return _result("retraction_taylor", 1.9 - slope, 0.0,
                   f"log-log slope {slope:.3f}")


def _check_geodesic_preservation(dtype, rng, hooks):
    tol = 1e-5 if dtype == np.float32 else 1e-11
    y = random_stiefel(49, 7, rng, dtype=dtype)
    worst = 0.0
    for _ in range(1000):
        sec = section(y, rng, scrub=hooks.section_scrub)
        # Step norm at the scale the optimizers produce (a few times eta).
        w = _bounded_horizontal(49, 7, rng, dtype, norm=0.005)
        y = geodesic_step(y, sec, w)
        worst = max(worst, y.orth_defect())
        if worst > 1e6 * tol:
            break  # corrupted runs blow up; no need to finish the loop
    return _result("geodesic_preservation_1000", worst, tol)


def _check_optimizer_preservation(dtype, rng, hooks):
    tol = 1e-5 if dtype == np.float32 else 1e-11
    worst = 0.0
    details = []
    for opt in (Adam(), Momentum(), GradientDescent()):
        y = random_stiefel(49, 7, rng, dtype=dtype).matrix
        caches = [opt.init_cache(y.size, dtype)]
        local = 0.0
        for t in range(1, 151):
            g = rng.uniform(-1, 1, y.shape).astype(dtype)
            (y,), caches = optimizer_step(opt, [y], [STIEFEL], [g], caches, t,
                                          seed=17, reskew=hooks.reskew,
                                          section_scrub=hooks.section_scrub)
            local = max(local, StiefelPoint(matrix=y).orth_defect())
        details.append(f"{opt.name}: {local:.2e}")
        worst = max(worst, local)
    return _result("optimizer_manifold_preservation", worst, tol, "; ".join(details))


def _check_euclidean_adam_reduction(dtype, rng, hooks):
    hp = Hyperparameters()
    shapes = [(3, 4), (5,)]
    start = [rng.standard_normal(s) for s in shapes]
    anchors = [rng.standard_normal(s) for s in shapes]

    def grad_fn(ws):
        return [w - a for w, a in zip(ws, anchors)]

    expected = reference_adam_trajectory(start, grad_fn, hp, n_steps=100)

    opt = Adam(hp)
    weights = [w.copy() for w in start]
    kinds = [EUCLIDEAN] * len(weights)
    caches = [opt.init_cache(w.size, np.float64) for w in weights]
    for t in range(1, 101):
        weights, caches = optimizer_step(opt, weights, kinds, grad_fn(weights),
                                         caches, t, seed=3)
    worst = max(max_abs(w - e) for w, e in zip(weights, expected))
    return _result("euclidean_adam_reduction", worst, 1e-12)


def _check_adam_first_step(dtype, rng, hooks):
    hp = Hyperparameters(delta=1e-16)
    opt = Adam(hp)
    bt = rng.uniform(0.001, 1.0, 64) * rng.choice([-1.0, 1.0], 64)
    cache = opt.init_cache(bt.size, np.float64)
    _, velocity = opt.apply(cache, bt, t=1)
    worst = max_abs(np.abs(velocity) - hp.eta)
    sign_ok = np.all(np.sign(velocity) == -np.sign(bt))
    return _result("adam_first_step_direction", worst if sign_ok else np.inf, 1e-6,
                   "velocity magnitude vs eta at t=1, delta=1e-16")


def _check_momentum_alpha_zero(dtype, rng, hooks):
    hp = Hyperparameters(alpha=0.0)
    mom, grad = Momentum(hp), GradientDescent(hp)
    w0 = rng.standard_normal(12).astype(dtype)
    wm, wg = [w0.copy()], [w0.copy()]
    cm = [mom.init_cache(12, dtype)]
    cg = [grad.init_cache(12, dtype)]
    worst = 0.0
    for t in range(1, 6):
        g = rng.standard_normal(12).astype(dtype)
        wm, cm = optimizer_step(mom, wm, [EUCLIDEAN], [g], cm, t, seed=5)
        wg, cg = optimizer_step(grad, wg, [EUCLIDEAN], [g], cg, t, seed=5)
        if not np.array_equal(wm[0], wg[0]):
            worst = max(worst, max_abs(wm[0] - wg[0]))
    return _result("momentum_alpha0_is_gradient", worst, 0.0, "bitwise comparison")


def _check_adam_b2_nonnegative(dtype, rng, hooks):
    opt = Adam()
    cache = opt.init_cache(32, dtype)
    smallest = np.inf
    for t in range(1, 30):
        bt = rng.standard_normal(32).astype(dtype)
        cache, _ = opt.apply(cache, bt, t)
        smallest = min(smallest, float(cache.b2.min()))
    return _result("adam_b2_nonnegative", -smallest, 0.0,
                   f"smallest second-moment entry {smallest:.3e}")


def _check_attention_convexity(dtype, rng, hooks):
    cfg = TransformerConfig(token_dim=12, seq_len=5, n_heads=3, n_layers=1,
                            constrain_projections=False)
    params = init_params(cfg, rng, dtype=dtype)
    batch = rng.standard_normal((4, 12, 5)).astype(dtype)
    from .network import LayerTape

    tape = LayerTape()
    multihead_forward(batch, params.layers[0], tape)
    probs = tape.probs
    worst = max(
        max_abs(probs.sum(axis=-2) - 1.0),
        float(max(-probs.min(), 0.0)),
        max_abs((tape.v @ probs).reshape(batch.shape) - tape.mh_out),
    )
    return _result("attention_convexity", worst, 1e-6)


def _check_layer_shapes(dtype, rng, hooks):
    ok = True
    for cfg in [TransformerConfig(token_dim=10, seq_len=4, n_heads=2, n_layers=3,
                                  constrain_projections=False),
                TransformerConfig(token_dim=49, seq_len=16, n_heads=7, n_layers=1)]:
        params = init_params(cfg, rng, dtype=dtype)
        batch = rng.standard_normal((2, cfg.token_dim, cfg.seq_len)).astype(dtype)
        x = batch
        for layer in params.layers:
            x = multihead_forward(x, layer)
            ok &= x.shape == batch.shape
        preds, _ = model_forward(batch, params, cfg)
        ok &= preds.shape == (2, cfg.n_classes)
    return _result("layer_shape_preservation", 0.0 if ok else 1.0, 0.0)


def _check_gradient_finite_difference(dtype, rng, hooks):
    cfg = TransformerConfig(token_dim=6, seq_len=3, n_heads=2, n_layers=1,
                            n_classes=4, constrain_projections=False)
    worst = 0.0
    for _ in range(2):
        params = init_params(cfg, rng, dtype=np.float64)
        batch = rng.standard_normal((3, 6, 3))
        labels = rng.integers(0, 4, 3)
        targets = np.eye(4)[labels]
        _, tape = model_forward(batch, params, cfg)
        analytic = model_backward(tape, params, batch, targets).to_arrays()
        numeric = finite_difference_grads(params, batch, targets, cfg)
        for a, n in zip(analytic, numeric):
            err = np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
            worst = max(worst, float(err.max()))
    return _result("gradient_finite_difference", worst, 1e-6)


def _check_uniform_plateau(dtype, rng, hooks):
    tol = 1e-7 if dtype == np.float64 else 1e-5
    cfg = TransformerConfig(token_dim=14, seq_len=4, n_heads=2, n_layers=1,
                            constrain_projections=False)
    params = init_params(cfg, rng, dtype=dtype)
    params.classifier = np.zeros_like(params.classifier)
    batch = rng.standard_normal((8, 14, 4)).astype(dtype)
    labels = rng.integers(0, 10, 8)
    targets = np.eye(10, dtype=dtype)[labels]
    preds, _ = model_forward(batch, params, cfg)
    measured = float(sample_losses(preds, targets).mean())
    return _result("uniform_plateau", abs(measured - uniform_plateau(10)), tol)


def _check_constraint_flag_neutrality(dtype, rng, hooks):
    base = TransformerConfig(token_dim=8, seq_len=3, n_heads=2, n_layers=2,
                             constrain_projections=True)
    free = TransformerConfig(token_dim=8, seq_len=3, n_heads=2, n_layers=2,
                             constrain_projections=False)
    params = init_params(base, rng, dtype=dtype)
    batch = rng.standard_normal((2, 8, 3)).astype(dtype)
    labels = rng.integers(0, 10, 2)
    targets = np.eye(10, dtype=dtype)[labels]
    p1, tape1 = model_forward(batch, params, base)
    p2, tape2 = model_forward(batch, params, free)
    g1 = model_backward(tape1, params, batch, targets).to_arrays()
    g2 = model_backward(tape2, params, batch, targets).to_arrays()
    worst = max_abs(p1 - p2)
    for a, b in zip(g1, g2):
        worst = max(worst, max_abs(a - b))
    return _result("constraint_flag_neutrality", worst, 0.0,
                   "evaluation must not depend on the constraint flag")


def _check_patchify_bijection(dtype, rng, hooks):
    img = rng.uniform(0, 1, (28, 28)).astype(dtype)
    sample = data_mod.ImageSample(pixels=img, label=3)
    patched = data_mod.patchify(sample)
    worst = max_abs(data_mod.unpatchify(patched.tokens) - img)
    return _result("patchify_bijection", worst, 0.0)


def _check_idx_pipeline(dtype, rng, hooks):
    import os

    pixels = rng.integers(0, 256, size=(2, 28, 28), dtype=np.uint8)
    labels = np.array([7, 1], dtype=np.uint8)
    with tempfile.TemporaryDirectory() as tmp:
        images_path = os.path.join(tmp, "images.idx")
        labels_path = os.path.join(tmp, "labels.idx")
        with open(images_path, "wb") as f:
            f.write(np.array([2051, 2, 28, 28], dtype=">i4").tobytes())
            f.write(pixels.tobytes())
        with open(labels_path, "wb") as f:
            f.write(np.array([2049, 2], dtype=">i4").tobytes())
            f.write(labels.tobytes())
        samples = data_mod.load_idx(images_path, labels_path)
    tokens = np.stack([data_mod.patchify(s).tokens for s in samples])
    ok = (len(samples) == 2 and samples[0].label == 7
          and float(tokens.min()) >= 0.0 and float(tokens.max()) <= 1.0)
    residual = max(0.0, -float(tokens.min()), float(tokens.max()) - 1.0)
    return _result("idx_pipeline_range", residual if ok else 1.0, 0.0)


_CHECKS = [
    (_check_qr_orthogonality, {"single", "double"}),
    (_check_qr_reconstruction, {"single", "double"}),
    (_check_exp_inverse, {"double"}),
    (_check_skew_projection, {"single", "double"}),
    (_check_omega_identity, {"single", "double"}),
    (_check_metric_duality, {"double"}),
    (_check_metric_positivity, {"single", "double"}),
    (_check_canonical_metric_consistency, {"double"}),
    (_check_geodesic_dense_oracle, {"double"}),
    (_check_geodesic_section_invariance, {"single", "double"}),
    (_check_retraction_zero, {"single", "double"}),
    (_check_retraction_taylor, {"double"}),
    (_check_geodesic_preservation, {"single", "double"}),
    (_check_optimizer_preservation, {"single", "double"}),
    (_check_euclidean_adam_reduction, {"double"}),
    (_check_adam_first_step, {"double"}),
    (_check_momentum_alpha_zero, {"single", "double"}),
    (_check_adam_b2_nonnegative, {"single", "double"}),
    (_check_attention_convexity, {"single", "double"}),
    (_check_layer_shapes, {"single", "double"}),
    (_check_gradient_finite_difference, {"double"}),
    (_check_uniform_plateau, {"single", "double"}),
    (_check_constraint_flag_neutrality, {"single", "double"}),
    (_check_patchify_bijection, {"single", "double"}),
    (_check_idx_pipeline, {"single", "double"}),
]


def run_all(precision: str = "double", seed: int = 0,
            hooks: CorruptionHooks | None = None) -> list[CheckResult]:
    """Run every check that applies at the given precision."""
    if precision not in ("single", "double"):
        raise ValueError("precision must be 'single' or 'double'")
    dtype = np.float32 if precision == "single" else np.float64
    hooks = hooks or CorruptionHooks()
    results = []
    for i, (check, precisions) in enumerate(_CHECKS):
        if precision not in precisions:
            continue
        rng = np.random.default_rng([seed, 100 + i])
        results.append(check(dtype, rng, hooks))
    return results
