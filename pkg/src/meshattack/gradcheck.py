"""Central finite-difference check of :func:`network.backward`."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import backward, forward, loss_value


@dataclass
class GradCheckReport:
    n_checked: int
    n_failed: int
    n_kinked: int
    max_abs_err: float
    max_rel_err: float
    worst: tuple
    rtol: float
    atol: float

    @property
    def passed(self) -> bool:
        return self.n_failed == 0

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}: {self.n_checked} entries, {self.n_failed} outside tolerance, "
                f"{self.n_kinked} skipped at ReLU kinks "
                f"(max abs {self.max_abs_err:.3e}, max rel {self.max_rel_err:.3e}, worst {self.worst})")


def _probe(params, coords, loss):
    trace = forward(params, coords)
    masks = [pre > 0 for pre in trace.lift_pre]
    return loss_value(trace.probs, loss), masks


def grad_check(params, coords, loss, rtol=1e-3, atol=1e-5, n_samples=200, eps=1e-4, seed=0,
               backward_fn=backward) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    An entry passes when its absolute error is within ``atol`` *or* its relative
    error is within ``rtol``.  ``n_samples=None`` checks every coordinate and
    parameter; otherwise a random subset of that size (at least all coordinates
    when fewer) is checked.  ``backward_fn`` exists so tests can inject a broken
    backward pass.

    Entries whose +-eps stencil flips a ReLU mask straddle a point where the
    loss is not differentiable; they are counted in ``n_kinked`` and excluded.
    """
    coords = np.array(coords, dtype=np.float64)
    params = params.copy()
    trace = forward(params, coords)
    base_masks = [pre > 0 for pre in trace.lift_pre]
    grads, dcoords = backward_fn(params, trace, loss)

    entries = [("coords", idx) for idx in np.ndindex(coords.shape)]
    for name, t in params.tensors.items():
        entries += [(name, idx) for idx in np.ndindex(t.shape)]
    if n_samples is not None and n_samples < len(entries):
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(entries), size=n_samples, replace=False)
        entries = [entries[i] for i in sorted(pick)]

    max_abs = max_rel = 0.0
    failed = kinked = 0
    worst = ()
    for name, idx in entries:
        target = coords if name == "coords" else params.tensors[name]
        analytic = dcoords[idx] if name == "coords" else grads[name][idx]
        orig = target[idx]
        target[idx] = orig + eps
        up, m_up = _probe(params, coords, loss)
        target[idx] = orig - eps
        down, m_down = _probe(params, coords, loss)
        target[idx] = orig
        if any(np.any(a != b) or np.any(a != c) for a, b, c in zip(base_masks, m_up, m_down)):
            kinked += 1
            continue
        numeric = (up - down) / (2 * eps)
        abs_err = abs(analytic - numeric)
        scale = max(abs(analytic), abs(numeric))
        rel_err = abs_err / scale if scale > 0 else 0.0
        if abs_err > atol and rel_err > rtol:
            failed += 1
        if abs_err > max_abs:
            max_abs, worst = abs_err, (name, idx, float(analytic), float(numeric))
        max_rel = max(max_rel, rel_err if abs_err > atol else 0.0)
    return GradCheckReport(len(entries), failed, kinked, float(max_abs), float(max_rel), worst, rtol, atol)


def random_sweep(n_configs=20, seed=0, n_samples=None, eps=1e-4, rtol=1e-3, atol=1e-5, n_classes=3,
                 backward_fn=backward):
    """Grad-check small random networks under both loss kinds.

    Configurations alternate recurrent depth 1 and 2 and draw walk length in
    [1, 6], hidden width in [2, 16], an optional lift and either feature mode.
    Returns ``[(config, loss_kind, report), ...]``.
    """
    from .network import Arch, CrossEntropyLoss, KLDLoss, init_params

    rng = np.random.default_rng(seed)
    out = []
    for c in range(n_configs):
        layers = 1 + c % 2
        L = int(rng.integers(1, 7))
        hidden = int(rng.integers(2, 17))
        lift = tuple(int(x) for x in rng.integers(2, 9, size=int(rng.integers(0, 3))))
        features = ("xyz", "dxdydz")[int(rng.integers(0, 2))]
        arch = Arch(n_classes, lift, hidden, layers, features)
        params = init_params(arch, seed=int(rng.integers(0, 2**31)))
        # larger-than-init weights so gradients are not all tiny
        for t in params.tensors.values():
            t += rng.normal(0, 0.3, size=t.shape)
        batch = int(rng.integers(1, 3))
        coords = rng.normal(size=(batch, L, 3))
        cfg = dict(walk_length=L, hidden=hidden, layers=layers, lift=lift, features=features, batch=batch)
        ref = rng.dirichlet(np.ones(n_classes), size=batch)
        for kind, loss in (("kld", KLDLoss(ref)), ("ce", CrossEntropyLoss(int(rng.integers(0, n_classes))))):
            rep = grad_check(params, coords, loss, rtol=rtol, atol=atol, n_samples=n_samples, eps=eps,
                             seed=c, backward_fn=backward_fn)
            out.append((cfg, kind, rep))
    return out
