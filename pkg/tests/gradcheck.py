"""Central finite-difference oracle shared by the network and loss tests."""
import numpy as np
import torch


def fd_param_check(module, loss_fn, n_params=20, step=1e-3, seed=0):
    """Compare autograd against central differences on randomly chosen scalar parameters.

    Returns (analytic, numeric) arrays for the chosen entries.
    """
    params = [p for p in module.parameters()]
    sizes = np.array([p.numel() for p in params])
    gen = np.random.default_rng(seed)
    flat_ids = gen.choice(sizes.sum(), size=n_params, replace=False)
    bounds = np.cumsum(sizes)

    module.zero_grad()
    loss_fn().backward()
    analytic, numeric = [], []
    for fid in flat_ids:
        k = int(np.searchsorted(bounds, fid, side="right"))
        off = int(fid - (bounds[k - 1] if k else 0))
        p = params[k]
        analytic.append(float(p.grad.reshape(-1)[off]))
        with torch.no_grad():
            flat = p.view(-1)
            orig = flat[off].clone()
            flat[off] = orig + step
            fp = float(loss_fn())
            flat[off] = orig - step
            fm = float(loss_fn())
            flat[off] = orig
        numeric.append((fp - fm) / (2 * step))
    return np.array(analytic), np.array(numeric)


def fd_input_check(fn, x0, n_points=20, step=1e-3, seed=0):
    gen = np.random.default_rng(seed)
    x = x0.clone().requires_grad_(True)
    fn(x).backward()
    grad = x.grad.reshape(-1)
    idx = gen.choice(x0.numel(), size=n_points, replace=False)
    analytic, numeric = [], []
    for i in idx:
        xp = x0.clone().reshape(-1)
        xm = x0.clone().reshape(-1)
        xp[i] += step
        xm[i] -= step
        with torch.no_grad():
            numeric.append((float(fn(xp.reshape(x0.shape))) - float(fn(xm.reshape(x0.shape)))) / (2 * step))
        analytic.append(float(grad[i]))
    return np.array(analytic), np.array(numeric)


def relative_error(analytic, numeric):
    """Norm-wise relative error over the sampled entries."""
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-30))
