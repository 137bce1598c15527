"""Shared builders for block-level tests."""

import numpy as np

from gvt.block import BlockParams, init_block_params
from gvt.graph import GridSpec, build_grid_adjacency
from gvt.tensor import Tensor

GRIDS = {4: (2, 2), 6: (2, 3), 8: (2, 4), 9: (3, 3), 16: (4, 4)}


def grid_for(n: int) -> Tensor:
    rows, cols = GRIDS.get(n, (1, n))
    return build_grid_adjacency(GridSpec(rows, cols), np.float64)


def random_block(n, d, h, seed, phi_scale=None):
    rng = np.random.default_rng(seed)
    params = init_block_params(n, d, h, rng, dtype=np.float64)
    if phi_scale is not None:
        params.phi.data[...] = rng.normal(0.0, phi_scale, size=(h, h))
    tokens = Tensor(rng.standard_normal((n, d)))
    return params, tokens


def identity_block(n, d, h) -> BlockParams:
    params = init_block_params(n, d, h, np.random.default_rng(0), dtype=np.float64)
    dh = d // h
    for w in params.wq + params.wk + params.wv:
        w.data[...] = np.eye(dh)
    params.wo.data[...] = np.eye(d)
    params.phi.data[...] = np.eye(h)
    return params


def tiny_run(out, epochs=2, seed=0, **model_kw):
    from gvt.config import RunConfig
    from gvt.model import ModelConfig

    kw = dict(blocks=2, hidden=16, heads=2, tokens=16, pool_to=4, num_classes=3, image_size=(16, 16),
              in_channels=3, seed=seed)
    kw.update(model_kw)
    return RunConfig(model=ModelConfig(**kw), lr0=2e-3, batch_size=8, epochs=epochs, seed=seed,
                     out=str(out), wall_clock=False)


def tiny_data(n_train=24, n_eval=12, classes=3, size=16, seed=0):
    from gvt.data import Dataset, make_synthetic

    sets = []
    for n, s in ((n_train, seed), (n_eval, seed + 1)):
        imgs, labels = make_synthetic(n, classes, size, 3, seed=s)
        x = imgs.astype(np.float32).transpose(0, 3, 1, 2) / 255.0
        sets.append(Dataset(np.ascontiguousarray((x - 0.5) / 0.25), labels, classes))
    return sets
