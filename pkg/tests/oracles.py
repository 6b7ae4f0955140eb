"""Independent reference computations shared by the tests."""
import math

import numpy as np


def grid_pair_oracle(inst, k, m, n=400, rounds=4):
    """Refined 2-D grid search over (ln P_d2d, ln P_cell) for one pair."""
    c = inst.constants
    lo = np.log([c.p_max_d2d, c.p_max_cell]) - 25.0
    hi = np.log([c.p_max_d2d, c.p_max_cell])
    G = inst.gains
    gmin = G.g_d2d_self[k][m]
    D = inst.groups[k].size
    best = (-math.inf, None)
    for _ in range(rounds):
        a = np.linspace(lo[0], hi[0], n)
        b = np.linspace(lo[1], hi[1], n)
        Pd, Pc = np.meshgrid(np.exp(a), np.exp(b), indexing="ij")
        bd = np.min(gmin[None, None, :] / (c.noise_power + Pc[..., None] * G.g_c2d[k][m][None, None, :]),
                    axis=-1)
        bc = G.g_cell[m] / (c.noise_power + Pd * G.g_d2c[k, m])
        ok = (Pd * bd >= c.gamma_d2d_th) & (Pc * bc >= c.gamma_cell_th)
        val = np.where(ok, D * np.log2(Pd * bd) + np.log2(Pc * bc), -np.inf)
        i, j = np.unravel_index(np.argmax(val), val.shape)
        if val[i, j] > best[0]:
            best = (float(val[i, j]), (a[i], b[j]))
        if best[1] is None:
            return None
        da, db = (hi - lo) / (n - 1)
        ctr = np.array(best[1])
        lo = np.maximum(ctr - 3 * np.array([da, db]), np.log([c.p_max_d2d, c.p_max_cell]) - 25.0)
        hi = np.minimum(ctr + 3 * np.array([da, db]), np.log([c.p_max_d2d, c.p_max_cell]))
    return best[0]
