"""Augmented-Lagrangian block preconditioner."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..formulation import BlockSystem
from .linear import LuFactorization, sparse_lu


@dataclass
class ALPreconditioner:
    """Block upper-triangular preconditioner for ``[[A_hat, B^T], [B, C]]``.

    Applies ``p = -(nu_ref + gamma) Mp^-1 r_p`` and then
    ``z = A_hat^-1 (r_z - B^T p)``.
    """

    top: LuFactorization
    Bt: sp.csr_matrix
    Mp_inv: sp.csr_matrix
    scale: float
    npz: int

    def apply(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        p = -self.scale * (self.Mp_inv @ r[self.npz:])
        z = self.top.solve(r[:self.npz] - self.Bt @ p)
        return np.concatenate([z, p])

    __call__ = apply


def build_al_preconditioner(system: BlockSystem, gamma: float, nu_ref: float,
                            Mp_inv: sp.spmatrix) -> ALPreconditioner:
    """Factorise the (already augmented) top block of ``system``."""
    if Mp_inv is None:
        raise ValueError("AL preconditioner needs a cellwise-invertible pressure mass matrix")
    top = sparse_lu(system.A)
    return ALPreconditioner(top, system.Bt.tocsr(), sp.csr_matrix(Mp_inv),
                            float(nu_ref + gamma), system.npz)
