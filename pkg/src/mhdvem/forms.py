"""Elemental matrices of the discrete bilinear and trilinear forms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .projectors import ElementOperators


@dataclass(frozen=True, eq=False)
class LocalForms:
    A: np.ndarray      # a_h^P, velocity x velocity
    M: np.ndarray      # m_h^P
    Bdiv: np.ndarray   # (nd,): b^P(v, 1) = -|P| div v
    Medge: np.ndarray
    Mface: np.ndarray
    Curl: np.ndarray   # face test x edge trial: [C, curl F]_face


def _stabilized(proj, dofs, S, consistency):
    """proj^T consistency proj + (I - dofs proj)^T S (I - dofs proj)."""
    r = np.eye(proj.shape[1]) - dofs @ proj
    return proj.T @ consistency @ proj + r.T @ S @ r


def grad_gram(op: ElementOperators) -> np.ndarray:
    """(12, 12) matrix of (grad(m_a e_i), grad(m_b e_j))_P."""
    k = np.diag([0.0, 1.0, 1.0, 1.0]) * op.volume / op.h ** 2
    return np.kron(np.eye(3), k)


def local_bilinear_forms(op: ElementOperators) -> LocalForms:
    D = op.velocity_dof_matrix
    A = _stabilized(op.pi_nabla_matrix(), D, op.S_a, grad_gram(op))
    M = _stabilized(op.pi_zero_matrix(), D, op.S_m, np.kron(np.eye(3), op.gram))
    Me = _stabilized(op.pi_zero_edge, op.edge_dof_matrix, op.S_edge, op.volume * np.eye(3))
    Mf = _stabilized(op.pi_zero_face, op.face_dof_matrix, op.S_face, op.volume * np.eye(3))
    return LocalForms(A=0.5 * (A + A.T), M=0.5 * (M + M.T), Bdiv=-op.volume * op.divergence,
                      Medge=0.5 * (Me + Me.T), Mface=0.5 * (Mf + Mf.T), Curl=Mf @ op.curl)


def advection_trilinear(op: ElementOperators, ubar) -> np.ndarray:
    """K1[w, u] = c_h^P(ubar; u, w) = int (Pi0 grad u)(Pi0_1 ubar) . (Pi0_1 w)."""
    U = np.einsum("iad,d->ia", op.pi_zero, ubar)
    return np.einsum("iju,ja,ab,ibw->wu", op.pi_zero_grad, U, op.gram, op.pi_zero, optimize=True)


def local_advection(op: ElementOperators, ubar) -> np.ndarray:
    """Skew-symmetric advection: K[w, u] = (c(ubar; u, w) - c(ubar; w, u)) / 2."""
    K1 = advection_trilinear(op, ubar)
    return 0.5 * (K1 - K1.T)


def _skew(b):
    return np.array([[0.0, -b[2], b[1]], [b[2], 0.0, -b[0]], [-b[1], b[0], 0.0]])


def chi_matrix(op: ElementOperators, bbar) -> np.ndarray:
    """(3, nd): v -> Pi0 v x bbar (a cell constant)."""
    return -_skew(bbar) @ op.mean_velocity


@dataclass(frozen=True, eq=False)
class LorentzBlocks:
    velocity_edge: np.ndarray      # <E, chi(v)>, v test, E trial
    velocity_velocity: np.ndarray  # <chi(u), chi(v)>
    edge_velocity: np.ndarray      # <chi(u), F>, F test, u trial
    bbar: np.ndarray


def local_lorentz(op: ElementOperators, Bbar) -> LorentzBlocks:
    b = op.pi_zero_face @ np.asarray(Bbar, float)
    Y = chi_matrix(op, b)
    PE = op.pi_zero_edge
    vol = op.volume
    return LorentzBlocks(vol * Y.T @ PE, vol * Y.T @ Y, vol * PE.T @ Y, b)


def velocity_load(op: ElementOperators, moments) -> np.ndarray:
    """(f, Pi0_1 v) from moments[i, a] = int_P f_i m_a."""
    return np.einsum("ia,iad->d", moments, op.pi_zero)


def edge_load(op: ElementOperators, integral) -> np.ndarray:
    """(g, Pi0 F) from integral = int_P g."""
    return np.asarray(integral) @ op.pi_zero_edge


def batched_lagged_forms(pi_zero, pi_zero_grad, gram, mean_velocity, pi_zero_edge, pi_zero_face,
                         volume, ubar, Bbar):
    """Advection and Lorentz matrices for a stack of cells of equal shape.

    Arrays carry a leading cell axis; returns (K, L_vv, L_vE, L_Ev) with the
    same meaning as local_advection / local_lorentz.
    """
    U = np.einsum("giad,gd->gia", pi_zero, ubar)
    UH = np.einsum("gja,gab->gjb", U, gram)
    K1 = np.einsum("giju,gjb,gibw->gwu", pi_zero_grad, UH, pi_zero, optimize=True)
    K = 0.5 * (K1 - K1.transpose(0, 2, 1))
    b = np.einsum("gif,gf->gi", pi_zero_face, Bbar)
    Y = np.cross(mean_velocity.transpose(0, 2, 1), b[:, None, :]).transpose(0, 2, 1)
    v = volume[:, None, None]
    YT = Y.transpose(0, 2, 1)
    return K, v * YT @ Y, v * YT @ pi_zero_edge, v * pi_zero_edge.transpose(0, 2, 1) @ Y
