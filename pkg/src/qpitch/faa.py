"""Fuzzy action assignment: continuous elevator commands from a discrete Q-table.

Each table cell gets a Gaussian membership (one factor per state axis, centred
on the bin with the bin half-width as spread).  The command is the
membership-weighted average of the per-cell greedy actions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .environment import Discretizer, _bin

ANCHORS = ("center", "edge")
OUTER_RULES = ("exclude_in_fine", "include")


@dataclass(frozen=True)
class MembershipGrid:
    theta_centers: np.ndarray
    theta_sigmas: np.ndarray
    rate_centers: np.ndarray
    rate_sigmas: np.ndarray
    theta_edges: np.ndarray
    rate_edges: np.ndarray
    fine_theta: float
    fine_rate: float
    anchor: str = "center"
    outer_rule: str = "exclude_in_fine"

    @classmethod
    def from_discretizer(
        cls, d: Discretizer, mode: str = "mdp", anchor: str = "center", outer_rule: str = "exclude_in_fine"
    ) -> "MembershipGrid":
        if anchor not in ANCHORS:
            raise ValueError(f"anchor must be one of {ANCHORS}")
        if outer_rule not in OUTER_RULES:
            raise ValueError(f"outer_rule must be one of {OUTER_RULES}")

        def axis(edges):
            e = np.asarray(edges, dtype=np.float64)
            sig = (e[1:] - e[:-1]) / 2
            # "edge" anchors each Gaussian on the bin's upper edge
            return ((e[1:] + e[:-1]) / 2 if anchor == "center" else e[1:].copy()), sig

        tc, ts = axis(d.theta_edges)
        if mode == "mdp":
            rc, rs = axis(d.rate_edges)
            re = d.rate_array()
        else:
            # a single column that every pitch rate belongs to fully
            rc, rs, re = np.zeros(1), np.full(1, np.inf), np.array([-np.inf, np.inf])
        return cls(tc, ts, rc, rs, d.theta_array(), re, d.fine_theta, d.fine_rate, anchor, outer_rule)

    @property
    def shape(self) -> tuple:
        return self.theta_centers.size, self.rate_centers.size


@njit(cache=True)
def _faa(err, q, gv, tc, ts, rc, rs, fine_t, fine_r, outer_mode, te, re):
    ni, nj = gv.shape
    excl_t = outer_mode == 0 and ni > 2 and abs(err) <= fine_t
    excl_r = outer_mode == 0 and nj > 2 and abs(q) <= fine_r
    num = 0.0
    den = 0.0
    for i in range(ni):
        if excl_t and (i == 0 or i == ni - 1):
            continue
        zi = (err - tc[i]) / ts[i]
        mi = math.exp(-0.5 * zi * zi)
        for j in range(nj):
            if excl_r and (j == 0 or j == nj - 1):
                continue
            zj = (q - rc[j]) / rs[j]
            w = mi * math.exp(-0.5 * zj * zj)
            num += w * gv[i, j]
            den += w
    if den > 0.0:
        return num / den
    # every weight underflowed: fall back to the containing cell
    return gv[_bin(err, te), _bin(q, re) if nj > 1 else 0]


def membership(err_p: float, q: float, i: int, j: int, grid: MembershipGrid) -> float:
    """Gaussian membership of cell ``(i, j)`` for pitch error ``err_p`` and rate ``q``."""
    zi = (err_p - grid.theta_centers[i]) / grid.theta_sigmas[i]
    zj = (q - grid.rate_centers[j]) / grid.rate_sigmas[j]
    return math.exp(-0.5 * zi * zi) * math.exp(-0.5 * zj * zj)


def faa_from_greedy(err_p: float, q: float, greedy_values: np.ndarray, grid: MembershipGrid) -> float:
    """FAA command given the per-cell greedy actions (shape ``grid.shape``)."""
    gv = np.asarray(greedy_values, dtype=np.float64)
    if gv.shape != grid.shape:
        raise ValueError(f"greedy table shape {gv.shape} does not match grid {grid.shape}")
    return float(
        _faa(
            float(err_p), float(q), gv,
            grid.theta_centers, grid.theta_sigmas, grid.rate_centers, grid.rate_sigmas,
            grid.fine_theta, grid.fine_rate, OUTER_RULES.index(grid.outer_rule),
            grid.theta_edges, grid.rate_edges,
        )
    )


def faa_action(err_p: float, q: float, table, grid: MembershipGrid | None = None) -> float:
    """Continuous elevator command (rad) from a trained :class:`~qpitch.qlearning.QTable`."""
    if grid is None:
        grid = MembershipGrid.from_discretizer(table.discretizer, table.mode)
    return faa_from_greedy(err_p, q, table.greedy_actions(), grid)


class FaaController:
    """Caches the greedy-action table so repeated evaluation stays cheap."""

    def __init__(self, table, grid: MembershipGrid | None = None):
        self.grid = grid or MembershipGrid.from_discretizer(table.discretizer, table.mode)
        self.greedy = table.greedy_actions()
        if self.greedy.shape != self.grid.shape:
            raise ValueError("membership grid does not match the table")

    def __call__(self, err_p: float, q: float) -> float:
        return faa_from_greedy(err_p, q, self.greedy, self.grid)
