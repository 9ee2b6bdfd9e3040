"""Exact viability tables for Flappy Bird.

States are integer-valued, so the set of states from which some flap
sequence keeps the bird clear of the pipes can be computed exactly by a
backward sweep over screen columns.

Knowledge is modelled with a *safety view* ``SAFE_VIEW`` that is shorter than
the real view by the longest planning horizon, so a planner that sees the
real view always knows every pipe that matters for the predicted states.
Pipe ``i+1`` enters the safety view at its *anchor column*, 20 px before
pipe ``i``. A table for the window whose last known pipe is ``m`` runs from
the anchor of ``m - 1`` to the anchor of ``m`` and requires the state at its
last column to lie in the recurrent set ``S`` (relative to the gap of pipe
``m``). ``S`` is the largest set of anchor states from which, for *every*
admissible next gap, the bird can be steered to ``S`` at the next anchor.
Membership of the tables is therefore preserved when new pipes become
known, i.e. the tables describe an invariant set.

``S`` is computed by a fixed-point iteration over all gap changes and both
phases of the pipe grid relative to the bird's 4 px columns
(:func:`recurrent_set`). The iteration replaces floor and ceiling by a band
around the two gaps that lies inside the screen for every admissible gap
pair, which makes it independent of the absolute gap height and
conservative.
"""

from __future__ import annotations

import io
from importlib import resources

import numpy as np

from hpl.envs import flappy as fl

VY_MIN = -40
VY_MAX = 24
FLAP = 16
STEP_X = 4
PLAN_HORIZON = 10
SAFE_VIEW = fl.VIEW - STEP_X * PLAN_HORIZON
ANCHOR = fl.SPACING - SAFE_VIEW  # anchor column offset from the pipe's left edge
REL_RANGE = 120
BAND = 100.0
RECURRENT_FILE = "flappy_recurrent.npz"


class Grid:
    """Integer state grid ``y in [y_min, y_max]``, ``vy in [VY_MIN, VY_MAX]``
    with precomputed successor indices for both inputs."""

    def __init__(self, y_min=fl.Y_LOW, y_max=fl.Y_HIGH, vy_min=VY_MIN, vy_max=VY_MAX):
        self.y_min, self.y_max = int(np.ceil(y_min)), int(np.floor(y_max))
        self.vy_min, self.vy_max = int(vy_min), int(vy_max)
        self.ny = self.y_max - self.y_min + 1
        self.nv = self.vy_max - self.vy_min + 1
        yi, vi = np.meshgrid(np.arange(self.ny), np.arange(self.nv), indexing="ij")
        y_next = yi + (self.vy_min + vi)
        ok_y = (y_next >= 0) & (y_next < self.ny)
        yc = np.clip(y_next, 0, self.ny - 1)
        self.succ = []
        for u in (0, 1):
            v_next = vi - 1 + FLAP * u
            ok = ok_y & (v_next >= 0) & (v_next < self.nv)
            self.succ.append((ok, yc * self.nv + np.clip(v_next, 0, self.nv - 1)))
        self.y = self.y_min + np.arange(self.ny)
        self.vy = self.vy_min + np.arange(self.nv)

    def back(self, V_next, ok_rows):
        """States admissible at this column with a successor in ``V_next``."""
        flat = V_next.ravel()
        reach = np.zeros((self.ny, self.nv), bool)
        for ok, idx in self.succ:
            reach |= ok & flat[idx]
        return reach & ok_rows[:, None]

    def place(self, rel, center):
        """Embed a relative mask (rows ``-REL_RANGE..REL_RANGE`` around
        ``center``) into the grid."""
        out = np.zeros((self.ny, self.nv), bool)
        r = rel.shape[0] // 2
        lo = int(center) - r - self.y_min
        a, b = max(lo, 0), min(lo + rel.shape[0], self.ny)
        if a < b:
            out[a:b] = rel[a - lo : b - lo]
        return out

    def extract(self, V, center, r=REL_RANGE):
        out = np.zeros((2 * r + 1, self.nv), bool)
        lo = int(center) - r - self.y_min
        a, b = max(lo, 0), min(lo + 2 * r + 1, self.ny)
        if a < b:
            out[a - lo : b - lo] = V[a:b]
        return out


_GRID = None


def grid() -> Grid:
    global _GRID
    if _GRID is None:
        _GRID = Grid()
    return _GRID


def anchor_column(pipe_left) -> int:
    """Bird column at which the pipe after ``pipe_left`` enters the safety view."""
    return int(np.ceil((pipe_left + ANCHOR) / STEP_X)) * STEP_X


def phase(pipe_left) -> int:
    return int(round(pipe_left)) % STEP_X


def _pipe_rows(g, cols, left, gap):
    inside = (cols >= left - fl.BIRD_W / 2) & (cols <= left + fl.PIPE_W + fl.BIRD_W / 2)
    rows = (g.y >= gap - fl.HALF_GAP) & (g.y <= gap + fl.HALF_GAP)
    return inside, rows


def recurrent_set(gap_range=fl.GAP_RANGE, band=BAND, r=REL_RANGE, max_iter=50):
    """Largest recurrent anchor set per pipe phase (relative rows, all vy)."""
    g = grid()
    lo_gap, hi_gap = int(gap_range[0]), int(gap_range[1])
    span = hi_gap - lo_gap
    mid = (lo_gap + hi_gap) / 2
    lefts = {phase(fl.FIRST_PIPE + k * fl.SPACING): fl.FIRST_PIPE + k * fl.SPACING for k in range(2)}
    S = {p: np.ones((2 * r + 1, g.nv), bool) for p in lefts}
    for _ in range(max_iter):
        new = {}
        for p, left0 in lefts.items():
            left1 = left0 + fl.SPACING
            nxt = S[phase(left1)]
            cols = np.arange(anchor_column(left0), anchor_column(left1) + 1, STEP_X)
            acc = S[p].copy()
            for d in range(-span, span + 1):
                g0 = int(round(mid - d / 2))
                g1 = g0 + d
                band_rows = (g.y >= min(g0, g1) - fl.HALF_GAP - band) & (g.y <= max(g0, g1) + fl.HALF_GAP + band)
                in0, rows0 = _pipe_rows(g, cols, left0, g0)
                in1, rows1 = _pipe_rows(g, cols, left1, g1)
                rows_at = [band_rows & (rows0 if a else True) & (rows1 if b else True) for a, b in zip(in0, in1)]
                V = g.place(nxt, g1) & rows_at[-1][:, None]
                for j in range(cols.size - 2, -1, -1):
                    V = g.back(V, rows_at[j])
                acc &= g.extract(V, g0, r)
            new[p] = acc
        done = all(np.array_equal(new[p], S[p]) for p in S)
        S = new
        if done:
            break
    return S


_RECURRENT = None


def load_recurrent():
    """The shipped recurrent set, computed on first use if missing."""
    global _RECURRENT
    if _RECURRENT is None:
        try:
            raw = resources.files("hpl.data").joinpath(RECURRENT_FILE).read_bytes()
            with np.load(io.BytesIO(raw)) as z:
                _RECURRENT = {int(k[1:]): z[k] for k in z.files}
        except FileNotFoundError:
            _RECURRENT = recurrent_set()
    return _RECURRENT


def save_recurrent(S, path):
    np.savez_compressed(path, **{f"p{p}": m for p, m in S.items()})


class ViabilityTable:
    """Viable states for columns ``start .. stop`` (inclusive, step 4)."""

    def __init__(self, start, tables):
        self.start = int(start)
        self.tables = tables

    @property
    def stop(self):
        return self.start + STEP_X * (len(self.tables) - 1)

    def lookup(self, px, y, vy):
        g = grid()
        px = np.asarray(px, dtype=float)
        y = np.asarray(y, dtype=float)
        vy = np.asarray(vy, dtype=float)
        col = (px - self.start) / STEP_X
        yi, vi = y - g.y_min, vy - g.vy_min
        integral = (col == np.round(col)) & (y == np.round(y)) & (vy == np.round(vy))
        inside = integral & (col >= 0) & (col < len(self.tables)) & (yi >= 0) & (yi < g.ny) & (vi >= 0) & (vi < g.nv)
        out = np.zeros(px.shape, bool)
        if np.any(inside):
            out[inside] = self.tables[col[inside].astype(int), yi[inside].astype(int), vi[inside].astype(int)]
        return out


def build_table(lefts, gaps, start, stop, terminal_rel) -> ViabilityTable:
    """Backward sweep over columns ``start..stop`` through the pipes
    ``lefts``/``gaps``; the last column must lie in ``terminal_rel`` placed at
    the last gap."""
    g = grid()
    env = fl.FlappyEnv(lefts, gaps, n_target=len(lefts))
    cols = np.arange(start, stop + 1, STEP_X)
    lo, hi = env.y_bounds(cols.astype(float))
    tables = np.zeros((cols.size, g.ny, g.nv), bool)
    V = g.place(terminal_rel, gaps[-1]) & ((g.y >= lo[-1]) & (g.y <= hi[-1]))[:, None]
    tables[-1] = V
    for j in range(cols.size - 2, -1, -1):
        V = g.back(V, (g.y >= lo[j]) & (g.y <= hi[j]))
        tables[j] = V
    return ViabilityTable(start, tables)


class FlappyViability:
    """Viable states of a game, one cached table per window of known pipes."""

    def __init__(self, recurrent=None, max_cache=256):
        self.recurrent = load_recurrent() if recurrent is None else recurrent
        self.max_cache = max_cache
        self._cache = {}

    def window(self, env, px):
        """Index of the last pipe inside the safety view at column ``px``."""
        return np.searchsorted(env.pipe_lefts, np.asarray(px, dtype=float) + SAFE_VIEW, side="right") - 1

    def table(self, env, m: int):
        if m < 0 or m >= env.pipe_lefts.size:
            return None
        left_m = float(env.pipe_lefts[m])
        start = max(anchor_column(left_m - fl.SPACING), 0)
        stop = anchor_column(left_m)
        keep = (env.right_eff >= start) & (np.arange(env.pipe_lefts.size) <= m)
        lefts, gaps = env.pipe_lefts[keep], env.gap_centers[keep]
        # tables only depend on the geometry relative to the window start
        key = (start % STEP_X, tuple(lefts - start), tuple(gaps))
        t = self._cache.get(key)
        if t is None:
            t = build_table(lefts - start, gaps, 0, stop - start, self.recurrent[phase(left_m)])
            if len(self._cache) >= self.max_cache:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = t
        return _Shifted(t, start)

    def contains(self, env, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 3)
        out = np.zeros(flat.shape[0], bool)
        win = self.window(env, flat[:, 0])
        for m in np.unique(win):
            rows = win == m
            t = self.table(env, int(m))
            if t is not None:
                out[rows] = t.lookup(flat[rows, 0], flat[rows, 1], flat[rows, 2])
        return out.reshape(x.shape[:-1])

    def viable_cells(self, env, px):
        """Boolean (ny, nv) mask of viable integer states at column ``px``."""
        t = self.table(env, int(self.window(env, px)))
        if t is None:
            return np.zeros((grid().ny, grid().nv), bool)
        col = int((px - t.offset - t.table.start) // STEP_X)
        if col < 0 or col >= len(t.table.tables):
            return np.zeros((grid().ny, grid().nv), bool)
        return t.table.tables[col]


class _Shifted:
    def __init__(self, table, offset):
        self.table = table
        self.offset = offset

    def lookup(self, px, y, vy):
        return self.table.lookup(np.asarray(px, dtype=float) - self.offset, y, vy)
