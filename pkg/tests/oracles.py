"""Naive reference implementations used only by the tests."""

import itertools
import math

import numpy as np


def kernel_naive(z1, z2, sf2, ls):
    s = 0.0
    for a, b, l in zip(z1, z2, ls):
        s += (a - b) ** 2 / l**2
    return sf2 * math.exp(-0.5 * s)


def gram_naive(Z, sf2, ls, sn2, jitter=1e-8):
    n = len(Z)
    K = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            K[i, j] = kernel_naive(Z[i], Z[j], sf2, ls)
    return K + (sn2 + jitter) * np.eye(n)


def lml_dense(Z, y, sf2, ls, sn2, jitter=1e-8):
    Kb = gram_naive(Z, sf2, ls, sn2, jitter)
    Kinv = np.linalg.inv(Kb)
    _, logdet = np.linalg.slogdet(Kb)
    return -0.5 * y @ Kinv @ y - 0.5 * logdet - 0.5 * len(y) * math.log(2 * math.pi)


def predict_dense(Z, y, sf2, ls, sn2, z, jitter=1e-8):
    Kinv = np.linalg.inv(gram_naive(Z, sf2, ls, sn2, jitter))
    k = np.array([kernel_naive(z, zi, sf2, ls) for zi in Z])
    mean = k @ Kinv @ y
    var = sf2 - k @ Kinv @ k
    return mean, var


def enumerate_binary(H):
    return [np.array(bits, dtype=float) for bits in itertools.product((0, 1), repeat=H)]


def flappy_rollout(x0, seq):
    """Integer bird update coded directly from the game rules."""
    px, y, vy = x0
    out = [(px, y, vy)]
    for u in seq:
        px, y, vy = px + 4, y + vy, vy - 1 + 16 * u
        out.append((px, y, vy))
    return np.array(out, dtype=float)


def mpc_by_enumeration(x0, slots, H, env):
    """Best binary sequence for the shifting-horizon objective: feasible plans
    first by cost, ties to the earliest sequence. Returns (feasible, cost)."""
    best = None
    seqs = enumerate_binary(H)
    X = np.array([flappy_rollout(x0, s) for s in seqs])
    ok = np.all(env.constraints_ok(X[:, 1:]), axis=1) & slots[H - 1].contains(X[:, H])
    cost = np.zeros(len(seqs))
    for j in range(H):
        if not slots[j].is_empty:
            cost += slots[j].distance(X[:, j + 1])
    for i in range(len(seqs)):
        if ok[i] and (best is None or cost[i] < best[1]):
            best = (True, cost[i])
    return best if best is not None else (False, None)
