"""Independent reference implementations used as test oracles.

None of these import the code under test; they are deliberately slow and
literal so that agreement with the fast paths means something.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np

from careless.events import Dataset, QuestionEvent, StudentRecord


# ------------------------------------------------------------ BKT oracles


def slip_by_enumeration(prior, T, G, S, next1, next2):
    """P(known at N | answers at N+1, N+2) by summing over every latent path
    (k_N, k_N+1, k_N+2) with no forgetting."""

    def trans(a, b):
        if a:
            return 1.0 if b else 0.0
        return T if b else 1.0 - T

    def emit(k, obs):
        p = (1.0 - S) if k else G
        return p if obs else 1.0 - p

    joint = {0: 0.0, 1: 0.0}
    for k0, k1, k2 in itertools.product((0, 1), repeat=3):
        w = prior if k0 else 1.0 - prior
        w *= trans(k0, k1) * emit(k1, next1) * trans(k1, k2) * emit(k2, next2)
        joint[k0] += w
    return joint[1] / (joint[0] + joint[1])


def bkt_marginal_curve(L0, T, G, S, n):
    """P(correct at opportunity t), t = 0..n-1, for a population with no
    careless behavior (forward recursion on P(known))."""
    out = []
    p = L0
    for _ in range(n):
        out.append(p * (1.0 - S) + (1.0 - p) * G)
        p = p + (1.0 - p) * T
    return np.array(out)


# ------------------------------------------------------------ datasets


def make_dataset(sequences, durations=None, score_max=24.0):
    """Build a Dataset from ``{student: [(skills, correct), ...]}``.

    ``skills`` may be a string (one skill) or a tuple. Durations default to
    ten seconds, and events are spaced one minute apart.
    """
    students = []
    for sid, seq in sequences.items():
        events = []
        for n, (skills, ok) in enumerate(seq):
            skills = (skills,) if isinstance(skills, str) else tuple(skills)
            dur = 10.0 if durations is None else durations[sid][n]
            start = 60_000 * n
            events.append(
                QuestionEvent(sid, f"q{n}", n, skills, start, start + int(dur * 1000), bool(ok))
            )
        students.append(StudentRecord(sid, tuple(events)))
    return Dataset(tuple(students), score_max=score_max)


def generate_pfa_data(rng, n_students, n_per_student, beta, gamma, rho, skill="A"):
    """Answers drawn directly from the PFA logistic model on one skill."""
    seqs = {}
    for k in range(n_students):
        s = f = 0
        rows = []
        for _ in range(n_per_student):
            m = beta + gamma * s + rho * f
            ok = rng.random() < 1.0 / (1.0 + math.exp(-m))
            rows.append((skill, ok))
            if ok:
                s += 1
            else:
                f += 1
        seqs[f"p{k:05d}"] = rows
    return make_dataset(seqs)


# ------------------------------------------------------------ statistics


def average_ranks(x):
    """1-based ranks with ties given their average position."""
    order = sorted(range(len(x)), key=lambda i: x[i])
    ranks = [0.0] * len(x)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and x[order[j + 1]] == x[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def pearson_sums(a, b):
    n = len(a)
    sa, sb = sum(a), sum(b)
    saa = sum(v * v for v in a)
    sbb = sum(v * v for v in b)
    sab = sum(u * v for u, v in zip(a, b))
    num = n * sab - sa * sb
    den = math.sqrt(n * saa - sa * sa) * math.sqrt(n * sbb - sb * sb)
    return num / den


def spearman_brute(x, y):
    return pearson_sums(average_ranks(list(x)), average_ranks(list(y)))


def solve_normal_equations(X, y):
    """Exact rational solution of (X'X) b = X'y by Gauss-Jordan elimination.

    ``X`` already includes any intercept column.
    """
    Xf = [[Fraction(v) for v in row] for row in X]
    yf = [Fraction(v) for v in y]
    p = len(Xf[0])
    A = [[sum(r[i] * r[j] for r in Xf) for j in range(p)] for i in range(p)]
    rhs = [sum(r[i] * t for r, t in zip(Xf, yf)) for i in range(p)]
    M = [A[i] + [rhs[i]] for i in range(p)]
    for c in range(p):
        piv = next(r for r in range(c, p) if M[r][c] != 0)
        M[c], M[piv] = M[piv], M[c]
        inv = 1 / M[c][c]
        M[c] = [v * inv for v in M[c]]
        for r in range(p):
            if r != c and M[r][c] != 0:
                f = M[r][c]
                M[r] = [a - f * b for a, b in zip(M[r], M[c])]
    return [float(M[i][p]) for i in range(p)]
