"""Shared test utilities: rank correlation and tiny oracles."""

import math


def spearman(xs, ys) -> float:
    """Spearman rank correlation with average ranks on ties."""

    def rank(v):
        order = sorted(range(len(v)), key=lambda i: v[i])
        r = [0.0] * len(v)
        i = 0
        while i < len(order):
            j = i
            while j + 1 < len(order) and v[order[j + 1]] == v[order[i]]:
                j += 1
            avg = (i + j) / 2 + 1
            for k in range(i, j + 1):
                r[order[k]] = avg
            i = j + 1
        return r

    rx, ry = rank(list(xs)), rank(list(ys))
    n = len(rx)
    mx, my = sum(rx) / n, sum(ry) / n
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))
    return num / den


def value_iteration(transitions, rewards, gamma, tol=1e-12, max_iter=100000):
    """Exact action values for a small deterministic MDP.

    transitions[s][a] -> next state, rewards[s][a] -> reward.
    """
    n_s = len(transitions)
    n_a = len(transitions[0])
    q = [[0.0] * n_a for _ in range(n_s)]
    for _ in range(max_iter):
        delta = 0.0
        for s in range(n_s):
            for a in range(n_a):
                nxt = transitions[s][a]
                new = rewards[s][a] + gamma * max(q[nxt])
                delta = max(delta, abs(new - q[s][a]))
                q[s][a] = new
        if delta < tol:
            break
    return q
