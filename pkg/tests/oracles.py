"""Brute-force reference implementations, written without reusing package code."""
import itertools
import math

from scipy import integrate, stats


def belief_update(alpha, beta, r, km, kappa, delta, selected, dt=1.0):
    g = math.exp(-kappa * dt)
    if not selected:
        return max(g * alpha, 1e-6), max(g * beta, 1e-6)
    kd = 1 - km
    return max(g * alpha + r + delta * km, 1e-6), max(g * beta + (1 - r) + delta * kd, 1e-6)


def synergy_update(c, ea, eb, contribution, rate):
    return c + rate * stats.beta(ea, eb).mean() * contribution


def team_synergy(weights: dict, members):
    members = list(set(members))
    if len(members) < 2:
        return 1.0
    pairs = list(itertools.permutations(members, 2))
    return sum(weights.get(p, 0.0) for p in pairs) / len(pairs)


def selection_score(alpha, beta, lam, dist, zeta, eta):
    return stats.beta(alpha, beta).mean() * math.exp(-lam * dist) * zeta ** eta


def knowledge_distance(depth, psis, weights):
    total = 0.0
    for w, p in zip(weights, psis):
        total += w * p
    return math.log(1 + depth) * total


def argmax_probabilities(arms):
    """P(arm j has the largest theta_j * c_j), theta_j ~ Beta(a_j, b_j), by quadrature.

    ``arms`` is a list of (a, b, c). Ties have probability zero.
    """
    probs = []
    for j, (a, b, c) in enumerate(arms):
        others = [arm for k, arm in enumerate(arms) if k != j]

        def integrand(x, a=a, b=b, c=c, others=others):
            p = stats.beta.pdf(x, a, b)
            for a2, b2, c2 in others:
                p *= stats.beta.cdf(min(1.0, x * c / c2), a2, b2)
            return p

        val, _ = integrate.quad(integrand, 0.0, 1.0, limit=200)
        probs.append(val)
    return probs
