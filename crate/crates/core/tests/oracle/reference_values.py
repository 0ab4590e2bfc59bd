"""Independent reference values for the frozen constants in the Rust tests.

Integrates the densities directly in x with mpmath (tanh-sinh), without the
angle substitution or the support-point machinery used by the library.
Run: python3 reference_values.py
"""
import mpmath as mp

mp.mp.dps = 30


def mp_edges(s2, c):
    return s2 * (1 - mp.sqrt(c)) ** 2, s2 * (1 + mp.sqrt(c)) ** 2


def model(s2, c, spikes, r, se2):
    a, b = mp_edges(s2, c)
    return dict(s2=mp.mpf(s2), c=mp.mpf(c), spikes=[(mp.mpf(d), mp.mpf(al)) for d, al in spikes],
                r=mp.mpf(r), se2=mp.mpf(se2), a=a, b=b)


def f_mp(m, x):
    return mp.sqrt((m['b'] - x) * (x - m['a'])) / (2 * mp.pi * m['s2'] * m['c'] * x)


def xstar(m, d):
    return (d + m['s2']) * (d + m['c'] * m['s2']) / d


def nu(m, d, x):
    return d * (xstar(m, d) - x) / (m['c'] * m['s2'] * (d + m['s2']))


def zero_mass(m, d):
    return m['s2'] * (m['c'] - 1) / (m['c'] * m['s2'] + d) if m['c'] > 1 else mp.mpf(0)


def out_mass(m, d):
    if d > m['s2'] * mp.sqrt(m['c']):
        return (d * d - m['c'] * m['s2'] ** 2) / (d * (d + m['c'] * m['s2']))
    return mp.mpf(0)


def integrate(m, d, g):
    """int g dF_delta (delta = 0 is the MP law)."""
    dens = (lambda x: f_mp(m, x)) if d == 0 else (lambda x: f_mp(m, x) / nu(m, d, x))
    bulk = mp.quad(lambda x: g(x) * dens(x), [m['a'], m['b']])
    atoms = zero_mass(m, d) * g(mp.mpf(0)) if m['c'] > 1 else 0
    if d > 0:
        atoms += out_mass(m, d) * g(xstar(m, d))
    return bulk + atoms


def omegas(m):
    r2 = m['r'] ** 2
    return 1 - sum(al ** 2 for _, al in m['spikes']) / r2, [al ** 2 / r2 for _, al in m['spikes']]


def mu_list(m, x):
    w0, ws = omegas(m)
    s = len(m['spikes'])
    for j, (d, _) in enumerate(m['spikes']):
        if abs(x - xstar(m, d)) < mp.mpf(10) ** -20:
            out = [mp.mpf(0)] * (s + 1)
            out[j + 1] = 1 / ws[j]
            return out
    nus = [nu(m, d, x) for d, _ in m['spikes']]
    full = mp.fprod(nus) if nus else mp.mpf(1)
    minus = [mp.fprod(nus[:j] + nus[j + 1:]) for j in range(s)]
    den = w0 * full + sum(o * p for o, p in zip(ws, minus))
    return [full / den] + [p / den for p in minus]


def weight_w(m, x):
    return m['s2'] * m['r'] ** 2 * x + m['c'] * m['s2'] * m['se2'] * mu_list(m, x)[0]


def gram(m):
    """H_ij = int x mu_j / w dF_delta_i, integrated against F_delta_i directly."""
    s = len(m['spikes'])
    deltas = [mp.mpf(0)] + [d for d, _ in m['spikes']]
    H = mp.matrix(s + 1, s + 1)
    for i in range(s + 1):
        for j in range(s + 1):
            H[i, j] = integrate(m, deltas[i], lambda x, j=j: x * mu_list(m, x)[j] / weight_w(m, x))
    return H


def optimal_b(m, K=1):
    s = len(m['spikes'])
    w0, _ = omegas(m)
    H = gram(m)
    diag = [m['s2'] * m['r'] ** 2 * w0 * (K - 1)] + [((K - 1) * m['s2'] + K * d) * al ** 2 for d, al in m['spikes']]
    A = mp.eye(s + 1) + mp.diag(diag) * H
    gamma = mp.matrix([m['s2'] * m['r'] ** 2 * w0] + [(d + m['s2']) * al ** 2 for d, al in m['spikes']])
    return H, mp.lu_solve(A, gamma)


def pred_risk(m, f):
    w0, ws = omegas(m)
    s2, r2 = m['s2'], m['r'] ** 2
    one = lambda x: (1 - x * f(x)) ** 2
    bulk = w0 * integrate(m, 0, one) + sum(o * integrate(m, d, one) for o, (d, _) in zip(ws, m['spikes']))
    spikes = sum(d * al ** 2 * integrate(m, d, lambda x: 1 - x * f(x)) ** 2 for d, al in m['spikes'])
    var = m['c'] * s2 * m['se2'] * integrate(m, 0, lambda x: x * f(x) ** 2)
    return s2 * r2 * bulk + spikes + var


def opt_rule(m, b):
    return lambda x: sum(bj * mj for bj, mj in zip(b, mu_list(m, x))) / weight_w(m, x)


if __name__ == "__main__":
    two_spike = model(1, 3, [(2, 3), (3, 2.5)], 5, 4)
    H, b = optimal_b(two_spike)
    print("two_spike H =", [[mp.nstr(H[i, j], 17) for j in range(3)] for i in range(3)])
    print("two_spike b =", [mp.nstr(v, 17) for v in b])
    print("two_spike risk(f*) =", mp.nstr(pred_risk(two_spike, opt_rule(two_spike, b)), 17))
    print("two_spike risk(ridge 1) =", mp.nstr(pred_risk(two_spike, lambda x: 1 / (x + 1)), 17))
    _, b5 = optimal_b(two_spike, K=5)
    print("two_spike b^(5) =", [mp.nstr(v, 17) for v in b5])
    one = model(1, 2, [(7, 1.7)], 2, 4)
    _, b1 = optimal_b(one)
    print("one-spike risk(f*) =", mp.nstr(pred_risk(one, opt_rule(one, b1)), 17))
    iso = model(1, 1, [], 1, 1)
    z = mp.mpc(-1, 0)
    print("c=1 m(-1) =", mp.nstr(integrate(iso, 0, lambda x: 1 / (x - z)), 17))
    sp = model(1, 1, [], 1, 1)
    for z in [mp.mpc(-1, 0), mp.mpc(2, 1), mp.mpc(5, -0.5)]:
        v = integrate(sp, mp.mpf(2), lambda x: 1 / (x - z))
        print("c=1 delta=2 m_delta(%s) =" % z, mp.nstr(v.real, 17), mp.nstr(v.imag, 17))
    half = mp.findroot(lambda q: mp.quad(lambda x: f_mp(iso, x), [q, iso['b']]) - mp.mpf(0.5), 1.5)
    print("c=1 upper-tail median =", mp.nstr(half, 17))
