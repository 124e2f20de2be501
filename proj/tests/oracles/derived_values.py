"""Independent reference computations whose outputs are frozen into the C++ tests.

Run: python3 tests/oracles/derived_values.py
Nothing here shares code with the engine; every value is recomputed from the
textbook definitions with sympy / numpy / itertools.
"""
import itertools
import math

import numpy as np
import sympy as sp


def cov_mul(a, b):
    """Covariance-triple product straight from the definition (dense, symbolic)."""
    ca, sa, qa = a
    cb, sb, qb = b
    c = ca * cb
    s = cb * sa + ca * sb
    q = cb * qa + ca * qb + sa * sb.T + sb * sa.T
    return c, sp.simplify(s), sp.simplify(q)


def section(title):
    print(f"\n== {title}")


section("covariance m=2 addition")
a = (1, sp.Matrix([2, 0]), sp.Matrix([[4, 0], [0, 0]]))
b = (1, sp.Matrix([0, 3]), sp.Matrix([[0, 0], [0, 9]]))
print("c =", a[0] + b[0], "s =", list(a[1] + b[1]), "Q =", (a[2] + b[2]).tolist())

section("covariance m=2 product of single-variable lifts")
x, y = sp.symbols("x y")
la = (1, sp.Matrix([x, 0]), sp.Matrix([[x**2, 0], [0, 0]]))
lb = (1, sp.Matrix([0, y]), sp.Matrix([[0, 0], [0, y**2]]))
c, s, q = cov_mul(la, lb)
print("symbolic:", c, list(s), q.tolist())
sub = {x: 3, y: 5}
print("x=3,y=5:", c, [v.subs(sub) for v in s], [[v.subs(sub) for v in row] for row in q.tolist()])

section("relational join with empty-schema payload")
left = {("b1",): 1, ("b2",): 1}
right = {(): 2}
print({k1 + k2: v1 * v2 for k1, v1 in left.items() for k2, v2 in right.items()})

section("disjoint join {a->2} x {b->3}")
print({("a", "b"): 2 * 3})

section("triangle order A-B-C dependency sets")
rels = [{"A", "B"}, {"B", "C"}, {"C", "A"}]
order = ["A", "B", "C"]  # a single path
for i, v in enumerate(order):
    anc = set(order[:i])
    sub = set(order[i:])
    dep = {a for a in anc if any(a in r and (r & sub) for r in rels)}
    print(v, sorted(dep))

section("gradient-computation payload V@C_ST[a2] with numbers")
# S(A,C,E), T(C,D); a2 joins S tuple (a2,c2,e4) with T tuples (c2,d2), (c2,d3)
c2, d2, d3, e4 = 7, 2, 5, 11
rows = [dict(C=c2, D=d2, E=e4), dict(C=c2, D=d3, E=e4)]
slots = ["A", "B", "C", "D", "E"]
cnt = len(rows)
svec = [sum(r.get(v, 0) for r in rows) if v in ("C", "D", "E") else 0 for v in slots]
Q = [[sum(r.get(u, 0) * r.get(v, 0) for r in rows) if u in "CDE" and v in "CDE" else 0 for v in slots] for u in slots]
print("c =", cnt, "s =", svec)
print("Q =", Q)

section("triangle count on a 3-edge cycle: R={(1,2)}, S={(2,3)}, T={(3,1)}")
R, S, T = [(1, 2)], [(2, 3)], [(3, 1)]
print(sum(1 for (a, b) in R for (b2, c) in S for (c2, a2) in T if b == b2 and c == c2 and a == a2))

section("matrix chain (10,100,5,50) exhaustive bracketing")
dims = [10, 100, 5, 50]


def best(i, j):
    if i == j:
        return 0, f"A{i+1}"
    out = []
    for k in range(i, j):
        cl, bl = best(i, k)
        cr, br = best(k + 1, j)
        out.append((cl + cr + dims[i] * dims[k + 1] * dims[j + 1], f"({bl}{br})"))
    return min(out)


print(best(0, 2))

section("MI values")
k = 4
print("X=Y uniform k=4:", math.log(k))
# 2x2 contingency {(0,0):1,(1,1):1}
cxy = {(0, 0): 1, (1, 1): 1}
n = sum(cxy.values())
cx = {0: 1, 1: 1}
cy = {0: 1, 1: 1}
print("2x2 diag:", sum(v / n * math.log(n * v / (cx[a] * cy[b])) for (a, b), v in cxy.items()), math.log(2))

section("Chow-Liu chain X1->X2->X3 with noisy copies")
rng = np.random.default_rng(7)
N = 400
x1 = rng.integers(0, 3, N)
flip = lambda col, p: np.where(rng.random(N) < p, rng.integers(0, 3, N), col)
x2 = flip(x1, 0.2)
x3 = flip(x2, 0.2)
cols = [x1, x2, x3]


def mi(a, b):
    tot = len(a)
    res = 0.0
    for va in np.unique(a):
        for vb in np.unique(b):
            nab = np.sum((a == va) & (b == vb))
            if nab == 0:
                continue
            res += nab / tot * math.log(tot * nab / (np.sum(a == va) * np.sum(b == vb)))
    return res


W = {(i, j): mi(cols[i], cols[j]) for i in range(3) for j in range(i + 1, 3)}
trees = [[(0, 1), (1, 2)], [(0, 1), (0, 2)], [(0, 2), (1, 2)]]
print({str(t): sum(W[e] for e in t) for t in trees})
print("best:", max(trees, key=lambda t: sum(W[e] for e in t)))

section("regression on y = 2x + 1")
xs = np.array([-1.0, -0.5, 0.0, 0.25, 0.5, 1.0])
ys = 2 * xs + 1
X = np.column_stack([np.ones_like(xs), xs])
print(np.linalg.lstsq(X, ys, rcond=None)[0])
