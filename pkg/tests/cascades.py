"""Shared cascade fixtures: the four pairwise-class examples, the
five-Einsum stitching example, and the rolled generational chain."""

FIG4_RI = """\
tensor A : M(3), N(4)
tensor B : M(3), N(4)
tensor Z : M(3), N(4)
tensor C : M(3)
tensor Y : M(3)
einsum 1: Z[m, n] = A[m, n] * B[m, n]
einsum 2: Y[m] += Z[m, n] / C[m]
"""

FIG5_RSB = """\
tensor A : M(4), K(3)
tensor B : K(3)
tensor Z : M(4)
tensor C : M(4)
tensor Y : M(4)
einsum 1: Z[m] += A[m, k] * B[k]
einsum 2: Y[m] = Z[m] / C[m]
"""

FIG6_RSP = """\
tensor A : M(3), N(4)
tensor B : N(4)
tensor Z : M(3), N(4)
tensor C : N(4), P(2)
tensor Y : M(3), P(2)
einsum 1: Z[m, n] = A[m, n] * B[n]
einsum 2: Y[m, p] += Z[m, n] * C[n, p]
"""

FIG7_RD = """\
tensor A : M(3), K(3)
tensor B : K(3), N(3)
tensor Z : M(3), N(3)
tensor C : N(3), P(3)
tensor Y : M(3), P(3)
einsum 1: Z[m, n] += A[m, k] * B[k, n]
einsum 2: Y[m, p] += Z[m, n] * C[n, p]
"""

FIG8 = """\
# five-einsum example cascade
tensor A : M(3), K(4)
tensor B : K(4), N(3)
tensor Z : M(3), N(3)
tensor C : P(2)
tensor Y : M(3), N(3), P(2)
tensor W : Q(2)
tensor X : M(3), N(3), Q(2)
tensor D : Q(2)
tensor V : N(3)
tensor U : N(3)
einsum 1: Z[m, n] += A[m, k] * B[k, n]
einsum 2: Y[m, n, p] = Z[m, n] * C[p]
einsum 3: X[m, n, q] += Y[m, n, p] * W[q]
einsum 4: V[n] += X[m, n, q] * D[q]
einsum 5: U[n] = exp(V[n])
"""

EQ1 = """\
tensor A : I(5)
tensor B :
tensor Z : I(5)
rank I generational step=1 stop=5
einsum 1: Z[i+1] = A[i] * Z[i]
init: Z[0] = A[0] * B[]
stop: i <= 5
"""


def load(text):
    from einfuse.frontend import parse

    r = parse(text)
    assert r.ok, [str(d) for d in r.diagnostics]
    return r.cascade
