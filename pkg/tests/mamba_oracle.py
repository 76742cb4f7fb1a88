"""Independent straight-line reference of the 24-step Mamba-1 layer.

Written against the layer equations directly with numpy, before and apart
from the cascade builder / interpreter it is used to check. Takes raw
input arrays by name and returns every intermediate, so tests can compare
any stage. No imports from einfuse on purpose.
"""
from __future__ import annotations

import numpy as np

EPS = 1e-5


def np_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def np_silu(x):
    return x * np_sigmoid(x)


def np_softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def mamba1_layer(inputs: dict[str, np.ndarray], W: int) -> dict[str, np.ndarray]:
    """Run one Mamba-1 layer.

    inputs (shapes): IN (B,I,E); G (E,); WIN, WRES (E,D); WC (D,W);
    WB, WXC (D,N); WD1 (D,R); WD2 (R,D); BD (D,); A (D,N); DSKIP (D,);
    WOUT (D,E).
    """
    IN = inputs["IN"]
    B, I, E = IN.shape
    D = inputs["WIN"].shape[1]
    N = inputs["WB"].shape[1]

    t = {}
    t["X"] = IN.copy()                                              # 1
    t["SQ"] = t["X"] ** 2                                           # 2
    t["NUM"] = t["SQ"].sum(axis=2)                                  # 3
    t["MEAN"] = t["NUM"] / E                                        # 4
    t["SQEX"] = 1.0 / np.sqrt(t["MEAN"] + EPS)                      # 5
    t["NEX"] = t["X"] * t["SQEX"][:, :, None] * inputs["G"][None, None, :]  # 6
    t["TX"] = np.einsum("bie,ed->bid", t["NEX"], inputs["WIN"])     # 7
    t["RX"] = np.einsum("bie,ed->bid", t["NEX"], inputs["WRES"])    # 8
    ttx = np.zeros((B, I, D))                                       # 9 (causal corr, zero pad)
    for w in range(W):
        shifted = np.zeros((B, I, D))
        if w == 0:
            shifted = t["TX"]
        else:
            shifted[:, w:, :] = t["TX"][:, :-w, :]
        ttx += shifted * inputs["WC"][None, None, :, w].reshape(1, 1, D)
    t["TTX"] = ttx
    t["LEX"] = np_silu(t["TTX"])                                    # 10
    t["XB"] = np.einsum("bid,dn->bin", t["LEX"], inputs["WB"])      # 11
    t["XC"] = np.einsum("bid,dn->bin", t["LEX"], inputs["WXC"])     # 12
    t["TTD"] = np.einsum("bid,dr->bir", t["LEX"], inputs["WD1"])    # 13
    t["DTP"] = np.einsum("bir,rd->bid", t["TTD"], inputs["WD2"]) + inputs["BD"]  # 14
    t["DT"] = np_softplus(t["DTP"])                                 # 15
    t["AB"] = np.exp(t["DT"][:, :, :, None] * inputs["A"][None, None, :, :])     # 16
    t["BB"] = t["DT"][:, :, :, None] * t["XB"][:, :, None, :]       # 17
    t["BX"] = t["BB"] * t["LEX"][:, :, :, None]                     # 18
    hh = np.zeros((B, I, D, N))                                     # 19-20 (recurrence)
    h = np.zeros((B, I, D, N))
    state = np.zeros((B, D, N))                                     # H[-1] = 0
    for i in range(I):
        hh[:, i] = t["AB"][:, i] * state
        h[:, i] = hh[:, i] + t["BX"][:, i]
        state = h[:, i]
    t["HH"] = hh
    t["H"] = h
    t["S"] = np.einsum("bidn,bin->bid", t["H"], t["XC"])            # 21
    t["SD"] = t["S"] + inputs["DSKIP"][None, None, :] * t["LEX"]    # 22
    t["Y"] = t["SD"] * np_silu(t["RX"])                             # 23
    t["O"] = np.einsum("bid,de->bie", t["Y"], inputs["WOUT"])       # 24
    return t
