"""Hershey simplex Roman glyphs for lowercase a-z.

Each record is the raw Hershey encoding after the vertex count: two
characters for the left/right bearings followed by coordinate pairs, with
" R" lifting the pen. Coordinates are ``ord(c) - ord("R")``; y grows down,
the baseline sits at y=9 and the x-height at y=-5.
"""
from __future__ import annotations

import numpy as np

BASELINE = 9
ASCENDER = -12
DESCENDER = 16

_GLYPHS = {
    'a': 'I\\XMX[ RXPVNTMQMONMPLSLUMXOZQ[T[VZXX',
    'b': 'H[LFL[ RLPNNPMSMUNWPXSXUWXUZS[P[NZLX',
    'c': 'I[XPVNTMQMONMPLSLUMXOZQ[T[VZXX',
    'd': 'I\\XFX[ RXPVNTMQMONMPLSLUMXOZQ[T[VZXX',
    'e': 'I[LSXSXQWOVNTMQMONMPLSLUMXOZQ[T[VZXX',
    'f': 'MYWFUFSGRJR[ ROMVM',
    'g': 'I\\XMX]W`VaTbQbOa RXPVNTMQMONMPLSLUMXOZQ[T[VZXX',
    'h': 'I\\MFM[ RMQPNRMUMWNXQX[',
    'i': 'NVQFRGSFREQF RRMR[',
    'j': 'MWRFSGTFSERF RSMS^RaPbNb',
    'k': 'IZMFM[ RWMMW RQSX[',
    'l': 'NVRFR[',
    'm': 'CaGMG[ RGQJNLMOMQNRQR[ RRQUNWMZM\\N]Q][',
    'n': 'I\\MMM[ RMQPNRMUMWNXQX[',
    'o': 'I\\QMONMPLSLUMXOZQ[T[VZXXYUYSXPVNTMQM',
    'p': 'H[LMLb RLPNNPMSMUNWPXSXUWXUZS[P[NZLX',
    'q': 'I\\XMXb RXPVNTMQMONMPLSLUMXOZQ[T[VZXX',
    'r': 'KXOMO[ ROSPPRNTMWM',
    's': 'J[XPWNTMQMNNMPNRPSUTWUXWXXWZT[Q[NZMX',
    't': 'MYRFRWSZU[W[ ROMVM',
    'u': 'I\\MMMWNZP[S[UZXW RXMX[',
    'v': 'JZLMR[ RXMR[',
    'w': 'G]JMN[ RRMN[ RRMV[ RZMV[',
    'x': 'J[MMX[ RXMM[',
    'y': 'JZLMR[ RXMR[P_NaLbKb',
    'z': 'J[XMM[ RMMXM RM[X[',
}

ALPHABET = "".join(sorted(_GLYPHS))


def glyph(char: str):
    """Return ``(left, right, strokes)`` with strokes as float arrays [n,2]."""
    rec = _GLYPHS[char]
    left, right = ord(rec[0]) - 82, ord(rec[1]) - 82
    strokes, cur = [], []
    body = rec[2:]
    for i in range(0, len(body), 2):
        pair = body[i:i + 2]
        if pair == " R":
            if cur:
                strokes.append(np.array(cur, dtype=np.float64))
            cur = []
            continue
        cur.append((ord(pair[0]) - 82, ord(pair[1]) - 82))
    if cur:
        strokes.append(np.array(cur, dtype=np.float64))
    return left, right, strokes
