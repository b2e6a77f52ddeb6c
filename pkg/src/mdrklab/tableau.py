"""Extended Butcher tableaux for multiderivative Runge-Kutta schemes.

A scheme with ``r`` derivatives and ``s`` stages is described by r coefficient
matrices ``a[k]`` (s x s), r weight rows ``b[k]`` (length s) and the abscissae
``c`` (length s).  The catalogue below covers the Taylor schemes (generated
from their closed form), the Hermite-Birkhoff schemes and the implicit SSP
schemes.  Rational entries are kept as exact fractions until the tableau is
assembled, so round-trips through the text format are bit-exact.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

import numpy as np

__all__ = [
    "Structure",
    "Tableau",
    "UnknownSchemeError",
    "builtin_tableau",
    "builtin_names",
    "validate",
    "parse_tableau",
    "format_tableau",
]

ROWSUM_TOL = 1e-12


class Structure(str, Enum):
    """Sparsity class of the coefficient matrices."""

    SINGLE_STAGE = "SingleStage"
    DIAGONALLY_IMPLICIT = "DiagonallyImplicit"
    EXPLICIT_FIRST_STAGE_FULLY_IMPLICIT = "ExplicitFirstStageFullyImplicit"
    FULLY_IMPLICIT = "FullyImplicit"


class UnknownSchemeError(KeyError):
    """Raised when a scheme name is not in the builtin catalogue."""


@dataclass(frozen=True)
class Tableau:
    """Immutable extended Butcher tableau.

    Parameters
    ----------
    name : str
        Scheme identifier, e.g. ``"HB-I2DRK4-2s"``.
    r : int
        Number of temporal derivatives the scheme uses.
    s : int
        Number of stages.
    q : int
        Advertised consistency order.
    a : tuple of (s, s) arrays
        One coefficient matrix per derivative order ``k = 1..r``.
    b : tuple of (s,) arrays
        One weight row per derivative order.
    c : (s,) array
        Stage abscissae as fractions of the timestep.
    structure : Structure
        Sparsity class; drives the stage-coupling strategy of the steppers.
    """

    name: str
    r: int
    s: int
    q: int
    a: tuple
    b: tuple
    c: np.ndarray
    structure: Structure

    def __post_init__(self):
        if self.r < 1 or self.s < 1 or self.q < 1:
            raise ValueError("r, s and q must be positive")
        a = tuple(_freeze(np.asarray(m, dtype=float)) for m in self.a)
        b = tuple(_freeze(np.asarray(v, dtype=float)) for v in self.b)
        c = _freeze(np.asarray(self.c, dtype=float))
        if len(a) != self.r or len(b) != self.r:
            raise ValueError(f"expected {self.r} coefficient matrices and weight rows")
        for m in a:
            if m.shape != (self.s, self.s):
                raise ValueError(f"coefficient matrix has shape {m.shape}, expected ({self.s}, {self.s})")
        for v in b:
            if v.shape != (self.s,):
                raise ValueError(f"weight row has length {v.shape}, expected {self.s}")
        if c.shape != (self.s,):
            raise ValueError(f"abscissae have length {c.shape}, expected {self.s}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    def stage_is_implicit(self, l: int) -> bool:
        """True when stage ``l`` appears in its own equation."""
        return any(m[l, l] != 0.0 for m in self.a) or any(
            np.any(m[l, l + 1 :] != 0.0) for m in self.a
        )


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# builtin catalogue
# ---------------------------------------------------------------------------

def _frac_rows(rows):
    return [[Fraction(x) for x in row] for row in rows]


def _taylor(kind: str, r: int) -> Tableau:
    if r < 1:
        raise UnknownSchemeError(f"Taylor scheme needs r >= 1, got {r}")
    if kind == "expl":
        coeff = [Fraction(0)] * r
        weights = [Fraction(1, math.factorial(k)) for k in range(1, r + 1)]
        c = [Fraction(0)]
        name = f"ExplTaylor-{r}"
    else:
        coeff = [Fraction((-1) ** (k + 1), math.factorial(k)) for k in range(1, r + 1)]
        weights = coeff
        c = [Fraction(1)]
        name = f"ImplTaylor-{r}"
    return Tableau(
        name=name,
        r=r,
        s=1,
        q=r,
        a=tuple(np.array([[float(x)]]) for x in coeff),
        b=tuple(np.array([float(w)]) for w in weights),
        c=np.array([float(x) for x in c]),
        structure=Structure.SINGLE_STAGE,
    )


# Hermite-Birkhoff and SSP coefficient tables.  Each entry: (r, s, q,
# structure, [A^(1)..A^(r)], [b^(1)..b^(r)], c).  Fractions are exact.
_CATALOGUE = {
    "HB-I2DRK4-2s": (
        2, 2, 4, Structure.EXPLICIT_FIRST_STAGE_FULLY_IMPLICIT,
        [
            _frac_rows([["0", "0"], ["1/2", "1/2"]]),
            _frac_rows([["0", "0"], ["1/12", "-1/12"]]),
        ],
        [
            [Fraction("1/2"), Fraction("1/2")],
            [Fraction("1/12"), Fraction("-1/12")],
        ],
        [Fraction(0), Fraction(1)],
    ),
    "HB-I2DRK6-3s": (
        2, 3, 6, Structure.EXPLICIT_FIRST_STAGE_FULLY_IMPLICIT,
        [
            _frac_rows([
                ["0", "0", "0"],
                ["101/480", "8/30", "55/2400"],
                ["7/30", "16/30", "7/30"],
            ]),
            _frac_rows([
                ["0", "0", "0"],
                ["65/4800", "-25/600", "-25/8000"],
                ["5/300", "0", "-5/300"],
            ]),
        ],
        [
            [Fraction("7/30"), Fraction("16/30"), Fraction("7/30")],
            [Fraction("5/300"), Fraction(0), Fraction("-5/300")],
        ],
        [Fraction(0), Fraction(1, 2), Fraction(1)],
    ),
    "HB-I2DRK8-4s": (
        2, 4, 8, Structure.EXPLICIT_FIRST_STAGE_FULLY_IMPLICIT,
        [
            _frac_rows([
                ["0", "0", "0", "0"],
                ["6893/54432", "313/2016", "89/2016", "397/54432"],
                ["223/1701", "20/63", "13/63", "20/1701"],
                ["31/224", "81/224", "81/224", "31/224"],
            ]),
            _frac_rows([
                ["0", "0", "0", "0"],
                ["1283/272160", "-851/30240", "-269/30240", "-163/272160"],
                ["43/8505", "-16/945", "-19/945", "-8/8505"],
                ["19/3360", "-9/1120", "9/1120", "-19/3360"],
            ]),
        ],
        [
            [Fraction("31/224"), Fraction("81/224"), Fraction("81/224"), Fraction("31/224")],
            [Fraction("19/3360"), Fraction("-9/1120"), Fraction("9/1120"), Fraction("-19/3360")],
        ],
        [Fraction(0), Fraction(1, 3), Fraction(2, 3), Fraction(1)],
    ),
    "HB-I3DRK6-2s": (
        3, 2, 6, Structure.EXPLICIT_FIRST_STAGE_FULLY_IMPLICIT,
        [
            _frac_rows([["0", "0"], ["1/2", "1/2"]]),
            _frac_rows([["0", "0"], ["1/10", "-1/10"]]),
            _frac_rows([["0", "0"], ["1/120", "1/120"]]),
        ],
        [
            [Fraction("1/2"), Fraction("1/2")],
            [Fraction("1/10"), Fraction("-1/10")],
            [Fraction("1/120"), Fraction("1/120")],
        ],
        [Fraction(0), Fraction(1)],
    ),
    "HB-I3DRK9-3s": (
        3, 3, 9, Structure.EXPLICIT_FIRST_STAGE_FULLY_IMPLICIT,
        [
            _frac_rows([
                ["0", "0", "0"],
                ["5669/26880", "32/105", "-421/26880"],
                ["41/210", "64/105", "41/210"],
            ]),
            _frac_rows([
                ["0", "0", "0"],
                ["303/17920", "-1/32", "47/17920"],
                ["1/70", "0", "-1/70"],
            ]),
            _frac_rows([
                ["0", "0", "0"],
                ["169/322560", "1/315", "-41/322560"],
                ["1/2520", "2/315", "1/2520"],
            ]),
        ],
        [
            [Fraction("41/210"), Fraction("64/105"), Fraction("41/210")],
            [Fraction("1/70"), Fraction(0), Fraction("-1/70")],
            [Fraction("1/2520"), Fraction("2/315"), Fraction("1/2520")],
        ],
        [Fraction(0), Fraction(1, 2), Fraction(1)],
    ),
    "HB-I4DRK8-2s": (
        4, 2, 8, Structure.EXPLICIT_FIRST_STAGE_FULLY_IMPLICIT,
        [
            _frac_rows([["0", "0"], ["1/2", "1/2"]]),
            _frac_rows([["0", "0"], ["3/28", "-3/28"]]),
            _frac_rows([["0", "0"], ["1/84", "1/84"]]),
            _frac_rows([["0", "0"], ["1/1680", "-1/1680"]]),
        ],
        [
            [Fraction("1/2"), Fraction("1/2")],
            [Fraction("3/28"), Fraction("-3/28")],
            [Fraction("1/84"), Fraction("1/84")],
            [Fraction("1/1680"), Fraction("-1/1680")],
        ],
        [Fraction(0), Fraction(1)],
    ),
    "SSP-I2DRK3-2s": (
        2, 2, 3, Structure.DIAGONALLY_IMPLICIT,
        [
            _frac_rows([["0", "0"], ["0", "1"]]),
            _frac_rows([["-1/6", "0"], ["-1/6", "-1/3"]]),
        ],
        [
            [Fraction(0), Fraction(1)],
            [Fraction("-1/6"), Fraction("-1/3")],
        ],
        [Fraction(0), Fraction(1)],
    ),
}

# SSP-I2DRK4-5s ships as the published decimal expansion.
_SSP4_A1 = [
    ["0.660949255604937", "0", "0", "0", "0"],
    ["0.660949255604937", "0.242201390400848", "0", "0", "0"],
    ["0.660949255604937", "0.221847558352979", "1.137542996287740", "0", "0"],
    ["0.060653001401867", "0.020022818960029", "0.102668776898047", "0.191388711018110", "0"],
    ["0.060653001401867", "0.020022818960029", "0.102668776898047", "0.191388711018110", "0.625266691721946"],
]
_SSP4_A2 = [
    ["-0.177750705279127", "0", "0", "0", "0"],
    ["-0.177750705279127", "-0.354733903778084", "0", "0", "0"],
    ["-0.177750705279127", "-0.324923198367868", "-0.403963513682271", "0", "0"],
    ["-0.016311560509453", "-0.029325895786881", "-0.036459667895230", "-0.161628266349058", "0"],
    ["-0.016311560509453", "-0.029325895786881", "-0.036459667895230", "-0.161628266349058", "-0.218859021269943"],
]
_SSP4_C = ["0.660949255604937", "0.903150646005785", "2.020339810245656", "0.374733308278053", "1.000000000000000"]


def _ssp4() -> Tableau:
    a1 = np.array([[float(x) for x in row] for row in _SSP4_A1])
    a2 = np.array([[float(x) for x in row] for row in _SSP4_A2])
    return Tableau(
        name="SSP-I2DRK4-5s",
        r=2,
        s=5,
        q=4,
        a=(a1, a2),
        b=(a1[-1].copy(), a2[-1].copy()),
        c=np.array([float(x) for x in _SSP4_C]),
        structure=Structure.DIAGONALLY_IMPLICIT,
    )


_TAYLOR_RE = re.compile(r"^(Expl|Impl)Taylor-(\d+)$")


def builtin_names() -> list:
    """Names accepted by :func:`builtin_tableau` (Taylor families shown generically)."""
    return ["ExplTaylor-<r>", "ImplTaylor-<r>"] + sorted(_CATALOGUE) + ["SSP-I2DRK4-5s"]


def builtin_tableau(name: str) -> Tableau:
    """Return a catalogue tableau by name.

    ``ExplTaylor-<r>`` and ``ImplTaylor-<r>`` are generated from their closed
    form for any ``r >= 1``; the remaining schemes are fixed tables.
    """
    m = _TAYLOR_RE.match(name)
    if m:
        return _taylor("expl" if m.group(1) == "Expl" else "impl", int(m.group(2)))
    if name == "SSP-I2DRK4-5s":
        return _ssp4()
    if name not in _CATALOGUE:
        raise UnknownSchemeError(
            f"unknown scheme {name!r}; available: {', '.join(builtin_names())}"
        )
    r, s, q, structure, a_frac, b_frac, c_frac = _CATALOGUE[name]
    a = tuple(np.array([[float(x) for x in row] for row in mat]) for mat in a_frac)
    b = tuple(np.array([float(x) for x in row]) for row in b_frac)
    c = np.array([float(x) for x in c_frac])
    return Tableau(name=name, r=r, s=s, q=q, a=a, b=b, c=c, structure=structure)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate(t: Tableau) -> list:
    """Check the tableau invariants; returns human-readable violations.

    An empty list means the tableau is consistent: first-derivative row sums
    equal the abscissae, the first-derivative weights sum to one, and the
    sparsity matches the declared structure.
    """
    violations = []
    row_sums = t.a[0].sum(axis=1)
    for l in range(t.s):
        if abs(row_sums[l] - t.c[l]) > ROWSUM_TOL:
            violations.append(
                f"stage {l + 1}: sum a^(1) = {row_sums[l]!r} differs from c = {t.c[l]!r}"
            )
    wsum = t.b[0].sum()
    if abs(wsum - 1.0) > ROWSUM_TOL:
        violations.append(f"sum b^(1) = {wsum!r} differs from 1")
    if t.structure is Structure.SINGLE_STAGE and t.s != 1:
        violations.append(f"SingleStage structure with s = {t.s}")
    if t.structure is Structure.DIAGONALLY_IMPLICIT:
        for k, m in enumerate(t.a, start=1):
            if np.any(np.triu(m, 1) != 0.0):
                violations.append(f"a^({k}) has entries above the diagonal")
    if t.structure is Structure.EXPLICIT_FIRST_STAGE_FULLY_IMPLICIT:
        for k, m in enumerate(t.a, start=1):
            if np.any(m[0] != 0.0):
                violations.append(f"a^({k}) row 1 is not zero")
    return violations


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------
#
#   name r s q structure
#   r blocks of s lines with s numbers each      (a^(1) .. a^(r))
#   r lines with s numbers each                  (b^(1) .. b^(r))
#   one line with s numbers                      (c)
#
# Numbers accept plain decimals and p/q rationals; blank lines and
# '#' comments are ignored.

def _parse_number(tok: str) -> float:
    if "/" in tok:
        return float(Fraction(tok))
    return float(tok)


def parse_tableau(text: str) -> Tableau:
    """Parse a tableau from the plain-text exchange format."""
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError("empty tableau definition")
    head = lines[0].split()
    if len(head) != 5:
        raise ValueError("header must be 'name r s q structure'")
    name, structure = head[0], head[4]
    try:
        r, s, q = int(head[1]), int(head[2]), int(head[3])
    except ValueError as exc:
        raise ValueError(f"bad header counts in {head[1:4]}") from exc
    try:
        struct = Structure(structure)
    except ValueError as exc:
        raise ValueError(
            f"unknown structure {structure!r}; one of "
            f"{', '.join(st.value for st in Structure)}"
        ) from exc
    need = r * s + r + 1
    body = lines[1:]
    if len(body) != need:
        raise ValueError(f"expected {need} coefficient lines, got {len(body)}")

    def row(ln: str) -> list:
        toks = ln.split()
        if len(toks) != s:
            raise ValueError(f"expected {s} numbers per line, got {len(toks)}: {ln!r}")
        return [_parse_number(tok) for tok in toks]

    pos = 0
    a = []
    for _ in range(r):
        a.append(np.array([row(body[pos + i]) for i in range(s)]))
        pos += s
    b = []
    for _ in range(r):
        b.append(np.array(row(body[pos])))
        pos += 1
    c = np.array(row(body[pos]))
    return Tableau(name=name, r=r, s=s, q=q, a=tuple(a), b=tuple(b), c=c, structure=struct)


def format_tableau(t: Tableau) -> str:
    """Render a tableau in the plain-text exchange format."""
    out = [f"{t.name} {t.r} {t.s} {t.q} {t.structure.value}"]
    for m in t.a:
        for l in range(t.s):
            out.append(" ".join(repr(float(x)) for x in m[l]))
    for v in t.b:
        out.append(" ".join(repr(float(x)) for x in v))
    out.append(" ".join(repr(float(x)) for x in t.c))
    return "\n".join(out) + "\n"
