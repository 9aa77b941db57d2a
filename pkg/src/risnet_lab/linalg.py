"""Dense complex matrices as (real, imaginary) float64 pairs.

Both parts of a :class:`CMatrix` are either plain numpy arrays or nodes on
one shared tape, so the same expression serves numeric evaluation and
gradient recording.  Plain complex128 storage is used at dataset and solver
boundaries; ``from_complex``/``value`` convert between the two views.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .exceptions import ShapeError

__all__ = ["CMatrix", "matmul"]


def _shape(part):
    return part.value.shape if isinstance(part, Node) else np.shape(part)


class CMatrix:
    """A complex matrix (or vector) split into real and imaginary parts."""

    __slots__ = ("re", "im")

    def __init__(self, re, im):
        if _shape(re) != _shape(im):
            raise ShapeError(
                f"real part {_shape(re)} and imaginary part {_shape(im)} differ"
            )
        self.re = re
        self.im = im

    @classmethod
    def from_complex(cls, z) -> "CMatrix":
        z = np.asarray(z, dtype=np.complex128)
        return cls(np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag))

    def value(self) -> np.ndarray:
        """Current numeric value as a complex128 array."""
        re = self.re.value if isinstance(self.re, Node) else self.re
        im = self.im.value if isinstance(self.im, Node) else self.im
        return np.asarray(re) + 1j * np.asarray(im)

    @property
    def shape(self):
        return _shape(self.re)

    @property
    def tracked(self) -> bool:
        return isinstance(self.re, Node) or isinstance(self.im, Node)

    def conj(self) -> "CMatrix":
        return CMatrix(self.re, -self.im if isinstance(self.im, Node) else np.negative(self.im))

    @property
    def T(self) -> "CMatrix":
        return CMatrix(self.re.T, self.im.T)

    def __add__(self, other) -> "CMatrix":
        other = _as_cmatrix(other)
        return CMatrix(self.re + other.re, self.im + other.im)

    __radd__ = __add__

    def __sub__(self, other) -> "CMatrix":
        other = _as_cmatrix(other)
        return CMatrix(self.re - other.re, self.im - other.im)

    def __mul__(self, other) -> "CMatrix":
        """Elementwise complex product with numpy broadcasting."""
        other = _as_cmatrix(other)
        re = self.re * other.re - self.im * other.im
        im = self.re * other.im + self.im * other.re
        return CMatrix(re, im)

    __rmul__ = __mul__

    def __matmul__(self, other) -> "CMatrix":
        return matmul(self, other)

    def abs2(self):
        """Elementwise squared magnitude as a real array/node."""
        return self.re * self.re + self.im * self.im

    def __repr__(self):
        return f"CMatrix(shape={self.shape}, tracked={self.tracked})"


def _as_cmatrix(x) -> CMatrix:
    if isinstance(x, CMatrix):
        return x
    return CMatrix.from_complex(x)


def matmul(a: CMatrix, b: CMatrix) -> CMatrix:
    """Complex matrix product via four real products.

    Raises :class:`ShapeError` naming both shapes on an inner-dimension
    mismatch.
    """
    a, b = _as_cmatrix(a), _as_cmatrix(b)
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    re = ad.matmul(a.re, b.re) - ad.matmul(a.im, b.im)
    im = ad.matmul(a.re, b.im) + ad.matmul(a.im, b.re)
    return CMatrix(re, im)
