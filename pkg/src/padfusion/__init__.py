"""Spectral difference analysis for optical/SAR pairs and PAD feature fusion.

Subpackages and modules:

* :mod:`padfusion.tensor` - float64 reverse-mode autodiff tape
* :mod:`padfusion.spectral` - half-plane FFTs, amplitude/phase decoupling
* :mod:`padfusion.diagnostics` - RSD/RAD/APPD maps and their statistics
* :mod:`padfusion.fusion` - the gated spectral fusion block
* :mod:`padfusion.network` - toy encoder/decoder with its training loop
* :mod:`padfusion.cli` - the ``padfusion`` command
"""

from __future__ import annotations

from .tensor import GraphError, NonFiniteError, Parameter, ShapeError, Tensor, backward, gradcheck, no_grad

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "Parameter",
    "ShapeError",
    "NonFiniteError",
    "GraphError",
    "backward",
    "gradcheck",
    "no_grad",
    "__version__",
]
