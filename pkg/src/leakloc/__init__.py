"""Leak localization in water distribution networks.

Submodules: ``network`` / ``inp`` (model and file formats), ``hydraulics``
(steady-state simulator), ``qp`` and ``interp`` (graph-signal interpolation),
``sparse`` (OMP, K-SVD, LC-KSVD), ``placement``, ``dataset``, ``experiment``
and ``cli``.
"""

from .errors import LeakLocError
from .network import Network, Node, Pipe, load_network

__version__ = "0.1.0"

__all__ = ["LeakLocError", "Network", "Node", "Pipe", "load_network", "__version__"]
