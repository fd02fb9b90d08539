"""Numerical toolkit for step-two Carnot groups given by structure constants."""

__version__ = "0.1.0"

from .algebra import (  # noqa: E402
    GroupPoint,
    StructureConstants,
    bracket,
    dilation,
    dims,
    group_inv,
    group_mul,
    heisenberg,
    load_spec,
    validate_spec,
)
from .deformation import gk_family, gk_member  # noqa: E402
from .filtration import n0_search, w_decomposition  # noqa: E402
from .geodesics import Covector, distance, exp_map  # noqa: E402
from .jmaps import j_operator, metivier_check  # noqa: E402

__all__ = [
    "Covector",
    "GroupPoint",
    "StructureConstants",
    "bracket",
    "dilation",
    "dims",
    "distance",
    "exp_map",
    "gk_family",
    "gk_member",
    "group_inv",
    "group_mul",
    "heisenberg",
    "j_operator",
    "load_spec",
    "metivier_check",
    "n0_search",
    "validate_spec",
    "w_decomposition",
]
