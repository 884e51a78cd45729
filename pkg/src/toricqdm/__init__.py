"""Quantum D-modules of toric bundles: I-functions, Birkhoff factorization and the fixed-point decomposition."""

from .brown import big_i_function, check_brown_identity, i_function, m_matrix
from .decomp import compose_decomposition, mirror_map_and_gauge, quantum_product_E, tau_star_blocks
from .toric import ToricBundle, f1_config, load_toric_bundle, projective_config

__version__ = "0.1.0"
