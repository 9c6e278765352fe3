"""Correlated equilibria of two-player stochastic switching games with price impact."""
from .errors import ConfigError, NumericalError, SwitchGameError
from .market import PRODUCER1, PRODUCER2, MarketParams, MarketState, NoiseStream, ProducerParams
from .matrix_game import (Egalitarian, Green, JointDistribution, LexFirst, Preferential, Utilitarian,
                          select_ce)
from .mca import build_lattice, solve_mca
from .lsmc import BasisSpec, solve_lsmc
from .single import solve_single

__all__ = [
    "BasisSpec", "ConfigError", "Egalitarian", "Green", "JointDistribution", "LexFirst",
    "MarketParams", "MarketState", "NoiseStream", "NumericalError", "PRODUCER1", "PRODUCER2",
    "Preferential", "ProducerParams", "SwitchGameError", "Utilitarian", "build_lattice",
    "select_ce", "solve_lsmc", "solve_mca", "solve_single",
]
