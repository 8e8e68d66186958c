"""Generalized open-loop Nash equilibria of constrained LQ difference games."""
from .game_model import (GameSpec, SpecError, load_spec, save_spec, spec_from_dict,
                         spec_to_dict, validate_game)
from .lcp import LcpInstance, enumeration_oracle, lemke_solve
from .pipeline import (EquilibriumResult, GateFailed, LcpUnsolved, VerificationFailed,
                       solve_golne)

__version__ = "0.1.0"
